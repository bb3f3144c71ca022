// SPDX-License-Identifier: Apache-2.0
#pragma once

// Frame metrics for clips with values in [-1, 1] and the best-of-K protocol.

#include "syncvp/toyworld.hpp"

#include <string>
#include <vector>

namespace syncvp {

constexpr double kDataRange = 2.0;

/// Mean over frames and channels of Gaussian-window SSIM (11x11, sigma 1.5,
/// K1 0.01, K2 0.03), averaged over windows that lie fully inside the frame.
double ssim(const VideoClip& a, const VideoClip& b);
double ssim_frame(const VideoClip& a, const VideoClip& b, int t, int c = 0);
double mse(const VideoClip& a, const VideoClip& b);
/// 10 log10(range^2 / MSE), capped at 100 dB for identical clips.
double psnr(const VideoClip& a, const VideoClip& b);
double l2x100(const VideoClip& pred, const VideoClip& gt);

struct ModalityScores {
    double ssim = 0, psnr = 0, l2x100 = 0;
};

struct EvalReport {
    ModalityScores a, b;
    bool has_a = true, has_b = true; // false when a model predicts one modality only
    double alignment = 0;            // NaN unless both modalities are present
    int degenerate = 0; // samples whose best alignment estimate was degenerate
    int k = 1;
    int samples = 0;
    std::string selection = "per-metric";
};

struct Trajectory {
    VideoClip a, b;
};

/// samples[i] holds K trajectories for ground truth truth[i]. For each metric
/// the best trajectory per sample is kept (max SSIM/PSNR/alignment, min L2)
/// and the result averaged over samples. Empty clips (T = 0) mark a
/// modality the model does not predict.
EvalReport best_of_k(const std::vector<std::vector<Trajectory>>& samples, const std::vector<Trajectory>& truth,
                     int n_objects);

} // namespace syncvp
