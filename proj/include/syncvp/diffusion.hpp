// SPDX-License-Identifier: Apache-2.0
#pragma once

// DDPM noise schedules, the forward process with shared noise, training
// losses and deterministic DDIM sampling.

#include "syncvp/denoiser.hpp"

#include <functional>
#include <vector>

namespace syncvp {

struct InvalidScheduleError : DomainError {
    using DomainError::DomainError;
};

enum class ScheduleKind { Linear, Cosine };

struct ScheduleConfig {
    int steps = 1000;
    ScheduleKind kind = ScheduleKind::Linear;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    double cosine_offset = 0.008;
};

/// Arrays are indexed by step t in [1, T]; entry 0 holds the t=0 values
/// (beta 0, alpha_bar 1).
struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta, alpha, alpha_bar;

    double abar(int t) const;
    /// Throws InvalidScheduleError when any invariant fails.
    void validate() const;
};

NoiseSchedule schedule_from_betas(const std::vector<double>& betas);
NoiseSchedule make_schedule(const ScheduleConfig& config);

/// sqrt(abar) z0 + sqrt(1 - abar) eps.
Mat forward_diffuse(const Mat& z0, double abar, const Mat& eps);
/// sqrt(1 - abar_t) eps per sample: the noise term the forward process adds.
Mat injected_noise(const Mat& eps, const std::vector<int>& steps, const NoiseSchedule& s);
/// Per-sample steps: rows of sample b are [b*L, (b+1)*L).
Mat forward_diffuse(const Mat& z0, const std::vector<int>& steps, const Mat& eps, const NoiseSchedule& s);
/// (z_t - sqrt(abar) z0), the noise component actually injected.
Mat noise_residual(const Mat& z_t, const Mat& z0, const std::vector<int>& steps, const NoiseSchedule& s);

Mat sample_shared_noise(Eigen::Index rows, Eigen::Index cols, Rng& rng);
std::vector<int> sample_steps(int batch, const NoiseSchedule& s, Rng& rng);

/// Sum of squared errors per sample, averaged over the batch.
ag::Var noise_loss(const ag::Var& pred, const ag::Var& eps, Eigen::Index batch);
double noise_loss(const Mat& pred, const Mat& eps, Eigen::Index batch);

struct SingleBatch {
    Mat z0, cond, eps; // (batch*L) x C'
    std::vector<int> steps;
};

struct JointBatch {
    Mat z0_a, z0_b, cond_a, cond_b;
    Mat eps_a, eps_b; // identical unless built with independent noise
    std::vector<int> steps;
};

/// Draws steps and noise for one joint batch. With independent_noise the
/// modality-B noise comes from `rng_b` instead of reusing A's draw.
JointBatch make_joint_batch(Mat z0_a, Mat z0_b, Mat cond_a, Mat cond_b, int batch, const NoiseSchedule& s, Rng& rng,
                            bool independent_noise = false, Rng* rng_b = nullptr);

ag::Var single_loss(ag::Tape& t, Denoiser& model, const SingleBatch& batch, const NoiseSchedule& s);

struct JointLoss {
    ag::Var total, a, b;
};
JointLoss joint_loss(ag::Tape& t, JointDenoiser& model, const JointBatch& batch, const NoiseSchedule& s);

/// Noise prediction for a set of latents sharing one step index.
using EpsFn = std::function<std::vector<Mat>(const std::vector<Mat>& z_t, int step)>;

struct DdimConfig {
    int steps = 100;
    double eta = 0.0;
};

/// Uniform-stride step subset, descending from T.
std::vector<int> ddim_timesteps(int T, int steps);

/// DDIM from z_T = initial noise down to a clean estimate. The latents are
/// updated in lockstep; eta > 0 draws extra noise from rng.
std::vector<Mat> ddim_sample(const EpsFn& eps, std::vector<Mat> z_T, const NoiseSchedule& s, const DdimConfig& cfg,
                             Rng& rng);

/// Joint sampling: draws the initial noise from rng (one draw for both
/// branches when shared_init, matching shared-noise training) and runs both
/// branches with their conditions (rows layout).
std::pair<Mat, Mat> ddim_sample(JointDenoiser& model, const Mat& cond_a, const Mat& cond_b, const NoiseSchedule& s,
                                const DdimConfig& cfg, Rng& rng, bool shared_init = true);

struct RolloutPlan {
    int passes = 0;
    std::vector<int> frames_per_pass;
};
RolloutPlan plan_rollout(int total_frames, int frames_per_pass);

/// Per-pass predictor: given condition clips (A, B) returns predicted clips
/// of the pass length.
using PassFn = std::function<std::pair<VideoClip, VideoClip>(const VideoClip& cond_a, const VideoClip& cond_b)>;

struct Rollout {
    VideoClip a, b;
    std::vector<int> frame_index; // absolute frame index of every output frame
    int passes = 0;
};

/// Autoregressive rollout: each pass conditions on the most recent
/// `context` frames (given or generated) and appends its prediction.
Rollout predict_rollout(const PassFn& pass, const VideoClip& past_a, const VideoClip& past_b, int context,
                        int frames_per_pass, int total_frames);

} // namespace syncvp
