// SPDX-License-Identifier: Apache-2.0
#pragma once

// Synthetic paired-modality world. Modality A renders shaded discs, modality
// B is the closed-form normalised distance to the nearest disc centre, so the
// cross-modal relation is known exactly.

#include "syncvp/triplane_codec.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace syncvp {

struct WorldConfig {
    int T = 8;
    int H = 32;
    int W = 32;
    int n_objects = 2;
    double radius_min = 3.5;
    double radius_max = 5.5;
    double speed_min = 0.5;
    double speed_max = 1.5;
    double intensity_min = 0.6;

    void validate() const;
};

struct DiscObject {
    double x = 0, y = 0;   // centre, pixels
    double vx = 0, vy = 0; // pixels per frame
    double radius = 4;
    double intensity = 1;  // peak brightness in (0, 1]
};

struct SceneState {
    int H = 32, W = 32;
    std::vector<DiscObject> objects;

    /// Advances one frame; centres reflect elastically off [r, dim-1-r].
    void step();
};

using Centers = std::vector<std::array<double, 2>>; // (x, y) per object

struct PairedClip {
    VideoClip a;
    VideoClip b;
    std::vector<Centers> centers; // per frame
};

SceneState sample_scene(uint64_t seed, const WorldConfig& config);
/// Renders T frames starting from `scene` (frame 0 is the given state).
PairedClip render_scene(SceneState scene, int T);
/// Deterministic in seed. Throws ConfigError for n_objects < 1 or bad geometry.
PairedClip generate_clip(uint64_t seed, const WorldConfig& config);

/// Closed-form modality-B value for one pixel.
double distance_field_value(double x, double y, const Centers& centers, int H, int W);
/// Modality-B frames from per-frame centres.
VideoClip render_distance_field(const std::vector<Centers>& centers, int H, int W);

/// Estimates up to `n_objects` disc centres in one frame of a modality-A clip.
Centers estimate_centers(const VideoClip& a, int frame, int n_objects);

struct AlignmentResult {
    double score = 0;
    bool degenerate = false;
    std::string diagnostic;
};

/// 1 - ||pred_b - G(centres(pred_a))|| / ||G - mean(G)||, clamped to [0, 1].
/// Blank modality-A frames give score 0 with degenerate=true.
AlignmentResult alignment_score(const VideoClip& pred_a, const VideoClip& pred_b, int n_objects);

enum class Split { Train, Val, Test };
constexpr uint64_t kSplitRange = 1'000'000;
/// Seed for the i-th clip of a split; the three split ranges are disjoint.
uint64_t split_seed(Split split, uint64_t index);
Split split_of(uint64_t seed);

/// Modality clip as a condition window: the last `frames` frames of `clip`,
/// padded to `T` frames by repeating the final frame.
VideoClip condition_window(const VideoClip& clip, int frames, int T);

} // namespace syncvp
