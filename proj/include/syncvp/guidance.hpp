// SPDX-License-Identifier: Apache-2.0
#pragma once

// Cross-modality guidance: training-time masking of conditioning latents.

#include "syncvp/core.hpp"

#include <vector>

namespace syncvp {

struct ConditioningMask {
    bool use_a = true;
    bool use_b = true;
    bool operator==(const ConditioningMask&) const = default;
};

struct GuidanceConfig {
    double p_both = 0.5;
    double p_a_only = 0.25;
    double p_b_only = 0.25;
    bool per_sample = false; // one mask per batch unless set
    bool enabled = true;     // disabled: always condition on both

    /// Throws ConfigError unless the probabilities are in [0, 1] and sum to 1.
    void validate() const;
};

ConditioningMask sample_mask(Rng& rng, const GuidanceConfig& config = {});

/// Masked slots become the all-zero latent; others pass through.
std::pair<Mat, Mat> apply_mask(const Mat& c_a, const Mat& c_b, const ConditioningMask& mask);

/// Batched form on stacked rows: one mask per sample (rows_per_sample rows
/// each) or, when masks has a single entry, one mask for every sample.
void apply_masks(Mat& c_a, Mat& c_b, const std::vector<ConditioningMask>& masks, Eigen::Index rows_per_sample);

/// Masks for a batch following config.per_sample / config.enabled.
std::vector<ConditioningMask> sample_batch_masks(Rng& rng, int batch, const GuidanceConfig& config);

} // namespace syncvp
