// SPDX-License-Identifier: Apache-2.0
#include "syncvp/guidance.hpp"

#include <cmath>

namespace syncvp {

void GuidanceConfig::validate() const {
    for (double p : {p_both, p_a_only, p_b_only})
        if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("guidance probabilities must lie in [0, 1]");
    if (std::abs(p_both + p_a_only + p_b_only - 1.0) > 1e-9)
        throw ConfigError("guidance.p_both + guidance.p_a_only + guidance.p_b_only must equal 1");
}

ConditioningMask sample_mask(Rng& rng, const GuidanceConfig& config) {
    const double u = rng.uniform();
    if (u < config.p_both) return {true, true};
    if (u < config.p_both + config.p_a_only) return {true, false};
    return {false, true};
}

std::pair<Mat, Mat> apply_mask(const Mat& c_a, const Mat& c_b, const ConditioningMask& mask) {
    return {mask.use_a ? c_a : Mat::Zero(c_a.rows(), c_a.cols()), mask.use_b ? c_b : Mat::Zero(c_b.rows(), c_b.cols())};
}

void apply_masks(Mat& c_a, Mat& c_b, const std::vector<ConditioningMask>& masks, Eigen::Index rows_per_sample) {
    if (masks.empty()) return;
    if (c_a.rows() != c_b.rows() || rows_per_sample < 1 || c_a.rows() % rows_per_sample != 0)
        throw ShapeError("apply_masks: condition layouts differ");
    const Eigen::Index batch = c_a.rows() / rows_per_sample;
    if (masks.size() != 1 && static_cast<Eigen::Index>(masks.size()) != batch)
        throw ShapeError("apply_masks: need one mask or one per sample");
    for (Eigen::Index b = 0; b < batch; ++b) {
        const ConditioningMask& m = masks.size() == 1 ? masks[0] : masks[static_cast<size_t>(b)];
        if (!m.use_a) c_a.middleRows(b * rows_per_sample, rows_per_sample).setZero();
        if (!m.use_b) c_b.middleRows(b * rows_per_sample, rows_per_sample).setZero();
    }
}

std::vector<ConditioningMask> sample_batch_masks(Rng& rng, int batch, const GuidanceConfig& config) {
    if (!config.enabled) return {ConditioningMask{}};
    if (!config.per_sample) return {sample_mask(rng, config)};
    std::vector<ConditioningMask> out;
    for (int i = 0; i < batch; ++i) out.push_back(sample_mask(rng, config));
    return out;
}

} // namespace syncvp
