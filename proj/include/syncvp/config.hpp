// SPDX-License-Identifier: Apache-2.0
#pragma once

// Experiment configuration. Files are JSON objects whose nested keys mirror
// the dotted names used on the command line (e.g. guidance.p_both).

#include "syncvp/diffusion.hpp"
#include "syncvp/guidance.hpp"
#include "syncvp/toyworld.hpp"

#include "json.hpp"

#include <string>
#include <vector>

namespace syncvp {

enum class Variant {
    SingleA,
    SingleB,
    JointStca,
    JointVanillaCa,
    JointConcatChannels,
    JointFusedLatents,
    JointIndependentNoise,
    JointNoGuidance,
    JointScratch,
    JointStcaAllLayers,
    JointNonsharedStca,
};

const std::vector<Variant>& all_variants();
std::string variant_name(Variant v);
/// Throws ConfigError for unknown names.
Variant parse_variant(const std::string& name);
bool is_joint(Variant v);

struct DataConfig {
    int context = 2;       // observed frames per modality
    int horizon = 8;       // frames predicted per pass (= codec clip length)
    int train_pool = 2048; // training scenes encoded once
    int test_samples = 32;
};

struct TrainConfig {
    int codec_iterations = 1500;
    int codec_batch = 8;
    double codec_lr = 2e-3;
    int stage1_iterations = 3000;
    int stage2_iterations = 2000;
    int batch = 16;
    double lr = 1e-3;
    double lr_final = 1e-4; // cosine decay target
    int checkpoint_every = 500;
};

struct EvalConfig {
    int ddim_steps = 100;
    double eta = 0.0;
    int k = 1;
    std::vector<double> noise_sigmas{0.0, 2.5, 5.0}; // in 0..255 intensity units
    int rollout_frames = 28;
};

struct ExperimentConfig {
    WorldConfig world{.T = 10};
    CodecConfig codec{};
    DenoiserConfig denoiser{};
    ScheduleConfig schedule{};
    GuidanceConfig guidance{};
    JointConfig joint{};
    DataConfig data{};
    TrainConfig train{};
    EvalConfig eval{};
    Variant variant = Variant::JointStca;
    uint64_t seed = 0;

    /// Throws ConfigError on any inconsistent setting.
    void validate() const;
    nlohmann::json to_json() const;
    /// Starts from defaults and applies every key in j; unknown keys and
    /// type mismatches raise ConfigError.
    static ExperimentConfig from_json(const nlohmann::json& j);
    static ExperimentConfig load(const std::string& path);
    /// Applies "dotted.key=value" overrides.
    void apply_override(const std::string& assignment);
    /// FNV-1a over the canonical JSON form.
    uint64_t hash() const;
    std::string hash_hex() const;
};

uint64_t fnv1a64(const std::string& bytes);

} // namespace syncvp
