// SPDX-License-Identifier: Apache-2.0
#pragma once

// Experiment orchestration: codec and data preparation, the model variants,
// resumable training, two-stage pipeline, evaluation and benchmarks.

#include "syncvp/checkpoint.hpp"
#include "syncvp/config.hpp"
#include "syncvp/metrics.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace syncvp {

using Logger = std::function<void(const std::string&)>;

// ---------------------------------------------------------------- data

/// Encoded training scenes. For the channel-stacked codec only cond_a/tgt_a
/// are used and the masked condition variants are pre-encoded.
struct LatentPool {
    LatentLayout layout;
    int n = 0;
    Mat cond_a, tgt_a, cond_b, tgt_b;   // (n*L) x C'
    Mat cond_ab_a_only, cond_ab_b_only; // stacked codec, one modality blanked

    Mat gather(const Mat& m, const std::vector<int>& scenes) const;
};

VideoClip stack_channels(const VideoClip& a, const VideoClip& b);
std::pair<VideoClip, VideoClip> split_channels(const VideoClip& ab);
/// Replaces modality `m`'s channel of a stacked clip by zeros.
VideoClip blank_channel(const VideoClip& ab, int channel);

/// Adds N(0, (sigma * 2/255)^2) pixel noise and clamps to [-1, 1].
VideoClip corrupt(const VideoClip& clip, double sigma_255, Rng& rng);

enum class CodecKind { A, B, Stacked };

class Workspace {
public:
    Workspace(ExperimentConfig config, std::string out_dir, Logger log = {});

    const ExperimentConfig& config() const { return config_; }
    const std::string& out_dir() const { return out_; }
    /// <out>/seed_<seed>, where per-seed checkpoints live.
    std::string seed_dir() const;
    const NoiseSchedule& schedule() const { return schedule_; }
    const LatentLayout& layout() const;
    void log(const std::string& msg) const;

    /// Trains the codec or loads it from <out>/codecs when cached with the same
    /// codec settings.
    const TrainableCodec& codec(CodecKind kind);
    const LatentPool& pool();
    const LatentPool& stacked_pool();
    /// Test scenes (context + horizon frames each).
    const std::vector<PairedClip>& test_clips();

private:
    ExperimentConfig config_;
    std::string out_;
    Logger log_;
    NoiseSchedule schedule_;
    LatentLayout layout_;
    std::unique_ptr<TrainableCodec> codecs_[3];
    std::unique_ptr<LatentPool> pool_, stacked_pool_;
    std::vector<PairedClip> test_;
};

// ---------------------------------------------------------------- models

struct StepLoss {
    ag::Var total;
    double a = 0, b = 0;
};

struct Prediction {
    std::vector<VideoClip> a, b; // empty when the model does not predict that modality
};

class Model {
public:
    virtual ~Model() = default;
    virtual Variant variant() const = 0;
    /// Named parameter groups (checkpoint prefix, store).
    virtual std::vector<std::pair<std::string, nn::ParamStore*>> stores() = 0;
    /// Training loss on pool scenes `scenes`; all randomness from rng, except
    /// modality-B noise under the independent-noise ablation (rng_b).
    virtual StepLoss loss(ag::Tape& t, const std::vector<int>& scenes, Rng& rng, Rng& rng_b) = 0;
    /// Predicts `horizon` frames from condition clips of `context` frames.
    virtual Prediction predict(const std::vector<VideoClip>& cond_a, const std::vector<VideoClip>& cond_b,
                               const ConditioningMask& mask, Rng& rng) = 0;

    std::vector<ag::Param*> params();
    /// Sum of |w| over all parameters; used to detect stale models.
    double fingerprint();
};

std::unique_ptr<Model> make_model(Variant variant, Workspace& ws);
/// Single-modality denoiser built from the workspace config.
Denoiser make_denoiser(const Workspace& ws, int latent_channels);

/// Joint model warm-started from trained single-modality models.
std::unique_ptr<Model> make_joint_from(Variant variant, Workspace& ws, Model& single_a, Model& single_b);

// ---------------------------------------------------------------- training

struct TrainOptions {
    long iterations = 0;
    int batch = 16;
    double lr = 1e-3;
    double lr_final = 1e-4;
    long checkpoint_every = 500;
    std::string checkpoint_path; // empty: no checkpoints
    bool resume = false;
    long stop_after = -1; // simulate an interruption after this many iterations
    uint64_t seed = 0;
    int pool_size = 0;     // scenes to draw batches from
    int loss_elements = 1; // latent elements per sample; the optimised loss is divided by this
};

struct TrainHistory {
    std::vector<double> total, a, b;
    long iterations = 0;
    double seconds = 0;
    bool completed = false;
};

/// Adam with cosine learning-rate decay. Checkpoints hold parameters,
/// optimizer moments, RNG streams and the loss history so a resumed run
/// continues the identical trajectory.
TrainHistory train(Model& model, const TrainOptions& options, const std::string& config_hash, Logger log = {});

void save_model(Model& model, const std::string& path, const std::string& config_hash, nlohmann::json extra = {});
/// Throws CheckpointError when the file's config hash differs from expected
/// (pass an empty string to skip the check).
void load_model(Model& model, const std::string& path, const std::string& expected_hash);

std::string variant_checkpoint(const Workspace& ws, Variant v);
/// Config hash a variant's checkpoint is pinned to.
std::string variant_hash(const Workspace& ws, Variant v);
/// Loads a completed training run; throws CheckpointError when it is missing,
/// unfinished or was produced by a different config.
std::unique_ptr<Model> load_variant(Variant v, Workspace& ws);

/// Mean of the last `fraction` of a loss series.
double tail_mean(const std::vector<double>& v, double fraction = 0.2);

// ---------------------------------------------------------------- pipeline

struct EvalOptions {
    ConditioningMask mask{};
    double sigma_b = 0.0; // pixel noise on modality-B conditions, 0..255 units
    int k = 1;
    uint64_t seed = 12345;
    int max_samples = -1; // limit the test set (-1: all)
};

EvalReport evaluate(Model& model, Workspace& ws, const EvalOptions& options);

struct StageOneResult {
    std::unique_ptr<Model> a, b;
    TrainHistory hist_a, hist_b;
};

/// Stage 1: trains (or loads cached) single-modality branches.
StageOneResult run_stage_one(Workspace& ws, bool resume = false);

struct VariantRun {
    Variant variant;
    std::unique_ptr<Model> model;
    TrainHistory history;
    long total_iterations = 0; // stage 1 + stage 2 optimizer steps
};

/// Trains one variant under the shared budget, reusing stage-1 models.
VariantRun run_variant(Variant v, Workspace& ws, StageOneResult& stage1, bool resume = false);

struct TwoStageResult {
    StageOneResult stage1;
    VariantRun joint;
    double warm_start_max_diff = 0; // joint vs single outputs before fine-tuning
};

TwoStageResult run_two_stage(Workspace& ws, bool resume = false);

struct NoiseRow {
    double sigma = 0;
    EvalReport report;
};
/// Negative sigmas raise DomainError.
std::vector<NoiseRow> eval_noise_robustness(Model& model, Workspace& ws, const std::vector<double>& sigmas,
                                            const EvalOptions& base = {});

Rollout rollout(Model& model, Workspace& ws, const PairedClip& scene, int total_frames, Rng& rng);

struct BenchRow {
    int T, H, W, P;
    AttentionCostReport cost;
    double stca_ms = 0, vanilla_ms = 0;
};
std::vector<BenchRow> bench_attention(const std::vector<std::array<int, 4>>& geometries, int width = 64,
                                      int repeats = 3, uint64_t seed = 0);

// ---------------------------------------------------------------- reports

nlohmann::json report_json(const EvalReport& r);
std::string report_csv_header();
std::string report_csv_row(const std::string& label, const EvalReport& r);
void write_text(const std::string& path, const std::string& text);

} // namespace syncvp
