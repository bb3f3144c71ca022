// SPDX-License-Identifier: Apache-2.0
#pragma once

// Per-modality noise predictor over the flattened triplane latent.
//
// Two-level token UNet: the latent (tokens as rows) is concatenated with the
// conditioning latent along channels, lifted to `width` features, processed
// by residual blocks with a diffusion-step embedding, reduced 4x along each
// plane's token axis while doubling channels, passed through self-attention,
// then expanded back with a skip connection. Cross-modal exchange happens at
// hook points between stages; hook 1 (right after the deepest self-attention)
// is the default STCA site.

#include "syncvp/stca.hpp"
#include "syncvp/triplane_codec.hpp"

#include <optional>
#include <string>
#include <map>
#include <vector>

namespace syncvp {

struct DenoiserConfig {
    int latent_channels = 4; // channels of z_t (the conditioning latent has the same count)
    int width = 32;          // level-1 width; the deep level uses 2*width
    int heads = 2;
    int time_dim = 32;
    int max_steps = 1000;
    uint64_t seed = 3;

    bool operator==(const DenoiserConfig&) const = default;
};

/// Noisy latents, conditions and step indices for a batch, as stacked token
/// rows: (batch * L) x C'.
struct BranchInput {
    Mat z_t;
    Mat cond;
    std::vector<int> steps; // each in [1, max_steps]

    Eigen::Index batch() const { return static_cast<Eigen::Index>(steps.size()); }
};

/// Stacks latents (C' x L each) into token rows and back.
Mat to_rows(const std::vector<TriplaneLatent>& latents);
Mat to_rows(const TriplaneLatent& latent);
std::vector<TriplaneLatent> from_rows(const Mat& rows, const LatentLayout& layout);

/// Channel-axis concatenation of z_t and c: (rows x 2C').
Mat condition_inject(const Mat& z_t, const Mat& cond);

/// Sinusoidal embedding of diffusion steps, one row per step.
Mat step_embedding(const std::vector<int>& steps, int dim);

class Denoiser {
public:
    static constexpr int kHooks = 3;

    Denoiser(const DenoiserConfig& config, const LatentLayout& layout);

    const DenoiserConfig& config() const { return config_; }
    const LatentLayout& layout() const { return layout_; }
    nn::ParamStore& params() { return params_; }
    const nn::ParamStore& params() const { return params_; }

    /// Forward state threaded through the stages so two branches can run in
    /// lockstep and exchange features at hook points.
    struct State {
        int stage = 0;
        Eigen::Index batch = 0;
        ag::Var h, skip, temb;
    };

    State begin(ag::Tape& t, const BranchInput& in);
    /// Runs the next stage; afterwards state.h holds the features at hook
    /// `state.stage - 1`. Valid while state.stage < kHooks.
    void advance(ag::Tape& t, State& state);
    /// Output head; requires all hooks passed. Returns (batch*L) x C'.
    ag::Var finish(ag::Tape& t, State& state);

    ag::Var forward(ag::Tape& t, const BranchInput& in);
    /// Convenience inference call.
    Mat predict(const BranchInput& in);

    int hook_width(int hook) const { return hook == 1 ? 2 * config_.width : config_.width; }
    PlaneTokens hook_planes(int hook) const;

    /// Identifies architecture and geometry for checkpoint compatibility.
    std::string fingerprint() const;

private:
    void check_input(const BranchInput& in) const;
    ag::Var res_block(ag::Tape& t, const std::string& name, const ag::Var& h, const ag::Var& temb, int level,
                      Eigen::Index batch);
    /// Row indices of the four grid neighbours (up, down, left, right) of
    /// every token within its plane; -1 past a plane edge.
    const std::array<std::vector<Eigen::Index>, 4>& taps(int level, Eigen::Index batch) const;

    DenoiserConfig config_;
    LatentLayout layout_;
    nn::ParamStore params_;
    mutable std::map<std::pair<int, Eigen::Index>, std::array<std::vector<Eigen::Index>, 4>> taps_;
};

struct JointConfig {
    CrossMode mode = CrossMode::Stca;
    bool all_layers = false; // cross-attention at every hook, not only the deepest
    bool shared = true;      // one parameter set for the three plane pairs
    int heads = 2;
    uint64_t seed = 5;

    bool operator==(const JointConfig&) const = default;
};

/// Two branches coupled by cross-attention at hook points.
class JointDenoiser {
public:
    JointDenoiser(Denoiser a, Denoiser b, const JointConfig& config);

    std::pair<ag::Var, ag::Var> forward(ag::Tape& t, const BranchInput& a, const BranchInput& b,
                                        ag::AttentionProbe* probe = nullptr);
    std::pair<Mat, Mat> predict(const BranchInput& a, const BranchInput& b, ag::AttentionProbe* probe = nullptr);

    Denoiser& branch(Modality m) { return m == Modality::A ? a_ : b_; }
    const Denoiser& branch(Modality m) const { return m == Modality::A ? a_ : b_; }
    nn::ParamStore& cross_params() { return cross_; }
    const nn::ParamStore& cross_params() const { return cross_; }
    const JointConfig& config() const { return config_; }
    std::vector<ag::Param*> all_params();
    bool hook_active(int hook) const { return hook == 1 || config_.all_layers; }

private:
    CrossAttentionSite site(int hook) const;

    Denoiser a_, b_;
    JointConfig config_;
    nn::ParamStore cross_;
};

/// Builds the joint model from two single-modality denoisers. Throws
/// CheckpointError when their geometry or architecture differ. With
/// zero-initialised output projections the joint outputs equal the single
/// branches' outputs.
JointDenoiser init_joint_from_pretrained(const Denoiser& a, const Denoiser& b, const JointConfig& config);

} // namespace syncvp
