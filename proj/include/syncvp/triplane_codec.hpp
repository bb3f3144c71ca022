// SPDX-License-Identifier: Apache-2.0
#pragma once

// Triplane latent layout and the two frame-sequence codecs.
//
// A clip of T frames, H x W pixels and C channels maps to a latent of C' rows
// and L = (H/P)(W/P) + T(H/P) + T(W/P) token columns. Token order is
// [content plane z_s (row-major over H/P x W/P), temporal plane z_h (T x H/P),
// temporal plane z_w (T x W/P)].

#include "syncvp/core.hpp"
#include "syncvp/nn.hpp"

#include <array>
#include <functional>
#include <memory>
#include <vector>

namespace syncvp {

enum class Modality { A, B };
enum class Role { Condition, Target };

const char* modality_name(Modality m);

struct VideoClip {
    int T = 0, H = 0, W = 0, C = 1;
    Modality modality = Modality::A;
    Role role = Role::Target;
    std::vector<double> data; // ((t*H + y)*W + x)*C + c

    static VideoClip zeros(int T, int H, int W, int C, Modality m = Modality::A, Role r = Role::Target);

    double& at(int t, int y, int x, int c = 0) { return data[index(t, y, x, c)]; }
    double at(int t, int y, int x, int c = 0) const { return data[index(t, y, x, c)]; }
    size_t index(int t, int y, int x, int c) const {
        return ((static_cast<size_t>(t) * H + y) * W + x) * C + c;
    }
    size_t size() const { return data.size(); }
    bool same_geometry(const VideoClip& o) const { return T == o.T && H == o.H && W == o.W && C == o.C; }

    /// Frames [t0, t0+n) as a new clip.
    VideoClip frames(int t0, int n) const;
    /// Appends other's frames (same H, W, C).
    void append(const VideoClip& other);
    void clamp();
    /// Throws GeometryError/DomainError if the clip violates its invariants.
    void validate() const;
};

struct PlaneShape {
    int channels, rows, cols;
    bool operator==(const PlaneShape&) const = default;
};

struct LatentLayout {
    int T = 0, H = 0, W = 0, P = 0, channels = 0;
    PlaneShape shape_s{}, shape_h{}, shape_w{};
    Eigen::Index s_tokens = 0, h_tokens = 0, w_tokens = 0, L = 0;

    std::array<Eigen::Index, 3> plane_tokens() const { return {s_tokens, h_tokens, w_tokens}; }
    std::array<Eigen::Index, 3> plane_offsets() const { return {0, s_tokens, s_tokens + h_tokens}; }
    bool operator==(const LatentLayout& o) const {
        return T == o.T && H == o.H && W == o.W && P == o.P && channels == o.channels;
    }
};

/// Plane shapes and flattened length for a geometry. Throws GeometryError if
/// H or W is not a multiple of P, or T, P, C' < 1.
LatentLayout latent_layout(int T, int H, int W, int P, int latent_channels);

struct TriplaneLatent {
    LatentLayout layout;
    Mat z; // channels x L

    static TriplaneLatent zeros(const LatentLayout& layout);
    auto plane_s() const { return z.middleCols(0, layout.s_tokens); }
    auto plane_h() const { return z.middleCols(layout.s_tokens, layout.h_tokens); }
    auto plane_w() const { return z.middleCols(layout.s_tokens + layout.h_tokens, layout.w_tokens); }
    void validate() const;
};

struct ClipGeometry {
    int T = 8, H = 32, W = 32, C = 1;
    bool operator==(const ClipGeometry&) const = default;
};

class Codec {
public:
    virtual ~Codec() = default;
    virtual const LatentLayout& layout() const = 0;
    virtual ClipGeometry geometry() const = 0;
    virtual std::vector<TriplaneLatent> encode_batch(const std::vector<VideoClip>& clips) const = 0;
    virtual std::vector<VideoClip> decode_batch(const std::vector<TriplaneLatent>& latents, Modality m) const = 0;

    TriplaneLatent encode(const VideoClip& clip) const { return encode_batch({clip}).front(); }
    VideoClip decode(const TriplaneLatent& z, Modality m = Modality::A) const { return decode_batch({z}, m).front(); }

protected:
    void check_clip(const VideoClip& clip) const;
    void check_latent(const TriplaneLatent& z) const;
};

/// Fixed-seed orthonormal linear codec: encode is Q x, decode is Q^T z clamped
/// to [-1, 1]. Requires C'*L >= T*H*W*C so that decode(encode(x)) == x.
class TestCodec final : public Codec {
public:
    TestCodec(ClipGeometry geometry, int P, int latent_channels, uint64_t seed = 7);

    const LatentLayout& layout() const override { return layout_; }
    ClipGeometry geometry() const override { return geometry_; }
    std::vector<TriplaneLatent> encode_batch(const std::vector<VideoClip>& clips) const override;
    std::vector<VideoClip> decode_batch(const std::vector<TriplaneLatent>& latents, Modality m) const override;

private:
    ClipGeometry geometry_;
    LatentLayout layout_;
    Mat basis_; // (C'*L) x (T*H*W*C), orthonormal columns
};

struct CodecConfig {
    ClipGeometry geometry{};
    int patch = 4;
    int latent_channels = 4;
    int hidden = 32;
    uint64_t seed = 1;
};

/// Trainable triplane codec. Each plane is produced by an MLP over the pixels
/// along the complementary axis (all frames of a spatial patch for z_s, a
/// full-width row strip for z_h, a full-height column strip for z_w); the
/// decoder reconstructs each frame patch from its three plane tokens.
class TrainableCodec final : public Codec {
public:
    explicit TrainableCodec(const CodecConfig& config);

    const LatentLayout& layout() const override { return layout_; }
    ClipGeometry geometry() const override { return config_.geometry; }
    std::vector<TriplaneLatent> encode_batch(const std::vector<VideoClip>& clips) const override;
    std::vector<VideoClip> decode_batch(const std::vector<TriplaneLatent>& latents, Modality m) const override;

    /// Differentiable pieces used by training. Latent rows are
    /// [B*HpWp s-tokens; B*T*Hp h-tokens; B*T*Wp w-tokens].
    struct Planes {
        ag::Var s, h, w;
    };
    Planes encode_graph(ag::Tape& t, const std::vector<VideoClip>& clips) const;
    ag::Var decode_graph(ag::Tape& t, const Planes& planes, size_t batch) const;
    /// Patch-matrix view of clips matching decode_graph's output rows.
    Mat target_patches(const std::vector<VideoClip>& clips) const;

    const CodecConfig& config() const { return config_; }
    nn::ParamStore& params() { return params_; }
    const nn::ParamStore& params() const { return params_; }
    /// Multiplier applied to raw plane activations so latents have unit spread.
    double latent_scale() const { return latent_scale_; }
    void set_latent_scale(double s) { latent_scale_ = s; }

private:
    CodecConfig config_;
    LatentLayout layout_;
    nn::ParamStore params_;
    double latent_scale_ = 1.0;
};

struct CodecTrainConfig {
    int iterations = 1500;
    int batch = 8;
    double lr = 2e-3;
    double lr_final = 2e-4; // cosine decay target
    uint64_t seed = 11;
};

struct CodecTrainResult {
    std::vector<double> losses;
};

/// Cosine interpolation from lr0 (it = 0) to lr1 (it = total - 1).
double cosine_lr(double lr0, double lr1, long it, long total);

/// Minimises pixel MSE over clips produced by `sample_clip`. Zero iterations
/// leaves the codec untouched. Throws NumericalError on a non-finite loss.
CodecTrainResult train_codec(TrainableCodec& codec, const std::function<VideoClip(Rng&)>& sample_clip,
                             const CodecTrainConfig& config);

/// Sets latent_scale so encoded latents of `clips` have unit RMS.
void calibrate_latent_scale(TrainableCodec& codec, const std::vector<VideoClip>& clips);

} // namespace syncvp
