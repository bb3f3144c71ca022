// SPDX-License-Identifier: Apache-2.0
#pragma once

// Split spatio-temporal cross-attention between two modality branches.
//
// For each matching plane pair (z_s, z_h, z_w) a single score matrix
// A = Q_R Q_D^T / sqrt(d_k) is built per head and used in both directions:
//   z_r <- z_r + W_OR (Softmax(A)   V_D)
//   z_d <- z_d + W_OD (Softmax(A^T) V_R)
// The vanilla baseline applies the same update over the concatenation of all
// three planes.

#include "syncvp/nn.hpp"

#include <cstdint>
#include <string>
#include <utility>

namespace syncvp {

enum class CrossMode { Stca, Vanilla };

/// Token counts of the three planes for one sample at some resolution.
struct PlaneTokens {
    Eigen::Index s = 0, h = 0, w = 0;
    Eigen::Index total() const { return s + h + w; }
};

/// Parameter group for one cross-attention site. Names are
/// `<prefix>.<group>.{q_r,q_d,v_r,v_d,o_r,o_d}` where group is `all` when
/// shared across planes, else `s`, `h`, `w`.
struct CrossAttentionSite {
    std::string prefix;
    int width = 64;
    int heads = 2;
    bool shared = true;

    /// Adds the site's parameters. Output projections start at zero unless
    /// zero_output is false.
    void create(nn::ParamStore& store, Rng& rng, bool zero_output = true) const;

    /// zr, zd: (batch * planes.total()) x width, sample-major rows.
    std::pair<ag::Var, ag::Var> forward(ag::Tape& t, nn::ParamStore& store, const ag::Var& zr, const ag::Var& zd,
                                        const PlaneTokens& planes, Eigen::Index batch, CrossMode mode,
                                        ag::AttentionProbe* probe = nullptr) const;
};

/// Standalone parameter set for the numeric entry points below.
struct StcaParams {
    CrossAttentionSite site;
    nn::ParamStore store;

    static StcaParams create(int width, int heads, bool shared, Rng& rng, bool zero_output = true);
};

/// Dual-way attention over one plane pair (N_r x dm and N_d x dm tokens).
/// Uses the shared group, or the `s` group when parameters are not shared.
std::pair<Mat, Mat> shared_attention(const Mat& z_r, const Mat& z_d, StcaParams& params,
                                     ag::AttentionProbe* probe = nullptr);

/// Applies shared_attention to the (s,s), (h,h), (w,w) pairs of one sample.
std::pair<Mat, Mat> stca_forward(const Mat& z_R, const Mat& z_D, const PlaneTokens& planes, StcaParams& params,
                                 ag::AttentionProbe* probe = nullptr);

/// Same contract with attention over all planes' tokens at once.
std::pair<Mat, Mat> vanilla_ca_forward(const Mat& z_R, const Mat& z_D, const PlaneTokens& planes, StcaParams& params,
                                       ag::AttentionProbe* probe = nullptr);

struct Rational {
    uint64_t num = 0, den = 1;
    double value() const { return static_cast<double>(num) / static_cast<double>(den); }
    bool operator==(const Rational&) const = default;
};

/// Quadratic attention cost in score-matrix entries: STCA pays the sum of
/// squared per-plane token counts, CA the square of their sum. Projection
/// costs are excluded.
struct AttentionCostReport {
    uint64_t stca_flops = 0;
    uint64_t ca_flops = 0;
    Rational ratio; // stca_flops / ca_flops, reduced
};

AttentionCostReport attention_cost(int T, int H, int W, int P);
AttentionCostReport attention_cost(const PlaneTokens& planes);

/// Projection cost (multiply-adds) of one cross-attention call, reported
/// separately from the quadratic terms.
uint64_t projection_cost(const PlaneTokens& planes, int width);

} // namespace syncvp
