// SPDX-License-Identifier: Apache-2.0
#include "syncvp/stca.hpp"

#include "syncvp/triplane_codec.hpp"

#include <array>
#include <numeric>

namespace syncvp {

namespace {

constexpr std::array<const char*, 6> kProjections{"q_r", "q_d", "v_r", "v_d", "o_r", "o_d"};

std::vector<std::string> groups(bool shared) {
    if (shared) return {"all"};
    return {"s", "h", "w"};
}

} // namespace

void CrossAttentionSite::create(nn::ParamStore& store, Rng& rng, bool zero_output) const {
    if (heads < 1 || width % heads != 0) throw ConfigError("cross-attention width must be divisible by heads");
    for (const std::string& g : groups(shared)) {
        for (const char* p : kProjections) {
            const std::string name = prefix + "." + g + "." + p;
            const bool is_out = p[0] == 'o';
            store.add(name, (is_out && zero_output) ? Mat::Zero(width, width) : ag::init_weight(width, width, rng));
        }
    }
}

std::pair<ag::Var, ag::Var> CrossAttentionSite::forward(ag::Tape& t, nn::ParamStore& store, const ag::Var& zr,
                                                        const ag::Var& zd, const PlaneTokens& planes,
                                                        Eigen::Index batch, CrossMode mode,
                                                        ag::AttentionProbe* probe) const {
    const Eigen::Index n = planes.total();
    if (zr.cols() != width || zd.cols() != width) throw ShapeError("cross-attention: feature width mismatch");
    if (zr.rows() != batch * n || zd.rows() != batch * n) throw ShapeError("cross-attention: token layout mismatch");

    // Spans per parameter group.
    const std::array<Eigen::Index, 3> sizes{planes.s, planes.h, planes.w};
    const std::array<Eigen::Index, 3> offsets{0, planes.s, planes.s + planes.h};
    std::vector<std::vector<ag::AttnSpan>> spans(shared || mode == CrossMode::Vanilla ? 1 : 3);
    for (Eigen::Index b = 0; b < batch; ++b) {
        if (mode == CrossMode::Vanilla) {
            spans[0].push_back({b * n, n, b * n, n});
            continue;
        }
        for (size_t p = 0; p < 3; ++p) {
            if (sizes[p] == 0) continue;
            const Eigen::Index start = b * n + offsets[p];
            spans[spans.size() == 1 ? 0 : p].push_back({start, sizes[p], start, sizes[p]});
        }
    }

    const auto names = groups(shared);
    ag::Var upd_r, upd_d;
    for (size_t g = 0; g < spans.size(); ++g) {
        if (spans[g].empty()) continue;
        // The vanilla baseline reuses the first (or only) parameter group.
        const std::string base = prefix + "." + names[mode == CrossMode::Vanilla ? 0 : g] + ".";
        auto P = [&](const char* p) { return t.param(store.at(base + p)); };
        const ag::Var qr = ag::matmul(zr, P("q_r"));
        const ag::Var qd = ag::matmul(zd, P("q_d"));
        const ag::Var vr = ag::matmul(zr, P("v_r"));
        const ag::Var vd = ag::matmul(zd, P("v_d"));
        const ag::Var both = ag::dual_attention(qr, qd, vr, vd, spans[g], heads, probe);
        const ag::Var out_r = ag::matmul(ag::slice_rows(both, 0, zr.rows()), P("o_r"));
        const ag::Var out_d = ag::matmul(ag::slice_rows(both, zr.rows(), zd.rows()), P("o_d"));
        upd_r = upd_r.valid() ? ag::add(upd_r, out_r) : out_r;
        upd_d = upd_d.valid() ? ag::add(upd_d, out_d) : out_d;
    }
    if (!upd_r.valid()) return {zr, zd};
    return {ag::add(zr, upd_r), ag::add(zd, upd_d)};
}

StcaParams StcaParams::create(int width, int heads, bool shared, Rng& rng, bool zero_output) {
    StcaParams p;
    p.site = CrossAttentionSite{"stca", width, heads, shared};
    p.site.create(p.store, rng, zero_output);
    return p;
}

namespace {

std::pair<Mat, Mat> run(const Mat& z_r, const Mat& z_d, const PlaneTokens& planes, StcaParams& params, CrossMode mode,
                        ag::AttentionProbe* probe) {
    if (z_r.cols() != params.site.width || z_d.cols() != params.site.width)
        throw ShapeError("token width does not match attention parameters");
    if (z_r.rows() != z_d.rows() || z_r.rows() != planes.total())
        throw ShapeError("both latents must share the plane layout");
    ag::Tape t(false);
    const auto [r, d] =
        params.site.forward(t, params.store, t.constant(z_r), t.constant(z_d), planes, 1, mode, probe);
    return {r.value(), d.value()};
}

} // namespace

std::pair<Mat, Mat> shared_attention(const Mat& z_r, const Mat& z_d, StcaParams& params, ag::AttentionProbe* probe) {
    if (z_r.rows() < 1 || z_d.rows() < 1) throw ShapeError("shared_attention needs at least one token per side");
    if (z_r.cols() != params.site.width || z_d.cols() != params.site.width)
        throw ShapeError("token width does not match attention parameters");
    const std::string group = params.site.prefix + "." + (params.site.shared ? "all" : "s") + ".";
    auto& s = params.store;
    const Mat qr = z_r * s.at(group + "q_r").value;
    const Mat qd = z_d * s.at(group + "q_d").value;
    const Mat vr = z_r * s.at(group + "v_r").value;
    const Mat vd = z_d * s.at(group + "v_d").value;
    ag::Tape t(false);
    const ag::Var both = ag::dual_attention(t.constant(qr), t.constant(qd), t.constant(vr), t.constant(vd),
                                            {{0, z_r.rows(), 0, z_d.rows()}}, params.site.heads, probe);
    const Mat& o = both.value();
    return {z_r + o.topRows(z_r.rows()) * s.at(group + "o_r").value,
            z_d + o.bottomRows(z_d.rows()) * s.at(group + "o_d").value};
}

std::pair<Mat, Mat> stca_forward(const Mat& z_R, const Mat& z_D, const PlaneTokens& planes, StcaParams& params,
                                 ag::AttentionProbe* probe) {
    return run(z_R, z_D, planes, params, CrossMode::Stca, probe);
}

std::pair<Mat, Mat> vanilla_ca_forward(const Mat& z_R, const Mat& z_D, const PlaneTokens& planes, StcaParams& params,
                                       ag::AttentionProbe* probe) {
    return run(z_R, z_D, planes, params, CrossMode::Vanilla, probe);
}

AttentionCostReport attention_cost(const PlaneTokens& planes) {
    const auto s = static_cast<uint64_t>(planes.s), h = static_cast<uint64_t>(planes.h),
               w = static_cast<uint64_t>(planes.w);
    AttentionCostReport r;
    r.stca_flops = s * s + h * h + w * w;
    r.ca_flops = (s + h + w) * (s + h + w);
    const uint64_t g = std::gcd(r.stca_flops, r.ca_flops);
    r.ratio = g == 0 ? Rational{0, 1} : Rational{r.stca_flops / g, r.ca_flops / g};
    return r;
}

AttentionCostReport attention_cost(int T, int H, int W, int P) {
    const LatentLayout l = latent_layout(T, H, W, P, 1);
    return attention_cost(PlaneTokens{l.s_tokens, l.h_tokens, l.w_tokens});
}

uint64_t projection_cost(const PlaneTokens& planes, int width) {
    // Four input and two output projections over both modalities' tokens.
    return 6ull * static_cast<uint64_t>(planes.total()) * static_cast<uint64_t>(width) * static_cast<uint64_t>(width);
}

} // namespace syncvp
