// SPDX-License-Identifier: Apache-2.0
#include "syncvp/denoiser.hpp"

#include <cmath>
#include <sstream>

namespace syncvp {

Mat to_rows(const std::vector<TriplaneLatent>& latents) {
    if (latents.empty()) return Mat();
    const Eigen::Index L = latents.front().layout.L, C = latents.front().layout.channels;
    Mat out(static_cast<Eigen::Index>(latents.size()) * L, C);
    for (size_t i = 0; i < latents.size(); ++i) {
        if (latents[i].z.rows() != C || latents[i].z.cols() != L) throw ShapeError("to_rows: mixed latent layouts");
        out.middleRows(static_cast<Eigen::Index>(i) * L, L) = latents[i].z.transpose();
    }
    return out;
}

Mat to_rows(const TriplaneLatent& latent) { return latent.z.transpose(); }

std::vector<TriplaneLatent> from_rows(const Mat& rows, const LatentLayout& layout) {
    if (rows.cols() != layout.channels || rows.rows() % layout.L != 0) throw ShapeError("from_rows: layout mismatch");
    std::vector<TriplaneLatent> out;
    for (Eigen::Index b = 0; b < rows.rows() / layout.L; ++b)
        out.push_back(TriplaneLatent{layout, rows.middleRows(b * layout.L, layout.L).transpose()});
    return out;
}

Mat condition_inject(const Mat& z_t, const Mat& cond) {
    if (z_t.rows() != cond.rows() || z_t.cols() != cond.cols())
        throw ShapeError("condition_inject: latent layouts differ (" + shape_str(z_t) + " vs " + shape_str(cond) + ")");
    Mat out(z_t.rows(), z_t.cols() + cond.cols());
    out << z_t, cond;
    return out;
}

Mat step_embedding(const std::vector<int>& steps, int dim) {
    const int half = dim / 2;
    Mat out = Mat::Zero(static_cast<Eigen::Index>(steps.size()), dim);
    for (size_t i = 0; i < steps.size(); ++i)
        for (int k = 0; k < half; ++k) {
            const double freq = std::exp(-std::log(10000.0) * k / std::max(half, 1));
            out(static_cast<Eigen::Index>(i), k) = std::sin(steps[i] * freq);
            out(static_cast<Eigen::Index>(i), half + k) = std::cos(steps[i] * freq);
        }
    return out;
}

// ---------------------------------------------------------------- Denoiser

namespace {

void create_res_block(nn::ParamStore& p, const std::string& name, int width, int temb_width, Rng& rng) {
    nn::LayerNorm::create(p, name + ".ln", width);
    nn::Linear::create(p, name + ".conv", 5 * width, width, rng);
    nn::Linear::create(p, name + ".temb", temb_width, width, rng);
    nn::Linear::create(p, name + ".out", width, width, rng, 0.5);
}

} // namespace

Denoiser::Denoiser(const DenoiserConfig& config, const LatentLayout& layout) : config_(config), layout_(layout) {
    if (config.latent_channels != layout.channels) throw ConfigError("denoiser channels differ from latent layout");
    if (config.width < 1 || config.heads < 1 || (2 * config.width) % config.heads != 0)
        throw ConfigError("denoiser width must be divisible by head count");
    if (config.time_dim < 2 || config.max_steps < 1) throw ConfigError("invalid time embedding settings");
    for (Eigen::Index n : layout.plane_tokens())
        if (n % 4 != 0) throw GeometryError("every plane's token count must be divisible by 4 for the 4x reduction");

    const int w = config.width, w2 = 2 * config.width, C = config.latent_channels;
    Rng rng(config.seed);
    nn::Linear::create(params_, "stem", 2 * C, w, rng);
    params_.add("pos", rng.normal_matrix(layout.L, w) * 0.2);
    nn::Linear::create(params_, "time.0", config.time_dim, w2, rng);
    nn::Linear::create(params_, "time.1", w2, w2, rng);
    create_res_block(params_, "res1", w, w2, rng);
    nn::Linear::create(params_, "down", 4 * w, w2, rng);
    create_res_block(params_, "res2", w2, w2, rng);
    nn::LayerNorm::create(params_, "attn.ln", w2);
    for (const char* n : {"attn.q", "attn.k", "attn.v"}) nn::Linear::create(params_, n, w2, w2, rng);
    nn::Linear::create(params_, "attn.o", w2, w2, rng, 0.5);
    create_res_block(params_, "res3", w2, w2, rng);
    nn::Linear::create(params_, "up", w2, 4 * w, rng);
    nn::Linear::create(params_, "merge", 2 * w, w, rng);
    create_res_block(params_, "res4", w, w2, rng);
    nn::LayerNorm::create(params_, "head.ln", w);
    nn::Linear::create(params_, "head", w, C, rng);
}

PlaneTokens Denoiser::hook_planes(int hook) const {
    const Eigen::Index div = hook == 1 ? 4 : 1;
    return PlaneTokens{layout_.s_tokens / div, layout_.h_tokens / div, layout_.w_tokens / div};
}

const std::array<std::vector<Eigen::Index>, 4>& Denoiser::taps(int level, Eigen::Index batch) const {
    const auto key = std::pair{level, batch};
    if (auto it = taps_.find(key); it != taps_.end()) return it->second;
    // Plane grids: s is (H/P, W/P), h is (T, H/P), w is (T, W/P). The deep
    // level merges 4 consecutive tokens, i.e. quarters the column count.
    const Eigen::Index hp = layout_.H / layout_.P, wp = layout_.W / layout_.P, T = layout_.T;
    std::vector<std::array<Eigen::Index, 2>> grids{{hp, wp}, {T, hp}, {T, wp}};
    if (level == 2)
        for (auto& g : grids) g = g[1] % 4 == 0 ? std::array{g[0], g[1] / 4} : std::array<Eigen::Index, 2>{1, g[0] * g[1] / 4};
    std::array<std::vector<Eigen::Index>, 4> out;
    Eigen::Index base = 0;
    for (Eigen::Index b = 0; b < batch; ++b)
        for (const auto& [rows, cols] : grids) {
            for (Eigen::Index r = 0; r < rows; ++r)
                for (Eigen::Index c = 0; c < cols; ++c) {
                    auto at = [&](Eigen::Index rr, Eigen::Index cc) -> Eigen::Index {
                        return rr < 0 || rr >= rows || cc < 0 || cc >= cols ? -1 : base + rr * cols + cc;
                    };
                    out[0].push_back(at(r - 1, c));
                    out[1].push_back(at(r + 1, c));
                    out[2].push_back(at(r, c - 1));
                    out[3].push_back(at(r, c + 1));
                }
            base += rows * cols;
        }
    return taps_.emplace(key, std::move(out)).first->second;
}

std::string Denoiser::fingerprint() const {
    std::ostringstream os;
    os << "token-unet/v2 C'=" << config_.latent_channels << " width=" << config_.width << " heads=" << config_.heads
       << " time=" << config_.time_dim << " steps=" << config_.max_steps << " T=" << layout_.T << " H=" << layout_.H
       << " W=" << layout_.W << " P=" << layout_.P;
    return os.str();
}

void Denoiser::check_input(const BranchInput& in) const {
    const Eigen::Index rows = in.batch() * layout_.L;
    if (in.batch() < 1) throw ShapeError("denoiser: empty batch");
    if (in.z_t.rows() != rows || in.z_t.cols() != config_.latent_channels)
        throw ShapeError("denoiser: z_t must be (batch*L) x C', got " + shape_str(in.z_t));
    if (in.cond.rows() != rows || in.cond.cols() != config_.latent_channels)
        throw ShapeError("denoiser: condition must match z_t, got " + shape_str(in.cond));
    for (int s : in.steps)
        if (s < 1 || s > config_.max_steps)
            throw DomainError("diffusion step " + std::to_string(s) + " outside [1, " +
                              std::to_string(config_.max_steps) + "]");
}

ag::Var Denoiser::res_block(ag::Tape& t, const std::string& name, const ag::Var& h, const ag::Var& temb, int level,
                            Eigen::Index batch) {
    const auto& nb = taps(level, batch);
    ag::Var y = nn::LayerNorm::bind(params_, name + ".ln")(t, h);
    y = ag::concat_cols({y, ag::gather_rows(y, nb[0]), ag::gather_rows(y, nb[1]), ag::gather_rows(y, nb[2]),
                         ag::gather_rows(y, nb[3])});
    y = nn::Linear::bind(params_, name + ".conv")(t, y);
    const ag::Var tb = nn::Linear::bind(params_, name + ".temb")(t, temb);
    y = ag::silu(ag::add_segments(y, tb, h.rows() / batch));
    y = nn::Linear::bind(params_, name + ".out")(t, y);
    return ag::add(h, y);
}

Denoiser::State Denoiser::begin(ag::Tape& t, const BranchInput& in) {
    check_input(in);
    State s;
    s.batch = in.batch();
    ag::Var te = t.constant(step_embedding(in.steps, config_.time_dim));
    te = ag::silu(nn::Linear::bind(params_, "time.0")(t, te));
    s.temb = ag::silu(nn::Linear::bind(params_, "time.1")(t, te));
    const ag::Var x = t.constant(condition_inject(in.z_t, in.cond));
    s.h = ag::add_tiled(nn::Linear::bind(params_, "stem")(t, x), t.param(params_.at("pos")));
    return s;
}

void Denoiser::advance(ag::Tape& t, State& s) {
    const int w = config_.width;
    switch (s.stage) {
    case 0:
        s.h = res_block(t, "res1", s.h, s.temb, 1, s.batch);
        s.skip = s.h;
        break;
    case 1: {
        ag::Var d = ag::reshape(s.h, s.h.rows() / 4, 4 * w);
        d = nn::Linear::bind(params_, "down")(t, d);
        d = res_block(t, "res2", d, s.temb, 2, s.batch);
        const ag::Var y = nn::LayerNorm::bind(params_, "attn.ln")(t, d);
        const ag::Var q = nn::Linear::bind(params_, "attn.q")(t, y);
        const ag::Var k = nn::Linear::bind(params_, "attn.k")(t, y);
        const ag::Var v = nn::Linear::bind(params_, "attn.v")(t, y);
        const Eigen::Index n = layout_.L / 4;
        std::vector<ag::AttnSpan> spans;
        for (Eigen::Index b = 0; b < s.batch; ++b) spans.push_back({b * n, n, b * n, n});
        const ag::Var o = ag::attention(q, k, v, spans, config_.heads);
        s.h = ag::add(d, nn::Linear::bind(params_, "attn.o")(t, o));
        break;
    }
    case 2: {
        ag::Var d = res_block(t, "res3", s.h, s.temb, 2, s.batch);
        ag::Var u = nn::Linear::bind(params_, "up")(t, d);
        u = ag::reshape(u, u.rows() * 4, w);
        u = nn::Linear::bind(params_, "merge")(t, ag::concat_cols({u, s.skip}));
        s.h = res_block(t, "res4", u, s.temb, 1, s.batch);
        break;
    }
    default:
        throw DomainError("denoiser: no stage left to advance");
    }
    ++s.stage;
}

ag::Var Denoiser::finish(ag::Tape& t, State& s) {
    if (s.stage != kHooks) throw DomainError("denoiser: finish() before all stages ran");
    const ag::Var y = nn::LayerNorm::bind(params_, "head.ln")(t, s.h);
    return nn::Linear::bind(params_, "head")(t, y);
}

ag::Var Denoiser::forward(ag::Tape& t, const BranchInput& in) {
    State s = begin(t, in);
    while (s.stage < kHooks) advance(t, s);
    return finish(t, s);
}

Mat Denoiser::predict(const BranchInput& in) {
    ag::Tape t(false);
    return forward(t, in).value();
}

// ---------------------------------------------------------------- JointDenoiser

JointDenoiser::JointDenoiser(Denoiser a, Denoiser b, const JointConfig& config)
    : a_(std::move(a)), b_(std::move(b)), config_(config) {
    if (a_.fingerprint() != b_.fingerprint())
        throw CheckpointError("incompatible branches: '" + a_.fingerprint() + "' vs '" + b_.fingerprint() + "'");
    Rng rng(config.seed);
    for (int hook = 0; hook < Denoiser::kHooks; ++hook)
        if (hook_active(hook)) site(hook).create(cross_, rng);
}

CrossAttentionSite JointDenoiser::site(int hook) const {
    return CrossAttentionSite{"cross" + std::to_string(hook), a_.hook_width(hook), config_.heads, config_.shared};
}

std::vector<ag::Param*> JointDenoiser::all_params() {
    std::vector<ag::Param*> out = a_.params().all();
    for (ag::Param* p : b_.params().all()) out.push_back(p);
    for (ag::Param* p : cross_.all()) out.push_back(p);
    return out;
}

std::pair<ag::Var, ag::Var> JointDenoiser::forward(ag::Tape& t, const BranchInput& a, const BranchInput& b,
                                                   ag::AttentionProbe* probe) {
    if (a.steps != b.steps) throw ShapeError("joint forward: branches must share diffusion steps");
    Denoiser::State sa = a_.begin(t, a);
    Denoiser::State sb = b_.begin(t, b);
    for (int hook = 0; hook < Denoiser::kHooks; ++hook) {
        a_.advance(t, sa);
        b_.advance(t, sb);
        // Rendezvous: both branches are at the same depth here.
        if (hook_active(hook)) {
            auto [ha, hb] = site(hook).forward(t, cross_, sa.h, sb.h, a_.hook_planes(hook), sa.batch, config_.mode, probe);
            sa.h = ha;
            sb.h = hb;
        }
    }
    return {a_.finish(t, sa), b_.finish(t, sb)};
}

std::pair<Mat, Mat> JointDenoiser::predict(const BranchInput& a, const BranchInput& b, ag::AttentionProbe* probe) {
    ag::Tape t(false);
    auto [ea, eb] = forward(t, a, b, probe);
    return {ea.value(), eb.value()};
}

JointDenoiser init_joint_from_pretrained(const Denoiser& a, const Denoiser& b, const JointConfig& config) {
    if (!(a.config().latent_channels == b.config().latent_channels) || !(a.layout() == b.layout()))
        throw CheckpointError("incompatible checkpoints: latent geometry differs");
    return JointDenoiser(a, b, config);
}

} // namespace syncvp
