// SPDX-License-Identifier: Apache-2.0
#include "syncvp/triplane_codec.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

namespace syncvp {

const char* modality_name(Modality m) { return m == Modality::A ? "A" : "B"; }

// ---------------------------------------------------------------- VideoClip

VideoClip VideoClip::zeros(int T, int H, int W, int C, Modality m, Role r) {
    VideoClip c;
    c.T = T;
    c.H = H;
    c.W = W;
    c.C = C;
    c.modality = m;
    c.role = r;
    c.data.assign(static_cast<size_t>(T) * H * W * C, 0.0);
    return c;
}

VideoClip VideoClip::frames(int t0, int n) const {
    if (t0 < 0 || n < 0 || t0 + n > T) throw DomainError("frame range out of bounds");
    VideoClip out = zeros(n, H, W, C, modality, role);
    const size_t frame = static_cast<size_t>(H) * W * C;
    std::copy(data.begin() + static_cast<long>(t0 * frame), data.begin() + static_cast<long>((t0 + n) * frame),
              out.data.begin());
    return out;
}

void VideoClip::append(const VideoClip& other) {
    if (other.H != H || other.W != W || other.C != C) throw GeometryError("append: frame geometry differs");
    data.insert(data.end(), other.data.begin(), other.data.end());
    T += other.T;
}

void VideoClip::clamp() {
    for (double& v : data) v = std::clamp(v, -1.0, 1.0);
}

void VideoClip::validate() const {
    if (T < 1 || H < 1 || W < 1 || C < 1) throw GeometryError("clip dimensions must be positive");
    if (data.size() != static_cast<size_t>(T) * H * W * C) throw GeometryError("clip buffer size mismatch");
    for (double v : data)
        if (!(v >= -1.0 && v <= 1.0)) throw DomainError("clip value outside [-1, 1]");
}

// ---------------------------------------------------------------- layout

LatentLayout latent_layout(int T, int H, int W, int P, int latent_channels) {
    if (T < 1) throw GeometryError("T must be >= 1");
    if (P < 1) throw GeometryError("patch size must be >= 1");
    if (latent_channels < 1) throw GeometryError("latent channels must be >= 1");
    if (H < 1 || W < 1 || H % P != 0 || W % P != 0)
        throw GeometryError("H and W must be positive multiples of P (H=" + std::to_string(H) +
                            ", W=" + std::to_string(W) + ", P=" + std::to_string(P) + ")");
    LatentLayout l;
    l.T = T;
    l.H = H;
    l.W = W;
    l.P = P;
    l.channels = latent_channels;
    const int hp = H / P, wp = W / P;
    l.shape_s = {latent_channels, hp, wp};
    l.shape_h = {latent_channels, T, hp};
    l.shape_w = {latent_channels, T, wp};
    l.s_tokens = static_cast<Eigen::Index>(hp) * wp;
    l.h_tokens = static_cast<Eigen::Index>(T) * hp;
    l.w_tokens = static_cast<Eigen::Index>(T) * wp;
    l.L = l.s_tokens + l.h_tokens + l.w_tokens;
    return l;
}

TriplaneLatent TriplaneLatent::zeros(const LatentLayout& layout) {
    return TriplaneLatent{layout, Mat::Zero(layout.channels, layout.L)};
}

void TriplaneLatent::validate() const {
    if (z.rows() != layout.channels || z.cols() != layout.L)
        throw GeometryError("latent shape " + shape_str(z) + " does not match layout");
    if (!z.allFinite()) throw NumericalError("latent contains non-finite values");
}

void Codec::check_clip(const VideoClip& clip) const {
    const ClipGeometry g = geometry();
    if (clip.T != g.T || clip.H != g.H || clip.W != g.W || clip.C != g.C)
        throw GeometryError("clip geometry does not match codec");
    if (clip.data.size() != static_cast<size_t>(g.T) * g.H * g.W * g.C) throw GeometryError("clip buffer size mismatch");
}

void Codec::check_latent(const TriplaneLatent& z) const {
    if (!(z.layout == layout()) || z.z.rows() != layout().channels || z.z.cols() != layout().L)
        throw GeometryError("latent layout does not match codec");
}

// ---------------------------------------------------------------- TestCodec

TestCodec::TestCodec(ClipGeometry geometry, int P, int latent_channels, uint64_t seed)
    : geometry_(geometry), layout_(latent_layout(geometry.T, geometry.H, geometry.W, P, latent_channels)) {
    const Eigen::Index n = static_cast<Eigen::Index>(geometry.T) * geometry.H * geometry.W * geometry.C;
    const Eigen::Index m = layout_.channels * layout_.L;
    if (m < n)
        throw GeometryError("test codec needs C'*L >= T*H*W*C (" + std::to_string(m) + " < " + std::to_string(n) + ")");
    Rng rng(seed);
    const Eigen::MatrixXd gauss = rng.normal_matrix(m, n);
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(gauss);
    basis_ = qr.householderQ() * Eigen::MatrixXd::Identity(m, n);
}

std::vector<TriplaneLatent> TestCodec::encode_batch(const std::vector<VideoClip>& clips) const {
    std::vector<TriplaneLatent> out;
    for (const VideoClip& c : clips) {
        check_clip(c);
        const Eigen::Map<const Vec> x(c.data.data(), static_cast<Eigen::Index>(c.data.size()));
        const Vec z = basis_ * x;
        out.push_back(TriplaneLatent{layout_, Eigen::Map<const Mat>(z.data(), layout_.channels, layout_.L)});
    }
    return out;
}

std::vector<VideoClip> TestCodec::decode_batch(const std::vector<TriplaneLatent>& latents, Modality m) const {
    std::vector<VideoClip> out;
    for (const TriplaneLatent& z : latents) {
        check_latent(z);
        VideoClip c = VideoClip::zeros(geometry_.T, geometry_.H, geometry_.W, geometry_.C, m, Role::Target);
        const Eigen::Map<const Vec> zv(z.z.data(), z.z.size());
        Eigen::Map<Vec>(c.data.data(), static_cast<Eigen::Index>(c.data.size())) = basis_.transpose() * zv;
        c.clamp();
        out.push_back(std::move(c));
    }
    return out;
}

// ---------------------------------------------------------------- TrainableCodec

TrainableCodec::TrainableCodec(const CodecConfig& config)
    : config_(config),
      layout_(latent_layout(config.geometry.T, config.geometry.H, config.geometry.W, config.patch,
                            config.latent_channels)) {
    if (config.patch != 2 && config.patch != 4 && config.patch != 8) throw ConfigError("patch size must be 2, 4 or 8");
    if (config.hidden < 1) throw ConfigError("codec hidden width must be >= 1");
    const auto& g = config.geometry;
    const int P = config.patch, Cp = config.latent_channels, hid = config.hidden;
    Rng rng(config.seed);
    nn::Linear::create(params_, "enc_s.0", static_cast<Eigen::Index>(P) * P * g.T * g.C, hid, rng);
    nn::Linear::create(params_, "enc_s.1", hid, Cp, rng);
    nn::Linear::create(params_, "enc_h.0", static_cast<Eigen::Index>(P) * g.W * g.C, hid, rng);
    nn::Linear::create(params_, "enc_h.1", hid, Cp, rng);
    nn::Linear::create(params_, "enc_w.0", static_cast<Eigen::Index>(g.H) * P * g.C, hid, rng);
    nn::Linear::create(params_, "enc_w.1", hid, Cp, rng);
    nn::Linear::create(params_, "dec.0", 3 * Cp + 2, hid, rng);
    nn::Linear::create(params_, "dec.1", hid, hid, rng);
    nn::Linear::create(params_, "dec.2", hid, static_cast<Eigen::Index>(P) * P * g.C, rng);
}

TrainableCodec::Planes TrainableCodec::encode_graph(ag::Tape& t, const std::vector<VideoClip>& clips) const {
    const auto& g = config_.geometry;
    const int P = config_.patch, hp = g.H / P, wp = g.W / P;
    const auto B = static_cast<Eigen::Index>(clips.size());
    Mat s_in(B * hp * wp, static_cast<Eigen::Index>(P) * P * g.T * g.C);
    Mat h_in(B * g.T * hp, static_cast<Eigen::Index>(P) * g.W * g.C);
    Mat w_in(B * g.T * wp, static_cast<Eigen::Index>(g.H) * P * g.C);
    for (Eigen::Index b = 0; b < B; ++b) {
        const VideoClip& clip = clips[static_cast<size_t>(b)];
        check_clip(clip);
        for (int py = 0; py < hp; ++py)
            for (int px = 0; px < wp; ++px) {
                Eigen::Index col = 0;
                const Eigen::Index row = (b * hp + py) * wp + px;
                for (int tt = 0; tt < g.T; ++tt)
                    for (int dy = 0; dy < P; ++dy)
                        for (int dx = 0; dx < P; ++dx)
                            for (int c = 0; c < g.C; ++c) s_in(row, col++) = clip.at(tt, py * P + dy, px * P + dx, c);
            }
        for (int tt = 0; tt < g.T; ++tt) {
            for (int py = 0; py < hp; ++py) {
                Eigen::Index col = 0;
                const Eigen::Index row = (b * g.T + tt) * hp + py;
                for (int dy = 0; dy < P; ++dy)
                    for (int x = 0; x < g.W; ++x)
                        for (int c = 0; c < g.C; ++c) h_in(row, col++) = clip.at(tt, py * P + dy, x, c);
            }
            for (int px = 0; px < wp; ++px) {
                Eigen::Index col = 0;
                const Eigen::Index row = (b * g.T + tt) * wp + px;
                for (int y = 0; y < g.H; ++y)
                    for (int dx = 0; dx < P; ++dx)
                        for (int c = 0; c < g.C; ++c) w_in(row, col++) = clip.at(tt, y, px * P + dx, c);
            }
        }
    }
    auto& ps = const_cast<nn::ParamStore&>(params_);
    auto mlp = [&](const std::string& prefix, Mat in) {
        ag::Var x = t.constant(std::move(in));
        x = ag::silu(nn::Linear::bind(ps, prefix + ".0")(t, x));
        return nn::Linear::bind(ps, prefix + ".1")(t, x);
    };
    return Planes{mlp("enc_s", std::move(s_in)), mlp("enc_h", std::move(h_in)), mlp("enc_w", std::move(w_in))};
}

ag::Var TrainableCodec::decode_graph(ag::Tape& t, const Planes& planes, size_t batch) const {
    const auto& g = config_.geometry;
    const int P = config_.patch, hp = g.H / P, wp = g.W / P;
    const auto B = static_cast<Eigen::Index>(batch);
    const Eigen::Index rows = B * g.T * hp * wp;
    std::vector<Eigen::Index> is, ih, iw;
    is.reserve(static_cast<size_t>(rows));
    ih.reserve(static_cast<size_t>(rows));
    iw.reserve(static_cast<size_t>(rows));
    Mat pos(rows, 2);
    Eigen::Index r = 0;
    auto norm = [](int i, int n) { return n > 1 ? 2.0 * i / (n - 1) - 1.0 : 0.0; };
    for (Eigen::Index b = 0; b < B; ++b)
        for (int tt = 0; tt < g.T; ++tt)
            for (int py = 0; py < hp; ++py)
                for (int px = 0; px < wp; ++px) {
                    is.push_back((b * hp + py) * wp + px);
                    ih.push_back((b * g.T + tt) * hp + py);
                    iw.push_back((b * g.T + tt) * wp + px);
                    pos(r, 0) = norm(py, hp);
                    pos(r, 1) = norm(px, wp);
                    ++r;
                }
    auto& ps = const_cast<nn::ParamStore&>(params_);
    ag::Var x = ag::concat_cols({ag::gather_rows(planes.s, is), ag::gather_rows(planes.h, ih),
                                 ag::gather_rows(planes.w, iw), t.constant(std::move(pos))});
    x = ag::silu(nn::Linear::bind(ps, "dec.0")(t, x));
    x = ag::silu(nn::Linear::bind(ps, "dec.1")(t, x));
    return ag::tanh(nn::Linear::bind(ps, "dec.2")(t, x));
}

Mat TrainableCodec::target_patches(const std::vector<VideoClip>& clips) const {
    const auto& g = config_.geometry;
    const int P = config_.patch, hp = g.H / P, wp = g.W / P;
    Mat out(static_cast<Eigen::Index>(clips.size()) * g.T * hp * wp, static_cast<Eigen::Index>(P) * P * g.C);
    Eigen::Index r = 0;
    for (const VideoClip& clip : clips) {
        check_clip(clip);
        for (int tt = 0; tt < g.T; ++tt)
            for (int py = 0; py < hp; ++py)
                for (int px = 0; px < wp; ++px, ++r) {
                    Eigen::Index col = 0;
                    for (int dy = 0; dy < P; ++dy)
                        for (int dx = 0; dx < P; ++dx)
                            for (int c = 0; c < g.C; ++c) out(r, col++) = clip.at(tt, py * P + dy, px * P + dx, c);
                }
    }
    return out;
}

std::vector<TriplaneLatent> TrainableCodec::encode_batch(const std::vector<VideoClip>& clips) const {
    if (clips.empty()) return {};
    ag::Tape t(false);
    const Planes p = encode_graph(t, clips);
    const Eigen::Index ns = layout_.s_tokens, nh = layout_.h_tokens, nw = layout_.w_tokens;
    std::vector<TriplaneLatent> out;
    out.reserve(clips.size());
    for (Eigen::Index b = 0; b < static_cast<Eigen::Index>(clips.size()); ++b) {
        TriplaneLatent z = TriplaneLatent::zeros(layout_);
        z.z.middleCols(0, ns) = p.s.value().middleRows(b * ns, ns).transpose() * latent_scale_;
        z.z.middleCols(ns, nh) = p.h.value().middleRows(b * nh, nh).transpose() * latent_scale_;
        z.z.middleCols(ns + nh, nw) = p.w.value().middleRows(b * nw, nw).transpose() * latent_scale_;
        out.push_back(std::move(z));
    }
    return out;
}

std::vector<VideoClip> TrainableCodec::decode_batch(const std::vector<TriplaneLatent>& latents, Modality m) const {
    if (latents.empty()) return {};
    const Eigen::Index ns = layout_.s_tokens, nh = layout_.h_tokens, nw = layout_.w_tokens;
    const auto B = static_cast<Eigen::Index>(latents.size());
    const int Cp = layout_.channels;
    Mat s(B * ns, Cp), h(B * nh, Cp), w(B * nw, Cp);
    for (Eigen::Index b = 0; b < B; ++b) {
        const TriplaneLatent& z = latents[static_cast<size_t>(b)];
        check_latent(z);
        s.middleRows(b * ns, ns) = z.plane_s().transpose() / latent_scale_;
        h.middleRows(b * nh, nh) = z.plane_h().transpose() / latent_scale_;
        w.middleRows(b * nw, nw) = z.plane_w().transpose() / latent_scale_;
    }
    ag::Tape t(false);
    const Planes planes{t.constant(std::move(s)), t.constant(std::move(h)), t.constant(std::move(w))};
    const Mat patches = decode_graph(t, planes, latents.size()).value();
    const auto& g = config_.geometry;
    const int P = config_.patch, hp = g.H / P, wp = g.W / P;
    std::vector<VideoClip> out;
    Eigen::Index r = 0;
    for (Eigen::Index b = 0; b < B; ++b) {
        VideoClip clip = VideoClip::zeros(g.T, g.H, g.W, g.C, m, Role::Target);
        for (int tt = 0; tt < g.T; ++tt)
            for (int py = 0; py < hp; ++py)
                for (int px = 0; px < wp; ++px, ++r) {
                    Eigen::Index col = 0;
                    for (int dy = 0; dy < P; ++dy)
                        for (int dx = 0; dx < P; ++dx)
                            for (int c = 0; c < g.C; ++c) clip.at(tt, py * P + dy, px * P + dx, c) = patches(r, col++);
                }
        clip.clamp();
        out.push_back(std::move(clip));
    }
    return out;
}

// ---------------------------------------------------------------- training

double cosine_lr(double lr0, double lr1, long it, long total) {
    if (total <= 1) return lr0;
    const double u = static_cast<double>(it) / static_cast<double>(total - 1);
    return lr1 + 0.5 * (lr0 - lr1) * (1.0 + std::cos(std::numbers::pi * u));
}

CodecTrainResult train_codec(TrainableCodec& codec, const std::function<VideoClip(Rng&)>& sample_clip,
                             const CodecTrainConfig& config) {
    CodecTrainResult result;
    if (config.iterations <= 0) return result;
    if (config.batch < 1) throw ConfigError("codec batch must be >= 1");
    Rng rng(config.seed);
    ag::Adam opt(codec.params().all(), {.lr = config.lr});
    for (int it = 0; it < config.iterations; ++it) {
        opt.set_lr(cosine_lr(config.lr, config.lr_final, it, config.iterations));
        std::vector<VideoClip> clips;
        for (int b = 0; b < config.batch; ++b) clips.push_back(sample_clip(rng));
        ag::Tape t;
        const auto planes = codec.encode_graph(t, clips);
        const ag::Var recon = codec.decode_graph(t, planes, clips.size());
        const ag::Var loss = ag::mse(recon, t.constant(codec.target_patches(clips)));
        const double l = loss.value()(0, 0);
        if (!std::isfinite(l)) throw NumericalError("codec training diverged at iteration " + std::to_string(it));
        result.losses.push_back(l);
        t.backward(loss);
        opt.step();
    }
    return result;
}

void calibrate_latent_scale(TrainableCodec& codec, const std::vector<VideoClip>& clips) {
    codec.set_latent_scale(1.0);
    double sq = 0.0;
    double n = 0.0;
    for (const TriplaneLatent& z : codec.encode_batch(clips)) {
        sq += z.z.squaredNorm();
        n += static_cast<double>(z.z.size());
    }
    const double rms = std::sqrt(sq / std::max(n, 1.0));
    codec.set_latent_scale(rms > 1e-12 ? 1.0 / rms : 1.0);
}

} // namespace syncvp
