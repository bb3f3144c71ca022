// SPDX-License-Identifier: Apache-2.0
#include "syncvp/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

namespace syncvp {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

uint64_t mix(uint64_t a, uint64_t b) {
    // splitmix64 finaliser over a combined word.
    uint64_t z = a * 0x9E3779B97F4A7C15ull + b + 0x632BE59BD9B4E5A9ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

std::string seed_dir(const Workspace& ws) { return ws.seed_dir(); }

Mat encode_rows(const Codec& codec, const std::vector<VideoClip>& clips) { return to_rows(codec.encode_batch(clips)); }

std::vector<VideoClip> decode_rows(const Codec& codec, const Mat& rows, Modality m) {
    return codec.decode_batch(from_rows(rows, codec.layout()), m);
}

std::vector<VideoClip> windows(const std::vector<VideoClip>& clips, int context, int horizon) {
    std::vector<VideoClip> out;
    for (const VideoClip& c : clips) out.push_back(condition_window(c, context, horizon));
    return out;
}

Mat concat_cols(const Mat& a, const Mat& b) {
    Mat out(a.rows(), a.cols() + b.cols());
    out << a, b;
    return out;
}

json codec_key(const ExperimentConfig& c, CodecKind kind) {
    const json j = c.to_json();
    return {{"codec", j["codec"]},
            {"world", j["world"]},
            {"context", c.data.context},
            {"horizon", c.data.horizon},
            {"iterations", c.train.codec_iterations},
            {"batch", c.train.codec_batch},
            {"lr", c.train.codec_lr},
            {"kind", static_cast<int>(kind)}};
}

} // namespace

// ---------------------------------------------------------------- data

Mat LatentPool::gather(const Mat& m, const std::vector<int>& scenes) const {
    const Eigen::Index L = layout.L;
    Mat out(static_cast<Eigen::Index>(scenes.size()) * L, m.cols());
    for (size_t i = 0; i < scenes.size(); ++i) {
        if (scenes[i] < 0 || scenes[i] >= n) throw DomainError("scene index outside the training pool");
        out.middleRows(static_cast<Eigen::Index>(i) * L, L) = m.middleRows(scenes[i] * L, L);
    }
    return out;
}

VideoClip stack_channels(const VideoClip& a, const VideoClip& b) {
    if (a.T != b.T || a.H != b.H || a.W != b.W || a.C != 1 || b.C != 1)
        throw ShapeError("stack_channels needs single-channel clips of equal geometry");
    VideoClip out = VideoClip::zeros(a.T, a.H, a.W, 2, Modality::A, a.role);
    for (int t = 0; t < a.T; ++t)
        for (int y = 0; y < a.H; ++y)
            for (int x = 0; x < a.W; ++x) {
                out.at(t, y, x, 0) = a.at(t, y, x);
                out.at(t, y, x, 1) = b.at(t, y, x);
            }
    return out;
}

std::pair<VideoClip, VideoClip> split_channels(const VideoClip& ab) {
    if (ab.C != 2) throw ShapeError("split_channels needs a two-channel clip");
    VideoClip a = VideoClip::zeros(ab.T, ab.H, ab.W, 1, Modality::A, ab.role);
    VideoClip b = VideoClip::zeros(ab.T, ab.H, ab.W, 1, Modality::B, ab.role);
    for (int t = 0; t < ab.T; ++t)
        for (int y = 0; y < ab.H; ++y)
            for (int x = 0; x < ab.W; ++x) {
                a.at(t, y, x) = ab.at(t, y, x, 0);
                b.at(t, y, x) = ab.at(t, y, x, 1);
            }
    return {a, b};
}

VideoClip blank_channel(const VideoClip& ab, int channel) {
    VideoClip out = ab;
    for (int t = 0; t < ab.T; ++t)
        for (int y = 0; y < ab.H; ++y)
            for (int x = 0; x < ab.W; ++x) out.at(t, y, x, channel) = 0.0;
    return out;
}

VideoClip corrupt(const VideoClip& clip, double sigma_255, Rng& rng) {
    if (sigma_255 < 0) throw DomainError("noise sigma must be non-negative");
    if (sigma_255 == 0) return clip;
    VideoClip out = clip;
    const double sd = sigma_255 * 2.0 / 255.0;
    for (double& v : out.data) v += sd * rng.normal();
    out.clamp();
    return out;
}

Workspace::Workspace(ExperimentConfig config, std::string out_dir, Logger log)
    : config_(std::move(config)), out_(std::move(out_dir)), log_(std::move(log)) {
    config_.validate();
    schedule_ = make_schedule(config_.schedule);
    layout_ = latent_layout(config_.data.horizon, config_.world.H, config_.world.W, config_.codec.patch,
                            config_.codec.latent_channels);
}

const LatentLayout& Workspace::layout() const { return layout_; }

std::string Workspace::seed_dir() const { return (fs::path(out_) / ("seed_" + std::to_string(config_.seed))).string(); }

void Workspace::log(const std::string& msg) const {
    if (log_) log_(msg);
}

const TrainableCodec& Workspace::codec(CodecKind kind) {
    auto& slot = codecs_[static_cast<int>(kind)];
    if (slot) return *slot;
    static const char* names[] = {"codec_A", "codec_B", "codec_AB"};
    const std::string path = (fs::path(out_) / "codecs" / (std::string(names[static_cast<int>(kind)]) + ".ckpt")).string();
    CodecConfig cc = config_.codec;
    cc.seed = config_.codec.seed + static_cast<uint64_t>(kind);
    if (kind == CodecKind::Stacked) cc.geometry.C = 2;
    auto codec = std::make_unique<TrainableCodec>(cc);
    const json key = codec_key(config_, kind);

    if (fs::exists(path)) {
        const Checkpoint ck = Checkpoint::load(path);
        if (ck.meta.value("key", json()) == key) {
            ck.get_params("", codec->params());
            codec->set_latent_scale(ck.meta.at("latent_scale").get<double>());
            log("loaded " + std::string(names[static_cast<int>(kind)]) + " from " + path);
            slot = std::move(codec);
            return *slot;
        }
    }

    const int ctx = config_.data.context, hor = config_.data.horizon;
    const WorldConfig world = config_.world;
    auto pick = [&](const PairedClip& pc) -> VideoClip {
        if (kind == CodecKind::A) return pc.a;
        if (kind == CodecKind::B) return pc.b;
        return stack_channels(pc.a, pc.b);
    };
    auto sample = [&](Rng& r) {
        const PairedClip pc = generate_clip(split_seed(Split::Train, r.next_u64() % kSplitRange), world);
        const VideoClip c = pick(pc);
        // A quarter of the batches are condition windows, which the codec must also encode.
        if (r.uniform() < 0.25) {
            VideoClip w = condition_window(c.frames(0, ctx), ctx, hor);
            if (kind == CodecKind::Stacked && r.uniform() < 0.5) w = blank_channel(w, r.uniform() < 0.5 ? 0 : 1);
            return w;
        }
        return c.frames(ctx, hor);
    };
    const auto t0 = std::chrono::steady_clock::now();
    const CodecTrainResult res =
        train_codec(*codec, sample,
                    {.iterations = config_.train.codec_iterations,
                     .batch = config_.train.codec_batch,
                     .lr = config_.train.codec_lr,
                     .lr_final = config_.train.codec_lr / 10,
                     .seed = mix(cc.seed, 11)});
    std::vector<VideoClip> calib;
    for (int i = 0; i < 64; ++i) {
        const PairedClip pc = generate_clip(split_seed(Split::Train, static_cast<uint64_t>(i)), world);
        calib.push_back(pick(pc).frames(ctx, hor));
        calib.push_back(condition_window(pick(pc).frames(0, ctx), ctx, hor));
    }
    calibrate_latent_scale(*codec, calib);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    Checkpoint ck;
    ck.meta = {{"kind", "codec"},
               {"key", key},
               {"latent_scale", codec->latent_scale()},
               {"final_loss", res.losses.empty() ? 0.0 : tail_mean(res.losses, 0.05)},
               {"seconds", secs}};
    ck.put_params("", codec->params());
    ck.arrays["loss"] = Eigen::Map<const Mat>(res.losses.data(), 1, static_cast<Eigen::Index>(res.losses.size()));
    ck.save(path);
    std::ostringstream os;
    os << "trained " << names[static_cast<int>(kind)] << " in " << std::fixed << std::setprecision(1) << secs
       << " s, final mse " << std::setprecision(5) << (res.losses.empty() ? 0.0 : tail_mean(res.losses, 0.05));
    log(os.str());
    slot = std::move(codec);
    return *slot;
}

const LatentPool& Workspace::pool() {
    if (pool_) return *pool_;
    const TrainableCodec& ca = codec(CodecKind::A);
    const TrainableCodec& cb = codec(CodecKind::B);
    auto p = std::make_unique<LatentPool>();
    p->layout = ca.layout();
    p->n = config_.data.train_pool;
    const int ctx = config_.data.context, hor = config_.data.horizon;
    std::vector<Mat> ca_rows, ta_rows, cb_rows, tb_rows;
    constexpr int kChunk = 64;
    for (int start = 0; start < p->n; start += kChunk) {
        std::vector<VideoClip> ca_c, ta_c, cb_c, tb_c;
        for (int i = start; i < std::min(p->n, start + kChunk); ++i) {
            const PairedClip pc = generate_clip(split_seed(Split::Train, static_cast<uint64_t>(i)), config_.world);
            ca_c.push_back(condition_window(pc.a.frames(0, ctx), ctx, hor));
            cb_c.push_back(condition_window(pc.b.frames(0, ctx), ctx, hor));
            ta_c.push_back(pc.a.frames(ctx, hor));
            tb_c.push_back(pc.b.frames(ctx, hor));
        }
        ca_rows.push_back(encode_rows(ca, ca_c));
        ta_rows.push_back(encode_rows(ca, ta_c));
        cb_rows.push_back(encode_rows(cb, cb_c));
        tb_rows.push_back(encode_rows(cb, tb_c));
    }
    auto stack = [](const std::vector<Mat>& parts) {
        Eigen::Index rows = 0;
        for (const Mat& m : parts) rows += m.rows();
        Mat out(rows, parts.front().cols());
        Eigen::Index r = 0;
        for (const Mat& m : parts) {
            out.middleRows(r, m.rows()) = m;
            r += m.rows();
        }
        return out;
    };
    p->cond_a = stack(ca_rows);
    p->tgt_a = stack(ta_rows);
    p->cond_b = stack(cb_rows);
    p->tgt_b = stack(tb_rows);
    log("encoded " + std::to_string(p->n) + " training scenes");
    pool_ = std::move(p);
    return *pool_;
}

const LatentPool& Workspace::stacked_pool() {
    if (stacked_pool_) return *stacked_pool_;
    const TrainableCodec& c = codec(CodecKind::Stacked);
    auto p = std::make_unique<LatentPool>();
    p->layout = c.layout();
    p->n = config_.data.train_pool;
    const int ctx = config_.data.context, hor = config_.data.horizon;
    std::vector<VideoClip> cond, cond_a, cond_b, tgt;
    for (int i = 0; i < p->n; ++i) {
        const PairedClip pc = generate_clip(split_seed(Split::Train, static_cast<uint64_t>(i)), config_.world);
        const VideoClip ab = stack_channels(pc.a, pc.b);
        const VideoClip w = condition_window(ab.frames(0, ctx), ctx, hor);
        cond.push_back(w);
        cond_a.push_back(blank_channel(w, 1));
        cond_b.push_back(blank_channel(w, 0));
        tgt.push_back(ab.frames(ctx, hor));
    }
    p->cond_a = encode_rows(c, cond);
    p->tgt_a = encode_rows(c, tgt);
    p->cond_ab_a_only = encode_rows(c, cond_a);
    p->cond_ab_b_only = encode_rows(c, cond_b);
    stacked_pool_ = std::move(p);
    return *stacked_pool_;
}

const std::vector<PairedClip>& Workspace::test_clips() {
    if (test_.empty())
        for (int i = 0; i < config_.data.test_samples; ++i)
            test_.push_back(generate_clip(split_seed(Split::Test, static_cast<uint64_t>(i)), config_.world));
    return test_;
}

// ---------------------------------------------------------------- models

std::vector<ag::Param*> Model::params() {
    std::vector<ag::Param*> out;
    for (auto& [_, store] : stores())
        for (ag::Param* p : store->all()) out.push_back(p);
    return out;
}

double Model::fingerprint() {
    double s = 0;
    for (ag::Param* p : params()) s += p->value.cwiseAbs().sum();
    return s;
}

Denoiser make_denoiser(const Workspace& ws, int latent_channels) {
    DenoiserConfig dc = ws.config().denoiser;
    dc.latent_channels = latent_channels;
    const LatentLayout& base = ws.layout();
    return Denoiser(dc, latent_layout(base.T, base.H, base.W, base.P, latent_channels));
}

namespace {

Denoiser seeded_denoiser(const Workspace& ws, int latent_channels, uint64_t salt) {
    DenoiserConfig dc = ws.config().denoiser;
    dc.latent_channels = latent_channels;
    dc.seed = mix(dc.seed + salt, ws.config().seed);
    const LatentLayout& base = ws.layout();
    return Denoiser(dc, latent_layout(base.T, base.H, base.W, base.P, latent_channels));
}

JointConfig joint_config_for(Variant v, const Workspace& ws) {
    JointConfig jc = ws.config().joint;
    jc.seed = mix(jc.seed, ws.config().seed);
    if (v == Variant::JointVanillaCa) jc.mode = CrossMode::Vanilla;
    if (v == Variant::JointStcaAllLayers) jc.all_layers = true;
    if (v == Variant::JointNonsharedStca) jc.shared = false;
    return jc;
}

std::vector<Mat> single_eps(Denoiser& net, const std::vector<Mat>& z, int step, const Mat& cond, int batch) {
    const std::vector<int> steps(static_cast<size_t>(batch), step);
    return {net.predict({z[0], cond, steps})};
}

class SingleModel final : public Model {
public:
    SingleModel(Variant v, Modality m, Workspace& ws, Denoiser net) : v_(v), m_(m), ws_(ws), net_(std::move(net)) {}

    Variant variant() const override { return v_; }
    Modality modality() const { return m_; }
    Denoiser& net() { return net_; }
    std::vector<std::pair<std::string, nn::ParamStore*>> stores() override { return {{"net.", &net_.params()}}; }

    StepLoss loss(ag::Tape& t, const std::vector<int>& scenes, Rng& rng, Rng&) override {
        const LatentPool& pool = ws_.pool();
        SingleBatch b;
        b.z0 = pool.gather(m_ == Modality::A ? pool.tgt_a : pool.tgt_b, scenes);
        b.cond = pool.gather(m_ == Modality::A ? pool.cond_a : pool.cond_b, scenes);
        b.steps = sample_steps(static_cast<int>(scenes.size()), ws_.schedule(), rng);
        b.eps = sample_shared_noise(b.z0.rows(), b.z0.cols(), rng);
        StepLoss l;
        l.total = single_loss(t, net_, b, ws_.schedule());
        (m_ == Modality::A ? l.a : l.b) = l.total.value()(0, 0);
        return l;
    }

    Prediction predict(const std::vector<VideoClip>& cond_a, const std::vector<VideoClip>& cond_b,
                       const ConditioningMask& mask, Rng& rng) override {
        const auto& cfg = ws_.config();
        const Codec& codec = ws_.codec(m_ == Modality::A ? CodecKind::A : CodecKind::B);
        Mat cond = encode_rows(codec, windows(m_ == Modality::A ? cond_a : cond_b, cfg.data.context, cfg.data.horizon));
        if (!(m_ == Modality::A ? mask.use_a : mask.use_b)) cond.setZero();
        const int batch = static_cast<int>(cond_a.size());
        const EpsFn fn = [&](const std::vector<Mat>& z, int step) { return single_eps(net_, z, step, cond, batch); };
        const std::vector<Mat> z =
            ddim_sample(fn, {rng.normal_matrix(cond.rows(), cond.cols())}, ws_.schedule(),
                        {cfg.eval.ddim_steps, cfg.eval.eta}, rng);
        Prediction p;
        (m_ == Modality::A ? p.a : p.b) = decode_rows(codec, z[0], m_);
        return p;
    }

private:
    Variant v_;
    Modality m_;
    Workspace& ws_;
    Denoiser net_;
};

class JointModel final : public Model {
public:
    JointModel(Variant v, Workspace& ws, JointDenoiser net) : v_(v), ws_(ws), net_(std::move(net)) {}

    Variant variant() const override { return v_; }
    std::vector<std::pair<std::string, nn::ParamStore*>> stores() override {
        return {{"a.", &net_.branch(Modality::A).params()},
                {"b.", &net_.branch(Modality::B).params()},
                {"cross.", &net_.cross_params()}};
    }
    JointDenoiser& net() { return net_; }

    StepLoss loss(ag::Tape& t, const std::vector<int>& scenes, Rng& rng, Rng& rng_b) override {
        const LatentPool& pool = ws_.pool();
        const int batch = static_cast<int>(scenes.size());
        GuidanceConfig g = ws_.config().guidance;
        // Masks are always drawn so every variant consumes the same random stream.
        std::vector<ConditioningMask> masks = sample_batch_masks(rng, batch, g);
        if (v_ == Variant::JointNoGuidance) masks = {ConditioningMask{}};
        Mat ca = pool.gather(pool.cond_a, scenes), cb = pool.gather(pool.cond_b, scenes);
        apply_masks(ca, cb, masks, pool.layout.L);
        const bool independent = v_ == Variant::JointIndependentNoise;
        const JointBatch jb = make_joint_batch(pool.gather(pool.tgt_a, scenes), pool.gather(pool.tgt_b, scenes),
                                               std::move(ca), std::move(cb), batch, ws_.schedule(), rng, independent,
                                               &rng_b);
        const JointLoss jl = joint_loss(t, net_, jb, ws_.schedule());
        StepLoss l;
        l.total = jl.total;
        l.a = jl.a.value()(0, 0);
        l.b = jl.b.value()(0, 0);
        return l;
    }

    Prediction predict(const std::vector<VideoClip>& cond_a, const std::vector<VideoClip>& cond_b,
                       const ConditioningMask& mask, Rng& rng) override {
        const auto& cfg = ws_.config();
        const Codec& ka = ws_.codec(CodecKind::A);
        const Codec& kb = ws_.codec(CodecKind::B);
        auto [ca, cb] = apply_mask(encode_rows(ka, windows(cond_a, cfg.data.context, cfg.data.horizon)),
                                   encode_rows(kb, windows(cond_b, cfg.data.context, cfg.data.horizon)), mask);
        const bool shared = v_ != Variant::JointIndependentNoise;
        const auto [za, zb] =
            ddim_sample(net_, ca, cb, ws_.schedule(), {cfg.eval.ddim_steps, cfg.eval.eta}, rng, shared);
        return {decode_rows(ka, za, Modality::A), decode_rows(kb, zb, Modality::B)};
    }

private:
    Variant v_;
    Workspace& ws_;
    JointDenoiser net_;
};

// One denoiser over the channel concatenation of both modalities' latents.
class FusedModel final : public Model {
public:
    FusedModel(Workspace& ws, Denoiser net) : ws_(ws), net_(std::move(net)) {}

    Variant variant() const override { return Variant::JointFusedLatents; }
    std::vector<std::pair<std::string, nn::ParamStore*>> stores() override { return {{"net.", &net_.params()}}; }

    StepLoss loss(ag::Tape& t, const std::vector<int>& scenes, Rng& rng, Rng&) override {
        const LatentPool& pool = ws_.pool();
        const int batch = static_cast<int>(scenes.size());
        const std::vector<ConditioningMask> masks = sample_batch_masks(rng, batch, ws_.config().guidance);
        Mat ca = pool.gather(pool.cond_a, scenes), cb = pool.gather(pool.cond_b, scenes);
        apply_masks(ca, cb, masks, pool.layout.L);
        SingleBatch b;
        b.z0 = concat_cols(pool.gather(pool.tgt_a, scenes), pool.gather(pool.tgt_b, scenes));
        b.cond = concat_cols(ca, cb);
        b.steps = sample_steps(batch, ws_.schedule(), rng);
        b.eps = sample_shared_noise(b.z0.rows(), b.z0.cols(), rng);
        StepLoss l;
        l.total = single_loss(t, net_, b, ws_.schedule());
        return l;
    }

    Prediction predict(const std::vector<VideoClip>& cond_a, const std::vector<VideoClip>& cond_b,
                       const ConditioningMask& mask, Rng& rng) override {
        const auto& cfg = ws_.config();
        const Codec& ka = ws_.codec(CodecKind::A);
        const Codec& kb = ws_.codec(CodecKind::B);
        auto [ca, cb] = apply_mask(encode_rows(ka, windows(cond_a, cfg.data.context, cfg.data.horizon)),
                                   encode_rows(kb, windows(cond_b, cfg.data.context, cfg.data.horizon)), mask);
        const Mat cond = concat_cols(ca, cb);
        const int batch = static_cast<int>(cond_a.size());
        const EpsFn fn = [&](const std::vector<Mat>& z, int step) { return single_eps(net_, z, step, cond, batch); };
        const Mat z = ddim_sample(fn, {rng.normal_matrix(cond.rows(), cond.cols())}, ws_.schedule(),
                                  {cfg.eval.ddim_steps, cfg.eval.eta}, rng)[0];
        const Eigen::Index C = ca.cols();
        return {decode_rows(ka, z.leftCols(C), Modality::A), decode_rows(kb, z.rightCols(C), Modality::B)};
    }

private:
    Workspace& ws_;
    Denoiser net_;
};

// One codec and one denoiser over channel-stacked clips.
class StackedModel final : public Model {
public:
    StackedModel(Workspace& ws, Denoiser net) : ws_(ws), net_(std::move(net)) {}

    Variant variant() const override { return Variant::JointConcatChannels; }
    std::vector<std::pair<std::string, nn::ParamStore*>> stores() override { return {{"net.", &net_.params()}}; }

    StepLoss loss(ag::Tape& t, const std::vector<int>& scenes, Rng& rng, Rng&) override {
        const LatentPool& pool = ws_.stacked_pool();
        const int batch = static_cast<int>(scenes.size());
        std::vector<ConditioningMask> masks = sample_batch_masks(rng, batch, ws_.config().guidance);
        const Eigen::Index L = pool.layout.L;
        SingleBatch b;
        b.z0 = pool.gather(pool.tgt_a, scenes);
        b.cond = pool.gather(pool.cond_a, scenes);
        for (int i = 0; i < batch; ++i) {
            const ConditioningMask& m = masks.size() == 1 ? masks[0] : masks[static_cast<size_t>(i)];
            const Mat* src = (m.use_a && m.use_b) ? nullptr : m.use_a ? &pool.cond_ab_a_only : &pool.cond_ab_b_only;
            if (src) b.cond.middleRows(i * L, L) = src->middleRows(scenes[static_cast<size_t>(i)] * L, L);
        }
        b.steps = sample_steps(batch, ws_.schedule(), rng);
        b.eps = sample_shared_noise(b.z0.rows(), b.z0.cols(), rng);
        StepLoss l;
        l.total = single_loss(t, net_, b, ws_.schedule());
        return l;
    }

    Prediction predict(const std::vector<VideoClip>& cond_a, const std::vector<VideoClip>& cond_b,
                       const ConditioningMask& mask, Rng& rng) override {
        const auto& cfg = ws_.config();
        const Codec& codec = ws_.codec(CodecKind::Stacked);
        std::vector<VideoClip> stacked;
        for (size_t i = 0; i < cond_a.size(); ++i) {
            VideoClip w = condition_window(stack_channels(cond_a[i], cond_b[i]), cfg.data.context, cfg.data.horizon);
            if (!mask.use_a) w = blank_channel(w, 0);
            if (!mask.use_b) w = blank_channel(w, 1);
            stacked.push_back(std::move(w));
        }
        const Mat cond = encode_rows(codec, stacked);
        const int batch = static_cast<int>(cond_a.size());
        const EpsFn fn = [&](const std::vector<Mat>& z, int step) { return single_eps(net_, z, step, cond, batch); };
        const Mat z = ddim_sample(fn, {rng.normal_matrix(cond.rows(), cond.cols())}, ws_.schedule(),
                                  {cfg.eval.ddim_steps, cfg.eval.eta}, rng)[0];
        Prediction p;
        for (const VideoClip& ab : decode_rows(codec, z, Modality::A)) {
            auto [a, b] = split_channels(ab);
            p.a.push_back(std::move(a));
            p.b.push_back(std::move(b));
        }
        return p;
    }

private:
    Workspace& ws_;
    Denoiser net_;
};

} // namespace

std::unique_ptr<Model> make_model(Variant v, Workspace& ws) {
    const int C = ws.config().codec.latent_channels;
    switch (v) {
    case Variant::SingleA:
        return std::make_unique<SingleModel>(v, Modality::A, ws, seeded_denoiser(ws, C, 0));
    case Variant::SingleB:
        return std::make_unique<SingleModel>(v, Modality::B, ws, seeded_denoiser(ws, C, 1));
    case Variant::JointFusedLatents:
        return std::make_unique<FusedModel>(ws, seeded_denoiser(ws, 2 * C, 2));
    case Variant::JointConcatChannels:
        return std::make_unique<StackedModel>(ws, seeded_denoiser(ws, C, 3));
    default:
        return std::make_unique<JointModel>(
            v, ws, JointDenoiser(seeded_denoiser(ws, C, 0), seeded_denoiser(ws, C, 1), joint_config_for(v, ws)));
    }
}

std::unique_ptr<Model> make_joint_from(Variant v, Workspace& ws, Model& single_a, Model& single_b) {
    auto* a = dynamic_cast<SingleModel*>(&single_a);
    auto* b = dynamic_cast<SingleModel*>(&single_b);
    if (!a || !b || a->modality() != Modality::A || b->modality() != Modality::B)
        throw CheckpointError("joint warm start needs single-modality models for A and B");
    if (!is_joint(v) || v == Variant::JointFusedLatents || v == Variant::JointConcatChannels)
        throw ConfigError("variant " + variant_name(v) + " has no two-branch warm start");
    return std::make_unique<JointModel>(v, ws, init_joint_from_pretrained(a->net(), b->net(), joint_config_for(v, ws)));
}

// ---------------------------------------------------------------- training

double tail_mean(const std::vector<double>& v, double fraction) {
    if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
    const size_t n = std::max<size_t>(1, static_cast<size_t>(std::ceil(static_cast<double>(v.size()) * fraction)));
    double s = 0;
    for (size_t i = v.size() - n; i < v.size(); ++i) s += v[i];
    return s / static_cast<double>(n);
}

namespace {

Mat row_of(const std::vector<double>& v) {
    return Eigen::Map<const Mat>(v.data(), 1, static_cast<Eigen::Index>(v.size()));
}

std::vector<double> vec_of(const Mat& m) { return std::vector<double>(m.data(), m.data() + m.size()); }

void put_model(Checkpoint& ck, Model& model) {
    for (auto& [prefix, store] : model.stores()) ck.put_params(prefix, *store);
}

} // namespace

std::string variant_checkpoint(const Workspace& ws, Variant v) {
    return (fs::path(ws.seed_dir()) / (variant_name(v) + ".ckpt")).string();
}

std::string variant_hash(const Workspace& ws, Variant v) {
    // Evaluation-only settings do not change what training produces.
    ExperimentConfig vc = ws.config();
    vc.variant = v;
    vc.eval = EvalConfig{};
    vc.data.test_samples = DataConfig{}.test_samples;
    return vc.hash_hex();
}

std::unique_ptr<Model> load_variant(Variant v, Workspace& ws) {
    const std::string path = variant_checkpoint(ws, v);
    if (!fs::exists(path))
        throw CheckpointError("no trained model for " + variant_name(v) + " at '" + path + "'");
    const Checkpoint ck = Checkpoint::load(path);
    if (!ck.meta.value("completed", true))
        throw CheckpointError("training of " + variant_name(v) + " is incomplete; rerun it with --resume");
    auto model = make_model(v, ws);
    load_model(*model, path, variant_hash(ws, v));
    return model;
}

void save_model(Model& model, const std::string& path, const std::string& config_hash, json extra) {
    Checkpoint ck;
    ck.meta = std::move(extra);
    if (!ck.meta.is_object()) ck.meta = json::object();
    ck.meta["variant"] = variant_name(model.variant());
    ck.meta["config_hash"] = config_hash;
    put_model(ck, model);
    ck.save(path);
}

void load_model(Model& model, const std::string& path, const std::string& expected_hash) {
    const Checkpoint ck = Checkpoint::load(path);
    if (!expected_hash.empty() && ck.meta.value("config_hash", std::string()) != expected_hash)
        throw CheckpointError("config hash mismatch: '" + path + "' was produced by config " +
                              ck.meta.value("config_hash", std::string("?")) + ", requested " + expected_hash);
    if (ck.meta.value("variant", std::string()) != variant_name(model.variant()))
        throw CheckpointError("checkpoint holds variant " + ck.meta.value("variant", std::string("?")) + ", expected " +
                              variant_name(model.variant()));
    for (auto& [prefix, store] : model.stores()) ck.get_params(prefix, *store);
}

TrainHistory train(Model& model, const TrainOptions& o, const std::string& config_hash, Logger log) {
    TrainHistory h;
    std::vector<ag::Param*> params = model.params();
    ag::Adam opt(params, {.lr = o.lr});
    Rng rng(mix(o.seed, 1)), rng_b(mix(o.seed, 2));
    long start = 0;
    const int n_scenes = o.pool_size;
    if (n_scenes < 1) throw ConfigError("training pool is empty");

    if (!o.checkpoint_path.empty() && fs::exists(o.checkpoint_path)) {
        const Checkpoint ck = Checkpoint::load(o.checkpoint_path);
        const bool same = ck.meta.value("config_hash", std::string()) == config_hash &&
                          ck.meta.value("iterations_total", -1L) == o.iterations;
        const bool completed = ck.meta.value("completed", false);
        if (same && (completed || o.resume)) {
            for (auto& [prefix, store] : model.stores()) ck.get_params(prefix, *store);
            start = ck.meta.at("iteration").get<long>();
            h.total = vec_of(ck.array("hist.total"));
            h.a = vec_of(ck.array("hist.a"));
            h.b = vec_of(ck.array("hist.b"));
            h.seconds = ck.meta.value("seconds", 0.0);
            if (completed) {
                h.iterations = start;
                h.completed = true;
                if (log) log("reusing completed run " + o.checkpoint_path);
                return h;
            }
            for (size_t i = 0; i < params.size(); ++i) {
                opt.first_moments()[i] = ck.array("adam.m." + std::to_string(i));
                opt.second_moments()[i] = ck.array("adam.v." + std::to_string(i));
            }
            opt.set_steps(ck.meta.at("adam_steps").get<long>());
            rng.set_state(ck.meta.at("rng").get<std::string>());
            rng_b.set_state(ck.meta.at("rng_b").get<std::string>());
            if (log) log("resuming " + o.checkpoint_path + " at iteration " + std::to_string(start));
        } else if (o.resume) {
            throw CheckpointError("cannot resume from '" + o.checkpoint_path + "': different config or budget");
        }
    }

    auto save = [&](long iteration, bool completed) {
        if (o.checkpoint_path.empty()) return;
        Checkpoint ck;
        ck.meta = {{"kind", "train"},
                   {"variant", variant_name(model.variant())},
                   {"config_hash", config_hash},
                   {"iteration", iteration},
                   {"iterations_total", o.iterations},
                   {"completed", completed},
                   {"adam_steps", opt.steps()},
                   {"rng", rng.state()},
                   {"rng_b", rng_b.state()},
                   {"seconds", h.seconds}};
        put_model(ck, model);
        for (size_t i = 0; i < params.size(); ++i) {
            ck.arrays["adam.m." + std::to_string(i)] = opt.first_moments()[i];
            ck.arrays["adam.v." + std::to_string(i)] = opt.second_moments()[i];
        }
        ck.arrays["hist.total"] = row_of(h.total);
        ck.arrays["hist.a"] = row_of(h.a);
        ck.arrays["hist.b"] = row_of(h.b);
        ck.save(o.checkpoint_path);
    };

    auto t0 = std::chrono::steady_clock::now();
    for (long it = start; it < o.iterations; ++it) {
        if (o.stop_after >= 0 && it >= o.stop_after) {
            h.seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            save(it, false);
            h.iterations = it;
            return h;
        }
        opt.set_lr(cosine_lr(o.lr, o.lr_final, it, o.iterations));
        std::vector<int> scenes(static_cast<size_t>(o.batch));
        for (int& s : scenes) s = static_cast<int>(rng.uniform_int(0, n_scenes - 1));
        ag::Tape t;
        const StepLoss l = model.loss(t, scenes, rng, rng_b);
        const double value = l.total.value()(0, 0);
        // Optimise the per-element mean; the reported loss is per-sample squared error.
        t.backward(ag::scale(l.total, 1.0 / static_cast<double>(o.loss_elements)));
        opt.step();
        h.total.push_back(value);
        h.a.push_back(l.a);
        h.b.push_back(l.b);
        if (log && ((it + 1) % 250 == 0 || it + 1 == o.iterations)) {
            std::ostringstream os;
            os << variant_name(model.variant()) << " it " << it + 1 << "/" << o.iterations << " loss "
               << std::fixed << std::setprecision(2) << tail_mean(std::vector<double>(h.total.end() - std::min<long>(
                                                                         static_cast<long>(h.total.size()), 250),
                                                                     h.total.end()), 1.0);
            log(os.str());
        }
        if ((it + 1) % o.checkpoint_every == 0 && it + 1 < o.iterations) {
            h.seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            t0 = std::chrono::steady_clock::now();
            save(it + 1, false);
        }
    }
    h.seconds += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    h.iterations = o.iterations;
    h.completed = true;
    save(o.iterations, true);
    return h;
}

// ---------------------------------------------------------------- evaluation

EvalReport evaluate(Model& model, Workspace& ws, const EvalOptions& o) {
    if (o.k < 1) throw DomainError("best-of-K needs K >= 1");
    if (o.sigma_b < 0) throw DomainError("noise sigma must be non-negative");
    const auto& cfg = ws.config();
    const auto& tests = ws.test_clips();
    const size_t n = o.max_samples < 0 ? tests.size() : std::min(tests.size(), static_cast<size_t>(o.max_samples));
    std::vector<VideoClip> cond_a, cond_b;
    std::vector<Trajectory> truth;
    Rng noise(mix(o.seed, 77));
    for (size_t i = 0; i < n; ++i) {
        const PairedClip& pc = tests[i];
        cond_a.push_back(pc.a.frames(0, cfg.data.context));
        cond_b.push_back(corrupt(pc.b.frames(0, cfg.data.context), o.sigma_b, noise));
        truth.push_back({pc.a.frames(cfg.data.context, cfg.data.horizon), pc.b.frames(cfg.data.context, cfg.data.horizon)});
    }
    std::vector<std::vector<Trajectory>> samples(n);
    Rng rng(o.seed);
    for (int k = 0; k < o.k; ++k) {
        const Prediction p = model.predict(cond_a, cond_b, o.mask, rng);
        for (size_t i = 0; i < n; ++i)
            samples[i].push_back({p.a.empty() ? VideoClip{} : p.a[i], p.b.empty() ? VideoClip{} : p.b[i]});
    }
    for (auto& s : samples)
        for (auto& tr : s) {
            if (tr.a.size() == 0) tr.a.T = 0;
            if (tr.b.size() == 0) tr.b.T = 0;
        }
    return best_of_k(samples, truth, cfg.world.n_objects);
}

std::vector<NoiseRow> eval_noise_robustness(Model& model, Workspace& ws, const std::vector<double>& sigmas,
                                            const EvalOptions& base) {
    for (double s : sigmas)
        if (s < 0) throw DomainError("noise sigma must be non-negative");
    std::vector<NoiseRow> rows;
    for (double s : sigmas) {
        EvalOptions o = base;
        o.sigma_b = s;
        rows.push_back({s, evaluate(model, ws, o)});
    }
    return rows;
}

Rollout rollout(Model& model, Workspace& ws, const PairedClip& scene, int total_frames, Rng& rng) {
    const auto& cfg = ws.config();
    const PassFn pass = [&](const VideoClip& ca, const VideoClip& cb) {
        const Prediction p = model.predict({ca}, {cb}, ConditioningMask{}, rng);
        if (p.a.empty() || p.b.empty()) throw DomainError("rollout needs a model that predicts both modalities");
        return std::pair{p.a[0], p.b[0]};
    };
    return predict_rollout(pass, scene.a.frames(0, cfg.data.context), scene.b.frames(0, cfg.data.context),
                           cfg.data.context, cfg.data.horizon, total_frames);
}

// ---------------------------------------------------------------- pipeline

namespace {

std::string stage_one_hash(const ExperimentConfig& c) {
    json j = c.to_json();
    for (const char* k : {"variant", "joint", "guidance", "eval"}) j.erase(k);
    j["train"].erase("stage2_iterations");
    j["data"].erase("test_samples");
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(j.dump())));
    return buf;
}

TrainOptions options_for(const Workspace& ws, long iterations, const std::string& ckpt, bool resume, uint64_t salt,
                         int latent_elements) {
    const auto& t = ws.config().train;
    TrainOptions o;
    o.iterations = iterations;
    o.batch = t.batch;
    o.lr = t.lr;
    o.lr_final = t.lr_final;
    o.checkpoint_every = t.checkpoint_every;
    o.checkpoint_path = ckpt;
    o.resume = resume;
    o.seed = mix(ws.config().seed, salt);
    o.pool_size = ws.config().data.train_pool;
    o.loss_elements = latent_elements;
    return o;
}

int elements(const Workspace& ws) { return static_cast<int>(ws.layout().L * ws.config().codec.latent_channels); }

Logger forward(const Workspace& ws) {
    return [&ws](const std::string& m) { ws.log(m); };
}

} // namespace

StageOneResult run_stage_one(Workspace& ws, bool resume) {
    ws.pool();
    StageOneResult r;
    const std::string hash = stage_one_hash(ws.config());
    const long iters = ws.config().train.stage1_iterations;
    r.a = make_model(Variant::SingleA, ws);
    r.b = make_model(Variant::SingleB, ws);
    const std::string dir = seed_dir(ws);
    r.hist_a = train(*r.a, options_for(ws, iters, dir + "/stage1_A.ckpt", resume, 101, elements(ws)), hash, forward(ws));
    r.hist_b = train(*r.b, options_for(ws, iters, dir + "/stage1_B.ckpt", resume, 102, elements(ws)), hash, forward(ws));
    return r;
}

VariantRun run_variant(Variant v, Workspace& ws, StageOneResult& stage1, bool resume) {
    const std::string hash = variant_hash(ws, v);
    const long s1 = ws.config().train.stage1_iterations, s2 = ws.config().train.stage2_iterations;
    const std::string path = variant_checkpoint(ws, v);
    VariantRun run;
    run.variant = v;
    run.total_iterations = s1 + s2;
    long iters = s2;
    int elems = elements(ws);
    switch (v) {
    case Variant::SingleA:
    case Variant::SingleB: {
        run.model = make_model(v, ws);
        Model& src = v == Variant::SingleA ? *stage1.a : *stage1.b;
        auto dst = run.model->stores();
        auto from = src.stores();
        for (size_t i = 0; i < dst.size(); ++i) dst[i].second->load_values(*from[i].second);
        break;
    }
    case Variant::JointScratch:
    case Variant::JointFusedLatents:
    case Variant::JointConcatChannels:
        run.model = make_model(v, ws);
        iters = s1 + s2;
        if (v == Variant::JointFusedLatents) elems *= 2;
        break;
    default:
        run.model = make_joint_from(v, ws, *stage1.a, *stage1.b);
        break;
    }
    if (v == Variant::JointConcatChannels) ws.stacked_pool();
    run.history = train(*run.model, options_for(ws, iters, path, resume, 200 + static_cast<uint64_t>(v), elems), hash,
                        forward(ws));
    return run;
}

TwoStageResult run_two_stage(Workspace& ws, bool resume) {
    TwoStageResult r;
    r.stage1 = run_stage_one(ws, resume);
    const Variant v = ws.config().variant;
    if (!is_joint(v)) throw ConfigError("run_two_stage needs a joint variant, got " + variant_name(v));
    if (v != Variant::JointScratch && v != Variant::JointFusedLatents && v != Variant::JointConcatChannels) {
        // Warm-start check on random latents before any fine-tuning step.
        auto joint = make_joint_from(v, ws, *r.stage1.a, *r.stage1.b);
        auto& jm = dynamic_cast<JointModel&>(*joint);
        Rng rng(mix(ws.config().seed, 5));
        const Eigen::Index rows = 2 * ws.layout().L, cols = ws.config().codec.latent_channels;
        const std::vector<int> steps{static_cast<int>(rng.uniform_int(1, ws.schedule().T)),
                                     static_cast<int>(rng.uniform_int(1, ws.schedule().T))};
        const BranchInput a{rng.normal_matrix(rows, cols), rng.normal_matrix(rows, cols), steps};
        const BranchInput b{rng.normal_matrix(rows, cols), rng.normal_matrix(rows, cols), steps};
        const auto [ja, jb] = jm.net().predict(a, b);
        const Mat sa = dynamic_cast<SingleModel&>(*r.stage1.a).net().predict(a);
        const Mat sb = dynamic_cast<SingleModel&>(*r.stage1.b).net().predict(b);
        r.warm_start_max_diff = std::max((ja - sa).cwiseAbs().maxCoeff(), (jb - sb).cwiseAbs().maxCoeff());
    }
    r.joint = run_variant(v, ws, r.stage1, resume);
    return r;
}

// ---------------------------------------------------------------- benchmark

std::vector<BenchRow> bench_attention(const std::vector<std::array<int, 4>>& geometries, int width, int repeats,
                                      uint64_t seed) {
    std::vector<BenchRow> rows;
    Rng rng(seed);
    for (const auto& g : geometries) {
        BenchRow r{g[0], g[1], g[2], g[3], attention_cost(g[0], g[1], g[2], g[3])};
        const LatentLayout l = latent_layout(g[0], g[1], g[2], g[3], 1);
        const PlaneTokens planes{l.s_tokens, l.h_tokens, l.w_tokens};
        StcaParams params = StcaParams::create(width, 2, true, rng, false);
        const Mat zr = rng.normal_matrix(planes.total(), width), zd = rng.normal_matrix(planes.total(), width);
        auto time = [&](auto&& fn) {
            double best = std::numeric_limits<double>::infinity();
            for (int i = 0; i < std::max(repeats, 1); ++i) {
                const auto t0 = std::chrono::steady_clock::now();
                fn();
                best = std::min(best, std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
            }
            return best;
        };
        r.stca_ms = time([&] { (void)stca_forward(zr, zd, planes, params); });
        r.vanilla_ms = time([&] { (void)vanilla_ca_forward(zr, zd, planes, params); });
        rows.push_back(r);
    }
    return rows;
}

// ---------------------------------------------------------------- reports

json report_json(const EvalReport& r) {
    auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
    auto mod = [&](const ModalityScores& m, bool present) {
        return present ? json{{"ssim", num(m.ssim)}, {"psnr", num(m.psnr)}, {"l2x100", num(m.l2x100)}} : json(nullptr);
    };
    return {{"A", mod(r.a, r.has_a)},
            {"B", mod(r.b, r.has_b)},
            {"alignment", num(r.alignment)},
            {"degenerate", r.degenerate},
            {"k", r.k},
            {"samples", r.samples},
            {"selection", r.selection}};
}

std::string report_csv_header() { return "label,ssim_A,psnr_A,l2x100_A,ssim_B,psnr_B,l2x100_B,alignment,k,samples"; }

std::string report_csv_row(const std::string& label, const EvalReport& r) {
    std::ostringstream os;
    os << std::setprecision(6) << label;
    auto put = [&](double v) {
        os << ',';
        if (std::isfinite(v)) os << v;
    };
    put(r.a.ssim);
    put(r.a.psnr);
    put(r.a.l2x100);
    put(r.b.ssim);
    put(r.b.psnr);
    put(r.b.l2x100);
    put(r.alignment);
    os << ',' << r.k << ',' << r.samples;
    return os.str();
}

void write_text(const std::string& path, const std::string& text) {
    const fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream os(path);
    if (!os) throw Error("cannot write '" + path + "'");
    os << text;
}

} // namespace syncvp
