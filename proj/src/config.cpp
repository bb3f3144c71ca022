// SPDX-License-Identifier: Apache-2.0
#include "syncvp/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

namespace syncvp {

using nlohmann::json;

namespace {

const std::vector<std::pair<Variant, std::string>> kVariantNames{
    {Variant::SingleA, "single_A"},
    {Variant::SingleB, "single_B"},
    {Variant::JointStca, "joint_stca"},
    {Variant::JointVanillaCa, "joint_vanilla_ca"},
    {Variant::JointConcatChannels, "joint_concat_channels"},
    {Variant::JointFusedLatents, "joint_fused_latents"},
    {Variant::JointIndependentNoise, "joint_independent_noise"},
    {Variant::JointNoGuidance, "joint_no_guidance"},
    {Variant::JointScratch, "joint_scratch"},
    {Variant::JointStcaAllLayers, "joint_stca_all_layers"},
    {Variant::JointNonsharedStca, "joint_nonshared_stca"},
};

std::string kind_name(ScheduleKind k) { return k == ScheduleKind::Linear ? "linear" : "cosine"; }

ScheduleKind parse_kind(const std::string& s) {
    if (s == "linear") return ScheduleKind::Linear;
    if (s == "cosine") return ScheduleKind::Cosine;
    throw ConfigError("schedule.kind must be linear or cosine, got '" + s + "'");
}

std::string mode_name(CrossMode m) { return m == CrossMode::Stca ? "stca" : "vanilla"; }

CrossMode parse_mode(const std::string& s) {
    if (s == "stca") return CrossMode::Stca;
    if (s == "vanilla") return CrossMode::Vanilla;
    throw ConfigError("joint.mode must be stca or vanilla, got '" + s + "'");
}

template <typename T>
void read(const json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
    }
}

// Every key in `user` must exist in `defaults` with a compatible type.
void check_known(const json& user, const json& defaults, const std::string& path) {
    if (!user.is_object()) throw ConfigError("config section '" + path + "' must be an object");
    for (auto it = user.begin(); it != user.end(); ++it) {
        const std::string key = path.empty() ? it.key() : path + "." + it.key();
        if (!defaults.contains(it.key())) throw ConfigError("unknown config key '" + key + "'");
        const json& d = defaults.at(it.key());
        if (d.is_object()) {
            check_known(it.value(), d, key);
        } else {
            const bool ok = (d.is_number() && it.value().is_number()) || (d.is_boolean() && it.value().is_boolean()) ||
                            (d.is_string() && it.value().is_string()) || (d.is_array() && it.value().is_array());
            if (!ok) throw ConfigError("config key '" + key + "' has the wrong type");
        }
    }
}

} // namespace

const std::vector<Variant>& all_variants() {
    static const std::vector<Variant> v = [] {
        std::vector<Variant> out;
        for (const auto& [k, _] : kVariantNames) out.push_back(k);
        return out;
    }();
    return v;
}

std::string variant_name(Variant v) {
    for (const auto& [k, name] : kVariantNames)
        if (k == v) return name;
    return "unknown";
}

Variant parse_variant(const std::string& name) {
    for (const auto& [k, n] : kVariantNames)
        if (n == name) return k;
    std::string known;
    for (const auto& [_, n] : kVariantNames) known += (known.empty() ? "" : ", ") + n;
    throw ConfigError("unknown variant '" + name + "' (expected one of: " + known + ")");
}

bool is_joint(Variant v) { return v != Variant::SingleA && v != Variant::SingleB; }

void ExperimentConfig::validate() const {
    world.validate();
    guidance.validate();
    if (data.context < 1 || data.context > data.horizon) throw ConfigError("data.context must be in [1, data.horizon]");
    if (data.train_pool < 1 || data.test_samples < 1) throw ConfigError("data pools must be non-empty");
    if (world.T != data.context + data.horizon) throw ConfigError("world.T must equal context + horizon");
    const ClipGeometry g{data.horizon, world.H, world.W, 1};
    if (!(codec.geometry == g)) throw ConfigError("codec geometry must match the world and horizon");
    if (codec.latent_channels != denoiser.latent_channels)
        throw ConfigError("codec.latent_channels and denoiser.latent_channels differ");
    try {
        const LatentLayout l = latent_layout(g.T, g.H, g.W, codec.patch, codec.latent_channels);
        for (Eigen::Index n : l.plane_tokens())
            if (n % 4 != 0) throw ConfigError("every latent plane needs a token count divisible by 4");
    } catch (const GeometryError& e) {
        throw ConfigError(std::string("invalid latent geometry: ") + e.what());
    }
    if (schedule.steps < 1) throw ConfigError("schedule.steps must be >= 1");
    if (!(schedule.beta_start > 0 && schedule.beta_end < 1 && schedule.beta_start <= schedule.beta_end))
        throw ConfigError("schedule betas must satisfy 0 < beta_start <= beta_end < 1");
    if (eval.ddim_steps < 1 || eval.ddim_steps > schedule.steps) throw ConfigError("eval.ddim_steps must be in [1, T_diff]");
    if (eval.eta < 0) throw ConfigError("eval.eta must be >= 0");
    if (eval.k < 1) throw ConfigError("eval.k must be >= 1");
    for (double s : eval.noise_sigmas)
        if (s < 0) throw ConfigError("noise sigmas must be non-negative");
    if (train.batch < 1 || train.stage1_iterations < 0 || train.stage2_iterations < 0 || train.codec_iterations < 0)
        throw ConfigError("training budgets must be non-negative and batch >= 1");
    if (train.lr <= 0 || train.lr_final <= 0 || train.codec_lr <= 0) throw ConfigError("learning rates must be positive");
    if (train.checkpoint_every < 1) throw ConfigError("train.checkpoint_every must be >= 1");
    if (denoiser.width < 1 || (2 * denoiser.width) % denoiser.heads != 0)
        throw ConfigError("denoiser width must be divisible by heads");
    if (joint.heads < 1 || denoiser.width % joint.heads != 0) throw ConfigError("joint.heads must divide the width");
}

json ExperimentConfig::to_json() const {
    json j;
    j["world"] = {{"H", world.H},
                  {"W", world.W},
                  {"n_objects", world.n_objects},
                  {"radius_min", world.radius_min},
                  {"radius_max", world.radius_max},
                  {"speed_min", world.speed_min},
                  {"speed_max", world.speed_max},
                  {"intensity_min", world.intensity_min}};
    j["codec"] = {{"patch", codec.patch},
                  {"latent_channels", codec.latent_channels},
                  {"hidden", codec.hidden},
                  {"seed", codec.seed}};
    j["denoiser"] = {{"width", denoiser.width},
                     {"heads", denoiser.heads},
                     {"time_dim", denoiser.time_dim},
                     {"seed", denoiser.seed}};
    j["schedule"] = {{"steps", schedule.steps},
                     {"kind", kind_name(schedule.kind)},
                     {"beta_start", schedule.beta_start},
                     {"beta_end", schedule.beta_end}};
    j["guidance"] = {{"p_both", guidance.p_both},
                     {"p_a_only", guidance.p_a_only},
                     {"p_b_only", guidance.p_b_only},
                     {"per_sample", guidance.per_sample}};
    j["joint"] = {{"mode", mode_name(joint.mode)},
                  {"all_layers", joint.all_layers},
                  {"shared", joint.shared},
                  {"heads", joint.heads},
                  {"seed", joint.seed}};
    j["data"] = {{"context", data.context},
                 {"horizon", data.horizon},
                 {"train_pool", data.train_pool},
                 {"test_samples", data.test_samples}};
    j["train"] = {{"codec_iterations", train.codec_iterations},
                  {"codec_batch", train.codec_batch},
                  {"codec_lr", train.codec_lr},
                  {"stage1_iterations", train.stage1_iterations},
                  {"stage2_iterations", train.stage2_iterations},
                  {"batch", train.batch},
                  {"lr", train.lr},
                  {"lr_final", train.lr_final},
                  {"checkpoint_every", train.checkpoint_every}};
    j["eval"] = {{"ddim_steps", eval.ddim_steps},
                 {"eta", eval.eta},
                 {"k", eval.k},
                 {"noise_sigmas", eval.noise_sigmas},
                 {"rollout_frames", eval.rollout_frames}};
    j["variant"] = variant_name(variant);
    j["seed"] = seed;
    return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& user) {
    ExperimentConfig c;
    check_known(user, c.to_json(), "");
    auto sec = [&](const char* k) { return user.contains(k) ? user.at(k) : json::object(); };

    const json w = sec("world");
    read(w, "H", c.world.H);
    read(w, "W", c.world.W);
    read(w, "n_objects", c.world.n_objects);
    read(w, "radius_min", c.world.radius_min);
    read(w, "radius_max", c.world.radius_max);
    read(w, "speed_min", c.world.speed_min);
    read(w, "speed_max", c.world.speed_max);
    read(w, "intensity_min", c.world.intensity_min);

    const json cd = sec("codec");
    read(cd, "patch", c.codec.patch);
    read(cd, "latent_channels", c.codec.latent_channels);
    read(cd, "hidden", c.codec.hidden);
    read(cd, "seed", c.codec.seed);

    const json d = sec("denoiser");
    read(d, "width", c.denoiser.width);
    read(d, "heads", c.denoiser.heads);
    read(d, "time_dim", c.denoiser.time_dim);
    read(d, "seed", c.denoiser.seed);

    const json s = sec("schedule");
    read(s, "steps", c.schedule.steps);
    read(s, "beta_start", c.schedule.beta_start);
    read(s, "beta_end", c.schedule.beta_end);
    if (s.contains("kind")) c.schedule.kind = parse_kind(s.at("kind").get<std::string>());

    const json g = sec("guidance");
    read(g, "p_both", c.guidance.p_both);
    read(g, "p_a_only", c.guidance.p_a_only);
    read(g, "p_b_only", c.guidance.p_b_only);
    read(g, "per_sample", c.guidance.per_sample);

    const json jt = sec("joint");
    if (jt.contains("mode")) c.joint.mode = parse_mode(jt.at("mode").get<std::string>());
    read(jt, "all_layers", c.joint.all_layers);
    read(jt, "shared", c.joint.shared);
    read(jt, "heads", c.joint.heads);
    read(jt, "seed", c.joint.seed);

    const json da = sec("data");
    read(da, "context", c.data.context);
    read(da, "horizon", c.data.horizon);
    read(da, "train_pool", c.data.train_pool);
    read(da, "test_samples", c.data.test_samples);

    const json tr = sec("train");
    read(tr, "codec_iterations", c.train.codec_iterations);
    read(tr, "codec_batch", c.train.codec_batch);
    read(tr, "codec_lr", c.train.codec_lr);
    read(tr, "stage1_iterations", c.train.stage1_iterations);
    read(tr, "stage2_iterations", c.train.stage2_iterations);
    read(tr, "batch", c.train.batch);
    read(tr, "lr", c.train.lr);
    read(tr, "lr_final", c.train.lr_final);
    read(tr, "checkpoint_every", c.train.checkpoint_every);

    const json ev = sec("eval");
    read(ev, "ddim_steps", c.eval.ddim_steps);
    read(ev, "eta", c.eval.eta);
    read(ev, "k", c.eval.k);
    read(ev, "noise_sigmas", c.eval.noise_sigmas);
    read(ev, "rollout_frames", c.eval.rollout_frames);

    if (user.contains("variant")) c.variant = parse_variant(user.at("variant").get<std::string>());
    read(user, "seed", c.seed);

    // Derived geometry.
    c.world.T = c.data.context + c.data.horizon;
    c.codec.geometry = ClipGeometry{c.data.horizon, c.world.H, c.world.W, 1};
    c.denoiser.latent_channels = c.codec.latent_channels;
    c.denoiser.max_steps = c.schedule.steps;
    c.validate();
    return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError("config file '" + path + "' is not valid JSON: " + e.what());
    }
    return from_json(j);
}

void ExperimentConfig::apply_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key=value: " + assignment);
    const std::string key = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
    json value;
    try {
        value = json::parse(raw);
    } catch (const json::exception&) {
        value = raw; // bare strings such as variant names
    }
    json j = to_json();
    json* node = &j;
    std::stringstream ks(key);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ks, part, '.')) parts.push_back(part);
    for (size_t i = 0; i + 1 < parts.size(); ++i) {
        if (!node->contains(parts[i])) throw ConfigError("unknown config key '" + key + "'");
        node = &(*node)[parts[i]];
    }
    if (!node->is_object() || !node->contains(parts.back())) throw ConfigError("unknown config key '" + key + "'");
    (*node)[parts.back()] = value;
    *this = from_json(j);
}

uint64_t fnv1a64(const std::string& bytes) {
    uint64_t h = 14695981039346656037ull;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

uint64_t ExperimentConfig::hash() const { return fnv1a64(to_json().dump()); }

std::string ExperimentConfig::hash_hex() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(hash()));
    return buf;
}

} // namespace syncvp
