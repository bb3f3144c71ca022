// SPDX-License-Identifier: Apache-2.0
// Command-line front end for data generation, training, sampling, evaluation
// and the ablation runs.

#include "syncvp/harness.hpp"
#include "syncvp/plot.hpp"

#include "CLI11.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace syncvp;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

struct Common {
    std::string config_path;
    std::string out = "out";
    std::optional<uint64_t> seed;
    std::string variant;
    bool resume = false;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* app, Common& c) {
    app->add_option("--config", c.config_path, "JSON experiment config")->check(CLI::ExistingFile);
    app->add_option("--seed", c.seed, "experiment seed");
    app->add_option("--out", c.out, "output directory")->capture_default_str();
    app->add_option("--variant", c.variant, "model variant");
    app->add_flag("--resume", c.resume, "continue interrupted training from its checkpoint");
    app->add_option("--set", c.overrides, "override a config key, e.g. --set train.batch=8");
}

ExperimentConfig build_config(const Common& c) {
    ExperimentConfig cfg = c.config_path.empty() ? ExperimentConfig{} : ExperimentConfig::load(c.config_path);
    for (const std::string& o : c.overrides) cfg.apply_override(o);
    if (c.seed) cfg.seed = *c.seed;
    if (!c.variant.empty()) cfg.variant = parse_variant(c.variant);
    cfg.validate();
    return cfg;
}

Logger stderr_log() {
    return [](const std::string& m) { std::cerr << m << std::endl; };
}

void save_json(const std::string& path, const json& j) {
    write_text(path, j.dump(2) + "\n");
    std::cout << "wrote " << path << "\n";
}

std::string fixed(double v, int digits = 3) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(digits) << v;
    return os.str();
}

void check_finite(const EvalReport& r, const std::string& what) {
    for (double v : {r.a.l2x100, r.b.l2x100})
        if (std::isnan(v)) throw NumericalError(what + " produced NaN predictions");
}

// ---------------------------------------------------------------- commands

int cmd_gen_data(const Common& c, int count, const std::string& split_name) {
    const ExperimentConfig cfg = build_config(c);
    const Split split = split_name == "train" ? Split::Train : split_name == "val" ? Split::Val : Split::Test;
    const fs::path dir = fs::path(c.out) / "data" / split_name;
    json index = json::array();
    for (int i = 0; i < count; ++i) {
        const uint64_t seed = split_seed(split, static_cast<uint64_t>(i));
        const PairedClip pc = generate_clip(seed, cfg.world);
        const std::string name = "scene_" + std::to_string(i) + ".png";
        write_png((dir / name).string(), frame_grid({pc.a, pc.b}));
        json centers = json::array();
        for (const Centers& f : pc.centers) centers.push_back(f);
        index.push_back({{"seed", seed}, {"image", name}, {"centers", centers}});
    }
    save_json((dir / "scenes.json").string(),
              {{"config_hash", cfg.hash_hex()}, {"world", cfg.to_json()["world"]}, {"scenes", index}});
    return 0;
}

int cmd_train_codec(const Common& c, bool stacked) {
    Workspace ws(build_config(c), c.out, stderr_log());
    json out = json::object();
    std::vector<std::pair<CodecKind, std::string>> kinds{{CodecKind::A, "A"}, {CodecKind::B, "B"}};
    if (stacked) kinds.push_back({CodecKind::Stacked, "AB"});
    const auto& tests = ws.test_clips();
    const int ctx = ws.config().data.context, hor = ws.config().data.horizon;
    for (const auto& [kind, name] : kinds) {
        const TrainableCodec& codec = ws.codec(kind);
        std::vector<VideoClip> clips;
        for (const PairedClip& pc : tests) {
            const VideoClip a = pc.a.frames(ctx, hor), b = pc.b.frames(ctx, hor);
            clips.push_back(kind == CodecKind::A ? a : kind == CodecKind::B ? b : stack_channels(a, b));
        }
        const auto recon = codec.decode_batch(codec.encode_batch(clips), kind == CodecKind::B ? Modality::B : Modality::A);
        double p = 0;
        for (size_t i = 0; i < clips.size(); ++i) p += psnr(recon[i], clips[i]);
        p /= static_cast<double>(clips.size());
        std::cout << "codec " << name << ": test reconstruction PSNR " << fixed(p, 2) << " dB\n";
        out[name] = {{"psnr", p}, {"latent_scale", codec.latent_scale()}};
    }
    save_json((fs::path(c.out) / "codecs" / "report.json").string(), out);
    return 0;
}

int cmd_train_single(const Common& c) {
    Workspace ws(build_config(c), c.out, stderr_log());
    StageOneResult r = run_stage_one(ws, c.resume);
    std::cout << "single_A final loss " << fixed(tail_mean(r.hist_a.total)) << "\n";
    std::cout << "single_B final loss " << fixed(tail_mean(r.hist_b.total)) << "\n";
    return 0;
}

int cmd_train_joint(const Common& c) {
    ExperimentConfig cfg = build_config(c);
    if (c.variant.empty()) cfg.variant = Variant::JointStca;
    Workspace ws(cfg, c.out, stderr_log());
    if (is_joint(cfg.variant)) {
        TwoStageResult r = run_two_stage(ws, c.resume);
        std::cout << variant_name(cfg.variant) << " final loss " << fixed(tail_mean(r.joint.history.total))
                  << " (A " << fixed(tail_mean(r.joint.history.a)) << ", B " << fixed(tail_mean(r.joint.history.b))
                  << ")\n";
        std::cout << "warm start max |joint - single| " << r.warm_start_max_diff << "\n";
    } else {
        StageOneResult s1 = run_stage_one(ws, c.resume);
        VariantRun r = run_variant(cfg.variant, ws, s1, c.resume);
        std::cout << variant_name(cfg.variant) << " final loss " << fixed(tail_mean(r.history.total)) << "\n";
    }
    return 0;
}

// Frames as a (T*H*W) x C matrix; the checkpoint container stores doubles losslessly.
Mat clip_matrix(const VideoClip& v) {
    return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        v.data.data(), static_cast<Eigen::Index>(v.size() / v.C), v.C);
}

void put_clip(Checkpoint& ck, const std::string& name, const VideoClip& v) {
    ck.arrays[name] = clip_matrix(v);
    ck.meta["clips"][name] = {{"T", v.T}, {"H", v.H}, {"W", v.W}, {"C", v.C}};
}

struct SampleOptions {
    int count = 8;
    std::optional<int> steps, frames;
    std::optional<double> eta;
};

int cmd_sample(const Common& c, const SampleOptions& so) {
    ExperimentConfig cfg = build_config(c);
    if (so.steps) cfg.eval.ddim_steps = *so.steps;
    if (so.eta) cfg.eval.eta = *so.eta;
    if (so.frames) cfg.eval.rollout_frames = *so.frames;
    cfg.validate();
    const int count = so.count;
    if (c.variant.empty()) cfg.variant = Variant::JointStca;
    Workspace ws(cfg, c.out, stderr_log());
    auto model = load_variant(cfg.variant, ws);
    const fs::path dir = fs::path(ws.seed_dir()) / "samples";
    const auto& tests = ws.test_clips();
    const int ctx = cfg.data.context, hor = cfg.data.horizon;
    Rng rng(cfg.seed);
    const int n = std::min<int>(count, static_cast<int>(tests.size()));
    std::vector<VideoClip> ca, cb;
    for (int i = 0; i < n; ++i) {
        ca.push_back(tests[static_cast<size_t>(i)].a.frames(0, ctx));
        cb.push_back(tests[static_cast<size_t>(i)].b.frames(0, ctx));
    }
    const Prediction p = model->predict(ca, cb, ConditioningMask{}, rng);
    Checkpoint frames;
    frames.meta = {{"variant", variant_name(cfg.variant)}, {"seed", cfg.seed}, {"ddim_steps", cfg.eval.ddim_steps},
                   {"eta", cfg.eval.eta}, {"config_hash", cfg.hash_hex()}};
    for (int i = 0; i < n; ++i) {
        if (!p.a.empty()) put_clip(frames, "A." + std::to_string(i), p.a[static_cast<size_t>(i)]);
        if (!p.b.empty()) put_clip(frames, "B." + std::to_string(i), p.b[static_cast<size_t>(i)]);
    }
    for (int i = 0; i < n; ++i) {
        const PairedClip& pc = tests[static_cast<size_t>(i)];
        std::vector<VideoClip> rows{pc.a.frames(ctx, hor)};
        if (!p.a.empty()) rows.push_back(p.a[static_cast<size_t>(i)]);
        rows.push_back(pc.b.frames(ctx, hor));
        if (!p.b.empty()) rows.push_back(p.b[static_cast<size_t>(i)]);
        const std::string path = (dir / (variant_name(cfg.variant) + "_" + std::to_string(i) + ".png")).string();
        write_png(path, frame_grid(rows));
        std::cout << "wrote " << path << "\n";
    }
    if (!p.a.empty() && !p.b.empty()) {
        const int total = cfg.eval.rollout_frames;
        WorldConfig wc = cfg.world;
        wc.T = ctx + total;
        const PairedClip long_scene = generate_clip(split_seed(Split::Test, 0), wc);
        const Rollout r = rollout(*model, ws, long_scene, total, rng);
        const std::string path = (dir / (variant_name(cfg.variant) + "_rollout.png")).string();
        write_png(path, frame_grid({long_scene.a.frames(ctx, total), r.a, long_scene.b.frames(ctx, total), r.b}, 2));
        std::cout << "rollout: " << r.a.T << " frames of A, " << r.b.T << " frames of B in " << r.passes
                  << " passes\nwrote " << path << "\n";
        put_clip(frames, "rollout.A", r.a);
        put_clip(frames, "rollout.B", r.b);
        frames.meta["rollout_frame_index"] = r.frame_index;
    }
    const std::string path = (dir / (variant_name(cfg.variant) + "_frames.ckpt")).string();
    frames.save(path);
    std::cout << "wrote " << path << "\n";
    return 0;
}

json eval_conditions(Model& model, Workspace& ws, const std::string& label, std::vector<std::string>& csv) {
    const int k = ws.config().eval.k;
    std::vector<std::pair<std::string, ConditioningMask>> conds{{"both", {true, true}}};
    if (is_joint(model.variant())) {
        conds.push_back({"a_only", {true, false}});
        conds.push_back({"b_only", {false, true}});
    }
    json out = json::object();
    for (const auto& [name, mask] : conds) {
        EvalOptions o;
        o.mask = mask;
        o.k = k;
        const EvalReport r = evaluate(model, ws, o);
        check_finite(r, label);
        out[name] = report_json(r);
        csv.push_back(report_csv_row(label + "/" + name, r));
        std::cout << csv.back() << std::endl;
    }
    return out;
}

int cmd_evaluate(const Common& c) {
    ExperimentConfig cfg = build_config(c);
    if (c.variant.empty()) cfg.variant = Variant::JointStca;
    Workspace ws(cfg, c.out, stderr_log());
    auto model = load_variant(cfg.variant, ws);
    std::vector<std::string> csv{report_csv_header()};
    std::cout << csv[0] << "\n";
    const json j = eval_conditions(*model, ws, variant_name(cfg.variant), csv);
    const std::string stem = (fs::path(ws.seed_dir()) / ("eval_" + variant_name(cfg.variant))).string();
    std::ostringstream os;
    for (const std::string& l : csv) os << l << "\n";
    write_text(stem + ".csv", os.str());
    save_json(stem + ".json", {{"variant", variant_name(cfg.variant)}, {"seed", cfg.seed}, {"conditions", j}});
    return 0;
}

int cmd_ablate(const Common& c, const std::vector<std::string>& names, std::vector<uint64_t> seeds) {
    ExperimentConfig base = build_config(c);
    std::vector<Variant> variants;
    for (const std::string& n : names) variants.push_back(parse_variant(n));
    if (variants.empty()) variants = all_variants();
    if (seeds.empty()) seeds.push_back(base.seed);
    std::vector<std::string> csv{"seed,final_loss,train_seconds," + report_csv_header()};
    json runs = json::array();
    std::cout << csv[0] << std::endl;
    for (uint64_t seed : seeds) {
        ExperimentConfig cfg = base;
        cfg.seed = seed;
        Workspace ws(cfg, c.out, stderr_log());
        StageOneResult s1 = run_stage_one(ws, c.resume);
        long budget = -1;
        for (Variant v : variants) {
            VariantRun run = run_variant(v, ws, s1, c.resume);
            if (budget < 0) budget = run.total_iterations;
            if (run.total_iterations != budget)
                throw std::logic_error(variant_name(v) + " ran " + std::to_string(run.total_iterations) +
                                       " optimizer steps, expected " + std::to_string(budget));
            std::vector<std::string> rows;
            const json ev = eval_conditions(*run.model, ws, variant_name(v), rows);
            const double final_loss = tail_mean(run.history.total);
            for (const std::string& r : rows)
                csv.push_back(std::to_string(seed) + "," + fixed(final_loss, 4) + "," + fixed(run.history.seconds, 1) +
                              "," + r);
            runs.push_back({{"seed", seed},
                            {"variant", variant_name(v)},
                            {"final_loss", final_loss},
                            {"optimizer_steps", run.total_iterations},
                            {"train_seconds", run.history.seconds},
                            {"eval", ev}});
        }
    }
    std::ostringstream os;
    for (const std::string& l : csv) os << l << "\n";
    write_text((fs::path(c.out) / "ablation.csv").string(), os.str());
    save_json((fs::path(c.out) / "ablation.json").string(), runs);
    return 0;
}

int cmd_bench(const Common& c, int repeats) {
    const ExperimentConfig cfg = build_config(c);
    const std::vector<std::array<int, 4>> geoms{{8, 32, 32, 4}, {8, 64, 64, 4}, {8, 128, 128, 4}};
    const auto rows = bench_attention(geoms, 64, repeats, cfg.seed);
    json out = json::array();
    std::ostringstream csv;
    csv << "geometry,L,stca_flops,ca_flops,ratio,wall_clock_ms,vanilla_wall_clock_ms\n";
    std::cout << std::left << std::setw(16) << "geometry" << std::setw(8) << "L" << std::setw(12) << "ratio"
              << std::setw(12) << "stca ms" << "vanilla ms\n";
    for (const BenchRow& r : rows) {
        const std::string g = std::to_string(r.T) + "x" + std::to_string(r.H) + "x" + std::to_string(r.W) + "/" +
                              std::to_string(r.P);
        const long L = latent_layout(r.T, r.H, r.W, r.P, 1).L;
        const std::string ratio = std::to_string(r.cost.ratio.num) + "/" + std::to_string(r.cost.ratio.den);
        std::cout << std::setw(16) << g << std::setw(8) << L << std::setw(12)
                  << fixed(r.cost.ratio.value(), 4) << std::setw(12) << fixed(r.stca_ms, 2) << fixed(r.vanilla_ms, 2)
                  << "\n";
        csv << g << ',' << L << ',' << r.cost.stca_flops << ',' << r.cost.ca_flops << ',' << ratio << ','
            << r.stca_ms << ',' << r.vanilla_ms << "\n";
        out.push_back({{"geometry", {r.T, r.H, r.W, r.P}},
                       {"L", L},
                       {"stca_flops", r.cost.stca_flops},
                       {"ca_flops", r.cost.ca_flops},
                       {"ratio", ratio},
                       {"wall_clock_ms", r.stca_ms},
                       {"vanilla_wall_clock_ms", r.vanilla_ms}});
    }
    write_text((fs::path(c.out) / "bench_attention.csv").string(), csv.str());
    save_json((fs::path(c.out) / "bench_attention.json").string(), out);
    return 0;
}

int cmd_noise_sweep(const Common& c) {
    ExperimentConfig cfg = build_config(c);
    if (c.variant.empty()) cfg.variant = Variant::JointStca;
    Workspace ws(cfg, c.out, stderr_log());
    auto model = load_variant(cfg.variant, ws);
    EvalOptions base;
    base.k = cfg.eval.k;
    const auto rows = eval_noise_robustness(*model, ws, cfg.eval.noise_sigmas, base);
    std::ostringstream csv;
    csv << "sigma," << report_csv_header() << "\n";
    json out = json::object();
    json sweep = json::array();
    for (const NoiseRow& r : rows) {
        check_finite(r.report, "noise sweep");
        csv << r.sigma << ',' << report_csv_row("sigma_" + fixed(r.sigma, 1), r.report) << "\n";
        sweep.push_back({{"sigma", r.sigma}, {"report", report_json(r.report)}});
    }
    out["sweep"] = sweep;
    if (is_joint(cfg.variant)) {
        EvalOptions masked = base;
        masked.mask = {true, false};
        const EvalReport r = evaluate(*model, ws, masked);
        csv << "," << report_csv_row("b_masked", r) << "\n";
        out["b_masked"] = report_json(r);
        const double d5 = rows.back().report.b.l2x100 - rows.front().report.b.l2x100;
        const double dm = r.b.l2x100 - rows.front().report.b.l2x100;
        out["degradation_noise"] = d5;
        out["degradation_masked"] = dm;
        std::cout << "B l2x100 degradation: sigma " << rows.back().sigma << " -> " << fixed(d5, 4)
                  << ", B masked -> " << fixed(dm, 4) << "\n";
    }
    std::cout << csv.str();
    const std::string stem = (fs::path(ws.seed_dir()) / ("noise_sweep_" + variant_name(cfg.variant))).string();
    write_text(stem + ".csv", csv.str());
    save_json(stem + ".json", out);
    return 0;
}

int cmd_plot(const Common& c) {
    const ExperimentConfig cfg = build_config(c);
    Workspace ws(cfg, c.out, {});
    const fs::path seed_dir = ws.seed_dir();
    const fs::path plots = fs::path(c.out) / "plots";
    int written = 0;
    if (fs::exists(seed_dir)) {
        std::vector<Series> losses;
        std::vector<fs::path> ckpts;
        for (const auto& e : fs::directory_iterator(seed_dir))
            if (e.path().extension() == ".ckpt") ckpts.push_back(e.path());
        std::sort(ckpts.begin(), ckpts.end());
        for (const fs::path& p : ckpts) {
            const Checkpoint ck = Checkpoint::load(p.string());
            if (!ck.arrays.count("hist.total")) continue;
            const Mat& h = ck.array("hist.total");
            Series s;
            s.label = p.stem().string();
            s.color = palette()[losses.size() % palette().size()];
            const std::vector<double> raw(h.data(), h.data() + h.size());
            const std::vector<double> sm = smooth(raw, 100);
            for (size_t i = 0; i < sm.size(); i += std::max<size_t>(1, sm.size() / 400)) {
                s.x.push_back(static_cast<double>(i + 1));
                s.y.push_back(sm[i]);
            }
            losses.push_back(std::move(s));
        }
        if (!losses.empty()) {
            const std::string path = (plots / ("loss_seed_" + std::to_string(cfg.seed) + ".png")).string();
            write_png(path, line_plot(losses, "training loss", "iteration", "loss"));
            std::cout << "wrote " << path << "\n";
            ++written;
        }
        for (const auto& e : fs::directory_iterator(seed_dir)) {
            const std::string stem = e.path().stem().string();
            if (e.path().extension() != ".json" || stem.rfind("noise_sweep_", 0) != 0) continue;
            std::ifstream in(e.path());
            const json j = json::parse(in);
            Series s{"B l2x100", {}, {}, palette()[0]};
            for (const json& r : j.at("sweep")) {
                s.x.push_back(r.at("sigma").get<double>());
                s.y.push_back(r.at("report").at("B").at("l2x100").get<double>());
            }
            std::vector<Series> series{s};
            if (j.contains("b_masked")) {
                const double m = j.at("b_masked").at("B").at("l2x100").get<double>();
                series.push_back({"B masked", {s.x.front(), s.x.back()}, {m, m}, palette()[1]});
            }
            const std::string path = (plots / (stem + "_seed_" + std::to_string(cfg.seed) + ".png")).string();
            write_png(path, line_plot(series, "noise on B conditions", "sigma", "l2x100"));
            std::cout << "wrote " << path << "\n";
            ++written;
        }
    }
    const fs::path bench = fs::path(c.out) / "bench_attention.json";
    if (fs::exists(bench)) {
        std::ifstream in(bench);
        const json j = json::parse(in);
        Series st{"stca", {}, {}, palette()[0]}, va{"vanilla", {}, {}, palette()[1]};
        for (const json& r : j) {
            const double L = r.at("L").get<double>();
            st.x.push_back(L);
            st.y.push_back(r.at("wall_clock_ms").get<double>());
            va.x.push_back(L);
            va.y.push_back(r.at("vanilla_wall_clock_ms").get<double>());
        }
        const std::string path = (plots / "bench_attention.png").string();
        write_png(path, line_plot({st, va}, "cross attention time", "tokens L", "ms"));
        std::cout << "wrote " << path << "\n";
        ++written;
    }
    if (written == 0) std::cout << "nothing to plot under " << c.out << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Synchronized two-modality video prediction with triplane latent diffusion"};
    app.require_subcommand(1);
    Common c;
    int count = 8, repeats = 5;
    std::string split = "test";
    bool stacked = false;
    std::vector<std::string> variants;
    std::vector<uint64_t> seeds;
    SampleOptions so;

    auto* gen = app.add_subcommand("gen-data", "render toy-world scenes to PNG and JSON");
    add_common(gen, c);
    gen->add_option("--count", count, "number of scenes")->check(CLI::PositiveNumber);
    gen->add_option("--split", split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
    auto* codec = app.add_subcommand("train-codec", "train (or load cached) triplane codecs");
    add_common(codec, c);
    codec->add_flag("--stacked", stacked, "also train the channel-stacked codec");
    auto* single = app.add_subcommand("train-single", "stage 1: single-modality denoisers");
    add_common(single, c);
    auto* joint = app.add_subcommand("train-joint", "stage 2: warm-started joint model (or any --variant)");
    add_common(joint, c);
    auto* sample = app.add_subcommand("sample", "predict test scenes and a long rollout");
    add_common(sample, c);
    sample->add_option("--count", so.count, "test scenes to predict")->check(CLI::PositiveNumber);
    sample->add_option("--steps", so.steps, "DDIM steps (default from config, 100)")->check(CLI::PositiveNumber);
    sample->add_option("--eta", so.eta, "DDIM eta (default from config, 0)")->check(CLI::NonNegativeNumber);
    sample->add_option("--frames", so.frames, "rollout length in frames (default from config, 28)")
        ->check(CLI::PositiveNumber);
    auto* eval = app.add_subcommand("evaluate", "SSIM / PSNR / L2 / alignment on the test split");
    add_common(eval, c);
    auto* ablate = app.add_subcommand("ablate", "train and evaluate a list of variants");
    add_common(ablate, c);
    ablate->add_option("--variants", variants, "variants to run (default: all)")->delimiter(',');
    ablate->add_option("--seeds", seeds, "seeds to run (default: --seed)")->delimiter(',');
    auto* bench = app.add_subcommand("bench-attention", "attention cost model and timings");
    add_common(bench, c);
    bench->add_option("--repeats", repeats, "timing repeats")->check(CLI::PositiveNumber);
    auto* sweep = app.add_subcommand("noise-sweep", "B-condition noise robustness");
    add_common(sweep, c);
    auto* plot = app.add_subcommand("plot", "PNG plots from results under --out");
    add_common(plot, c);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitConfig;
    }

    try {
        if (*gen) return cmd_gen_data(c, count, split);
        if (*codec) return cmd_train_codec(c, stacked);
        if (*single) return cmd_train_single(c);
        if (*joint) return cmd_train_joint(c);
        if (*sample) return cmd_sample(c, so);
        if (*eval) return cmd_evaluate(c);
        if (*ablate) return cmd_ablate(c, variants, seeds);
        if (*bench) return cmd_bench(c, repeats);
        if (*sweep) return cmd_noise_sweep(c);
        if (*plot) return cmd_plot(c);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const NumericalError& e) {
        std::cerr << "numerical error: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
