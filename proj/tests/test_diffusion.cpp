#include "doctest.h"

#include "syncvp/diffusion.hpp"

#include <cmath>
#include <set>

using namespace syncvp;

namespace {

DenoiserConfig tiny_denoiser(uint64_t seed) {
    DenoiserConfig c;
    c.latent_channels = 2;
    c.width = 4;
    c.heads = 2;
    c.time_dim = 4;
    c.max_steps = 20;
    c.seed = seed;
    return c;
}

const LatentLayout kTiny = latent_layout(4, 8, 8, 2, 2);

VideoClip constant_clip(int T, double v) {
    VideoClip c = VideoClip::zeros(T, 2, 2, 1);
    for (double& x : c.data) x = v;
    return c;
}

} // namespace

TEST_CASE("linear schedule matches the reference cumulative products") {
    const NoiseSchedule s = make_schedule(ScheduleConfig{});
    CHECK(s.T == 1000);
    CHECK(s.beta[1] == doctest::Approx(1e-4));
    CHECK(s.beta[1000] == doctest::Approx(0.02));
    CHECK(s.abar(0) == 1.0);
    CHECK(s.abar(1) == doctest::Approx(0.9999).epsilon(1e-12));
    CHECK(s.abar(500) == doctest::Approx(0.07858724288177824).epsilon(1e-9));
    CHECK(s.abar(1000) == doctest::Approx(4.035829765375676e-05).epsilon(1e-9));
    CHECK_THROWS_AS(s.abar(1001), DomainError);
    CHECK_THROWS_AS(s.abar(-1), DomainError);
}

TEST_CASE("cosine schedule matches the reference cumulative products") {
    ScheduleConfig c;
    c.kind = ScheduleKind::Cosine;
    const NoiseSchedule s = make_schedule(c);
    CHECK(s.beta[1] == doctest::Approx(4.128422482196914e-05).epsilon(1e-9));
    CHECK(s.abar(500) == doctest::Approx(0.4938435904406382).epsilon(1e-9));
    CHECK(s.abar(1000) == doctest::Approx(2.4287669070348567e-09).epsilon(1e-6));
}

TEST_CASE("property: schedules satisfy the invariants") {
    for (ScheduleKind kind : {ScheduleKind::Linear, ScheduleKind::Cosine})
        for (int T : {1, 2, 10, 100, 1000}) {
            ScheduleConfig c;
            c.kind = kind;
            c.steps = T;
            const NoiseSchedule s = make_schedule(c);
            CHECK_NOTHROW(s.validate());
            double prod = 1.0;
            for (int t = 1; t <= T; ++t) {
                CHECK(s.beta[t] > 0.0);
                CHECK(s.beta[t] < 1.0);
                prod *= 1.0 - s.beta[t];
                CHECK(s.abar(t) == prod);
                CHECK(s.abar(t) < s.abar(t - 1));
            }
        }
}

TEST_CASE("invalid schedules are rejected") {
    CHECK_THROWS_AS(schedule_from_betas({}), InvalidScheduleError);
    CHECK_THROWS_AS(schedule_from_betas({0.1, 1.0}), InvalidScheduleError);
    CHECK_THROWS_AS(schedule_from_betas({0.0}), InvalidScheduleError);
    CHECK_THROWS_AS(schedule_from_betas({-0.2}), InvalidScheduleError);
    ScheduleConfig c;
    c.steps = 0;
    CHECK_THROWS_AS(make_schedule(c), InvalidScheduleError);
    NoiseSchedule s = schedule_from_betas({0.1, 0.2});
    s.alpha_bar[2] = 0.5;
    CHECK_THROWS_AS(s.validate(), InvalidScheduleError);
    s = schedule_from_betas({0.1, 0.2});
    s.beta.pop_back();
    CHECK_THROWS_AS(s.validate(), InvalidScheduleError);
}

TEST_CASE("forward process") {
    const Mat z0 = Mat::Constant(2, 2, 3.0), eps = Mat::Constant(2, 2, 1.0);
    CHECK(forward_diffuse(z0, 1.0, eps) == z0);
    CHECK(forward_diffuse(z0, 0.0, eps) == eps);
    CHECK(forward_diffuse(z0, 0.25, eps)(0, 0) == doctest::Approx(0.5 * 3.0 + std::sqrt(0.75)));
    CHECK_THROWS_AS(forward_diffuse(z0, 1.5, eps), DomainError);
    CHECK_THROWS_AS(forward_diffuse(z0, 0.5, Mat::Zero(3, 2)), ShapeError);

    // Per-sample steps act on consecutive row blocks.
    const NoiseSchedule s = schedule_from_betas({0.5, 0.5});
    const Mat z = forward_diffuse(Mat::Constant(4, 1, 2.0), {1, 2}, Mat::Constant(4, 1, 1.0), s);
    CHECK(z(0, 0) == doctest::Approx(std::sqrt(0.5) * 2 + std::sqrt(0.5)));
    CHECK(z(3, 0) == doctest::Approx(0.5 * 2 + std::sqrt(0.75)));
    CHECK_THROWS_AS(forward_diffuse(Mat::Zero(3, 1), {1, 2}, Mat::Zero(3, 1), s), ShapeError);
}

TEST_CASE("shared noise: both modalities receive the identical injected noise") {
    const NoiseSchedule s = make_schedule(ScheduleConfig{});
    Rng rng(1), rng_b(2);
    for (int i = 0; i < 50; ++i) {
        const Mat za = rng.normal_matrix(3 * 12, 2), zb = rng.normal_matrix(3 * 12, 2);
        const JointBatch jb = make_joint_batch(za, zb, za, zb, 3, s, rng);
        CHECK(jb.eps_a == jb.eps_b);
        CHECK(injected_noise(jb.eps_a, jb.steps, s) == injected_noise(jb.eps_b, jb.steps, s));
        const Mat ra = noise_residual(forward_diffuse(jb.z0_a, jb.steps, jb.eps_a, s), jb.z0_a, jb.steps, s);
        const Mat rb = noise_residual(forward_diffuse(jb.z0_b, jb.steps, jb.eps_b, s), jb.z0_b, jb.steps, s);
        CHECK((ra - rb).cwiseAbs().maxCoeff() < 1e-12);

        const JointBatch ind = make_joint_batch(za, zb, za, zb, 3, s, rng, true, &rng_b);
        CHECK((ind.eps_a - ind.eps_b).norm() > 1.0);
    }
    CHECK_THROWS_AS(make_joint_batch(Mat::Zero(6, 2), Mat::Zero(6, 2), Mat(), Mat(), 2, s, rng, true), DomainError);
    CHECK_THROWS_AS(make_joint_batch(Mat::Zero(6, 2), Mat::Zero(4, 2), Mat(), Mat(), 2, s, rng), ShapeError);
    CHECK_THROWS_AS(make_joint_batch(Mat::Zero(6, 2), Mat::Zero(6, 2), Mat(), Mat(), 4, s, rng), ShapeError);
}

TEST_CASE("sampled steps cover [1, T] and nothing else") {
    const NoiseSchedule s = schedule_from_betas({0.1, 0.1, 0.1, 0.1, 0.1});
    Rng rng(3);
    std::set<int> seen;
    for (int t : sample_steps(2000, s, rng)) {
        CHECK(t >= 1);
        CHECK(t <= 5);
        seen.insert(t);
    }
    CHECK(seen.size() == 5);
}

TEST_CASE("noise loss is the per-sample squared error averaged over the batch") {
    const Mat pred = Mat::Constant(4, 2, 1.0), eps = Mat::Zero(4, 2);
    CHECK(noise_loss(pred, eps, 2) == 4.0);
    CHECK(noise_loss(eps, eps, 2) == 0.0);
    ag::Tape t;
    CHECK(noise_loss(t.constant(pred), t.constant(eps), 2).value()(0, 0) == 4.0);
}

TEST_CASE("DDIM timesteps use a uniform stride") {
    CHECK(ddim_timesteps(1000, 7) == std::vector<int>{1000, 857, 714, 571, 428, 285, 142});
    const auto ts = ddim_timesteps(1000, 100);
    CHECK(ts.size() == 100);
    CHECK(ts.front() == 1000);
    CHECK(ts[1] == 990);
    CHECK(ts.back() == 10);
    CHECK(ddim_timesteps(5, 5) == std::vector<int>{5, 4, 3, 2, 1});
    CHECK_THROWS_AS(ddim_timesteps(10, 0), DomainError);
    CHECK_THROWS_AS(ddim_timesteps(10, 11), DomainError);
}

TEST_CASE("DDIM hand-computed updates") {
    Rng rng(0);
    const EpsFn unit = [](const std::vector<Mat>& z, int) { return std::vector<Mat>(z.size(), Mat::Ones(1, 1)); };
    // One step, abar = 0.5: x0 = (2 - sqrt(0.5)) / sqrt(0.5), then abar_prev = 1 returns x0.
    const auto one = ddim_sample(unit, {Mat::Constant(1, 1, 2.0)}, schedule_from_betas({0.5}), {1, 0.0}, rng);
    CHECK(one[0](0, 0) == doctest::Approx(1.8284271247461903).epsilon(1e-14));
    // Two steps with abar {0.5, 0.25} from z = 1: the x0 estimate 2 - sqrt(3) is preserved.
    const auto two = ddim_sample(unit, {Mat::Constant(1, 1, 1.0)}, schedule_from_betas({0.5, 0.5}), {2, 0.0}, rng);
    CHECK(two[0](0, 0) == doctest::Approx(2.0 - std::sqrt(3.0)).epsilon(1e-12));
}

TEST_CASE("property: DDIM with the exact noise oracle recovers a point mass") {
    const NoiseSchedule s = make_schedule(ScheduleConfig{});
    Rng rng(4);
    for (int trial = 0; trial < 5; ++trial) {
        const Mat z0 = rng.normal_matrix(6, 3);
        const EpsFn oracle = [&](const std::vector<Mat>& z, int t) {
            const double a = s.abar(t);
            return std::vector<Mat>{(z[0] - std::sqrt(a) * z0) / std::sqrt(1.0 - a)};
        };
        for (int steps : {1, 10, 50}) {
            const auto out = ddim_sample(oracle, {rng.normal_matrix(6, 3)}, s, {steps, 0.0}, rng);
            CHECK((out[0] - z0).cwiseAbs().maxCoeff() < 1e-6);
        }
    }
}

TEST_CASE("DDIM argument checks") {
    const NoiseSchedule s = schedule_from_betas({0.5, 0.5});
    Rng rng(5);
    const EpsFn bad_count = [](const std::vector<Mat>&, int) { return std::vector<Mat>{}; };
    CHECK_THROWS_AS(ddim_sample(bad_count, {Mat::Zero(1, 1)}, s, {2, 0.0}, rng), ShapeError);
    const EpsFn nan = [](const std::vector<Mat>& z, int) { return std::vector<Mat>(z.size(), Mat::Constant(1, 1, NAN)); };
    CHECK_THROWS_AS(ddim_sample(nan, {Mat::Zero(1, 1)}, s, {2, 0.0}, rng), NumericalError);
    const EpsFn unit = [](const std::vector<Mat>& z, int) { return std::vector<Mat>(z.size(), Mat::Ones(1, 1)); };
    CHECK_THROWS_AS(ddim_sample(unit, {Mat::Zero(1, 1)}, s, {2, -0.1}, rng), DomainError);
    CHECK_THROWS_AS(ddim_sample(unit, {Mat::Zero(1, 1)}, s, {3, 0.0}, rng), DomainError);
}

TEST_CASE("joint DDIM: deterministic for a fixed seed, stochastic only through eta") {
    JointDenoiser j = init_joint_from_pretrained(Denoiser(tiny_denoiser(1), kTiny), Denoiser(tiny_denoiser(2), kTiny),
                                                 JointConfig{});
    ScheduleConfig sc;
    sc.steps = 20;
    const NoiseSchedule s = make_schedule(sc);
    Rng crng(6);
    const Mat ca = crng.normal_matrix(2 * kTiny.L, 2), cb = crng.normal_matrix(2 * kTiny.L, 2);
    Rng r1(7), r2(7), r3(8);
    const auto [a1, b1] = ddim_sample(j, ca, cb, s, {5, 0.0}, r1);
    const auto [a2, b2] = ddim_sample(j, ca, cb, s, {5, 0.0}, r2);
    CHECK((a1 - a2).cwiseAbs().maxCoeff() <= 1e-6);
    CHECK((b1 - b2).cwiseAbs().maxCoeff() <= 1e-6);
    CHECK(a1.allFinite());
    const auto [a3, b3] = ddim_sample(j, ca, cb, s, {5, 0.0}, r3);
    CHECK((a3 - a1).norm() > 1e-3);

    Rng e1(9), e2(9);
    const auto [ea, eb] = ddim_sample(j, ca, cb, s, {5, 0.5}, e1);
    const auto [fa, fb] = ddim_sample(j, ca, cb, s, {5, 0.5}, e2);
    CHECK(ea == fa);
    CHECK(eb == fb);
}

TEST_CASE("joint DDIM starts both branches from the same noise draw unless told otherwise") {
    Denoiser d(tiny_denoiser(1), kTiny);
    JointDenoiser j = init_joint_from_pretrained(d, d, JointConfig{});
    ScheduleConfig sc;
    sc.steps = 20;
    const NoiseSchedule s = make_schedule(sc);
    const Mat c = Mat::Zero(kTiny.L, 2);
    Rng r1(10), r2(10);
    // Identical branches and conditions: a shared start gives identical outputs.
    const auto [a, b] = ddim_sample(j, c, c, s, {4, 0.0}, r1);
    CHECK(a == b);
    const auto [a2, b2] = ddim_sample(j, c, c, s, {4, 0.0}, r2, false);
    CHECK((a2 - b2).norm() > 1e-3);
}

TEST_CASE("rollout planning") {
    const RolloutPlan p = plan_rollout(28, 8);
    CHECK(p.passes == 4);
    CHECK(p.frames_per_pass == std::vector<int>{8, 8, 8, 4});
    CHECK(plan_rollout(8, 8).passes == 1);
    CHECK(plan_rollout(1, 8).frames_per_pass == std::vector<int>{1});
    CHECK_THROWS_AS(plan_rollout(0, 8), DomainError);
    CHECK_THROWS_AS(plan_rollout(8, 0), DomainError);
    for (int total = 1; total <= 40; ++total)
        for (int per = 1; per <= 9; ++per) {
            const RolloutPlan q = plan_rollout(total, per);
            int sum = 0;
            for (int f : q.frames_per_pass) sum += f;
            CHECK(sum == total);
            CHECK(q.passes == (total + per - 1) / per);
        }
}

TEST_CASE("rollout conditions each pass on the most recent frames") {
    // Each pass predicts frames equal to (last condition value + 1).
    std::vector<double> seen;
    const PassFn pass = [&](const VideoClip& ca, const VideoClip& cb) {
        const double last = ca.at(ca.T - 1, 0, 0);
        seen.push_back(last);
        CHECK(cb.at(cb.T - 1, 0, 0) == -last);
        VideoClip a = constant_clip(8, 0), b = constant_clip(8, 0);
        for (int t = 0; t < 8; ++t)
            for (int k = 0; k < 4; ++k) {
                a.data[static_cast<size_t>(t * 4 + k)] = (last + 1 + t) / 100;
                b.data[static_cast<size_t>(t * 4 + k)] = -(last + 1 + t) / 100;
            }
        return std::pair{a, b};
    };
    VideoClip pa = constant_clip(4, 0), pb = constant_clip(4, 0);
    for (int t = 0; t < 4; ++t)
        for (int k = 0; k < 4; ++k) {
            pa.data[static_cast<size_t>(t * 4 + k)] = t / 100.0;
            pb.data[static_cast<size_t>(t * 4 + k)] = -t / 100.0;
        }
    const PassFn scaled = [&](const VideoClip& ca, const VideoClip& cb) {
        VideoClip a = ca, b = cb;
        for (double& v : a.data) v *= 100;
        for (double& v : b.data) v *= 100;
        return pass(a, b);
    };
    const Rollout r = predict_rollout(scaled, pa, pb, 4, 8, 28);
    CHECK(r.passes == 4);
    CHECK(r.a.T == 28);
    CHECK(r.b.T == 28);
    CHECK(r.frame_index.front() == 4);
    CHECK(r.frame_index.back() == 31);
    REQUIRE(seen.size() == 4);
    CHECK(seen[0] == doctest::Approx(3));
    CHECK(seen[1] == doctest::Approx(11));
    CHECK(seen[3] == doctest::Approx(27));
    for (int t = 0; t < 28; ++t) CHECK(r.a.at(t, 1, 1) == doctest::Approx((4 + t) / 100.0));

    CHECK_THROWS_AS(predict_rollout(scaled, pa.frames(0, 2), pb.frames(0, 2), 4, 8, 28), DomainError);
    CHECK_THROWS_AS(predict_rollout(scaled, pa, pb.frames(0, 3), 3, 8, 28), DomainError);
    const PassFn short_pass = [](const VideoClip& ca, const VideoClip& cb) { return std::pair{ca.frames(0, 1), cb.frames(0, 1)}; };
    CHECK_THROWS_AS(predict_rollout(short_pass, pa, pb, 4, 8, 28), ShapeError);
}
