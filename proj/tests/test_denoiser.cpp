#include "doctest.h"
#include "testing.hpp"

#include "syncvp/denoiser.hpp"

#include <cmath>

using namespace syncvp;
using syncvp::testing::numeric_grad;
using syncvp::testing::probe_weights;
using syncvp::testing::rel_error;

namespace {

const LatentLayout kTiny = latent_layout(4, 8, 8, 2, 2); // 16 + 16 + 16 tokens

DenoiserConfig tiny_config(uint64_t seed) {
    DenoiserConfig c;
    c.latent_channels = 2;
    c.width = 4;
    c.heads = 2;
    c.time_dim = 4;
    c.max_steps = 50;
    c.seed = seed;
    return c;
}

BranchInput random_input(const LatentLayout& l, Eigen::Index batch, int max_step, Rng& rng) {
    BranchInput in;
    in.z_t = rng.normal_matrix(batch * l.L, l.channels);
    in.cond = rng.normal_matrix(batch * l.L, l.channels);
    for (Eigen::Index b = 0; b < batch; ++b) in.steps.push_back(static_cast<int>(rng.uniform_int(1, max_step)));
    return in;
}

// Makes the cross-attention output projections non-zero.
void perturb_cross(JointDenoiser& j, uint64_t seed) {
    Rng rng(seed);
    for (ag::Param* p : j.cross_params().all()) p->value = rng.normal_matrix(p->value.rows(), p->value.cols()) * 0.3;
}

} // namespace

TEST_CASE("token rows round-trip and condition injection concatenates channels") {
    Rng rng(1);
    std::vector<TriplaneLatent> zs;
    for (int i = 0; i < 3; ++i) {
        TriplaneLatent z = TriplaneLatent::zeros(kTiny);
        z.z = rng.normal_matrix(kTiny.channels, kTiny.L);
        zs.push_back(z);
    }
    const Mat rows = to_rows(zs);
    CHECK(rows.rows() == 3 * kTiny.L);
    CHECK(rows.cols() == kTiny.channels);
    CHECK(rows.row(kTiny.L + 5).transpose() == zs[1].z.col(5));
    const auto back = from_rows(rows, kTiny);
    REQUIRE(back.size() == 3);
    for (int i = 0; i < 3; ++i) CHECK(back[i].z == zs[i].z);
    CHECK_THROWS_AS(from_rows(Mat::Zero(kTiny.L + 1, 2), kTiny), ShapeError);

    const Mat a = Mat::Constant(4, 2, 1.0), b = Mat::Constant(4, 2, 2.0);
    const Mat ab = condition_inject(a, b);
    CHECK(ab.cols() == 4);
    CHECK(ab.leftCols(2) == a);
    CHECK(ab.rightCols(2) == b);
    CHECK_THROWS_AS(condition_inject(a, Mat::Zero(3, 2)), ShapeError);
}

TEST_CASE("step embedding is bounded and separates steps") {
    const Mat e = step_embedding({1, 2, 500, 1000}, 32);
    CHECK(e.rows() == 4);
    CHECK(e.cols() == 32);
    CHECK(e.cwiseAbs().maxCoeff() <= 1.0);
    for (int i = 0; i < 4; ++i)
        for (int j = i + 1; j < 4; ++j) CHECK((e.row(i) - e.row(j)).norm() > 1e-3);
    // sin^2 + cos^2 = 1 per frequency
    for (int k = 0; k < 16; ++k) CHECK(e(2, k) * e(2, k) + e(2, 16 + k) * e(2, 16 + k) == doctest::Approx(1.0));
}

TEST_CASE("denoiser output shape, determinism and batch independence") {
    Denoiser d(tiny_config(3), kTiny);
    Rng rng(2);
    const BranchInput in = random_input(kTiny, 3, 50, rng);
    const Mat e1 = d.predict(in), e2 = d.predict(in);
    CHECK(e1.rows() == 3 * kTiny.L);
    CHECK(e1.cols() == 2);
    CHECK(e1.allFinite());
    CHECK(e1 == e2);

    BranchInput one;
    one.z_t = in.z_t.middleRows(kTiny.L, kTiny.L);
    one.cond = in.cond.middleRows(kTiny.L, kTiny.L);
    one.steps = {in.steps[1]};
    CHECK((d.predict(one) - e1.middleRows(kTiny.L, kTiny.L)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("the condition and the step both influence the prediction") {
    Denoiser d(tiny_config(3), kTiny);
    Rng rng(3);
    BranchInput in = random_input(kTiny, 1, 50, rng);
    const Mat base = d.predict(in);
    BranchInput c = in;
    c.cond.array() += 0.5;
    CHECK((d.predict(c) - base).norm() > 1e-6);
    BranchInput s = in;
    s.steps[0] = s.steps[0] == 1 ? 40 : 1;
    CHECK((d.predict(s) - base).norm() > 1e-6);
}

TEST_CASE("denoiser input validation") {
    Denoiser d(tiny_config(3), kTiny);
    Rng rng(4);
    BranchInput in = random_input(kTiny, 2, 50, rng);
    BranchInput bad = in;
    bad.z_t = Mat::Zero(kTiny.L, 2);
    CHECK_THROWS_AS(d.predict(bad), ShapeError);
    bad = in;
    bad.cond = Mat::Zero(2 * kTiny.L, 3);
    CHECK_THROWS_AS(d.predict(bad), ShapeError);
    bad = in;
    bad.steps = {0, 3};
    CHECK_THROWS_AS(d.predict(bad), DomainError);
    bad.steps = {51, 3};
    CHECK_THROWS_AS(d.predict(bad), DomainError);
    bad.steps.clear();
    CHECK_THROWS_AS(d.predict(bad), ShapeError);

    ag::Tape t(false);
    Denoiser::State s = d.begin(t, in);
    CHECK_THROWS_AS(d.finish(t, s), DomainError);
    while (s.stage < Denoiser::kHooks) d.advance(t, s);
    CHECK_THROWS_AS(d.advance(t, s), DomainError);

    DenoiserConfig c = tiny_config(3);
    c.latent_channels = 3;
    CHECK_THROWS_AS(Denoiser(c, kTiny), ConfigError);
    CHECK_THROWS_AS(Denoiser(tiny_config(3), latent_layout(3, 4, 4, 2, 2)), GeometryError);
}

TEST_CASE("denoiser gradients match central differences") {
    Denoiser d(tiny_config(5), kTiny);
    Rng rng(6);
    const BranchInput in = random_input(kTiny, 2, 50, rng);
    const Mat w = probe_weights(2 * kTiny.L, 2, 3);
    auto loss = [&](const Mat& z) {
        BranchInput x = in;
        x.z_t = z;
        return d.predict(x).cwiseProduct(w).sum();
    };
    d.params().zero_grad();
    ag::Tape t;
    BranchInput x = in;
    const ag::Var out = d.forward(t, x);
    t.backward(ag::sum_all(ag::mul(out, t.constant(w))));

    for (const char* name : {"stem.w", "pos", "res1.conv.w", "down.w", "attn.q.w", "res3.temb.w", "merge.w", "head.b"}) {
        ag::Param& p = d.params().at(name);
        const Mat keep = p.value;
        const Mat num = numeric_grad(
            [&](const Mat& v) {
                p.value = v;
                const double r = loss(in.z_t);
                p.value = keep;
                return r;
            },
            keep);
        CAPTURE(name);
        CHECK(rel_error(p.grad, num) < 1e-5);
    }
}

TEST_CASE("warm start: zero-initialised cross-attention reproduces the single branches") {
    for (CrossMode mode : {CrossMode::Stca, CrossMode::Vanilla})
        for (bool all_layers : {false, true}) {
            Denoiser a(tiny_config(7), kTiny), b(tiny_config(8), kTiny);
            JointConfig jc;
            jc.mode = mode;
            jc.all_layers = all_layers;
            JointDenoiser j = init_joint_from_pretrained(a, b, jc);
            Rng rng(9);
            for (int i = 0; i < 10; ++i) {
                BranchInput ia = random_input(kTiny, 2, 50, rng);
                BranchInput ib = ia;
                ib.z_t = rng.normal_matrix(ia.z_t.rows(), 2);
                ib.cond = rng.normal_matrix(ia.z_t.rows(), 2);
                const auto [ea, eb] = j.predict(ia, ib);
                CHECK((ea - a.predict(ia)).cwiseAbs().maxCoeff() <= 1e-6);
                CHECK((eb - b.predict(ib)).cwiseAbs().maxCoeff() <= 1e-6);
            }
        }
}

TEST_CASE("joint model exchanges information once projections are non-zero") {
    Denoiser a(tiny_config(7), kTiny), b(tiny_config(8), kTiny);
    JointDenoiser j = init_joint_from_pretrained(a, b, JointConfig{});
    perturb_cross(j, 10);
    Rng rng(11);
    BranchInput ia = random_input(kTiny, 1, 50, rng), ib = ia;
    ib.z_t = rng.normal_matrix(kTiny.L, 2);
    const auto [ea, eb] = j.predict(ia, ib);
    BranchInput ib2 = ib;
    ib2.cond.array() += 1.0;
    const auto [ea2, eb2] = j.predict(ia, ib2);
    CHECK((ea2 - ea).norm() > 1e-6);

    BranchInput ib3 = ib;
    ib3.steps = {ia.steps[0] == 1 ? 2 : 1};
    CHECK_THROWS_AS(j.predict(ia, ib3), ShapeError);
}

TEST_CASE("joint forward builds one score matrix per plane pair and head at each active hook") {
    Denoiser a(tiny_config(7), kTiny), b(tiny_config(8), kTiny);
    Rng rng(12);
    const BranchInput in = random_input(kTiny, 2, 50, rng);
    for (bool all_layers : {false, true}) {
        JointConfig jc;
        jc.all_layers = all_layers;
        JointDenoiser stca = init_joint_from_pretrained(a, b, jc);
        jc.mode = CrossMode::Vanilla;
        JointDenoiser vanilla = init_joint_from_pretrained(a, b, jc);
        const long hooks = all_layers ? 3 : 1;
        ag::AttentionProbe p1, p2;
        (void)stca.predict(in, in, &p1);
        (void)vanilla.predict(in, in, &p2);
        CHECK(p1.matrices_built == hooks * 3 * jc.heads * 2);
        CHECK(p2.matrices_built == hooks * jc.heads * 2);
    }
}

TEST_CASE("joint parameters: names, separate plane groups and parameter counts") {
    Denoiser a(tiny_config(7), kTiny), b(tiny_config(8), kTiny);
    JointConfig jc;
    JointDenoiser shared = init_joint_from_pretrained(a, b, jc);
    CHECK(shared.cross_params().contains("cross1.all.q_r"));
    CHECK(shared.cross_params().size() == 6);
    CHECK(shared.cross_params().at("cross1.all.o_d").value.isZero());
    jc.shared = false;
    JointDenoiser split = init_joint_from_pretrained(a, b, jc);
    CHECK(split.cross_params().size() == 18);
    CHECK(split.cross_params().contains("cross1.h.v_d"));
    CHECK(split.all_params().size() == a.params().size() + b.params().size() + 18);
}

TEST_CASE("incompatible checkpoints are rejected") {
    Denoiser a(tiny_config(7), kTiny);
    DenoiserConfig wide = tiny_config(8);
    wide.width = 8;
    CHECK_THROWS_AS(init_joint_from_pretrained(a, Denoiser(wide, kTiny), JointConfig{}), CheckpointError);
    CHECK_THROWS_AS(init_joint_from_pretrained(a, Denoiser(tiny_config(8), latent_layout(4, 16, 8, 2, 2)), JointConfig{}),
                    CheckpointError);
    CHECK(a.fingerprint() != Denoiser(wide, kTiny).fingerprint());
    CHECK(a.fingerprint() == Denoiser(tiny_config(99), kTiny).fingerprint());
}
