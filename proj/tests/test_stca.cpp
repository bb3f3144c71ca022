#include "doctest.h"
#include "testing.hpp"

#include "syncvp/stca.hpp"

using namespace syncvp;
using syncvp::testing::numeric_grad;
using syncvp::testing::probe_weights;
using syncvp::testing::rel_error;

namespace {

const char* kProj[] = {"q_r", "q_d", "v_r", "v_d", "o_r", "o_d"};

StcaParams random_params(int width, int heads, bool shared, uint64_t seed) {
    Rng rng(seed);
    return StcaParams::create(width, heads, shared, rng, false);
}

// Same weights with the R and D roles exchanged.
StcaParams swapped(const StcaParams& p) {
    StcaParams s = p;
    for (const char* g : {"all", "s", "h", "w"}) {
        const std::string base = p.site.prefix + "." + g + ".";
        if (!p.store.contains(base + "q_r")) continue;
        const std::pair<const char*, const char*> roles[] = {{"q_r", "q_d"}, {"v_r", "v_d"}, {"o_r", "o_d"}};
        for (auto [x, y] : roles) {
            s.store.at(base + x).value = p.store.at(base + y).value;
            s.store.at(base + y).value = p.store.at(base + x).value;
        }
    }
    return s;
}

} // namespace

TEST_CASE("hand-computed single-token dual attention") {
    Rng rng(0);
    StcaParams p = StcaParams::create(1, 1, true, rng, false);
    for (const char* n : kProj) p.store.at(std::string("stca.all.") + n).value = Mat::Constant(1, 1, 1.0);
    const auto [r, d] = shared_attention(Mat::Constant(1, 1, 2.0), Mat::Constant(1, 1, 3.0), p);
    // A = 2 * 3 = 6, softmax over one entry is 1: z_r' = 2 + 3, z_d' = 3 + 2.
    CHECK(r(0, 0) == 5.0);
    CHECK(d(0, 0) == 5.0);
}

TEST_CASE("zero output projections give the residual identity") {
    Rng rng(1);
    StcaParams p = StcaParams::create(8, 2, true, rng);
    const PlaneTokens planes{4, 6, 5};
    const Mat zr = rng.normal_matrix(15, 8), zd = rng.normal_matrix(15, 8);
    const auto [r1, d1] = stca_forward(zr, zd, planes, p);
    CHECK(r1 == zr);
    CHECK(d1 == zd);
    const auto [r2, d2] = vanilla_ca_forward(zr, zd, planes, p);
    CHECK(r2 == zr);
    CHECK(d2 == zd);
    const auto [r3, d3] = shared_attention(zr.topRows(3), zd.topRows(7), p);
    CHECK(r3 == zr.topRows(3));
    CHECK(d3 == zd.topRows(7));
}

TEST_CASE("swapping modalities and parameter roles swaps the outputs") {
    for (bool shared : {true, false}) {
        StcaParams p = random_params(6, 2, shared, 2);
        StcaParams q = swapped(p);
        Rng rng(3);
        const PlaneTokens planes{4, 8, 8};
        const Mat zr = rng.normal_matrix(20, 6), zd = rng.normal_matrix(20, 6);
        const auto [r, d] = stca_forward(zr, zd, planes, p);
        const auto [r2, d2] = stca_forward(zd, zr, planes, q);
        CHECK((r2 - d).cwiseAbs().maxCoeff() < 1e-12);
        CHECK((d2 - r).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("plane isolation: perturbing z_R^s leaves z_D^h and z_D^w unchanged") {
    StcaParams p = random_params(6, 2, true, 4);
    Rng rng(5);
    const PlaneTokens planes{4, 8, 8};
    const Mat zr = rng.normal_matrix(20, 6), zd = rng.normal_matrix(20, 6);
    Mat zr2 = zr;
    zr2.topRows(4) += rng.normal_matrix(4, 6);
    const auto [r, d] = stca_forward(zr, zd, planes, p);
    const auto [r2, d2] = stca_forward(zr2, zd, planes, p);
    CHECK(d.bottomRows(16) == d2.bottomRows(16));
    CHECK(r.bottomRows(16) == r2.bottomRows(16));
    CHECK((d.topRows(4) - d2.topRows(4)).norm() > 1e-6);

    // The vanilla baseline mixes planes.
    const auto [vr, vd] = vanilla_ca_forward(zr, zd, planes, p);
    const auto [vr2, vd2] = vanilla_ca_forward(zr2, zd, planes, p);
    CHECK((vd.bottomRows(16) - vd2.bottomRows(16)).norm() > 1e-6);
}

TEST_CASE("vanilla and split attention agree when only the content plane exists") {
    StcaParams p = random_params(4, 2, true, 6);
    Rng rng(7);
    const PlaneTokens planes{9, 0, 0};
    const Mat zr = rng.normal_matrix(9, 4), zd = rng.normal_matrix(9, 4);
    const auto [r1, d1] = stca_forward(zr, zd, planes, p);
    const auto [r2, d2] = vanilla_ca_forward(zr, zd, planes, p);
    CHECK(r1 == r2);
    CHECK(d1 == d2);
}

TEST_CASE("one score matrix per plane pair and head") {
    Rng rng(8);
    const PlaneTokens planes{4, 8, 8};
    const Mat zr = rng.normal_matrix(20, 8), zd = rng.normal_matrix(20, 8);
    for (int heads : {1, 2, 4}) {
        StcaParams p = random_params(8, heads, true, 9);
        ag::AttentionProbe split, full, single;
        (void)stca_forward(zr, zd, planes, p, &split);
        (void)vanilla_ca_forward(zr, zd, planes, p, &full);
        (void)shared_attention(zr, zd, p, &single);
        CHECK(split.matrices_built == 3 * heads);
        CHECK(full.matrices_built == heads);
        CHECK(single.matrices_built == heads);
    }
}

TEST_CASE("shape errors") {
    StcaParams p = random_params(4, 2, true, 10);
    const PlaneTokens planes{2, 2, 2};
    CHECK_THROWS_AS(stca_forward(Mat::Zero(6, 5), Mat::Zero(6, 5), planes, p), ShapeError);
    CHECK_THROWS_AS(stca_forward(Mat::Zero(6, 4), Mat::Zero(5, 4), planes, p), ShapeError);
    CHECK_THROWS_AS(vanilla_ca_forward(Mat::Zero(7, 4), Mat::Zero(7, 4), planes, p), ShapeError);
    CHECK_THROWS_AS(shared_attention(Mat::Zero(0, 4), Mat::Zero(3, 4), p), ShapeError);
    CHECK_THROWS_AS(shared_attention(Mat::Zero(2, 3), Mat::Zero(3, 4), p), ShapeError);
    Rng rng(0);
    CHECK_THROWS_AS(StcaParams::create(5, 2, true, rng), ConfigError);
}

TEST_CASE("analytic gradients match central differences") {
    for (CrossMode mode : {CrossMode::Stca, CrossMode::Vanilla}) {
        for (bool shared : {true, false}) {
            StcaParams p = random_params(4, 2, shared, 11);
            Rng rng(12);
            const PlaneTokens planes{2, 3, 3};
            const Eigen::Index batch = 2, rows = batch * planes.total();
            const Mat zr0 = rng.normal_matrix(rows, 4), zd0 = rng.normal_matrix(rows, 4);
            const Mat wr = probe_weights(rows, 4, 1), wd = probe_weights(rows, 4, 2);
            auto loss = [&](const Mat& zr, const Mat& zd) {
                ag::Tape t(false);
                const auto [r, d] = p.site.forward(t, p.store, t.constant(zr), t.constant(zd), planes, batch, mode);
                return r.value().cwiseProduct(wr).sum() + d.value().cwiseProduct(wd).sum();
            };
            p.store.zero_grad();
            ag::Tape t;
            const ag::Var zr = t.input(zr0), zd = t.input(zd0);
            const auto [r, d] = p.site.forward(t, p.store, zr, zd, planes, batch, mode);
            t.backward(ag::add(ag::sum_all(ag::mul(r, t.constant(wr))), ag::sum_all(ag::mul(d, t.constant(wd)))));
            CHECK(rel_error(t.grad(zr), numeric_grad([&](const Mat& x) { return loss(x, zd0); }, zr0)) < 1e-6);
            CHECK(rel_error(t.grad(zd), numeric_grad([&](const Mat& x) { return loss(zr0, x); }, zd0)) < 1e-6);
            for (ag::Param* prm : p.store.all()) {
                const Mat keep = prm->value;
                const Mat num = numeric_grad(
                    [&](const Mat& w) {
                        prm->value = w;
                        const double v = loss(zr0, zd0);
                        prm->value = keep;
                        return v;
                    },
                    keep);
                if (mode == CrossMode::Vanilla && prm->name.find(".all.") == std::string::npos &&
                    prm->name.find(".s.") == std::string::npos) {
                    CHECK(num.norm() == 0); // unused by the vanilla baseline
                    continue;
                }
                CHECK(rel_error(prm->grad, num) < 1e-6);
            }
        }
    }
}

TEST_CASE("attention cost examples") {
    const AttentionCostReport a = attention_cost(8, 64, 64, 4);
    CHECK(a.stca_flops == 98304);
    CHECK(a.ca_flops == 262144);
    CHECK(a.ratio == Rational{3, 8});
    CHECK(a.ratio.value() == 0.375);

    const AttentionCostReport b = attention_cost(8, 128, 128, 4);
    CHECK(b.ratio == Rational{1, 2});
    CHECK(b.ratio.value() == 0.5);

    const AttentionCostReport c = attention_cost(2, 8, 8, 4);
    CHECK(c.stca_flops == 48);
    CHECK(c.ca_flops == 144);
    CHECK(c.ratio == Rational{1, 3});

    CHECK_THROWS_AS(attention_cost(8, 30, 32, 4), GeometryError);
}

TEST_CASE("property: split attention is cheaper whenever two planes are non-empty") {
    for (int T = 1; T <= 16; T += 3)
        for (int P : {2, 4, 8})
            for (int h = 1; h <= 6; ++h)
                for (int w = 1; w <= 6; ++w) {
                    const AttentionCostReport r = attention_cost(T, h * P, w * P, P);
                    CHECK(r.ratio.num < r.ratio.den);
                    CHECK(r.stca_flops * r.ratio.den == r.ca_flops * r.ratio.num);
                }
    CHECK(attention_cost(PlaneTokens{5, 0, 0}).ratio == Rational{1, 1});
}

TEST_CASE("projection cost is reported separately") {
    CHECK(projection_cost(PlaneTokens{2, 3, 3}, 4) > 0);
    CHECK(projection_cost(PlaneTokens{4, 6, 6}, 4) == 2 * projection_cost(PlaneTokens{2, 3, 3}, 4));
}
