#include "doctest.h"

#include "syncvp/guidance.hpp"

#include <array>
#include <cmath>

using namespace syncvp;

namespace {

// Counts (both, A only, B only); the (false, false) mask must never appear.
std::array<int, 3> count_masks(Rng& rng, const GuidanceConfig& c, int draws) {
    std::array<int, 3> n{};
    int neither = 0;
    for (int i = 0; i < draws; ++i) {
        const ConditioningMask m = sample_mask(rng, c);
        if (!m.use_a && !m.use_b) ++neither;
        else ++n[m.use_a && m.use_b ? 0 : m.use_a ? 1 : 2];
    }
    CHECK(neither == 0);
    return n;
}

} // namespace

TEST_CASE("mask frequencies match the configured probabilities") {
    const GuidanceConfig c;
    const std::array<double, 3> p{c.p_both, c.p_a_only, c.p_b_only};
    for (uint64_t seed : {1, 2, 3}) {
        Rng rng(seed);
        const int draws = 100000;
        const auto n = count_masks(rng, c, draws);
        double chi2 = 0;
        for (int k = 0; k < 3; ++k) {
            const double freq = static_cast<double>(n[k]) / draws;
            CHECK(std::abs(freq - p[k]) <= 0.02);
            const double expected = p[k] * draws;
            chi2 += (n[k] - expected) * (n[k] - expected) / expected;
        }
        // chi-square, 2 degrees of freedom, 0.01 level
        CHECK(chi2 < 9.21);
    }
}

TEST_CASE("non-default probabilities are honoured") {
    GuidanceConfig c;
    c.p_both = 0.2;
    c.p_a_only = 0.7;
    c.p_b_only = 0.1;
    Rng rng(4);
    const auto n = count_masks(rng, c, 50000);
    CHECK(n[0] / 50000.0 == doctest::Approx(0.2).epsilon(0.05));
    CHECK(n[1] / 50000.0 == doctest::Approx(0.7).epsilon(0.05));
    CHECK(n[2] / 50000.0 == doctest::Approx(0.1).epsilon(0.05));

    c.p_both = 1.0;
    c.p_a_only = c.p_b_only = 0.0;
    for (int i = 0; i < 100; ++i) CHECK(sample_mask(rng, c) == ConditioningMask{true, true});
}

TEST_CASE("probability validation") {
    GuidanceConfig c;
    CHECK_NOTHROW(c.validate());
    c.p_both = 0.9;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.p_both = 1.2;
    c.p_a_only = -0.1;
    c.p_b_only = -0.1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c.p_both = NAN;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("masked slots become zero latents, others pass through") {
    const Mat a = Mat::Constant(3, 2, 1.5), b = Mat::Constant(3, 2, -2.0);
    const auto [a1, b1] = apply_mask(a, b, {true, true});
    CHECK(a1 == a);
    CHECK(b1 == b);
    const auto [a2, b2] = apply_mask(a, b, {true, false});
    CHECK(a2 == a);
    CHECK(b2.isZero());
    const auto [a3, b3] = apply_mask(a, b, {false, true});
    CHECK(a3.isZero());
    CHECK(b3 == b);
}

TEST_CASE("batched masks act per sample or on the whole batch") {
    Mat a = Mat::Ones(6, 2), b = Mat::Ones(6, 2);
    apply_masks(a, b, {{true, true}, {false, true}, {true, false}}, 2);
    CHECK(a.topRows(2).isOnes());
    CHECK(a.middleRows(2, 2).isZero());
    CHECK(a.bottomRows(2).isOnes());
    CHECK(b.topRows(4).isOnes());
    CHECK(b.bottomRows(2).isZero());

    Mat c = Mat::Ones(6, 2), d = Mat::Ones(6, 2);
    apply_masks(c, d, {{true, false}}, 2);
    CHECK(c.isOnes());
    CHECK(d.isZero());

    CHECK_THROWS_AS(apply_masks(c, d, {{true, true}, {true, true}}, 2), ShapeError);
    Mat e = Mat::Ones(5, 2);
    CHECK_THROWS_AS(apply_masks(e, d, {{true, true}}, 2), ShapeError);
}

TEST_CASE("batch mask sampling follows the per-sample and enabled switches") {
    Rng rng(5);
    GuidanceConfig c;
    CHECK(sample_batch_masks(rng, 8, c).size() == 1);
    c.per_sample = true;
    const auto per = sample_batch_masks(rng, 8, c);
    CHECK(per.size() == 8);
    c.enabled = false;
    for (int i = 0; i < 50; ++i) {
        const auto m = sample_batch_masks(rng, 8, c);
        REQUIRE(m.size() == 1);
        CHECK(m[0] == ConditioningMask{true, true});
    }
}

TEST_CASE("mask draws are reproducible from the generator state") {
    Rng a(6), b(6);
    for (int i = 0; i < 100; ++i) CHECK(sample_mask(a) == sample_mask(b));
}
