#include "doctest.h"
#include "testing.hpp"

#include "syncvp/autograd.hpp"

#include <cmath>

using namespace syncvp;
using syncvp::testing::numeric_grad;
using syncvp::testing::probe_weights;
using syncvp::testing::rel_error;

namespace {

// Checks d/dx sum(W .* op(x)) against central differences.
void check_unary(const std::function<ag::Var(ag::Tape&, const ag::Var&)>& op, const Mat& x0) {
    Mat w;
    {
        ag::Tape t;
        w = probe_weights(op(t, t.constant(x0)).rows(), op(t, t.constant(x0)).cols());
    }
    auto f = [&](const Mat& x) {
        ag::Tape t(false);
        return op(t, t.constant(x)).value().cwiseProduct(w).sum();
    };
    ag::Tape t;
    const ag::Var x = t.input(x0);
    t.backward(ag::sum_all(ag::mul(op(t, x), t.constant(w))));
    CHECK(rel_error(t.grad(x), numeric_grad(f, x0)) < 1e-6);
}

} // namespace

TEST_CASE("elementwise and matrix ops match finite differences") {
    Rng rng(1);
    const Mat a = rng.normal_matrix(5, 4), b = rng.normal_matrix(4, 3), c = rng.normal_matrix(5, 4);
    check_unary([&](ag::Tape& t, const ag::Var& x) { return ag::matmul(x, t.constant(b)); }, a);
    check_unary([&](ag::Tape& t, const ag::Var& x) { return ag::matmul_nt(x, t.constant(c)); }, a);
    check_unary([&](ag::Tape& t, const ag::Var& x) { return ag::mul(x, t.constant(c)); }, a);
    check_unary([](ag::Tape&, const ag::Var& x) { return ag::silu(x); }, a);
    check_unary([](ag::Tape&, const ag::Var& x) { return ag::tanh(x); }, a);
    check_unary([](ag::Tape&, const ag::Var& x) { return ag::softmax_rows(x); }, a);
    check_unary([](ag::Tape&, const ag::Var& x) { return ag::reshape(x, 10, 2); }, a);
    check_unary([](ag::Tape&, const ag::Var& x) { return ag::slice_cols(x, 1, 2); }, a);
    check_unary([&](ag::Tape& t, const ag::Var& x) { return ag::concat_rows({x, t.constant(c), x}); }, a);
    check_unary([&](ag::Tape& t, const ag::Var& x) { return ag::concat_cols({t.constant(c), x}); }, a);
}

TEST_CASE("layer norm gradients w.r.t. input and affine parameters") {
    Rng rng(2);
    const Mat x0 = rng.normal_matrix(6, 5), g0 = rng.normal_matrix(1, 5), b0 = rng.normal_matrix(1, 5);
    check_unary([&](ag::Tape& t, const ag::Var& x) { return ag::layer_norm(x, t.constant(g0), t.constant(b0)); }, x0);
    check_unary([&](ag::Tape& t, const ag::Var& g) { return ag::layer_norm(t.constant(x0), g, t.constant(b0)); }, g0);
    check_unary([&](ag::Tape& t, const ag::Var& b) { return ag::layer_norm(t.constant(x0), t.constant(g0), b); }, b0);
}

TEST_CASE("row shifts and gathers, including zero rows") {
    Rng rng(3);
    const Mat a = rng.normal_matrix(7, 3);
    check_unary([](ag::Tape&, const ag::Var& x) { return ag::shift_rows(x, 1, {3, 4}); }, a);
    check_unary([](ag::Tape&, const ag::Var& x) { return ag::shift_rows(x, -2, {3, 4}); }, a);
    check_unary([](ag::Tape&, const ag::Var& x) { return ag::gather_rows(x, {0, -1, 6, 6, 2, -1}); }, a);

    ag::Tape t;
    const ag::Var g = ag::gather_rows(t.constant(a), {-1, 4});
    CHECK(g.value().row(0).isZero());
    CHECK(g.value().row(1) == a.row(4));
    CHECK_THROWS(ag::gather_rows(t.constant(a), {7}));
    CHECK_THROWS(ag::gather_rows(t.constant(a), {-2}));
}

TEST_CASE("broadcast adds") {
    Rng rng(4);
    const Mat a = rng.normal_matrix(6, 3), row = rng.normal_matrix(1, 3), block = rng.normal_matrix(2, 3),
              seg = rng.normal_matrix(3, 3);
    check_unary([&](ag::Tape& t, const ag::Var& r) { return ag::add_row(t.constant(a), r); }, row);
    check_unary([&](ag::Tape& t, const ag::Var& bl) { return ag::add_tiled(t.constant(a), bl); }, block);
    check_unary([&](ag::Tape& t, const ag::Var& s) { return ag::add_segments(t.constant(a), s, 2); }, seg);
}

TEST_CASE("attention gradients over spans and heads") {
    Rng rng(5);
    const Mat q = rng.normal_matrix(7, 4), k = rng.normal_matrix(7, 4), v = rng.normal_matrix(7, 4);
    const std::vector<ag::AttnSpan> spans{{0, 3, 0, 3}, {3, 4, 3, 4}};
    check_unary([&](ag::Tape& t, const ag::Var& x) { return ag::attention(x, t.constant(k), t.constant(v), spans, 2); }, q);
    check_unary([&](ag::Tape& t, const ag::Var& x) { return ag::attention(t.constant(q), x, t.constant(v), spans, 2); }, k);
    check_unary([&](ag::Tape& t, const ag::Var& x) { return ag::attention(t.constant(q), t.constant(k), x, spans, 2); }, v);
}

TEST_CASE("dual attention: both directions are row-stochastic") {
    Rng rng(6);
    const Mat qr = rng.normal_matrix(5, 4), qd = rng.normal_matrix(3, 4);
    const Mat ones_r = Mat::Ones(5, 4), ones_d = Mat::Ones(3, 4);
    ag::Tape t(false);
    ag::AttentionProbe probe;
    const ag::Var out = ag::dual_attention(t.constant(qr), t.constant(qd), t.constant(ones_r), t.constant(ones_d),
                                           {{0, 5, 0, 3}}, 2, &probe);
    // Softmax(A) V_d with V_d = 1 gives the row sums of Softmax(A), likewise for A^T.
    CHECK((out.value().array() - 1.0).abs().maxCoeff() < 1e-12);
    CHECK(probe.matrices_built == 2);
}

TEST_CASE("reductions") {
    Rng rng(7);
    const Mat a = rng.normal_matrix(3, 4), b = rng.normal_matrix(3, 4);
    ag::Tape t;
    const ag::Var x = t.input(a);
    const ag::Var l = ag::mse(x, t.constant(b));
    CHECK(l.value()(0, 0) == doctest::Approx((a - b).squaredNorm() / 12.0).epsilon(1e-14));
    t.backward(l);
    CHECK(rel_error(t.grad(x), 2.0 * (a - b) / 12.0) < 1e-14);
    ag::Tape t2;
    CHECK(ag::mean_all(t2.constant(a)).value()(0, 0) == doctest::Approx(a.mean()));
}

TEST_CASE("Adam first step moves each weight by lr against its gradient sign") {
    ag::Param p("w", Mat::Zero(1, 3));
    p.grad << 0.2, -0.05, 0.1;
    ag::Adam opt({&p}, {.lr = 0.1, .clip_norm = 0});
    opt.step();
    CHECK(p.value(0, 0) == doctest::Approx(-0.1).epsilon(1e-6));
    CHECK(p.value(0, 1) == doctest::Approx(0.1).epsilon(1e-6));
    CHECK(p.value(0, 2) == doctest::Approx(-0.1).epsilon(1e-6));
    CHECK(p.grad.isZero());
    CHECK(opt.steps() == 1);
}

TEST_CASE("Adam clips the global gradient norm") {
    ag::Param p("w", Mat::Zero(1, 2));
    p.grad << 30.0, 40.0;
    ag::Adam opt({&p}, {.lr = 0.1, .clip_norm = 1.0});
    CHECK(opt.step() == doctest::Approx(50.0));
    CHECK(p.value.allFinite());
}

TEST_CASE("Rng state round-trips, including the cached normal") {
    Rng a(42);
    (void)a.normal();
    const std::string s = a.state();
    Rng b(0);
    b.set_state(s);
    for (int i = 0; i < 5; ++i) CHECK(a.normal() == b.normal());
    CHECK(a.next_u64() == b.next_u64());
}
