// SPDX-License-Identifier: Apache-2.0
#pragma once

// Minimal reverse-mode differentiation over row-major dense matrices.
//
// A Tape records every operation applied to Vars; backward() walks the record
// in reverse and accumulates gradients into the tape nodes and, for leaves
// created with Tape::param, into Param::grad. Tokens are rows, features are
// columns throughout the model code.

#include "syncvp/core.hpp"

#include <functional>
#include <string>
#include <vector>

namespace syncvp::ag {

struct Param {
    std::string name;
    Mat value;
    Mat grad;

    Param() = default;
    Param(std::string n, Mat v) : name(std::move(n)), value(std::move(v)), grad(Mat::Zero(value.rows(), value.cols())) {}

    void zero_grad() { grad.setZero(value.rows(), value.cols()); }
    Eigen::Index size() const { return value.size(); }
};

class Tape;

class Var {
public:
    Var() = default;
    Var(Tape* tape, int id) : tape_(tape), id_(id) {}

    const Mat& value() const;
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
    Tape* tape() const { return tape_; }
    int id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }

private:
    Tape* tape_ = nullptr;
    int id_ = -1;
};

/// Counts attention-matrix constructions. Passed explicitly so forward passes
/// stay free of shared state.
struct AttentionProbe {
    long matrices_built = 0;
};

class Tape {
public:
    using BackwardFn = std::function<void(Tape&, int)>;

    /// With record=false no backward closures are kept (inference mode).
    explicit Tape(bool record = true) : record_(record) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Mat v);
    /// Leaf whose gradient is kept on the tape (read back with grad()).
    Var input(Mat v);
    Var param(Param& p);

    const Mat& value(int id) const { return nodes_[id].value; }
    const Mat& value(const Var& v) const { return nodes_[v.id()].value; }
    /// Gradient of the last backward() target w.r.t. v; zeros if v was unreachable.
    Mat grad(const Var& v) const;
    bool needs_grad(int id) const { return nodes_[id].needs_grad; }
    bool recording() const { return record_; }

    void backward(const Var& scalar);

    // Op plumbing.
    Var push(Mat value, std::initializer_list<Var> parents, BackwardFn fn);
    Var push(Mat value, const std::vector<Var>& parents, BackwardFn fn);
    const Mat& out_grad(int id) const { return nodes_[id].grad; }
    void accumulate(int id, const Mat& g);
    template <typename Expr>
    void accumulate_expr(int id, const Expr& g) {
        Node& n = nodes_[id];
        if (!n.needs_grad) return;
        if (n.grad.size() == 0) n.grad = g;
        else n.grad += g;
    }

    size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Mat value;
        Mat grad;
        BackwardFn fn;
        Param* param = nullptr;
        bool needs_grad = false;
    };
    std::vector<Node> nodes_;
    bool record_;
};

inline const Mat& Var::value() const { return tape_->value(id_); }

// ---- elementary ops ----
Var matmul(const Var& a, const Var& b);
/// a * b^T
Var matmul_nt(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
/// Adds a 1xC row to every row of a.
Var add_row(const Var& a, const Var& row);
/// Adds block (R x C) to each consecutive R-row block of a.
Var add_tiled(const Var& a, const Var& block);
/// Adds bias row i to rows [i*seg, (i+1)*seg) of a.
Var add_segments(const Var& a, const Var& bias, Eigen::Index seg);
Var silu(const Var& a);
Var tanh(const Var& a);
Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);
Var softmax_rows(const Var& a);
Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index n);
Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index n);
Var concat_rows(const std::vector<Var>& parts);
Var concat_cols(const std::vector<Var>& parts);
/// Row-major reinterpretation; rows*cols must match.
Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols);
/// out[i] = a[i - offset] when both rows lie in the same segment, else 0.
/// Segment lengths must cover a.rows() exactly.
Var shift_rows(const Var& a, int offset, const std::vector<Eigen::Index>& segments);
/// out.row(i) = a.row(index[i]); index -1 yields a zero row.
Var gather_rows(const Var& a, const std::vector<Eigen::Index>& index);
Var linear(const Var& x, const Var& w, const Var& b);

// ---- reductions (1x1 results) ----
Var sum_all(const Var& a);
Var mean_all(const Var& a);
/// Mean of squared differences over all elements.
Var mse(const Var& a, const Var& b);

// ---- attention ----
/// One attention block: query rows [q0, q0+nq) attend over key rows [k0, k0+nk).
struct AttnSpan {
    Eigen::Index q0, nq, k0, nk;
};

/// Multi-head softmax(Q K^T / sqrt(dk)) V evaluated independently per span.
/// Output has Q's row count; rows outside any span are zero.
Var attention(const Var& q, const Var& k, const Var& v, const std::vector<AttnSpan>& spans, int heads,
              AttentionProbe* probe = nullptr);

/// Dual-way attention sharing one score matrix per span and head:
///   A = Q_r Q_d^T / sqrt(dk),  out_r = Softmax(A) V_d,  out_d = Softmax(A^T) V_r.
/// Span q-range indexes rows of q_r/v_r, k-range rows of q_d/v_d. Returns the
/// row concatenation [out_r; out_d].
Var dual_attention(const Var& q_r, const Var& q_d, const Var& v_r, const Var& v_d, const std::vector<AttnSpan>& spans,
                   int heads, AttentionProbe* probe = nullptr);

// ---- optimisation ----
class Adam {
public:
    struct Options {
        double lr = 1e-3;
        double beta1 = 0.9;
        double beta2 = 0.999;
        double eps = 1e-8;
        double clip_norm = 1.0; // <= 0 disables global-norm clipping
    };

    Adam(std::vector<Param*> params, Options opt);

    /// Applies one update from the accumulated grads, then zeroes them.
    /// Returns the pre-clip global gradient norm.
    double step();
    long steps() const { return t_; }

    std::vector<Mat>& first_moments() { return m_; }
    std::vector<Mat>& second_moments() { return v_; }
    void set_steps(long t) { t_ = t; }
    double lr() const { return opt_.lr; }
    void set_lr(double lr) { opt_.lr = lr; }
    const std::vector<Param*>& params() const { return params_; }

private:
    std::vector<Param*> params_;
    std::vector<Mat> m_, v_;
    Options opt_;
    long t_ = 0;
};

/// Xavier-style normal init scaled by 1/sqrt(fan_in).
Mat init_weight(Eigen::Index fan_in, Eigen::Index fan_out, Rng& rng, double gain = 1.0);

} // namespace syncvp::ag
