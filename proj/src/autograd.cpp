// SPDX-License-Identifier: Apache-2.0
#include "syncvp/autograd.hpp"

#include <array>
#include <cmath>
#include <memory>

namespace syncvp::ag {

namespace {

void require(bool ok, const char* what) {
    if (!ok) throw ShapeError(what);
}

Mat softmax_rows_mat(const Mat& a) {
    Mat out(a.rows(), a.cols());
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
        const double m = a.row(r).maxCoeff();
        out.row(r) = (a.row(r).array() - m).exp();
        out.row(r) /= out.row(r).sum();
    }
    return out;
}

// dX for Y = softmax_rows(X) given dY.
Mat softmax_rows_backward(const Mat& y, const Mat& dy) {
    Mat dx = dy;
    for (Eigen::Index r = 0; r < y.rows(); ++r) {
        const double dot = y.row(r).dot(dy.row(r));
        dx.row(r) = y.row(r).array() * (dy.row(r).array() - dot);
    }
    return dx;
}

} // namespace

// ---------------------------------------------------------------- Tape

Var Tape::constant(Mat v) {
    nodes_.push_back(Node{std::move(v), Mat(), nullptr, nullptr, false});
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::input(Mat v) {
    nodes_.push_back(Node{std::move(v), Mat(), nullptr, nullptr, record_});
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::param(Param& p) {
    if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols()) p.zero_grad();
    nodes_.push_back(Node{p.value, Mat(), nullptr, &p, record_});
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::push(Mat value, std::initializer_list<Var> parents, BackwardFn fn) {
    bool needs = false;
    if (record_)
        for (const Var& p : parents) needs = needs || nodes_[p.id()].needs_grad;
    nodes_.push_back(Node{std::move(value), Mat(), needs ? std::move(fn) : nullptr, nullptr, needs});
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

Var Tape::push(Mat value, const std::vector<Var>& parents, BackwardFn fn) {
    bool needs = false;
    if (record_)
        for (const Var& p : parents) needs = needs || nodes_[p.id()].needs_grad;
    nodes_.push_back(Node{std::move(value), Mat(), needs ? std::move(fn) : nullptr, nullptr, needs});
    return Var(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::accumulate(int id, const Mat& g) { accumulate_expr(id, g); }

Mat Tape::grad(const Var& v) const {
    const Node& n = nodes_[v.id()];
    if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
    return n.grad;
}

void Tape::backward(const Var& scalar) {
    if (!record_) throw DomainError("backward() on a non-recording tape");
    if (scalar.value().size() != 1) throw ShapeError("backward() needs a 1x1 target");
    for (Node& n : nodes_) n.grad.resize(0, 0);
    if (!nodes_[scalar.id()].needs_grad) return;
    nodes_[scalar.id()].grad = Mat::Ones(1, 1);
    for (int id = scalar.id(); id >= 0; --id) {
        Node& n = nodes_[id];
        if (n.grad.size() == 0) continue;
        if (n.fn) n.fn(*this, id);
        if (n.param) n.param->grad += n.grad;
    }
}

// ---------------------------------------------------------------- ops

Var matmul(const Var& a, const Var& b) {
    require(a.cols() == b.rows(), "matmul: inner dimensions differ");
    Tape& t = *a.tape();
    const int ia = a.id(), ib = b.id();
    return t.push(a.value() * b.value(), {a, b}, [ia, ib](Tape& t, int self) {
        const Mat& g = t.out_grad(self);
        if (t.needs_grad(ia)) t.accumulate_expr(ia, g * t.value(ib).transpose());
        if (t.needs_grad(ib)) t.accumulate_expr(ib, t.value(ia).transpose() * g);
    });
}

Var matmul_nt(const Var& a, const Var& b) {
    require(a.cols() == b.cols(), "matmul_nt: column counts differ");
    Tape& t = *a.tape();
    const int ia = a.id(), ib = b.id();
    return t.push(a.value() * b.value().transpose(), {a, b}, [ia, ib](Tape& t, int self) {
        const Mat& g = t.out_grad(self);
        if (t.needs_grad(ia)) t.accumulate_expr(ia, g * t.value(ib));
        if (t.needs_grad(ib)) t.accumulate_expr(ib, g.transpose() * t.value(ia));
    });
}

Var add(const Var& a, const Var& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), "add: shape mismatch");
    Tape& t = *a.tape();
    const int ia = a.id(), ib = b.id();
    return t.push(a.value() + b.value(), {a, b}, [ia, ib](Tape& t, int self) {
        const Mat& g = t.out_grad(self);
        t.accumulate(ia, g);
        t.accumulate(ib, g);
    });
}

Var sub(const Var& a, const Var& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), "sub: shape mismatch");
    Tape& t = *a.tape();
    const int ia = a.id(), ib = b.id();
    return t.push(a.value() - b.value(), {a, b}, [ia, ib](Tape& t, int self) {
        const Mat& g = t.out_grad(self);
        t.accumulate(ia, g);
        t.accumulate_expr(ib, -g);
    });
}

Var mul(const Var& a, const Var& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), "mul: shape mismatch");
    Tape& t = *a.tape();
    const int ia = a.id(), ib = b.id();
    return t.push(a.value().cwiseProduct(b.value()), {a, b}, [ia, ib](Tape& t, int self) {
        const Mat& g = t.out_grad(self);
        if (t.needs_grad(ia)) t.accumulate_expr(ia, g.cwiseProduct(t.value(ib)));
        if (t.needs_grad(ib)) t.accumulate_expr(ib, g.cwiseProduct(t.value(ia)));
    });
}

Var scale(const Var& a, double s) {
    Tape& t = *a.tape();
    const int ia = a.id();
    return t.push(a.value() * s, {a}, [ia, s](Tape& t, int self) { t.accumulate_expr(ia, t.out_grad(self) * s); });
}

Var add_row(const Var& a, const Var& row) {
    require(row.rows() == 1 && row.cols() == a.cols(), "add_row: bias must be 1 x cols");
    Tape& t = *a.tape();
    const int ia = a.id(), ir = row.id();
    Mat out = a.value();
    out.rowwise() += row.value().row(0);
    return t.push(std::move(out), {a, row}, [ia, ir](Tape& t, int self) {
        const Mat& g = t.out_grad(self);
        t.accumulate(ia, g);
        if (t.needs_grad(ir)) t.accumulate_expr(ir, g.colwise().sum());
    });
}

Var add_tiled(const Var& a, const Var& block) {
    const Eigen::Index r = block.rows();
    require(block.cols() == a.cols() && r > 0 && a.rows() % r == 0, "add_tiled: block does not tile input");
    Tape& t = *a.tape();
    const int ia = a.id(), ib = block.id();
    Mat out = a.value();
    for (Eigen::Index s = 0; s < out.rows(); s += r) out.middleRows(s, r) += block.value();
    return t.push(std::move(out), {a, block}, [ia, ib, r](Tape& t, int self) {
        const Mat& g = t.out_grad(self);
        t.accumulate(ia, g);
        if (t.needs_grad(ib)) {
            Mat acc = Mat::Zero(r, g.cols());
            for (Eigen::Index s = 0; s < g.rows(); s += r) acc += g.middleRows(s, r);
            t.accumulate(ib, acc);
        }
    });
}

Var add_segments(const Var& a, const Var& bias, Eigen::Index seg) {
    require(bias.cols() == a.cols() && seg > 0 && bias.rows() * seg == a.rows(), "add_segments: shape mismatch");
    Tape& t = *a.tape();
    const int ia = a.id(), ib = bias.id();
    Mat out = a.value();
    for (Eigen::Index i = 0; i < bias.rows(); ++i) out.middleRows(i * seg, seg).rowwise() += bias.value().row(i);
    return t.push(std::move(out), {a, bias}, [ia, ib, seg](Tape& t, int self) {
        const Mat& g = t.out_grad(self);
        t.accumulate(ia, g);
        if (t.needs_grad(ib)) {
            Mat acc(g.rows() / seg, g.cols());
            for (Eigen::Index i = 0; i < acc.rows(); ++i) acc.row(i) = g.middleRows(i * seg, seg).colwise().sum();
            t.accumulate(ib, acc);
        }
    });
}

Var silu(const Var& a) {
    Tape& t = *a.tape();
    const int ia = a.id();
    const Mat sig = (1.0 + (-a.value().array()).exp()).inverse().matrix();
    Mat out = a.value().cwiseProduct(sig);
    return t.push(std::move(out), {a}, [ia, sig](Tape& t, int self) {
        const auto x = t.value(ia).array();
        const auto s = sig.array();
        t.accumulate_expr(ia, (t.out_grad(self).array() * (s * (1.0 + x * (1.0 - s)))).matrix());
    });
}

Var tanh(const Var& a) {
    Tape& t = *a.tape();
    const int ia = a.id();
    Mat out = a.value().array().tanh().matrix();
    return t.push(std::move(out), {a}, [ia](Tape& t, int self) {
        const auto y = t.value(self).array();
        t.accumulate_expr(ia, (t.out_grad(self).array() * (1.0 - y * y)).matrix());
    });
}

Var layer_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    const Eigen::Index n = x.cols();
    require(gamma.rows() == 1 && gamma.cols() == n && beta.rows() == 1 && beta.cols() == n,
            "layer_norm: affine parameters must be 1 x cols");
    Tape& t = *x.tape();
    const int ix = x.id(), ig = gamma.id(), ib = beta.id();
    const Mat& xv = x.value();
    auto xhat = std::make_shared<Mat>(xv.rows(), n);
    auto inv_std = std::make_shared<Vec>(xv.rows());
    for (Eigen::Index r = 0; r < xv.rows(); ++r) {
        const double mu = xv.row(r).mean();
        const double var = (xv.row(r).array() - mu).square().mean();
        (*inv_std)(r) = 1.0 / std::sqrt(var + eps);
        xhat->row(r) = (xv.row(r).array() - mu) * (*inv_std)(r);
    }
    Mat out = xhat->array().rowwise() * gamma.value().row(0).array();
    out.rowwise() += beta.value().row(0);
    return t.push(std::move(out), {x, gamma, beta}, [ix, ig, ib, xhat, inv_std, n](Tape& t, int self) {
        const Mat& g = t.out_grad(self);
        if (t.needs_grad(ig)) t.accumulate_expr(ig, g.cwiseProduct(*xhat).colwise().sum());
        if (t.needs_grad(ib)) t.accumulate_expr(ib, g.colwise().sum());
        if (t.needs_grad(ix)) {
            Mat dxhat = g.array().rowwise() * t.value(ig).row(0).array();
            Mat dx(g.rows(), n);
            for (Eigen::Index r = 0; r < g.rows(); ++r) {
                const double s1 = dxhat.row(r).sum();
                const double s2 = dxhat.row(r).dot(xhat->row(r));
                dx.row(r) = ((*inv_std)(r) / static_cast<double>(n)) *
                            (static_cast<double>(n) * dxhat.row(r).array() - s1 - xhat->row(r).array() * s2);
            }
            t.accumulate(ix, dx);
        }
    });
}

Var softmax_rows(const Var& a) {
    Tape& t = *a.tape();
    const int ia = a.id();
    return t.push(softmax_rows_mat(a.value()), {a}, [ia](Tape& t, int self) {
        t.accumulate(ia, softmax_rows_backward(t.value(self), t.out_grad(self)));
    });
}

Var slice_rows(const Var& a, Eigen::Index start, Eigen::Index n) {
    require(start >= 0 && n >= 0 && start + n <= a.rows(), "slice_rows: out of range");
    Tape& t = *a.tape();
    const int ia = a.id();
    const Eigen::Index rows = a.rows(), cols = a.cols();
    return t.push(a.value().middleRows(start, n), {a}, [ia, start, n, rows, cols](Tape& t, int self) {
        Mat g = Mat::Zero(rows, cols);
        g.middleRows(start, n) = t.out_grad(self);
        t.accumulate(ia, g);
    });
}

Var slice_cols(const Var& a, Eigen::Index start, Eigen::Index n) {
    require(start >= 0 && n >= 0 && start + n <= a.cols(), "slice_cols: out of range");
    Tape& t = *a.tape();
    const int ia = a.id();
    const Eigen::Index rows = a.rows(), cols = a.cols();
    return t.push(a.value().middleCols(start, n), {a}, [ia, start, n, rows, cols](Tape& t, int self) {
        Mat g = Mat::Zero(rows, cols);
        g.middleCols(start, n) = t.out_grad(self);
        t.accumulate(ia, g);
    });
}

Var concat_rows(const std::vector<Var>& parts) {
    require(!parts.empty(), "concat_rows: no inputs");
    Tape& t = *parts.front().tape();
    Eigen::Index rows = 0;
    const Eigen::Index cols = parts.front().cols();
    for (const Var& p : parts) {
        require(p.cols() == cols, "concat_rows: column counts differ");
        rows += p.rows();
    }
    Mat out(rows, cols);
    std::vector<std::pair<int, Eigen::Index>> layout;
    Eigen::Index r = 0;
    for (const Var& p : parts) {
        out.middleRows(r, p.rows()) = p.value();
        layout.emplace_back(p.id(), r);
        r += p.rows();
    }
    return t.push(std::move(out), parts, [layout](Tape& t, int self) {
        const Mat& g = t.out_grad(self);
        for (const auto& [id, start] : layout)
            if (t.needs_grad(id)) t.accumulate_expr(id, g.middleRows(start, t.value(id).rows()));
    });
}

Var concat_cols(const std::vector<Var>& parts) {
    require(!parts.empty(), "concat_cols: no inputs");
    Tape& t = *parts.front().tape();
    Eigen::Index cols = 0;
    const Eigen::Index rows = parts.front().rows();
    for (const Var& p : parts) {
        require(p.rows() == rows, "concat_cols: row counts differ");
        cols += p.cols();
    }
    Mat out(rows, cols);
    std::vector<std::pair<int, Eigen::Index>> layout;
    Eigen::Index c = 0;
    for (const Var& p : parts) {
        out.middleCols(c, p.cols()) = p.value();
        layout.emplace_back(p.id(), c);
        c += p.cols();
    }
    return t.push(std::move(out), parts, [layout](Tape& t, int self) {
        const Mat& g = t.out_grad(self);
        for (const auto& [id, start] : layout)
            if (t.needs_grad(id)) t.accumulate_expr(id, g.middleCols(start, t.value(id).cols()));
    });
}

Var reshape(const Var& a, Eigen::Index rows, Eigen::Index cols) {
    require(rows * cols == a.value().size(), "reshape: element count differs");
    Tape& t = *a.tape();
    const int ia = a.id();
    const Eigen::Index r0 = a.rows(), c0 = a.cols();
    Mat out = Eigen::Map<const Mat>(a.value().data(), rows, cols);
    return t.push(std::move(out), {a}, [ia, r0, c0](Tape& t, int self) {
        const Mat& g = t.out_grad(self);
        t.accumulate_expr(ia, Eigen::Map<const Mat>(g.data(), r0, c0));
    });
}

Var shift_rows(const Var& a, int offset, const std::vector<Eigen::Index>& segments) {
    Eigen::Index total = 0;
    for (Eigen::Index s : segments) total += s;
    require(total == a.rows(), "shift_rows: segments do not cover rows");
    Tape& t = *a.tape();
    const int ia = a.id();
    // (dst, src, len) copies
    std::vector<std::array<Eigen::Index, 3>> moves;
    Eigen::Index base = 0;
    for (Eigen::Index len : segments) {
        const Eigen::Index k = std::abs(offset);
        if (k < len) {
            if (offset >= 0) moves.push_back({base + k, base, len - k});
            else moves.push_back({base, base + k, len - k});
        }
        base += len;
    }
    Mat out = Mat::Zero(a.rows(), a.cols());
    for (const auto& m : moves) out.middleRows(m[0], m[2]) = a.value().middleRows(m[1], m[2]);
    return t.push(std::move(out), {a}, [ia, moves](Tape& t, int self) {
        const Mat& g = t.out_grad(self);
        Mat gi = Mat::Zero(g.rows(), g.cols());
        for (const auto& m : moves) gi.middleRows(m[1], m[2]) += g.middleRows(m[0], m[2]);
        t.accumulate(ia, gi);
    });
}

Var gather_rows(const Var& a, const std::vector<Eigen::Index>& index) {
    Tape& t = *a.tape();
    const int ia = a.id();
    Mat out(static_cast<Eigen::Index>(index.size()), a.cols());
    for (size_t i = 0; i < index.size(); ++i) {
        require(index[i] >= -1 && index[i] < a.rows(), "gather_rows: index out of range");
        if (index[i] < 0) out.row(static_cast<Eigen::Index>(i)).setZero();
        else out.row(static_cast<Eigen::Index>(i)) = a.value().row(index[i]);
    }
    const Eigen::Index rows = a.rows();
    return t.push(std::move(out), {a}, [ia, index, rows](Tape& t, int self) {
        const Mat& g = t.out_grad(self);
        Mat gi = Mat::Zero(rows, g.cols());
        for (size_t i = 0; i < index.size(); ++i)
            if (index[i] >= 0) gi.row(index[i]) += g.row(static_cast<Eigen::Index>(i));
        t.accumulate(ia, gi);
    });
}

Var linear(const Var& x, const Var& w, const Var& b) { return add_row(matmul(x, w), b); }

Var sum_all(const Var& a) {
    Tape& t = *a.tape();
    const int ia = a.id();
    Mat out(1, 1);
    out(0, 0) = a.value().sum();
    return t.push(std::move(out), {a}, [ia](Tape& t, int self) {
        const Mat& x = t.value(ia);
        t.accumulate_expr(ia, Mat::Constant(x.rows(), x.cols(), t.out_grad(self)(0, 0)));
    });
}

Var mean_all(const Var& a) { return scale(sum_all(a), 1.0 / static_cast<double>(a.value().size())); }

Var mse(const Var& a, const Var& b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), "mse: shape mismatch");
    Tape& t = *a.tape();
    const int ia = a.id(), ib = b.id();
    const double n = static_cast<double>(a.value().size());
    Mat out(1, 1);
    out(0, 0) = (a.value() - b.value()).squaredNorm() / n;
    return t.push(std::move(out), {a, b}, [ia, ib, n](Tape& t, int self) {
        const double g = t.out_grad(self)(0, 0);
        const Mat diff = (t.value(ia) - t.value(ib)) * (2.0 * g / n);
        if (t.needs_grad(ia)) t.accumulate(ia, diff);
        if (t.needs_grad(ib)) t.accumulate_expr(ib, -diff);
    });
}

// ---------------------------------------------------------------- attention

namespace {

void check_spans(const std::vector<AttnSpan>& spans, Eigen::Index q_rows, Eigen::Index k_rows) {
    for (const AttnSpan& s : spans) {
        require(s.nq >= 1 && s.nk >= 1, "attention: empty span");
        require(s.q0 >= 0 && s.q0 + s.nq <= q_rows && s.k0 >= 0 && s.k0 + s.nk <= k_rows, "attention: span out of range");
    }
}

} // namespace

Var attention(const Var& q, const Var& k, const Var& v, const std::vector<AttnSpan>& spans, int heads,
              AttentionProbe* probe) {
    require(heads >= 1 && q.cols() == k.cols() && q.cols() % heads == 0 && v.cols() % heads == 0,
            "attention: head split mismatch");
    require(k.rows() == v.rows(), "attention: key/value rows differ");
    check_spans(spans, q.rows(), k.rows());
    Tape& t = *q.tape();
    const Eigen::Index dk = q.cols() / heads, dv = v.cols() / heads;
    const double inv = 1.0 / std::sqrt(static_cast<double>(dk));
    const Mat& Q = q.value();
    const Mat& K = k.value();
    const Mat& V = v.value();
    auto probs = std::make_shared<std::vector<Mat>>();
    Mat out = Mat::Zero(Q.rows(), V.cols());
    for (const AttnSpan& s : spans) {
        for (int h = 0; h < heads; ++h) {
            Mat scores = Q.block(s.q0, h * dk, s.nq, dk) * K.block(s.k0, h * dk, s.nk, dk).transpose() * inv;
            if (probe) ++probe->matrices_built;
            Mat p = softmax_rows_mat(scores);
            out.block(s.q0, h * dv, s.nq, dv).noalias() = p * V.block(s.k0, h * dv, s.nk, dv);
            if (t.recording()) probs->push_back(std::move(p));
        }
    }
    const int iq = q.id(), ik = k.id(), iv = v.id();
    return t.push(std::move(out), {q, k, v}, [=](Tape& t, int self) {
        const Mat& g = t.out_grad(self);
        const Mat& Q = t.value(iq);
        const Mat& K = t.value(ik);
        const Mat& V = t.value(iv);
        Mat dQ = Mat::Zero(Q.rows(), Q.cols()), dK = Mat::Zero(K.rows(), K.cols()), dV = Mat::Zero(V.rows(), V.cols());
        size_t idx = 0;
        for (const AttnSpan& s : spans) {
            for (int h = 0; h < heads; ++h) {
                const Mat& p = (*probs)[idx++];
                const auto gO = g.block(s.q0, h * dv, s.nq, dv);
                dV.block(s.k0, h * dv, s.nk, dv) += p.transpose() * gO;
                const Mat dp = gO * V.block(s.k0, h * dv, s.nk, dv).transpose();
                const Mat ds = softmax_rows_backward(p, dp) * inv;
                dQ.block(s.q0, h * dk, s.nq, dk) += ds * K.block(s.k0, h * dk, s.nk, dk);
                dK.block(s.k0, h * dk, s.nk, dk) += ds.transpose() * Q.block(s.q0, h * dk, s.nq, dk);
            }
        }
        t.accumulate(iq, dQ);
        t.accumulate(ik, dK);
        t.accumulate(iv, dV);
    });
}

Var dual_attention(const Var& q_r, const Var& q_d, const Var& v_r, const Var& v_d, const std::vector<AttnSpan>& spans,
                   int heads, AttentionProbe* probe) {
    require(heads >= 1 && q_r.cols() == q_d.cols() && q_r.cols() % heads == 0, "dual_attention: query widths");
    require(v_r.cols() == v_d.cols() && v_r.cols() % heads == 0, "dual_attention: value widths");
    require(q_r.rows() == v_r.rows() && q_d.rows() == v_d.rows(), "dual_attention: query/value rows differ");
    check_spans(spans, q_r.rows(), q_d.rows());
    Tape& t = *q_r.tape();
    const Eigen::Index dk = q_r.cols() / heads, dv = v_r.cols() / heads;
    const Eigen::Index nr_total = q_r.rows();
    const double inv = 1.0 / std::sqrt(static_cast<double>(dk));
    const Mat& QR = q_r.value();
    const Mat& QD = q_d.value();
    const Mat& VR = v_r.value();
    const Mat& VD = v_d.value();

    // Per span and head: P = Softmax(A), Pt = Softmax(A^T).
    auto probs = std::make_shared<std::vector<std::pair<Mat, Mat>>>();
    Mat out = Mat::Zero(nr_total + QD.rows(), dv * heads);
    for (const AttnSpan& s : spans) {
        for (int h = 0; h < heads; ++h) {
            const Mat a = QR.block(s.q0, h * dk, s.nq, dk) * QD.block(s.k0, h * dk, s.nk, dk).transpose() * inv;
            if (probe) ++probe->matrices_built;
            Mat p = softmax_rows_mat(a);
            Mat pt = softmax_rows_mat(a.transpose());
            out.block(s.q0, h * dv, s.nq, dv).noalias() = p * VD.block(s.k0, h * dv, s.nk, dv);
            out.block(nr_total + s.k0, h * dv, s.nk, dv).noalias() = pt * VR.block(s.q0, h * dv, s.nq, dv);
            if (t.recording()) probs->emplace_back(std::move(p), std::move(pt));
        }
    }
    const int iqr = q_r.id(), iqd = q_d.id(), ivr = v_r.id(), ivd = v_d.id();
    return t.push(std::move(out), {q_r, q_d, v_r, v_d}, [=](Tape& t, int self) {
        const Mat& g = t.out_grad(self);
        const Mat& QR = t.value(iqr);
        const Mat& QD = t.value(iqd);
        const Mat& VR = t.value(ivr);
        const Mat& VD = t.value(ivd);
        Mat dQR = Mat::Zero(QR.rows(), QR.cols()), dQD = Mat::Zero(QD.rows(), QD.cols());
        Mat dVR = Mat::Zero(VR.rows(), VR.cols()), dVD = Mat::Zero(VD.rows(), VD.cols());
        size_t idx = 0;
        for (const AttnSpan& s : spans) {
            for (int h = 0; h < heads; ++h) {
                const auto& [p, pt] = (*probs)[idx++];
                const auto gR = g.block(s.q0, h * dv, s.nq, dv);
                const auto gD = g.block(nr_total + s.k0, h * dv, s.nk, dv);
                dVD.block(s.k0, h * dv, s.nk, dv) += p.transpose() * gR;
                dVR.block(s.q0, h * dv, s.nq, dv) += pt.transpose() * gD;
                const Mat da = softmax_rows_backward(p, gR * VD.block(s.k0, h * dv, s.nk, dv).transpose()) +
                               softmax_rows_backward(pt, gD * VR.block(s.q0, h * dv, s.nq, dv).transpose()).transpose();
                dQR.block(s.q0, h * dk, s.nq, dk) += da * QD.block(s.k0, h * dk, s.nk, dk) * inv;
                dQD.block(s.k0, h * dk, s.nk, dk) += da.transpose() * QR.block(s.q0, h * dk, s.nq, dk) * inv;
            }
        }
        t.accumulate(iqr, dQR);
        t.accumulate(iqd, dQD);
        t.accumulate(ivr, dVR);
        t.accumulate(ivd, dVD);
    });
}

// ---------------------------------------------------------------- Adam

Adam::Adam(std::vector<Param*> params, Options opt) : params_(std::move(params)), opt_(opt) {
    for (Param* p : params_) {
        m_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
        v_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    }
}

double Adam::step() {
    double sq = 0.0;
    for (Param* p : params_) sq += p->grad.squaredNorm();
    const double norm = std::sqrt(sq);
    if (!std::isfinite(norm)) throw NumericalError("non-finite gradient norm");
    const double clip = (opt_.clip_norm > 0.0 && norm > opt_.clip_norm) ? opt_.clip_norm / norm : 1.0;
    ++t_;
    const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
        Param& p = *params_[i];
        const Mat g = p.grad * clip;
        m_[i] = opt_.beta1 * m_[i] + (1.0 - opt_.beta1) * g;
        v_[i] = opt_.beta2 * v_[i] + (1.0 - opt_.beta2) * g.cwiseProduct(g);
        p.value.array() -= opt_.lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + opt_.eps);
        p.zero_grad();
    }
    return norm;
}

Mat init_weight(Eigen::Index fan_in, Eigen::Index fan_out, Rng& rng, double gain) {
    return rng.normal_matrix(fan_in, fan_out) * (gain / std::sqrt(static_cast<double>(fan_in)));
}

} // namespace syncvp::ag
