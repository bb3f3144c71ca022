#pragma once

#include "syncvp/autograd.hpp"

#include <functional>

namespace syncvp::testing {

/// Central-difference gradient of f at x.
inline Mat numeric_grad(const std::function<double(const Mat&)>& f, Mat x, double h = 1e-5) {
    Mat g(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double keep = x.data()[i];
        x.data()[i] = keep + h;
        const double up = f(x);
        x.data()[i] = keep - h;
        const double down = f(x);
        x.data()[i] = keep;
        g.data()[i] = (up - down) / (2 * h);
    }
    return g;
}

/// ||a - b|| / max(||a|| + ||b||, tiny)
inline double rel_error(const Mat& a, const Mat& b) {
    const double denom = std::max(a.norm() + b.norm(), 1e-12);
    return (a - b).norm() / denom;
}

/// Fixed random weighting so a matrix-valued output becomes a scalar loss
/// with non-trivial gradients.
inline Mat probe_weights(Eigen::Index rows, Eigen::Index cols, uint64_t seed = 99) {
    Rng rng(seed);
    return rng.normal_matrix(rows, cols);
}

} // namespace syncvp::testing
