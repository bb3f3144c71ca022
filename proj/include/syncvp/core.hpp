// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace syncvp {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vec = Eigen::VectorXd;

// Error taxonomy. The CLI maps ConfigError to exit code 2 and NumericalError to 3.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct GeometryError : Error {
    using Error::Error;
};
struct ShapeError : Error {
    using Error::Error;
};
struct DomainError : Error {
    using Error::Error;
};
struct ConfigError : Error {
    using Error::Error;
};
struct NumericalError : Error {
    using Error::Error;
};
struct CheckpointError : Error {
    using Error::Error;
};

/// Explicit random state. Every stochastic routine takes one of these by
/// reference; there is no global generator.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : engine_(seed) {}

    double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
    double normal() { return normal_(engine_); }
    int64_t uniform_int(int64_t lo, int64_t hi) { return std::uniform_int_distribution<int64_t>(lo, hi)(engine_); }
    uint64_t next_u64() { return engine_(); }

    Mat normal_matrix(Eigen::Index rows, Eigen::Index cols);

    // Textual state (engine plus cached normal), used for resumable training.
    std::string state() const;
    void set_state(const std::string& s);

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

inline std::string shape_str(const Mat& m) {
    return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

inline bool all_finite(const Mat& m) { return m.allFinite(); }

} // namespace syncvp
