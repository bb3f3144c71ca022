// SPDX-License-Identifier: Apache-2.0
#include "syncvp/core.hpp"

#include <sstream>

namespace syncvp {

Mat Rng::normal_matrix(Eigen::Index rows, Eigen::Index cols) {
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal();
    return m;
}

std::string Rng::state() const {
    std::ostringstream os;
    os << engine_ << ' ' << normal_;
    return os.str();
}

void Rng::set_state(const std::string& s) {
    std::istringstream is(s);
    is >> engine_ >> normal_;
    if (!is) throw CheckpointError("malformed rng state");
}

} // namespace syncvp
