// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "syncvp/autograd.hpp"

#include <map>
#include <memory>
#include <string>
#include <vector>

namespace syncvp::nn {

using ag::Param;
using ag::Tape;
using ag::Var;

/// Owns named parameters with stable addresses, in insertion order.
class ParamStore {
public:
    ParamStore() = default;
    ParamStore(const ParamStore& other);
    ParamStore& operator=(const ParamStore& other);
    ParamStore(ParamStore&&) noexcept = default;
    ParamStore& operator=(ParamStore&&) noexcept = default;

    Param& add(const std::string& name, Mat value);
    Param& at(const std::string& name);
    const Param& at(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    std::vector<Param*> all();
    std::vector<const Param*> all() const;
    size_t size() const { return params_.size(); }
    Eigen::Index scalar_count() const;
    void zero_grad();

    /// Copies every value from `other`; names and shapes must agree.
    void load_values(const ParamStore& other);

private:
    std::vector<std::unique_ptr<Param>> params_;
    std::map<std::string, size_t> index_;
};

struct Linear {
    Param* w = nullptr;
    Param* b = nullptr;

    static Linear create(ParamStore& store, const std::string& name, Eigen::Index in, Eigen::Index out, Rng& rng,
                         double gain = 1.0);
    static Linear bind(ParamStore& store, const std::string& name);
    Var operator()(Tape& t, const Var& x) const { return ag::linear(x, t.param(*w), t.param(*b)); }
};

struct LayerNorm {
    Param* gamma = nullptr;
    Param* beta = nullptr;

    static LayerNorm create(ParamStore& store, const std::string& name, Eigen::Index width);
    static LayerNorm bind(ParamStore& store, const std::string& name);
    Var operator()(Tape& t, const Var& x) const { return ag::layer_norm(x, t.param(*gamma), t.param(*beta)); }
};

} // namespace syncvp::nn
