// SPDX-License-Identifier: Apache-2.0
#include "syncvp/nn.hpp"

namespace syncvp::nn {

ParamStore::ParamStore(const ParamStore& other) {
    for (const auto& p : other.params_) add(p->name, p->value);
}

ParamStore& ParamStore::operator=(const ParamStore& other) {
    if (this == &other) return *this;
    params_.clear();
    index_.clear();
    for (const auto& p : other.params_) add(p->name, p->value);
    return *this;
}

Param& ParamStore::add(const std::string& name, Mat value) {
    if (index_.count(name)) throw ConfigError("duplicate parameter name: " + name);
    index_[name] = params_.size();
    params_.push_back(std::make_unique<Param>(name, std::move(value)));
    return *params_.back();
}

Param& ParamStore::at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw CheckpointError("missing parameter: " + name);
    return *params_[it->second];
}

const Param& ParamStore::at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw CheckpointError("missing parameter: " + name);
    return *params_[it->second];
}

std::vector<Param*> ParamStore::all() {
    std::vector<Param*> out;
    for (auto& p : params_) out.push_back(p.get());
    return out;
}

std::vector<const Param*> ParamStore::all() const {
    std::vector<const Param*> out;
    for (const auto& p : params_) out.push_back(p.get());
    return out;
}

Eigen::Index ParamStore::scalar_count() const {
    Eigen::Index n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
}

void ParamStore::zero_grad() {
    for (auto& p : params_) p->zero_grad();
}

void ParamStore::load_values(const ParamStore& other) {
    if (other.size() != size()) throw CheckpointError("parameter count mismatch");
    for (auto& p : params_) {
        const Param& src = other.at(p->name);
        if (src.value.rows() != p->value.rows() || src.value.cols() != p->value.cols())
            throw CheckpointError("shape mismatch for parameter " + p->name);
        p->value = src.value;
    }
}

Linear Linear::create(ParamStore& store, const std::string& name, Eigen::Index in, Eigen::Index out, Rng& rng,
                      double gain) {
    Linear l;
    l.w = &store.add(name + ".w", ag::init_weight(in, out, rng, gain));
    l.b = &store.add(name + ".b", Mat::Zero(1, out));
    return l;
}

Linear Linear::bind(ParamStore& store, const std::string& name) {
    return Linear{&store.at(name + ".w"), &store.at(name + ".b")};
}

LayerNorm LayerNorm::create(ParamStore& store, const std::string& name, Eigen::Index width) {
    LayerNorm n;
    n.gamma = &store.add(name + ".gamma", Mat::Ones(1, width));
    n.beta = &store.add(name + ".beta", Mat::Zero(1, width));
    return n;
}

LayerNorm LayerNorm::bind(ParamStore& store, const std::string& name) {
    return LayerNorm{&store.at(name + ".gamma"), &store.at(name + ".beta")};
}

} // namespace syncvp::nn
