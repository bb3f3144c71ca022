// SPDX-License-Identifier: Apache-2.0
#pragma once

// Binary container: magic, format version, JSON metadata, named matrices.

#include "syncvp/nn.hpp"

#include "json.hpp"

#include <map>
#include <string>

namespace syncvp {

class Checkpoint {
public:
    static constexpr uint32_t kVersion = 1;

    nlohmann::json meta = nlohmann::json::object();
    std::map<std::string, Mat> arrays;

    void save(const std::string& path) const;
    /// Throws CheckpointError for missing files, bad magic or version.
    static Checkpoint load(const std::string& path);

    const Mat& array(const std::string& name) const;

    void put_params(const std::string& prefix, const nn::ParamStore& store);
    /// Copies values into an existing store; names and shapes must match.
    void get_params(const std::string& prefix, nn::ParamStore& store) const;
};

} // namespace syncvp
