// SPDX-License-Identifier: Apache-2.0
#include "syncvp/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>

namespace syncvp {

namespace {

constexpr char kMagic[8] = {'S', 'Y', 'N', 'C', 'V', 'P', 'K', '1'};

template <typename T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!is) throw CheckpointError("checkpoint truncated");
    return v;
}

} // namespace

void Checkpoint::save(const std::string& path) const {
    const std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    // Write-then-rename so an interrupted save never leaves a torn file.
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw CheckpointError("cannot write checkpoint '" + path + "'");
        os.write(kMagic, sizeof kMagic);
        put<uint32_t>(os, kVersion);
        const std::string m = meta.dump();
        put<uint64_t>(os, m.size());
        os.write(m.data(), static_cast<std::streamsize>(m.size()));
        put<uint64_t>(os, arrays.size());
        for (const auto& [name, a] : arrays) {
            put<uint64_t>(os, name.size());
            os.write(name.data(), static_cast<std::streamsize>(name.size()));
            put<int64_t>(os, a.rows());
            put<int64_t>(os, a.cols());
            os.write(reinterpret_cast<const char*>(a.data()), static_cast<std::streamsize>(a.size() * sizeof(double)));
        }
        if (!os) throw CheckpointError("write failed for '" + path + "'");
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("cannot open checkpoint '" + path + "'");
    char magic[sizeof kMagic];
    is.read(magic, sizeof magic);
    if (!is || std::memcmp(magic, kMagic, sizeof kMagic) != 0) throw CheckpointError("'" + path + "' is not a checkpoint");
    const auto version = get<uint32_t>(is);
    if (version != kVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    Checkpoint c;
    std::string m(get<uint64_t>(is), '\0');
    is.read(m.data(), static_cast<std::streamsize>(m.size()));
    try {
        c.meta = nlohmann::json::parse(m);
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("corrupt checkpoint metadata: ") + e.what());
    }
    const auto n = get<uint64_t>(is);
    for (uint64_t i = 0; i < n; ++i) {
        std::string name(get<uint64_t>(is), '\0');
        is.read(name.data(), static_cast<std::streamsize>(name.size()));
        const auto rows = get<int64_t>(is), cols = get<int64_t>(is);
        if (rows < 0 || cols < 0) throw CheckpointError("corrupt array header for '" + name + "'");
        Mat a(rows, cols);
        is.read(reinterpret_cast<char*>(a.data()), static_cast<std::streamsize>(a.size() * sizeof(double)));
        if (!is) throw CheckpointError("checkpoint truncated in '" + name + "'");
        c.arrays.emplace(std::move(name), std::move(a));
    }
    return c;
}

const Mat& Checkpoint::array(const std::string& name) const {
    const auto it = arrays.find(name);
    if (it == arrays.end()) throw CheckpointError("checkpoint has no array '" + name + "'");
    return it->second;
}

void Checkpoint::put_params(const std::string& prefix, const nn::ParamStore& store) {
    for (const ag::Param* p : store.all()) arrays[prefix + p->name] = p->value;
}

void Checkpoint::get_params(const std::string& prefix, nn::ParamStore& store) const {
    for (ag::Param* p : store.all()) {
        const Mat& a = array(prefix + p->name);
        if (a.rows() != p->value.rows() || a.cols() != p->value.cols())
            throw CheckpointError("shape mismatch for '" + prefix + p->name + "': " + shape_str(a) + " vs " +
                                  shape_str(p->value));
        p->value = a;
    }
}

} // namespace syncvp
