#pragma once

// Checkpoint container and its on-disk form: a magic line, a single JSON
// manifest line (names, shapes, byte offsets, payload checksum, step,
// config fingerprint), then all tensors as little-endian 32-bit floats
// in manifest order. Entries are kept sorted by name so identical states
// serialize to identical bytes.

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "optim.hpp"
#include "tensor.hpp"

namespace dosecast {

struct CkptEntry {
    std::string name;
    Shape shape;
    std::vector<float> data;
};

struct Checkpoint {
    std::vector<CkptEntry> entries;
    std::int64_t step = 0;
    std::string fingerprint;

    void sort_entries() {
        std::sort(entries.begin(), entries.end(),
                  [](const CkptEntry& a, const CkptEntry& b) { return a.name < b.name; });
    }

    const CkptEntry* find(const std::string& name) const {
        for (const auto& e : entries)
            if (e.name == name) return &e;
        return nullptr;
    }
};

// Converts named double tensors into f32 entries under a name prefix.
template <typename T>
void add_params(Checkpoint& ckpt, const NamedParams<T>& params, const std::string& prefix) {
    for (const auto& [name, t] : params) {
        CkptEntry e;
        e.name = prefix + name;
        e.shape = t.shape();
        e.data.reserve(t.data().size());
        for (T v : t.data()) e.data.push_back(static_cast<float>(v));
        ckpt.entries.push_back(std::move(e));
    }
}

// Loads entries back into model tensors, matching by prefixed name.
// Every expected parameter must exist with the right shape; offenders
// are collected and reported together.
template <typename T>
void load_params(const Checkpoint& ckpt, NamedParams<T>& params, const std::string& prefix) {
    std::string offenders;
    for (auto& [name, t] : params) {
        const CkptEntry* e = ckpt.find(prefix + name);
        if (e == nullptr) {
            offenders += " missing:" + prefix + name;
            continue;
        }
        if (e->shape != t.shape()) {
            offenders += " shape:" + prefix + name + " file=" + shape_str(e->shape) +
                         " model=" + shape_str(t.shape());
            continue;
        }
        for (std::size_t i = 0; i < t.data().size(); ++i)
            t.data()[i] = static_cast<T>(e->data[i]);
    }
    if (!offenders.empty())
        throw FormatError("checkpoint: parameter manifest mismatch:" + offenders);
}

// Optimizer moments ride along as optim.m.<name> / optim.v.<name>.
inline void add_optim_state(Checkpoint& ckpt, const std::map<std::string, MomentPair>& state,
                            const std::string& prefix) {
    for (const auto& [name, mp] : state) {
        CkptEntry m, v;
        m.name = "optim.m." + prefix + name;
        v.name = "optim.v." + prefix + name;
        m.shape = {static_cast<std::int64_t>(mp.m.size())};
        v.shape = {static_cast<std::int64_t>(mp.v.size())};
        for (double x : mp.m) m.data.push_back(static_cast<float>(x));
        for (double x : mp.v) v.data.push_back(static_cast<float>(x));
        ckpt.entries.push_back(std::move(m));
        ckpt.entries.push_back(std::move(v));
    }
}

inline void save_checkpoint(const Checkpoint& ckpt_in, const std::string& path) {
    Checkpoint ckpt = ckpt_in;
    ckpt.sort_entries();

    std::vector<char> payload;
    nlohmann::json names = nlohmann::json::array();
    nlohmann::json shapes = nlohmann::json::array();
    nlohmann::json offsets = nlohmann::json::array();
    for (const auto& e : ckpt.entries) {
        names.push_back(e.name);
        shapes.push_back(e.shape);
        offsets.push_back(payload.size());
        const auto* bytes = reinterpret_cast<const char*>(e.data.data());
        payload.insert(payload.end(), bytes, bytes + e.data.size() * sizeof(float));
    }
    nlohmann::json manifest;
    manifest["names"] = std::move(names);
    manifest["shapes"] = std::move(shapes);
    manifest["offsets"] = std::move(offsets);
    manifest["checksum"] = hex64(fnv1a64(payload.data(), payload.size()));
    manifest["step"] = ckpt.step;
    manifest["fingerprint"] = ckpt.fingerprint;

    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("checkpoint: cannot write " + path);
    f << "CKPT1\n" << manifest.dump() << "\n";
    f.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!f) throw FormatError("checkpoint: write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("checkpoint: cannot read " + path);
    std::string magic, manifest_line;
    if (!std::getline(f, magic) || magic != "CKPT1")
        throw FormatError("checkpoint: bad magic in " + path);
    if (!std::getline(f, manifest_line))
        throw FormatError("checkpoint: missing manifest in " + path);

    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(manifest_line);
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("checkpoint: unparseable manifest in " + path + ": " + e.what());
    }

    std::vector<char> payload{std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};

    Checkpoint ckpt;
    try {
        const auto& names = manifest.at("names");
        const auto& shapes = manifest.at("shapes");
        const auto& offsets = manifest.at("offsets");
        if (names.size() != shapes.size() || names.size() != offsets.size())
            throw FormatError("checkpoint: manifest arrays disagree in " + path);
        const std::string checksum = manifest.at("checksum").get<std::string>();
        if (checksum != hex64(fnv1a64(payload.data(), payload.size())))
            throw FormatError("checkpoint: checksum mismatch in " + path);
        ckpt.step = manifest.at("step").get<std::int64_t>();
        ckpt.fingerprint = manifest.at("fingerprint").get<std::string>();

        for (std::size_t i = 0; i < names.size(); ++i) {
            CkptEntry e;
            e.name = names[i].get<std::string>();
            e.shape = shapes[i].get<Shape>();
            const auto off = offsets[i].get<std::size_t>();
            const auto count = static_cast<std::size_t>(numel(e.shape));
            if (off + count * sizeof(float) > payload.size())
                throw FormatError("checkpoint: payload truncated in " + path);
            e.data.resize(count);
            std::memcpy(e.data.data(), payload.data() + off, count * sizeof(float));
            ckpt.entries.push_back(std::move(e));
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("checkpoint: malformed manifest in " + path + ": " + e.what());
    }
    return ckpt;
}

}  // namespace dosecast
