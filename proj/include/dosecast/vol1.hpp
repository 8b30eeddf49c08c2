#pragma once

// Self-describing volume files: a magic line, one JSON header line
// (shape, channel count, spacing, dtype, kind, optional channel names),
// then the payload as little-endian 32-bit floats, channel-major with
// z,y,x row-major inside each channel.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "volume.hpp"

namespace dosecast {

struct Vol1 {
    std::int64_t d = 0, h = 0, w = 0;
    std::int64_t channels = 1;
    SpacingGrid spacing;
    std::string kind = "ct";  // ct | dose | mask | probs
    std::vector<std::string> names;
    std::vector<float> payload;

    std::int64_t voxels_per_channel() const { return d * h * w; }

    void validate() const {
        if (d <= 0 || h <= 0 || w <= 0 || channels <= 0)
            throw FormatError("vol1: non-positive extents");
        if (kind != "ct" && kind != "dose" && kind != "mask" && kind != "probs")
            throw FormatError("vol1: unknown kind '" + kind + "'");
        if (static_cast<std::int64_t>(payload.size()) != channels * voxels_per_channel())
            throw FormatError("vol1: payload size does not match header");
        if (!names.empty() && static_cast<std::int64_t>(names.size()) != channels)
            throw FormatError("vol1: channel name count does not match channels");
        if (kind == "mask")
            for (float v : payload)
                if (v != 0.0f && v != 1.0f)
                    throw FormatError("vol1: mask payload must be exactly 0 or 1");
    }
};

inline void write_vol1(const Vol1& vol, const std::string& path) {
    vol.validate();
    nlohmann::json header;
    header["shape"] = {vol.d, vol.h, vol.w};
    header["channels"] = vol.channels;
    header["spacing_mm"] = {vol.spacing.sz, vol.spacing.sy, vol.spacing.sx};
    header["dtype"] = "f32le";
    header["kind"] = vol.kind;
    if (!vol.names.empty()) header["names"] = vol.names;

    std::ofstream f(path, std::ios::binary);
    if (!f) throw FormatError("vol1: cannot write " + path);
    f << "VOL1\n" << header.dump() << "\n";
    f.write(reinterpret_cast<const char*>(vol.payload.data()),
            static_cast<std::streamsize>(vol.payload.size() * sizeof(float)));
    if (!f) throw FormatError("vol1: write failed for " + path);
}

inline Vol1 read_vol1(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw FormatError("vol1: cannot read " + path);
    std::string magic, header_line;
    if (!std::getline(f, magic) || magic != "VOL1")
        throw FormatError("vol1: bad magic in " + path);
    if (!std::getline(f, header_line)) throw FormatError("vol1: missing header in " + path);

    Vol1 vol;
    try {
        const auto header = nlohmann::json::parse(header_line);
        const auto shape = header.at("shape").get<std::vector<std::int64_t>>();
        if (shape.size() != 3) throw FormatError("vol1: shape must have 3 extents in " + path);
        vol.d = shape[0];
        vol.h = shape[1];
        vol.w = shape[2];
        vol.channels = header.at("channels").get<std::int64_t>();
        const auto sp = header.at("spacing_mm").get<std::vector<double>>();
        if (sp.size() != 3) throw FormatError("vol1: spacing must have 3 entries in " + path);
        vol.spacing = {sp[0], sp[1], sp[2]};
        if (header.at("dtype").get<std::string>() != "f32le")
            throw FormatError("vol1: unsupported dtype in " + path);
        vol.kind = header.at("kind").get<std::string>();
        if (header.contains("names")) vol.names = header.at("names").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("vol1: malformed header in " + path + ": " + e.what());
    }

    std::vector<char> bytes{std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
    if (vol.d <= 0 || vol.h <= 0 || vol.w <= 0 || vol.channels <= 0)
        throw FormatError("vol1: non-positive extents in " + path);
    const auto expected =
        static_cast<std::size_t>(vol.channels * vol.voxels_per_channel()) * sizeof(float);
    if (bytes.size() != expected)
        throw FormatError("vol1: payload length mismatch in " + path);
    vol.payload.resize(bytes.size() / sizeof(float));
    std::memcpy(vol.payload.data(), bytes.data(), bytes.size());
    try {
        vol.validate();
    } catch (const FormatError& e) {
        throw FormatError(std::string(e.what()) + " in " + path);
    }
    return vol;
}

inline Vol1 vol1_from_volume(const Volume3& v, const SpacingGrid& sp, const std::string& kind) {
    Vol1 out;
    out.d = v.d;
    out.h = v.h;
    out.w = v.w;
    out.channels = 1;
    out.spacing = sp;
    out.kind = kind;
    out.payload.reserve(v.v.size());
    for (double x : v.v) out.payload.push_back(static_cast<float>(x));
    return out;
}

inline Volume3 volume_from_vol1(const Vol1& vol, std::int64_t channel = 0) {
    if (channel < 0 || channel >= vol.channels)
        throw FormatError("vol1: channel out of range");
    Volume3 out(vol.d, vol.h, vol.w);
    const auto base = static_cast<std::size_t>(channel * vol.voxels_per_channel());
    for (std::int64_t i = 0; i < out.size(); ++i)
        out.v[static_cast<std::size_t>(i)] =
            static_cast<double>(vol.payload[base + static_cast<std::size_t>(i)]);
    return out;
}

inline Mask3 mask_from_vol1(const Vol1& vol, std::int64_t channel = 0) {
    const Volume3 v = volume_from_vol1(vol, channel);
    Mask3 out(v.d, v.h, v.w);
    for (std::int64_t i = 0; i < v.size(); ++i)
        out.v[static_cast<std::size_t>(i)] = v.v[static_cast<std::size_t>(i)] != 0.0 ? 1 : 0;
    return out;
}

inline Vol1 vol1_from_mask(const Mask3& m, const SpacingGrid& sp) {
    Vol1 out;
    out.d = m.d;
    out.h = m.h;
    out.w = m.w;
    out.channels = 1;
    out.spacing = sp;
    out.kind = "mask";
    out.payload.reserve(m.v.size());
    for (auto b : m.v) out.payload.push_back(b ? 1.0f : 0.0f);
    return out;
}

// The seven organ masks as one labeled bundle in class-channel order.
inline Vol1 vol1_from_organ_masks(const std::array<Mask3, kNumOars>& oars, const SpacingGrid& sp) {
    Vol1 out;
    out.d = oars[0].d;
    out.h = oars[0].h;
    out.w = oars[0].w;
    out.channels = kNumOars;
    out.spacing = sp;
    out.kind = "mask";
    for (int k = 0; k < kNumOars; ++k) {
        const auto& m = oars[static_cast<std::size_t>(k)];
        if (m.d != out.d || m.h != out.h || m.w != out.w)
            throw ShapeError("vol1: organ mask extents disagree");
        out.names.push_back(kClassNames[static_cast<std::size_t>(k) + 1]);
        for (auto b : m.v) out.payload.push_back(b ? 1.0f : 0.0f);
    }
    return out;
}

inline std::array<Mask3, kNumOars> organ_masks_from_vol1(const Vol1& vol) {
    if (vol.channels != kNumOars)
        throw FormatError("vol1: organ bundle must have " + std::to_string(kNumOars) + " channels");
    std::array<Mask3, kNumOars> out;
    for (int k = 0; k < kNumOars; ++k) out[static_cast<std::size_t>(k)] = mask_from_vol1(vol, k);
    return out;
}

}  // namespace dosecast
