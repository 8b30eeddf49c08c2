#pragma once

// Flat key=value run configuration. Every key is registered with a
// default and a one-line description; unknown or duplicate keys are hard
// errors so typos never pass silently.

#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "augment.hpp"
#include "dose_net.hpp"
#include "phantom.hpp"
#include "seg_net.hpp"
#include "trainer.hpp"

namespace dosecast {

struct ConfigKey {
    const char* key;
    const char* def;
    const char* doc;
};

inline const std::vector<ConfigKey>& config_registry() {
    static const std::vector<ConfigKey> keys = {
        {"phantom.resolution", "16", "cubic volume extent in voxels, power of two >= 16"},
        {"phantom.spacing_mm", "3,3,3", "voxel spacing in mm along z,y,x"},
        {"phantom.seed", "0", "base seed; subject i uses stream (seed, i)"},
        {"phantom.falloff_mm", "12", "dose exponential falloff length in mm"},
        {"phantom.noise_sigma", "0.02", "CT additive Gaussian noise level"},
        {"phantom.prescriptions", "70,63,56", "target dose levels in Gy, strictly decreasing"},
        {"seg.patch", "8", "segmentation encoder patch edge"},
        {"seg.embed_dim", "32", "segmentation token width"},
        {"seg.layers", "4", "segmentation transformer depth, multiple of 4"},
        {"seg.heads", "4", "segmentation attention heads"},
        {"seg.mlp_ratio", "2", "segmentation MLP widening factor"},
        {"seg.channels", "16,12,8,8", "segmentation decoder widths, seed then stages"},
        {"dose.patch", "8", "dose encoder patch edge"},
        {"dose.embed_dim", "32", "dose token width"},
        {"dose.layers", "4", "dose transformer depth, multiple of 4"},
        {"dose.heads", "4", "dose attention heads"},
        {"dose.mlp_ratio", "2", "dose MLP widening factor"},
        {"dose.channels", "16,12,8,8", "dose decoder widths, seed then stages"},
        {"dose.stage1_width", "4", "base width of the first-stage U-Net"},
        {"train.mode", "seg", "seg | dose_stage1 | dose_stage2 | end_to_end"},
        {"train.lr", "1e-4", "learning rate"},
        {"train.weight_decay", "1e-5", "decoupled weight decay"},
        {"train.steps", "200", "optimizer steps"},
        {"train.batch_size", "2", "subjects per step"},
        {"train.seed", "0", "initialization and augmentation seed"},
        {"train.lambda1", "10", "finest-level dose loss weight"},
        {"train.lambda2", "8", "coarser-level dose loss weight"},
        {"aug.enabled", "false", "apply data augmentation during training"},
        {"aug.intensity_shift", "0.1", "CT intensity shift half-range"},
        {"aug.p_intensity", "0.5", "probability of the intensity shift"},
        {"aug.p_flip", "0.5", "per-axis flip probability"},
        {"aug.p_rot90", "0.5", "in-plane quarter-turn probability"},
        {"aug.crop", "0", "cubic crop extent, 0 disables"},
        {"eval.dvh_bins", "100", "thresholds per DVH curve"},
        {"eval.dvh_max_dose", "80", "upper DVH threshold in Gy"},
        {"eval.isodose_thresholds", "10,20,30,40,50,60,70", "isodose Dice thresholds in Gy"},
    };
    return keys;
}

class RunConfig {
  public:
    static RunConfig parse_text(const std::string& text) {
        RunConfig rc;
        std::istringstream in(text);
        std::string line;
        std::int64_t lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            const std::string trimmed = trim(line);
            if (trimmed.empty()) continue;
            const auto eq = trimmed.find('=');
            if (eq == std::string::npos)
                throw ConfigError("config: line " + std::to_string(lineno) +
                                  " is not key=value: '" + trimmed + "'");
            const std::string key = trim(trimmed.substr(0, eq));
            const std::string value = trim(trimmed.substr(eq + 1));
            if (!known(key)) throw ConfigError("config: unknown key '" + key + "'");
            if (rc.values_.count(key))
                throw ConfigError("config: duplicate key '" + key + "'");
            rc.values_[key] = value;
        }
        return rc;
    }

    static RunConfig parse_file(const std::string& path) {
        std::ifstream f(path);
        if (!f) throw ConfigError("config: cannot read " + path);
        std::stringstream ss;
        ss << f.rdbuf();
        return parse_text(ss.str());
    }

    void set(const std::string& key, const std::string& value) {
        if (!known(key)) throw ConfigError("config: unknown key '" + key + "'");
        values_[key] = value;
    }

    std::string get_string(const std::string& key) const {
        auto it = values_.find(key);
        if (it != values_.end()) return it->second;
        for (const auto& k : config_registry())
            if (key == k.key) return k.def;
        throw ConfigError("config: unknown key '" + key + "'");
    }

    double get_real(const std::string& key) const {
        const std::string s = get_string(key);
        try {
            std::size_t pos = 0;
            const double v = std::stod(s, &pos);
            if (pos != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config: key '" + key + "' is not a number: '" + s + "'");
        }
    }

    std::int64_t get_int(const std::string& key) const {
        const std::string s = get_string(key);
        try {
            std::size_t pos = 0;
            const long long v = std::stoll(s, &pos);
            if (pos != s.size()) throw std::invalid_argument(s);
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config: key '" + key + "' is not an integer: '" + s + "'");
        }
    }

    bool get_bool(const std::string& key) const {
        const std::string s = get_string(key);
        if (s == "true" || s == "1") return true;
        if (s == "false" || s == "0") return false;
        throw ConfigError("config: key '" + key + "' is not a boolean: '" + s + "'");
    }

    std::vector<double> get_reals(const std::string& key) const {
        std::vector<double> out;
        for (const auto& part : split(get_string(key))) {
            try {
                out.push_back(std::stod(part));
            } catch (const std::exception&) {
                throw ConfigError("config: key '" + key + "' has a non-numeric entry: '" + part +
                                  "'");
            }
        }
        return out;
    }

    std::vector<std::int64_t> get_ints(const std::string& key) const {
        std::vector<std::int64_t> out;
        for (const auto& part : split(get_string(key))) {
            try {
                out.push_back(std::stoll(part));
            } catch (const std::exception&) {
                throw ConfigError("config: key '" + key + "' has a non-integer entry: '" + part +
                                  "'");
            }
        }
        return out;
    }

    // Canonical text: every registered key with its effective value, in
    // registry order. Fingerprints hash this.
    std::string canonical_text() const {
        std::string out;
        for (const auto& k : config_registry()) out += std::string(k.key) + "=" + get_string(k.key) + "\n";
        return out;
    }

    std::string fingerprint() const {
        const std::string t = canonical_text();
        return hex64(fnv1a64(t.data(), t.size()));
    }

  private:
    static bool known(const std::string& key) {
        for (const auto& k : config_registry())
            if (key == k.key) return true;
        return false;
    }

    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return "";
        const auto e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    }

    static std::vector<std::string> split(const std::string& s) {
        std::vector<std::string> out;
        std::string cur;
        for (char c : s) {
            if (c == ',') {
                out.push_back(trim(cur));
                cur.clear();
            } else {
                cur += c;
            }
        }
        out.push_back(trim(cur));
        return out;
    }

    std::map<std::string, std::string> values_;
};

inline PhantomConfig phantom_config_from(const RunConfig& rc) {
    const auto res = rc.get_int("phantom.resolution");
    PhantomConfig cfg = PhantomConfig::for_resolution(
        res, static_cast<std::uint64_t>(rc.get_int("phantom.seed")));
    const auto sp = rc.get_reals("phantom.spacing_mm");
    if (sp.size() != 3) throw ConfigError("config: phantom.spacing_mm needs 3 entries");
    cfg.spacing = {sp[0], sp[1], sp[2]};
    cfg.falloff_mm = rc.get_real("phantom.falloff_mm");
    cfg.noise_sigma = rc.get_real("phantom.noise_sigma");
    cfg.prescriptions = rc.get_reals("phantom.prescriptions");
    cfg.validate();
    return cfg;
}

namespace detail {

inline std::vector<std::int64_t> channels_from(const RunConfig& rc, const std::string& key) {
    const auto ch = rc.get_ints(key);
    if (ch.size() != 4) throw ConfigError("config: " + key + " needs 4 entries");
    return ch;
}

}  // namespace detail

inline SegNetConfig seg_config_from(const RunConfig& rc, std::int64_t resolution) {
    SegNetConfig cfg;
    cfg.encoder = EncoderConfig::cubic(resolution, rc.get_int("seg.patch"), 1,
                                       rc.get_int("seg.embed_dim"), rc.get_int("seg.layers"),
                                       rc.get_int("seg.heads"), rc.get_real("seg.mlp_ratio"));
    cfg.decoder.channels = detail::channels_from(rc, "seg.channels");
    cfg.validate();
    return cfg;
}

inline DoseNetConfig dose_config_from(const RunConfig& rc, std::int64_t resolution) {
    DoseNetConfig cfg;
    cfg.encoder = EncoderConfig::cubic(resolution, rc.get_int("dose.patch"),
                                       kCompositeChannels + 1, rc.get_int("dose.embed_dim"),
                                       rc.get_int("dose.layers"), rc.get_int("dose.heads"),
                                       rc.get_real("dose.mlp_ratio"));
    cfg.decoder.channels = detail::channels_from(rc, "dose.channels");
    cfg.stage1_width = rc.get_int("dose.stage1_width");
    cfg.validate();
    return cfg;
}

inline TrainConfig train_config_from(const RunConfig& rc) {
    TrainConfig cfg;
    const std::string mode = rc.get_string("train.mode");
    if (mode == "seg") cfg.mode = TrainMode::Seg;
    else if (mode == "dose_stage1") cfg.mode = TrainMode::DoseStage1;
    else if (mode == "dose_stage2") cfg.mode = TrainMode::DoseStage2;
    else if (mode == "end_to_end") cfg.mode = TrainMode::EndToEnd;
    else throw ConfigError("config: train.mode '" + mode + "' is not a mode");
    cfg.lr = rc.get_real("train.lr");
    cfg.weight_decay = rc.get_real("train.weight_decay");
    cfg.steps = rc.get_int("train.steps");
    cfg.batch_size = rc.get_int("train.batch_size");
    cfg.seed = static_cast<std::uint64_t>(rc.get_int("train.seed"));
    cfg.loss.lambda1 = rc.get_real("train.lambda1");
    cfg.loss.lambda2 = rc.get_real("train.lambda2");
    cfg.augment_enabled = rc.get_bool("aug.enabled");
    cfg.aug.intensity_shift_range = rc.get_real("aug.intensity_shift");
    cfg.aug.p_intensity = rc.get_real("aug.p_intensity");
    cfg.aug.p_flip = rc.get_real("aug.p_flip");
    cfg.aug.p_rot90 = rc.get_real("aug.p_rot90");
    cfg.aug.crop = rc.get_int("aug.crop");
    cfg.fingerprint = rc.fingerprint();
    cfg.validate();
    return cfg;
}

}  // namespace dosecast
