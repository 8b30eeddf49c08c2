#pragma once

// AdamW with decoupled weight decay over named parameter lists.

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "tensor.hpp"

namespace dosecast {

struct AdamWConfig {
    double lr = 1e-4;
    double weight_decay = 0.0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    void validate() const {
        if (lr <= 0) throw ConfigError("adamw: lr must be positive");
        if (weight_decay < 0) throw ConfigError("adamw: weight_decay must be >= 0");
        if (beta1 < 0 || beta1 >= 1 || beta2 < 0 || beta2 >= 1)
            throw ConfigError("adamw: betas must lie in [0,1)");
        if (eps <= 0) throw ConfigError("adamw: eps must be positive");
    }
};

struct MomentPair {
    std::vector<double> m, v;
};

template <typename T>
using NamedParams = std::vector<std::pair<std::string, Tensor<T>>>;

template <typename T>
class AdamW {
  public:
    explicit AdamW(AdamWConfig cfg) : cfg_(cfg) { cfg_.validate(); }

    // Bias-corrected moment update plus decoupled decay. Every passed
    // parameter must carry a populated, finite gradient.
    void step(NamedParams<T>& params) {
        ++t_;
        const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        for (auto& [name, p] : params) {
            const auto& g = p.grad();
            auto& data = p.data();
            if (g.size() != data.size())
                throw TrainError("adamw: missing gradient for " + name);
            auto& st = state_[name];
            if (st.m.empty()) {
                st.m.assign(data.size(), 0.0);
                st.v.assign(data.size(), 0.0);
            } else if (st.m.size() != data.size()) {
                throw TrainError("adamw: state shape mismatch for " + name);
            }
            for (std::size_t i = 0; i < data.size(); ++i) {
                const double gi = static_cast<double>(g[i]);
                if (!std::isfinite(gi))
                    throw TrainError("adamw: non-finite gradient for " + name);
                st.m[i] = cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * gi;
                st.v[i] = cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * gi * gi;
                const double mhat = st.m[i] / bc1;
                const double vhat = st.v[i] / bc2;
                const double x = static_cast<double>(data[i]);
                data[i] = static_cast<T>(x - cfg_.lr * (mhat / (std::sqrt(vhat) + cfg_.eps) +
                                                        cfg_.weight_decay * x));
            }
        }
    }

    std::int64_t step_count() const { return t_; }
    const std::map<std::string, MomentPair>& state() const { return state_; }
    std::map<std::string, MomentPair>& state() { return state_; }
    void set_step_count(std::int64_t t) { t_ = t; }

  private:
    AdamWConfig cfg_;
    std::int64_t t_ = 0;
    std::map<std::string, MomentPair> state_;
};

}  // namespace dosecast
