#include "dynfg/nn/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace dynfg::nn {

void Optimizer::step(ParamStore& params) {
    for (const auto& [name, p] : params.parameters()) {
        if (!p.has_grad()) throw std::runtime_error("optimizer_step: parameter '" + name + "' has no gradient");
    }
    ++steps_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(steps_));
    for (const auto& [name, handle] : params.parameters()) {
        Tensor p = handle;
        auto w = p.mutable_data();
        auto g = p.grad();
        Slot& s = state_[name];
        if (cfg_.kind == OptimizerKind::SGD) {
            if (cfg_.momentum != 0.0) {
                if (s.m.empty()) s.m.assign(w.size(), 0.0);
                for (std::size_t i = 0; i < w.size(); ++i) {
                    s.m[i] = cfg_.momentum * s.m[i] + static_cast<double>(g[i]);
                    w[i] -= static_cast<Real>(cfg_.lr * s.m[i]);
                }
            } else {
                for (std::size_t i = 0; i < w.size(); ++i) w[i] -= static_cast<Real>(cfg_.lr * static_cast<double>(g[i]));
            }
        } else {
            if (s.m.empty()) {
                s.m.assign(w.size(), 0.0);
                s.v.assign(w.size(), 0.0);
            }
            for (std::size_t i = 0; i < w.size(); ++i) {
                const double gi = static_cast<double>(g[i]);
                s.m[i] = cfg_.beta1 * s.m[i] + (1.0 - cfg_.beta1) * gi;
                s.v[i] = cfg_.beta2 * s.v[i] + (1.0 - cfg_.beta2) * gi * gi;
                const double mhat = s.m[i] / bc1;
                const double vhat = s.v[i] / bc2;
                w[i] -= static_cast<Real>(cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
            }
        }
        p.clear_grad();
    }
}

}  // namespace dynfg::nn
