#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "dynfg/nn/param_store.hpp"

namespace dynfg::nn {

enum class OptimizerKind { SGD, Adam };

struct OptimizerConfig {
    OptimizerKind kind = OptimizerKind::Adam;
    double lr = 1e-3;
    double momentum = 0.0;  // SGD only
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// Constant learning-rate optimizer. `step` updates every parameter of the
/// store in place and then releases the gradients; a parameter without a
/// gradient is an error.
class Optimizer {
public:
    explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) {}

    void step(ParamStore& params);
    long steps() const { return steps_; }
    const OptimizerConfig& config() const { return cfg_; }

private:
    struct Slot {
        std::vector<double> m;
        std::vector<double> v;
    };

    OptimizerConfig cfg_;
    long steps_ = 0;
    std::unordered_map<std::string, Slot> state_;
};

}  // namespace dynfg::nn
