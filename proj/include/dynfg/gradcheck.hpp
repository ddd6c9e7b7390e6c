#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "dynfg/tensor.hpp"

namespace dynfg {

struct GradcheckOptions {
    double eps = 1e-5;
    /// Lower bound of the relative-error denominator, so entries whose true
    /// gradient is ~0 are compared in absolute terms.
    double denom_floor = 1e-3;
    /// 0 checks every element; otherwise a seeded sample of this many
    /// elements per tensor.
    std::size_t max_per_tensor = 0;
    std::uint64_t seed = 0;
};

struct GradcheckReport {
    double max_rel_error = 0;
    double max_abs_error = 0;
    std::size_t checked = 0;
    std::string worst;  // "tensor#k[i]: analytic=..., numeric=..."

    bool passed(double tol) const { return max_rel_error < tol; }
};

/// Compares reverse-mode gradients of the scalar `f()` with respect to
/// `inputs` against central differences. `inputs` must be leaves with
/// requires_grad set; their values are perturbed in place and restored.
/// Relative error per element is |a - n| / max(|a|, |n|, denom_floor).
GradcheckReport gradcheck(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                          const GradcheckOptions& opts = {});

/// Single-input convenience form.
GradcheckReport gradcheck(const std::function<Tensor(const Tensor&)>& f, Tensor x, double eps = 1e-5);

}  // namespace dynfg
