#include "dynfg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace dynfg {

namespace {

double eval_scalar(const std::function<Tensor()>& f) {
    NoGradGuard guard;
    const Tensor y = f();
    const double v = static_cast<double>(y.item());
    if (!std::isfinite(v)) throw NumericError("gradcheck: non-finite function value");
    return v;
}

}  // namespace

GradcheckReport gradcheck(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                          const GradcheckOptions& opts) {
    if constexpr (!kReferencePrecision) {
        throw std::logic_error("gradcheck requires the 64-bit reference build");
    }
    for (auto& t : inputs) {
        if (!t.is_leaf() || !t.requires_grad()) throw AutogradError("gradcheck: inputs must be leaves requiring grad");
        t.clear_grad();
    }

    const Tensor y = f();
    if (y.numel() != 1) throw AutogradError("gradcheck: function must be scalar-valued");
    if (!std::isfinite(static_cast<double>(y.item()))) throw NumericError("gradcheck: non-finite function value");
    y.backward();

    GradcheckReport report;
    std::mt19937_64 rng(opts.seed);
    for (std::size_t k = 0; k < inputs.size(); ++k) {
        Tensor& t = inputs[k];
        const std::size_t n = static_cast<std::size_t>(t.numel());
        std::vector<Real> analytic = t.has_grad() ? std::vector<Real>(t.grad().begin(), t.grad().end())
                                                  : std::vector<Real>(n, Real(0));
        for (Real g : analytic) {
            if (!std::isfinite(static_cast<double>(g))) throw NumericError("gradcheck: non-finite analytic gradient");
        }

        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        if (opts.max_per_tensor > 0 && n > opts.max_per_tensor) {
            std::shuffle(idx.begin(), idx.end(), rng);
            idx.resize(opts.max_per_tensor);
            std::sort(idx.begin(), idx.end());
        }

        auto values = t.mutable_data();
        for (std::size_t i : idx) {
            const Real orig = values[i];
            values[i] = orig + static_cast<Real>(opts.eps);
            const double fp = eval_scalar(f);
            values[i] = orig - static_cast<Real>(opts.eps);
            const double fm = eval_scalar(f);
            values[i] = orig;
            const double numeric = (fp - fm) / (2 * opts.eps);
            const double a = static_cast<double>(analytic[i]);
            const double abs_err = std::abs(a - numeric);
            const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), opts.denom_floor});
            report.max_abs_error = std::max(report.max_abs_error, abs_err);
            if (rel > report.max_rel_error || report.checked == 0) {
                report.max_rel_error = std::max(report.max_rel_error, rel);
                std::ostringstream os;
                os.precision(12);
                os << "tensor#" << k << "[" << i << "]: analytic=" << a << ", numeric=" << numeric;
                report.worst = os.str();
            }
            ++report.checked;
        }
        t.clear_grad();
    }
    return report;
}

GradcheckReport gradcheck(const std::function<Tensor(const Tensor&)>& f, Tensor x, double eps) {
    GradcheckOptions opts;
    opts.eps = eps;
    return gradcheck([&f, x] { return f(x); }, {x}, opts);
}

}  // namespace dynfg
