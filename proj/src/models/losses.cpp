#include "dynfg/models/losses.hpp"

#include <algorithm>
#include <cmath>

namespace dynfg::models {

Tensor bce_reconstruction_loss(const Tensor& output, const Tensor& target) {
    if (output.shape() != target.shape()) {
        throw ShapeError("bce: reconstruction " + shape_str(output.shape()) + " vs target " +
                         shape_str(target.shape()));
    }
    auto o = output.data();
    auto t = target.data();
    constexpr Real tol = Real(1e-12);
    const Real lo = kBceClamp, hi = Real(1) - kBceClamp;
    double acc = 0;
    for (std::size_t i = 0; i < o.size(); ++i) {
        if (o[i] < -tol || o[i] > 1 + tol || t[i] < -tol || t[i] > 1 + tol) {
            throw std::domain_error("bce: values must lie in [0,1] (output " + std::to_string(o[i]) + ", target " +
                                    std::to_string(t[i]) + " at index " + std::to_string(i) + ")");
        }
        const Real oc = std::clamp(o[i], lo, hi);
        acc -= static_cast<double>(t[i] * std::log(oc) + (Real(1) - t[i]) * std::log(Real(1) - oc));
    }
    const Real n = static_cast<Real>(o.size());
    Tensor result = Tensor::make_result({1}, {static_cast<Real>(acc / static_cast<double>(o.size()))});
    check_finite(result.data(), "bce");
    auto oi = output.impl(), ti = target.impl();
    attach_grad_fn(result, "bce", {output, target}, [=](std::span<const Real> g) {
        const Real* ov = oi->storage->data();
        const Real* tv = ti->storage->data();
        if (oi->wants_grad()) {
            auto d = oi->grad_buffer();
            for (std::size_t i = 0; i < d.size(); ++i) {
                const Real oc = std::clamp(ov[i], lo, hi);
                d[i] += g[0] * (oc - tv[i]) / (oc * (Real(1) - oc)) / n;
            }
        }
        if (ti->wants_grad()) {
            auto d = ti->grad_buffer();
            for (std::size_t i = 0; i < d.size(); ++i) {
                const Real oc = std::clamp(ov[i], lo, hi);
                d[i] += g[0] * (std::log(Real(1) - oc) - std::log(oc)) / n;
            }
        }
    });
    return result;
}

Tensor nll_classification_loss(const Tensor& log_probs, std::span<const int> labels) {
    if (log_probs.ndim() != 2 || static_cast<std::size_t>(log_probs.dim(0)) != labels.size()) {
        throw ShapeError("nll: log-probabilities " + shape_str(log_probs.shape()) + " vs " +
                         std::to_string(labels.size()) + " labels");
    }
    const Index B = log_probs.dim(0), C = log_probs.dim(1);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= C) {
            throw std::out_of_range("nll: label " + std::to_string(labels[i]) + " at position " + std::to_string(i) +
                                    " outside [0," + std::to_string(C) + ")");
        }
    }
    auto lp = log_probs.data();
    double acc = 0;
    for (Index b = 0; b < B; ++b) acc -= static_cast<double>(lp[b * C + labels[b]]);
    Tensor result = Tensor::make_result({1}, {static_cast<Real>(acc / static_cast<double>(B))});
    check_finite(result.data(), "nll");
    auto li = log_probs.impl();
    std::vector<int> lab(labels.begin(), labels.end());
    attach_grad_fn(result, "nll", {log_probs}, [=](std::span<const Real> g) {
        auto d = li->grad_buffer();
        for (Index b = 0; b < B; ++b) d[b * C + lab[b]] -= g[0] / static_cast<Real>(B);
    });
    return result;
}

LossBundle total_loss(const Tensor& reconstruction, const Tensor& logits, const Tensor& target_images,
                      std::span<const int> labels, ModelMode mode, Real rec_weight) {
    LossBundle out;
    out.cls = nll_classification_loss(log_softmax(logits), labels);
    if (mode == ModelMode::Baseline) {
        out.rec = Tensor::scalar(Real(0));
        out.total = out.cls;
        return out;
    }
    out.rec = bce_reconstruction_loss(reconstruction, target_images);
    out.total = add(rec_weight == Real(1) ? out.rec : scale(out.rec, rec_weight), out.cls);
    return out;
}

}  // namespace dynfg::models
