#include "dynfg/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>

namespace dynfg {

namespace {
thread_local bool g_grad_enabled = true;
}

bool GradMode::enabled() { return g_grad_enabled; }
void GradMode::set_enabled(bool on) { g_grad_enabled = on; }

NoGradGuard::NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
NoGradGuard::~NoGradGuard() { GradMode::set_enabled(previous_); }

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Index shape_numel(const Shape& shape) {
    Index n = 1;
    for (Index e : shape) {
        if (e <= 0) throw ShapeError("non-positive extent in shape " + shape_str(shape));
        n *= e;
    }
    return n;
}

std::span<Real> detail::TensorImpl::grad_buffer() {
    if (grad.empty()) grad.assign(storage->size(), Real(0));
    return grad;
}

void check_finite(std::span<const Real> values, const char* op) {
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i])) {
            std::ostringstream os;
            os << op << ": non-finite value " << values[i] << " at flat index " << i;
            throw NumericError(os.str());
        }
    }
}

Tensor Tensor::from_data(Shape shape, std::vector<Real> values) {
    const Index n = shape_numel(shape);
    if (static_cast<Index>(values.size()) != n) {
        throw ShapeError("from_data: shape " + shape_str(shape) + " needs " + std::to_string(n) +
                         " values, got " + std::to_string(values.size()));
    }
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = std::move(shape);
    impl->storage = std::make_shared<std::vector<Real>>(std::move(values));
    return Tensor(std::move(impl));
}

Tensor Tensor::make_result(Shape shape, std::vector<Real> values) {
    return from_data(std::move(shape), std::move(values));
}

Tensor Tensor::zeros(Shape shape) {
    const Index n = shape_numel(shape);
    return from_data(std::move(shape), std::vector<Real>(static_cast<std::size_t>(n), Real(0)));
}

Tensor Tensor::full(Shape shape, Real value) {
    const Index n = shape_numel(shape);
    return from_data(std::move(shape), std::vector<Real>(static_cast<std::size_t>(n), value));
}

Tensor Tensor::scalar(Real value) { return from_data({1}, {value}); }

const Shape& Tensor::shape() const {
    if (!impl_) throw std::logic_error("undefined tensor");
    return impl_->shape;
}

Index Tensor::dim(std::size_t axis) const {
    const Shape& s = shape();
    if (axis >= s.size()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
    }
    return s[axis];
}

Index Tensor::numel() const { return static_cast<Index>(impl_->storage->size()); }

std::span<const Real> Tensor::data() const {
    if (!impl_) throw std::logic_error("undefined tensor");
    return {impl_->storage->data(), impl_->storage->size()};
}

std::span<Real> Tensor::mutable_data() {
    if (!is_leaf()) throw AutogradError("mutable_data: tensor is the output of an op");
    return impl_->data();
}

Real Tensor::item() const {
    if (numel() != 1) throw ShapeError("item: tensor of shape " + shape_str(shape()) + " is not a scalar");
    return (*impl_->storage)[0];
}

Real Tensor::at(std::initializer_list<Index> index) const {
    const Shape& s = shape();
    if (index.size() != s.size()) throw ShapeError("at: rank mismatch for shape " + shape_str(s));
    Index flat = 0;
    std::size_t axis = 0;
    for (Index i : index) {
        if (i < 0 || i >= s[axis]) throw ShapeError("at: index out of range for shape " + shape_str(s));
        flat = flat * s[axis] + i;
        ++axis;
    }
    return (*impl_->storage)[static_cast<std::size_t>(flat)];
}

bool Tensor::requires_grad() const { return impl_ && impl_->wants_grad(); }

Tensor& Tensor::set_requires_grad(bool on) {
    if (!is_leaf()) throw AutogradError("set_requires_grad: only leaves can be marked");
    impl_->requires_grad = on;
    return *this;
}

bool Tensor::is_leaf() const { return impl_ && impl_->grad_fn == nullptr; }

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const Real> Tensor::grad() const {
    if (!has_grad()) throw AutogradError("grad: tensor has no gradient");
    return impl_->grad;
}

std::span<Real> Tensor::mutable_grad() { return impl_->grad_buffer(); }

void Tensor::zero_grad() {
    if (impl_ && !impl_->grad.empty()) std::fill(impl_->grad.begin(), impl_->grad.end(), Real(0));
}

void Tensor::clear_grad() {
    if (impl_) {
        impl_->grad.clear();
        impl_->grad.shrink_to_fit();
    }
}

Tensor Tensor::detach() const {
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = shape();
    impl->storage = impl_->storage;
    return Tensor(std::move(impl));
}

Tensor Tensor::clone() const { return from_data(shape(), std::vector<Real>(data().begin(), data().end())); }

Tensor Tensor::reshape(Shape new_shape) const {
    if (shape_numel(new_shape) != numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(shape()) + " as " + shape_str(new_shape));
    }
    auto impl = std::make_shared<detail::TensorImpl>();
    impl->shape = std::move(new_shape);
    impl->storage = impl_->storage;
    Tensor out(std::move(impl));
    auto src = impl_;
    attach_grad_fn(out, "reshape", {*this}, [src](std::span<const Real> g) {
        auto dst = src->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
    });
    return out;
}

void attach_grad_fn(Tensor& out, std::string op, std::vector<Tensor> inputs,
                    std::function<void(std::span<const Real>)> backward) {
    if (!GradMode::enabled()) return;
    bool any = false;
    for (const auto& t : inputs) any = any || (t.defined() && t.requires_grad());
    if (!any) return;
    auto node = std::make_shared<detail::Node>();
    node->op = std::move(op);
    for (const auto& t : inputs) node->inputs.push_back(t.impl_);
    node->backward = std::move(backward);
    out.impl_->grad_fn = std::move(node);
}

void Tensor::backward() const {
    if (!impl_) throw AutogradError("backward: undefined tensor");
    if (numel() != 1) throw AutogradError("backward: loss must be scalar, got shape " + shape_str(shape()));
    if (!impl_->grad_fn) throw AutogradError("backward: loss is not connected to a recorded graph");

    // Iterative post-order DFS; inputs are visited in insertion order so the
    // resulting order is deterministic.
    std::vector<detail::TensorImpl*> order;
    std::unordered_set<detail::TensorImpl*> seen;
    std::vector<std::pair<detail::TensorImpl*, std::size_t>> stack{{impl_.get(), 0}};
    seen.insert(impl_.get());
    while (!stack.empty()) {
        auto& [t, next] = stack.back();
        if (t->grad_fn && next < t->grad_fn->inputs.size()) {
            detail::TensorImpl* child = t->grad_fn->inputs[next++].get();
            if (child && child->grad_fn && !seen.count(child)) {
                seen.insert(child);
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(t);
            stack.pop_back();
        }
    }

    for (auto* t : order) {
        if (t->grad_fn->consumed) {
            throw AutogradError("backward: graph through '" + t->grad_fn->op +
                                "' was already consumed; run a new forward pass");
        }
    }

    auto seed = impl_->grad_buffer();
    seed[0] += Real(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::TensorImpl* t = *it;
        auto& node = *t->grad_fn;
        // Inputs with a gradient slot get their buffer before the op writes.
        for (auto& in : node.inputs) {
            if (in && in->wants_grad()) in->grad_buffer();
        }
        node.backward(t->grad_buffer());
        node.consumed = true;
        node.backward = nullptr;  // release saved activations
    }
}

}  // namespace dynfg
