#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#ifndef DYNFG_REAL
#define DYNFG_REAL double
#endif

namespace dynfg {

/// Element type of every tensor. 64-bit in the reference build.
using Real = DYNFG_REAL;
using Index = std::int64_t;
using Shape = std::vector<Index>;

inline constexpr bool kReferencePrecision = sizeof(Real) == sizeof(double);

/// Raised for incompatible extents. Messages name the offending dimensions.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when a forward result contains NaN or Inf.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Misuse of the autograd engine (non-scalar loss, detached graph, reused graph).
class AutogradError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

std::string shape_str(const Shape& shape);
Index shape_numel(const Shape& shape);

namespace detail {

struct TensorImpl;

struct Node {
    std::string op;
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    // Reads the gradient of the node's output and accumulates into inputs.
    std::function<void(std::span<const Real> grad_out)> backward;
    bool consumed = false;
};

struct TensorImpl {
    Shape shape;
    std::shared_ptr<std::vector<Real>> storage;
    std::vector<Real> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::shared_ptr<Node> grad_fn;

    std::span<Real> data() { return {storage->data(), storage->size()}; }
    bool wants_grad() const { return requires_grad || grad_fn != nullptr; }
    std::span<Real> grad_buffer();
};

}  // namespace detail

/// Global switch for graph recording, scoped by NoGradGuard.
class GradMode {
public:
    static bool enabled();
    static void set_enabled(bool on);
};

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Dense row-major array with reverse-mode differentiation.
///
/// Copies are shallow: two Tensor handles may refer to the same node. Values
/// produced by an op are never mutated afterwards; only leaf tensors (inputs
/// and parameters) expose mutable data.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, Real value);
    static Tensor from_data(Shape shape, std::vector<Real> values);
    static Tensor scalar(Real value);

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    Index dim(std::size_t axis) const;
    std::size_t ndim() const { return shape().size(); }
    Index numel() const;

    std::span<const Real> data() const;
    /// Mutable view; only permitted on leaves.
    std::span<Real> mutable_data();
    Real item() const;
    Real at(std::initializer_list<Index> index) const;

    bool requires_grad() const;
    Tensor& set_requires_grad(bool on);
    bool is_leaf() const;

    bool has_grad() const;
    std::span<const Real> grad() const;
    std::span<Real> mutable_grad();
    void zero_grad();
    void clear_grad();

    /// Runs reverse-mode accumulation from this scalar.
    void backward() const;

    Tensor detach() const;
    Tensor reshape(Shape shape) const;
    Tensor clone() const;

    // Internal plumbing for op implementations.
    static Tensor make_result(Shape shape, std::vector<Real> values);
    const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }

private:
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
    std::shared_ptr<detail::TensorImpl> impl_;
    friend void attach_grad_fn(Tensor& out, std::string op, std::vector<Tensor> inputs,
                               std::function<void(std::span<const Real>)> backward);
};

/// Records `out` as produced by `op` from `inputs` if any input needs a gradient
/// and grad mode is on.
void attach_grad_fn(Tensor& out, std::string op, std::vector<Tensor> inputs,
                    std::function<void(std::span<const Real>)> backward);

/// Throws NumericError naming `op` if any element is non-finite.
void check_finite(std::span<const Real> values, const char* op);

}  // namespace dynfg
