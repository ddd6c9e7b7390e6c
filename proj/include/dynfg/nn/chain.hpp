#pragma once

#include <cstdint>
#include <functional>
#include <set>
#include <string>
#include <vector>

#include "dynfg/nn/layer_spec.hpp"
#include "dynfg/nn/param_store.hpp"
#include "dynfg/ops.hpp"

namespace dynfg::nn {

/// Supplies the convolution result for a row whose filters live outside
/// the chain (generated per sample). Receives the row index and its input.
using ConvProvider = std::function<Tensor(std::size_t row, const Tensor& input)>;

/// A sequential network built from LayerSpec rows. Parameters are
/// registered in a ParamStore under `<prefix>.<row>.<name>`.
class Chain {
public:
    Chain() = default;

    /// `input_shape` is [C,H,W] (or [F] for an all-linear chain) and is used
    /// to validate the rows. Rows listed in `external_rows` get no filter
    /// parameters; their convolution comes from the ConvProvider at forward
    /// time, followed by the row's own batchnorm/activation.
    Chain(std::vector<LayerSpec> specs, Shape input_shape, ParamStore& store, const std::string& prefix,
          std::uint64_t seed, std::set<std::size_t> external_rows = {});

    /// `pre_activations`, when given, receives one entry per row: the value
    /// entering the row's activation (after batchnorm), undefined for rows
    /// without one.
    Tensor forward(const Tensor& x, Mode mode, const ConvProvider* provider = nullptr,
                   std::vector<Tensor>* pre_activations = nullptr) const;

    const std::vector<LayerSpec>& specs() const { return specs_; }
    const Shape& input_shape() const { return input_shape_; }
    /// Per-row output shapes for a batch of `batch` samples.
    std::vector<Shape> output_shapes(Index batch = 1) const;
    bool empty() const { return specs_.empty(); }

private:
    struct RowParams {
        Tensor weight;
        Tensor bias;
        Tensor gamma;
        Tensor beta;
        RunningStats stats;
    };

    std::vector<LayerSpec> specs_;
    Shape input_shape_;
    std::set<std::size_t> external_;
    mutable std::vector<RowParams> rows_;  // running stats update during train-mode forward
};

/// Builds a chain with its own parameter store. An empty spec list gives an
/// identity forward.
std::pair<Chain, ParamStore> build_chain(std::vector<LayerSpec> specs, Shape input_shape, std::uint64_t seed);

}  // namespace dynfg::nn
