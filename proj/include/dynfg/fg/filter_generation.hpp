#pragma once

#include <cstdint>
#include <string>
#include <utility>

#include "dynfg/nn/param_store.hpp"
#include "dynfg/ops.hpp"

namespace dynfg::fg {

/// Shape of the filters a dynamic layer produces for one sample.
struct FilterShape {
    Index count = 0;  // N, generated filters (output channels)
    Index in_channels = 0;
    Index kernel = 0;  // square kernels

    Index length() const { return in_channels * kernel * kernel; }  // L_k
};

/// M trainable base filters of length L_k, stored as rows of `base`.
struct FilterRepository {
    Tensor base;  // [M, L_k]
    FilterShape target;

    Index size() const { return base.dim(0); }

    /// Orthonormal rows, M <= L_k.
    static FilterRepository orthogonal(FilterShape target, Index size, std::uint64_t seed);
};

/// Affine map from a length-L_f feature to N*M coefficients. No activation.
struct CoefficientMap {
    Tensor weight;  // [L_f, N*M]
    Tensor bias;    // [N*M]

    Index feature_length() const { return weight.dim(0); }
    Index parameter_count() const { return weight.numel() + bias.numel(); }

    static CoefficientMap kaiming(Index feature_length, Index filters, Index repo_size, std::uint64_t seed);
};

/// Features [B, L_f] -> coefficients [B, N, M].
Tensor compute_coefficients(const CoefficientMap& map, const Tensor& features, Index filters, Index repo_size);

/// k[b,i] = sum_j coeffs[b,i,j] * base[j], reshaped to [B, N, Cin, kh, kw].
Tensor combine_filters(const FilterRepository& repo, const Tensor& coeffs);

enum class DynConvImpl {
    /// Materialize per-sample filters, then convolve each sample with its own set.
    Generate,
    /// Convolve with the M base filters once, then mix the M responses with
    /// each sample's coefficients. Same function by linearity; the generated
    /// filters are not materialized.
    Factored,
};

const char* impl_name(DynConvImpl impl);
DynConvImpl parse_impl(const std::string& name);

struct DynConvOutput {
    Tensor output;        // [B, N, H', W']
    Tensor coefficients;  // [B, N, M]
    Tensor filters;       // [B, N, Cin, kh, kw]; undefined for the factored path
};

/// A convolution whose filters are generated per sample.
class DynConvLayer {
public:
    DynConvLayer() = default;
    /// Registers `<name>.repository`, `<name>.coeff.weight`,
    /// `<name>.coeff.bias` and `<name>.bias` in `store`.
    DynConvLayer(nn::ParamStore& store, const std::string& name, FilterShape shape, Index feature_length,
                 Index repo_size, Conv2dParams conv, std::uint64_t seed);

    DynConvOutput forward(const Tensor& input, const Tensor& features, DynConvImpl impl = DynConvImpl::Generate) const;

    const FilterRepository& repository() const { return repo_; }
    const CoefficientMap& coefficient_map() const { return coeff_; }
    const Tensor& static_bias() const { return bias_; }
    Conv2dParams conv_params() const { return conv_; }
    Index filters() const { return repo_.target.count; }
    Index repo_size() const { return repo_.size(); }

    /// (L_f*N*M, L_f*N*L_k): coefficient-map weights versus a direct map
    /// from features to filters. Biases and the repository are excluded.
    std::pair<Index, Index> parameter_count() const;

private:
    FilterRepository repo_;
    CoefficientMap coeff_;
    Tensor bias_;
    Conv2dParams conv_;
};

std::pair<Index, Index> parameter_count(Index feature_length, Index filters, Index repo_size, Index filter_length);

}  // namespace dynfg::fg
