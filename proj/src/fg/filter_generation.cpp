#include "dynfg/fg/filter_generation.hpp"

#include <sstream>

#include "dynfg/hash.hpp"
#include "dynfg/nn/init.hpp"

namespace dynfg::fg {

FilterRepository FilterRepository::orthogonal(FilterShape target, Index size, std::uint64_t seed) {
    if (target.count < 1 || target.length() < 1) throw ShapeError("repository: empty target filter shape");
    return {nn::init_orthogonal(size, target.length(), seed), target};
}

CoefficientMap CoefficientMap::kaiming(Index feature_length, Index filters, Index repo_size, std::uint64_t seed) {
    return {nn::init_kaiming({feature_length, filters * repo_size}, seed), Tensor::zeros({filters * repo_size})};
}

Tensor compute_coefficients(const CoefficientMap& map, const Tensor& features, Index filters, Index repo_size) {
    if (features.ndim() != 2 || features.dim(1) != map.feature_length()) {
        throw ShapeError("compute_coefficients: features " + shape_str(features.shape()) + " do not match L_f = " +
                         std::to_string(map.feature_length()));
    }
    if (map.weight.dim(1) != filters * repo_size) {
        throw ShapeError("compute_coefficients: map produces " + std::to_string(map.weight.dim(1)) +
                         " coefficients, expected N*M = " + std::to_string(filters * repo_size));
    }
    return linear(features, map.weight, map.bias).reshape({features.dim(0), filters, repo_size});
}

Tensor combine_filters(const FilterRepository& repo, const Tensor& coeffs) {
    if (coeffs.ndim() != 3 || coeffs.dim(2) != repo.size() || coeffs.dim(1) != repo.target.count) {
        std::ostringstream os;
        os << "combine_filters: coefficients " << shape_str(coeffs.shape()) << " do not match a repository of "
           << repo.size() << " base filters generating " << repo.target.count << " filters";
        throw ShapeError(os.str());
    }
    const Index B = coeffs.dim(0), N = coeffs.dim(1), M = coeffs.dim(2);
    const Tensor flat = matmul(coeffs.reshape({B * N, M}), repo.base, N);
    return flat.reshape({B, N, repo.target.in_channels, repo.target.kernel, repo.target.kernel});
}

const char* impl_name(DynConvImpl impl) { return impl == DynConvImpl::Generate ? "generate" : "factored"; }

DynConvImpl parse_impl(const std::string& name) {
    if (name == "generate") return DynConvImpl::Generate;
    if (name == "factored") return DynConvImpl::Factored;
    throw std::invalid_argument("unknown dynamic convolution implementation '" + name + "'");
}

DynConvLayer::DynConvLayer(nn::ParamStore& store, const std::string& name, FilterShape shape, Index feature_length,
                           Index repo_size, Conv2dParams conv, std::uint64_t seed)
    : conv_(conv) {
    FilterRepository repo = FilterRepository::orthogonal(shape, repo_size, derive_seed(seed, name + ".repository"));
    CoefficientMap coeff =
        CoefficientMap::kaiming(feature_length, shape.count, repo_size, derive_seed(seed, name + ".coeff.weight"));
    repo_.target = shape;
    repo_.base = store.add_parameter(name + ".repository", repo.base);
    coeff_.weight = store.add_parameter(name + ".coeff.weight", coeff.weight);
    coeff_.bias = store.add_parameter(name + ".coeff.bias", coeff.bias);
    bias_ = store.add_parameter(name + ".bias", Tensor::zeros({shape.count}));
}

DynConvOutput DynConvLayer::forward(const Tensor& input, const Tensor& features, DynConvImpl impl) const {
    if (features.ndim() != 2 || input.ndim() != 4 || features.dim(0) != input.dim(0)) {
        throw ShapeError("dynconv: features " + shape_str(features.shape()) + " and input " +
                         shape_str(input.shape()) + " disagree on the batch");
    }
    DynConvOutput out;
    out.coefficients = compute_coefficients(coeff_, features, filters(), repo_size());
    if (impl == DynConvImpl::Generate) {
        out.filters = combine_filters(repo_, out.coefficients);
        out.output = conv2d_per_sample(input, out.filters, bias_, conv_);
    } else {
        const FilterShape& t = repo_.target;
        const Tensor basis = repo_.base.reshape({repo_size(), t.in_channels, t.kernel, t.kernel});
        const Tensor responses = conv2d(input, basis, Tensor(), conv_);  // [B, M, H', W']
        const Index B = input.dim(0), Ho = responses.dim(2), Wo = responses.dim(3);
        const Tensor mixed = bmm(out.coefficients, responses.reshape({B, repo_size(), Ho * Wo}));
        out.output = add_channel_bias(mixed.reshape({B, filters(), Ho, Wo}), bias_);
    }
    return out;
}

std::pair<Index, Index> parameter_count(Index feature_length, Index filters, Index repo_size, Index filter_length) {
    return {feature_length * filters * repo_size, feature_length * filters * filter_length};
}

std::pair<Index, Index> DynConvLayer::parameter_count() const {
    return fg::parameter_count(coeff_.feature_length(), filters(), repo_size(), repo_.target.length());
}

}  // namespace dynfg::fg
