#include "dynfg/nn/chain.hpp"

#include "dynfg/hash.hpp"
#include "dynfg/nn/init.hpp"

namespace dynfg::nn {

Chain::Chain(std::vector<LayerSpec> specs, Shape input_shape, ParamStore& store, const std::string& prefix,
             std::uint64_t seed, std::set<std::size_t> external_rows)
    : specs_(std::move(specs)), input_shape_(std::move(input_shape)), external_(std::move(external_rows)) {
    Shape batched{1};
    batched.insert(batched.end(), input_shape_.begin(), input_shape_.end());
    infer_shapes(specs_, batched);

    rows_.resize(specs_.size());
    for (std::size_t r = 0; r < specs_.size(); ++r) {
        const LayerSpec& s = specs_[r];
        const std::string base = prefix + "." + std::to_string(r) + ".";
        RowParams& p = rows_[r];
        if (s.is_conv()) {
            if (external_.count(r) == 0) {
                const Shape ws{s.out_channels, s.in_channels, s.kernel, s.kernel};
                p.weight = store.add_parameter(base + "weight", init_kaiming(ws, derive_seed(seed, base + "weight")));
                p.bias = store.add_parameter(base + "bias", Tensor::zeros({s.out_channels}));
            }
            if (s.has_batchnorm()) {
                p.gamma = store.add_parameter(base + "bn.gamma", Tensor::full({s.out_channels}, Real(1)));
                p.beta = store.add_parameter(base + "bn.beta", Tensor::zeros({s.out_channels}));
                p.stats = RunningStats::fresh(s.out_channels);
                store.add_buffer(base + "bn.running_mean", p.stats.mean);
                store.add_buffer(base + "bn.running_var", p.stats.var);
            }
        } else if (s.is_linear()) {
            const Shape ws{s.in_channels, s.out_channels};
            p.weight = store.add_parameter(base + "weight", init_kaiming(ws, derive_seed(seed, base + "weight")));
            p.bias = store.add_parameter(base + "bias", Tensor::zeros({s.out_channels}));
        } else if (external_.count(r)) {
            throw std::invalid_argument("row " + std::to_string(r) + " (" + s.describe() +
                                        ") is not a convolution and cannot be external");
        }
    }
}

Tensor Chain::forward(const Tensor& x, Mode mode, const ConvProvider* provider,
                      std::vector<Tensor>* pre_activations) const {
    if (pre_activations) pre_activations->assign(specs_.size(), Tensor());
    Tensor h = x;
    for (std::size_t r = 0; r < specs_.size(); ++r) {
        const LayerSpec& s = specs_[r];
        RowParams& p = rows_[r];
        switch (s.kind) {
            case LayerKind::MaxPool: h = max_pool2d(h, s.kernel, s.stride); continue;
            case LayerKind::AvgPool: h = avg_pool2d(h, s.kernel, s.stride); continue;
            case LayerKind::Upsample: h = upsample_nearest(h, s.factor); continue;
            default: break;
        }
        if (s.is_linear()) {
            if (h.ndim() != 2) h = flatten(h);
            h = linear(h, p.weight, p.bias);
        } else if (external_.count(r)) {
            if (!provider) throw std::logic_error("row " + std::to_string(r) + " needs a convolution provider");
            h = (*provider)(r, h);
        } else {
            h = conv2d(h, p.weight, p.bias, {s.stride, s.padding});
        }
        if (s.has_batchnorm()) h = batch_norm2d(h, p.gamma, p.beta, p.stats, mode);
        if (!s.has_activation()) continue;
        if (pre_activations) (*pre_activations)[r] = h;
        if (s.kind == LayerKind::ConvReLU || s.kind == LayerKind::ConvBNReLU) {
            h = relu(h);
        } else {
            h = leaky_relu(h, s.slope);
        }
    }
    return h;
}

std::vector<Shape> Chain::output_shapes(Index batch) const {
    Shape batched{batch};
    batched.insert(batched.end(), input_shape_.begin(), input_shape_.end());
    return infer_shapes(specs_, batched);
}

std::pair<Chain, ParamStore> build_chain(std::vector<LayerSpec> specs, Shape input_shape, std::uint64_t seed) {
    ParamStore store;
    Chain chain(std::move(specs), std::move(input_shape), store, "chain", seed);
    return {std::move(chain), std::move(store)};
}

}  // namespace dynfg::nn
