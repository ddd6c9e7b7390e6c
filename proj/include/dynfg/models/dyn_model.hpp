#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dynfg/fg/filter_generation.hpp"
#include "dynfg/models/losses.hpp"
#include "dynfg/nn/chain.hpp"

namespace dynfg::models {

enum class DatasetKind { Mnist, Cifar10 };

const char* dataset_name(DatasetKind d);
DatasetKind parse_dataset(const std::string& s);
const char* mode_name(ModelMode m);
ModelMode parse_mode(const std::string& s);

struct ModelConfig {
    DatasetKind dataset = DatasetKind::Mnist;
    ModelMode mode = ModelMode::FilterGeneration;
    Index n_enc = 20;     // encoder width; MNIST only, CIFAR-10 widths are fixed
    Index repo_size = 0;  // 0: min(N, L_k) per dynamic layer
    fg::DynConvImpl impl = fg::DynConvImpl::Generate;
    std::uint64_t seed = 0;
};

struct ForwardResult {
    Tensor reconstruction;  // undefined in baseline mode
    Tensor logits;
    std::vector<Tensor> taps;          // encoder pre-activations feeding the reducers
    std::vector<Tensor> features;      // [B, L_f] per dynamic layer
    std::vector<Tensor> coefficients;  // [B, N, M]
    std::vector<Tensor> filters;       // [B, N, Cin, k, k] (generate path only)
    std::vector<Tensor> feature_maps;  // dynamic convolution outputs [B, N, H', W']
};

/// Autoencoder + dimension-reduction networks + filter generators feeding a
/// classifier, or the classifier alone in baseline mode. Encoder layer i
/// feeds dynamic layer i.
class DynModel {
public:
    explicit DynModel(const ModelConfig& cfg);

    DynModel(const DynModel&) = delete;
    DynModel& operator=(const DynModel&) = delete;

    /// Baseline mode yields logits only.
    ForwardResult forward(const Tensor& images, Mode mode) const;

    /// Filters are generated from `generator_images` (defaults to `images`)
    /// and applied to `images`.
    ForwardResult forward_fg(const Tensor& images, Mode mode, const Tensor& generator_images = Tensor()) const;
    Tensor forward_baseline(const Tensor& images, Mode mode) const;

    const ModelConfig& config() const { return cfg_; }
    nn::ParamStore& params() { return store_; }
    const nn::ParamStore& params() const { return store_; }

    Shape image_shape() const;  // [C,H,W]
    std::size_t dynamic_layer_count() const { return dyn_.size(); }
    const fg::DynConvLayer& dynamic_layer(std::size_t i) const { return dyn_.at(i); }
    /// Classifier row whose convolution dynamic layer `i` supplies.
    std::size_t dynamic_row(std::size_t i) const { return dyn_rows_.at(i); }

    const nn::Chain& encoder() const { return encoder_; }
    const nn::Chain& decoder() const { return decoder_; }
    const std::vector<nn::Chain>& reducers() const { return reducers_; }
    const nn::Chain& classifier() const { return classifier_; }

    /// Text description of every chain and dynamic layer with output sizes.
    std::string architecture() const;

private:
    ModelConfig cfg_;
    nn::ParamStore store_;
    nn::Chain encoder_;
    nn::Chain decoder_;
    std::vector<nn::Chain> reducers_;
    std::vector<fg::DynConvLayer> dyn_;
    std::vector<std::size_t> dyn_rows_;  // classifier row of each dynamic layer
    nn::Chain classifier_;
};

}  // namespace dynfg::models
