#include "dynfg/models/dyn_model.hpp"

#include <algorithm>
#include <set>
#include <sstream>

#include "dynfg/models/architectures.hpp"

namespace dynfg::models {

const char* dataset_name(DatasetKind d) { return d == DatasetKind::Mnist ? "mnist" : "cifar10"; }

DatasetKind parse_dataset(const std::string& s) {
    if (s == "mnist") return DatasetKind::Mnist;
    if (s == "cifar10") return DatasetKind::Cifar10;
    throw std::invalid_argument("unknown dataset '" + s + "' (expected mnist or cifar10)");
}

const char* mode_name(ModelMode m) { return m == ModelMode::Baseline ? "baseline" : "fg"; }

ModelMode parse_mode(const std::string& s) {
    if (s == "baseline") return ModelMode::Baseline;
    if (s == "fg") return ModelMode::FilterGeneration;
    throw std::invalid_argument("unknown mode '" + s + "' (expected baseline or fg)");
}

DynModel::DynModel(const ModelConfig& cfg) : cfg_(cfg) {
    const bool mnist = cfg.dataset == DatasetKind::Mnist;
    if (mnist && cfg.n_enc < 1) throw std::invalid_argument("n_enc must be positive");
    const Shape img = image_shape();
    auto cls_specs = mnist ? arch::mnist_classifier() : arch::cifar_classifier();

    std::set<std::size_t> conv_rows;
    for (std::size_t r = 0; r < cls_specs.size(); ++r) {
        if (cls_specs[r].is_conv()) conv_rows.insert(r);
    }

    if (cfg.mode == ModelMode::FilterGeneration) {
        auto enc = mnist ? arch::mnist_encoder(cfg.n_enc) : arch::cifar_encoder();
        auto dec = mnist ? arch::mnist_decoder(cfg.n_enc) : arch::cifar_decoder();
        if (enc.size() != conv_rows.size()) throw std::logic_error("encoder depth must match classifier conv depth");
        encoder_ = nn::Chain(enc, img, store_, "ae.enc", cfg.seed);
        const auto enc_shapes = encoder_.output_shapes();
        const Shape code{enc_shapes.back()[1], enc_shapes.back()[2], enc_shapes.back()[3]};
        decoder_ = nn::Chain(dec, code, store_, "ae.dec", cfg.seed);

        for (std::size_t t = 0; t < enc.size(); ++t) {
            auto specs = mnist ? arch::mnist_reducer(static_cast<int>(t), cfg.n_enc)
                               : arch::cifar_reducer(static_cast<int>(t));
            const Shape tap{enc_shapes[t][1], enc_shapes[t][2], enc_shapes[t][3]};
            reducers_.emplace_back(specs, tap, store_, "reducer" + std::to_string(t + 1), cfg.seed);
        }

        std::size_t k = 0;
        for (std::size_t row : conv_rows) {
            const auto& s = cls_specs[row];
            const fg::FilterShape shape{s.out_channels, s.in_channels, s.kernel};
            const Index feat = reducers_[k].specs().back().out_channels;
            const Index m = cfg.repo_size > 0 ? cfg.repo_size : std::min(shape.count, shape.length());
            dyn_.emplace_back(store_, "dyn" + std::to_string(k + 1), shape, feat, m,
                              Conv2dParams{s.stride, s.padding}, cfg.seed);
            dyn_rows_.push_back(row);
            ++k;
        }
        classifier_ = nn::Chain(cls_specs, img, store_, "cls", cfg.seed, conv_rows);
    } else {
        classifier_ = nn::Chain(cls_specs, img, store_, "cls", cfg.seed);
    }
}

Shape DynModel::image_shape() const {
    return cfg_.dataset == DatasetKind::Mnist ? Shape{1, 28, 28} : Shape{3, 32, 32};
}

ForwardResult DynModel::forward(const Tensor& images, Mode mode) const {
    if (cfg_.mode == ModelMode::Baseline) {
        ForwardResult r;
        r.logits = forward_baseline(images, mode);
        return r;
    }
    return forward_fg(images, mode);
}

ForwardResult DynModel::forward_fg(const Tensor& images, Mode mode, const Tensor& generator_images) const {
    if (cfg_.mode != ModelMode::FilterGeneration) throw std::logic_error("forward_fg: model is in baseline mode");
    const Tensor& source = generator_images.defined() ? generator_images : images;
    if (source.shape() != images.shape()) {
        throw ShapeError("forward_fg: generator images " + shape_str(source.shape()) + " vs images " +
                         shape_str(images.shape()));
    }
    ForwardResult r;
    std::vector<Tensor> pre;
    const Tensor code = encoder_.forward(source, mode, nullptr, &pre);
    r.reconstruction = sigmoid(decoder_.forward(code, mode));
    for (std::size_t t = 0; t < reducers_.size(); ++t) {
        r.taps.push_back(pre[t]);
        r.features.push_back(reducers_[t].forward(pre[t], mode));
    }

    r.coefficients.resize(dyn_.size());
    r.filters.resize(dyn_.size());
    r.feature_maps.resize(dyn_.size());
    const nn::ConvProvider provider = [&](std::size_t row, const Tensor& input) {
        const auto it = std::find(dyn_rows_.begin(), dyn_rows_.end(), row);
        const auto k = static_cast<std::size_t>(it - dyn_rows_.begin());
        fg::DynConvOutput out = dyn_[k].forward(input, r.features[k], cfg_.impl);
        r.coefficients[k] = out.coefficients;
        r.filters[k] = out.filters;
        r.feature_maps[k] = out.output;
        return out.output;
    };
    r.logits = classifier_.forward(images, mode, &provider);
    return r;
}

Tensor DynModel::forward_baseline(const Tensor& images, Mode mode) const {
    if (cfg_.mode != ModelMode::Baseline) throw std::logic_error("forward_baseline: model is in fg mode");
    return classifier_.forward(images, mode);
}

namespace {

void describe_chain(std::ostringstream& os, const std::string& name, const nn::Chain& chain) {
    os << "chain " << name << " input " << nn::format_output_size(Shape{1, chain.input_shape()[0],
                                                                       chain.input_shape()[1], chain.input_shape()[2]})
       << '\n';
    const auto shapes = chain.output_shapes();
    for (std::size_t r = 0; r < chain.specs().size(); ++r) {
        os << "  " << r << ' ' << chain.specs()[r].describe() << " -> " << nn::format_output_size(shapes[r]) << '\n';
    }
}

}  // namespace

std::string DynModel::architecture() const {
    std::ostringstream os;
    if (cfg_.mode == ModelMode::FilterGeneration) {
        describe_chain(os, "ae.enc", encoder_);
        describe_chain(os, "ae.dec", decoder_);
        for (std::size_t t = 0; t < reducers_.size(); ++t) describe_chain(os, "reducer" + std::to_string(t + 1), reducers_[t]);
        for (std::size_t k = 0; k < dyn_.size(); ++k) {
            const auto& d = dyn_[k];
            const auto& t = d.repository().target;
            os << "dynamic dyn" << k + 1 << " row " << dyn_rows_[k] << " N=" << t.count << " Cin=" << t.in_channels
               << " k=" << t.kernel << " M=" << d.repo_size() << " L_k=" << t.length()
               << " L_f=" << d.coefficient_map().feature_length() << '\n';
        }
    }
    describe_chain(os, "cls", classifier_);
    os << "parameters " << store_.parameter_count() << '\n';
    return os.str();
}

}  // namespace dynfg::models
