#include "dynfg/models/architectures.hpp"

#include <stdexcept>

namespace dynfg::models::arch {

using nn::LayerKind;

namespace {

LayerSpec cbl(Index in, Index out, Index k, Index s, Index p) {
    return LayerSpec::conv(LayerKind::ConvBNLReLU, in, out, k, s, p);
}

LayerSpec cbr(Index in, Index out, Index s) { return LayerSpec::conv(LayerKind::ConvBNReLU, in, out, 3, s, 1); }

}  // namespace

std::vector<LayerSpec> mnist_classifier() {
    return {
        LayerSpec::conv(LayerKind::ConvReLU, 1, 5, 5, 1, 0),
        LayerSpec::max_pool(2, 2),
        LayerSpec::conv(LayerKind::ConvReLU, 5, 5, 5, 1, 0),
        LayerSpec::max_pool(2, 2),
        LayerSpec::linear(4 * 4 * 5, 10),
    };
}

std::vector<LayerSpec> mnist_encoder(Index width) {
    return {cbl(1, width, 5, 1, 2), cbl(width, width, 5, 2, 2)};
}

std::vector<LayerSpec> mnist_decoder(Index width) {
    return {LayerSpec::upsample(2), LayerSpec::conv(LayerKind::Conv, width, 1, 5, 1, 2)};
}

std::vector<LayerSpec> mnist_reducer(int tap, Index width) {
    if (tap < 0 || tap > 1) throw std::out_of_range("mnist_reducer: tap must be 0 or 1");
    std::vector<LayerSpec> rows;
    rows.push_back(tap == 0 ? cbl(width, width, 4, 4, 0) : cbl(width, width, 2, 2, 0));  // -> 7x7
    rows.push_back(cbl(width, width, 3, 3, 1));                                           // -> 3x3
    rows.push_back(cbl(width, width, 3, 1, 0));                                           // -> 1x1
    rows.push_back(LayerSpec::linear(width, width, true));
    return rows;
}

std::vector<LayerSpec> cifar_classifier() {
    return {cbr(3, 64, 1), cbr(64, 128, 2), cbr(128, 256, 2), cbr(256, 256, 2), LayerSpec::avg_pool(4, 1),
            LayerSpec::linear(256, 10)};
}

std::vector<LayerSpec> cifar_encoder() { return {cbr(3, 64, 1), cbr(64, 96, 2), cbr(96, 128, 2), cbr(128, 128, 2)}; }

std::vector<LayerSpec> cifar_decoder() {
    return {LayerSpec::upsample(2), cbr(128, 128, 1), LayerSpec::upsample(2), cbr(128, 96, 1),
            LayerSpec::upsample(2), cbr(96, 96, 1), LayerSpec::conv(LayerKind::Conv, 96, 3, 3, 1, 1)};
}

std::vector<LayerSpec> cifar_reducer(int tap) {
    switch (tap) {
        case 0:  // 32x32x64
            return {cbl(64, 64, 4, 4, 0), cbl(64, 64, 4, 4, 0), cbl(64, 64, 2, 1, 0), LayerSpec::linear(64, 64, true)};
        case 1:  // 16x16x96
            return {cbl(96, 96, 4, 4, 0), cbl(96, 96, 4, 1, 0), LayerSpec::linear(96, 96, true)};
        case 2:  // 8x8x128
            return {cbl(128, 128, 4, 4, 0), cbl(128, 128, 2, 1, 0), LayerSpec::linear(128, 128, true)};
        case 3:  // 4x4x128
            return {cbl(128, 128, 4, 1, 0), LayerSpec::linear(128, 128, true)};
        default: throw std::out_of_range("cifar_reducer: tap must be in 0..3");
    }
}

}  // namespace dynfg::models::arch
