#pragma once

#include <vector>

#include "dynfg/nn/layer_spec.hpp"

// Layer tables for the MNIST and CIFAR-10 networks. Every 3x3 convolution
// of the CIFAR-10 tables uses padding 1, which is what their output sizes
// require.
namespace dynfg::models::arch {

using nn::LayerSpec;

// MNIST, 1x28x28 inputs.
std::vector<LayerSpec> mnist_classifier();
std::vector<LayerSpec> mnist_encoder(Index width);
std::vector<LayerSpec> mnist_decoder(Index width);
/// Reducer for encoder layer `tap` (0 or 1).
std::vector<LayerSpec> mnist_reducer(int tap, Index width);

// CIFAR-10, 3x32x32 inputs.
std::vector<LayerSpec> cifar_classifier();
std::vector<LayerSpec> cifar_encoder();
std::vector<LayerSpec> cifar_decoder();
/// Reducer for encoder layer `tap` (0..3).
std::vector<LayerSpec> cifar_reducer(int tap);

}  // namespace dynfg::models::arch
