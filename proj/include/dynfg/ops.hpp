#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "dynfg/tensor.hpp"

namespace dynfg {

struct Conv2dParams {
    Index stride = 1;
    Index padding = 0;
};

/// Output extent of a strided window sweep.
Index conv_out_extent(Index in, Index kernel, Index stride, Index padding);

/// Cross-correlation of [B,Cin,H,W] with [Cout,Cin,kh,kw]. `bias` may be undefined.
Tensor conv2d(const Tensor& input, const Tensor& filters, const Tensor& bias, Conv2dParams p);

/// Like conv2d, but sample b uses filters[b] of shape [Cout,Cin,kh,kw].
/// Runs the same per-sample kernel as conv2d, so a replicated filter set
/// produces bit-identical output.
Tensor conv2d_per_sample(const Tensor& input, const Tensor& filters, const Tensor& bias, Conv2dParams p);

Tensor max_pool2d(const Tensor& input, Index kernel, Index stride);
Tensor avg_pool2d(const Tensor& input, Index kernel, Index stride);
Tensor upsample_nearest(const Tensor& input, Index factor);

enum class Mode { Train, Eval };

/// Persistent per-channel statistics of a batchnorm layer (leaf tensors).
struct RunningStats {
    Tensor mean;
    Tensor var;
    static RunningStats fresh(Index channels);
};

struct BatchNormParams {
    Real eps = Real(1e-5);
    Real momentum = Real(0.1);
};

/// Per-channel normalization of [B,C,H,W]. Train mode uses biased batch
/// statistics for normalization and folds the unbiased batch variance into
/// the running estimate; eval mode uses the running estimate.
Tensor batch_norm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta, RunningStats& stats,
                    Mode mode, BatchNormParams p = {});

Tensor relu(const Tensor& x);
Tensor leaky_relu(const Tensor& x, Real slope);
Tensor sigmoid(const Tensor& x);

/// [B,F] x [F,G] + [G], row by row. `bias` may be undefined.
Tensor linear(const Tensor& input, const Tensor& weight, const Tensor& bias);
/// [M,K] x [K,N]. With `row_block` > 0 each block of that many rows is
/// multiplied on its own, so a row's value does not depend on its position.
Tensor matmul(const Tensor& a, const Tensor& b, Index row_block = 0);
/// Batched: [B,N,M] x [B,M,P] -> [B,N,P].
Tensor bmm(const Tensor& a, const Tensor& b);

Tensor log_softmax(const Tensor& logits);

/// [B, ...] -> [B, prod(...)].
Tensor flatten(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, Real factor);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
/// Adds bias[C] to channel c of [B,C,...].
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

/// Index of the maximum entry in each row of [B,C]; first on ties.
std::vector<int> argmax_rows(const Tensor& x);

}  // namespace dynfg
