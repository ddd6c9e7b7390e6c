#pragma once

#include <cstdint>

#include "dynfg/tensor.hpp"

namespace dynfg::nn {

/// Fan-in scaled uniform init, U(-sqrt(6/fan_in), sqrt(6/fan_in)), so the
/// variance is 2/fan_in. Rank-4 shapes are conv filters [Cout,Cin,kh,kw]
/// (fan_in = Cin*kh*kw); rank-2 shapes are linear weights [F,G] (fan_in = F).
Tensor init_kaiming(const Shape& shape, std::uint64_t seed);

/// M x L matrix with orthonormal rows, M <= L. Computed from the thin QR
/// factorization of a seeded standard-normal L x M matrix with the signs
/// fixed so that diag(R) > 0.
Tensor init_orthogonal(Index rows, Index cols, std::uint64_t seed);

}  // namespace dynfg::nn
