#include "dynfg/nn/init.hpp"

#include <Eigen/QR>
#include <cmath>
#include <random>

namespace dynfg::nn {

Tensor init_kaiming(const Shape& shape, std::uint64_t seed) {
    Index fan_in = 0;
    if (shape.size() == 4) {
        fan_in = shape[1] * shape[2] * shape[3];
    } else if (shape.size() == 2) {
        fan_in = shape[0];
    } else {
        throw ShapeError("init_kaiming: expected a conv or linear shape, got " + shape_str(shape));
    }
    const Index n = shape_numel(shape);
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<Real> values(static_cast<std::size_t>(n));
    for (auto& v : values) v = static_cast<Real>(dist(rng));
    return Tensor::from_data(shape, std::move(values));
}

Tensor init_orthogonal(Index rows, Index cols, std::uint64_t seed) {
    if (rows < 1 || cols < 1) throw ShapeError("init_orthogonal: extents must be positive");
    if (rows > cols) {
        throw ShapeError("init_orthogonal: cannot fit " + std::to_string(rows) + " orthonormal rows in dimension " +
                         std::to_string(cols));
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> dist(0.0, 1.0);
    Eigen::MatrixXd a(cols, rows);
    for (Index i = 0; i < cols; ++i)
        for (Index j = 0; j < rows; ++j) a(i, j) = dist(rng);

    Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(cols, rows);
    const Eigen::MatrixXd r = qr.matrixQR().topRows(rows).triangularView<Eigen::Upper>();
    for (Index j = 0; j < rows; ++j) {
        if (r(j, j) < 0) q.col(j) = -q.col(j);
    }
    std::vector<Real> values(static_cast<std::size_t>(rows * cols));
    for (Index i = 0; i < rows; ++i)
        for (Index k = 0; k < cols; ++k) values[i * cols + k] = static_cast<Real>(q(k, i));
    return Tensor::from_data({rows, cols}, std::move(values));
}

}  // namespace dynfg::nn
