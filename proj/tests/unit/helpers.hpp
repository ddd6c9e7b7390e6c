#pragma once

#include <gtest/gtest.h>

#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "dynfg/ops.hpp"
#include "dynfg/tensor.hpp"

namespace dynfg::test {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1, double hi = 1, bool grad = false) {
    std::mt19937_64 gen(seed);
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<Real> v(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& x : v) x = static_cast<Real>(d(gen));
    Tensor t = Tensor::from_data(std::move(shape), std::move(v));
    t.set_requires_grad(grad);
    return t;
}

inline std::vector<Real> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    EXPECT_EQ(a.shape(), b.shape());
    double m = 0;
    for (Index i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(double(a.data()[i]) - double(b.data()[i])));
    return m;
}

inline std::filesystem::path data_dir() { return DYNFG_TEST_DATA_DIR; }

inline bool have_mnist() {
    return std::filesystem::exists(data_dir() / "mnist" / "train-images-idx3-ubyte") ||
           std::filesystem::exists(data_dir() / "mnist" / "train-images-idx3-ubyte.gz");
}

inline bool have_cifar() { return std::filesystem::exists(data_dir() / "cifar-10-batches-bin" / "data_batch_1.bin"); }

inline std::filesystem::path scratch(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("dynfg_unit_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace dynfg::test
