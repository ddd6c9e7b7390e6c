#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dynfg/tensor.hpp"

namespace dynfg::data {

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class MagicError : public DataError {
public:
    using DataError::DataError;
};

class TruncatedError : public DataError {
public:
    using DataError::DataError;
};

class DimensionError : public DataError {
public:
    using DataError::DataError;
};

class FileSizeError : public DataError {
public:
    using DataError::DataError;
};

class MissingFileError : public DataError {
public:
    using DataError::DataError;
};

/// Images are kept as the raw bytes of the source files; `images(...)`
/// produces values byte/255.
struct Dataset {
    std::vector<std::uint8_t> pixels;  // [n, C, H, W]
    std::vector<int> labels;
    Index channels = 0;
    Index height = 0;
    Index width = 0;
    std::string split;

    std::size_t size() const { return labels.size(); }
    Index sample_size() const { return channels * height * width; }
    Shape sample_shape() const { return {channels, height, width}; }

    /// Tensor [idx.size(), C, H, W] in [0,1].
    Tensor images(std::span<const std::size_t> idx) const;
    Tensor images() const;
    std::vector<int> labels_at(std::span<const std::size_t> idx) const;
};

constexpr std::uint32_t kIdxImageMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelMagic = 0x00000801;
constexpr std::uintmax_t kCifarBatchBytes = 10000u * 3073u;

/// Gzip-compressed files are read transparently.
Dataset load_mnist_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path,
                       const std::string& split = "");

/// Looks for train-images-idx3-ubyte[.gz] and the matching label file (or
/// t10k-* for the test split) in `dir`.
Dataset load_mnist(const std::filesystem::path& dir, bool train);

/// Uncompressed IDX bytes of the images and labels of `ds`.
std::string idx_image_bytes(const Dataset& ds);
std::string idx_label_bytes(const Dataset& ds);
void write_idx(const Dataset& ds, const std::filesystem::path& images_path, const std::filesystem::path& labels_path);

/// `dir` holds data_batch_1..5.bin and test_batch.bin, directly or in a
/// cifar-10-batches-bin subdirectory.
Dataset load_cifar10_bin(const std::filesystem::path& dir, bool train);

/// Keeps `n` samples: a prefix of the permutation keyed by `seed`.
/// n == 0 or n >= size keeps everything in original order.
Dataset subset(const Dataset& ds, std::size_t n, std::uint64_t seed);

/// Index batches of one epoch; the permutation depends only on (seed,
/// epoch) and the final partial batch is included.
std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                              std::uint64_t epoch);
std::vector<std::vector<std::size_t>> batches(const Dataset& ds, std::size_t batch_size, std::uint64_t seed,
                                              std::uint64_t epoch);

/// Consecutive batches in dataset order.
std::vector<std::vector<std::size_t>> sequential_batches(std::size_t n, std::size_t batch_size);

std::vector<std::size_t> label_histogram(const Dataset& ds, int classes = 10);

}  // namespace dynfg::data
