#include <fstream>
#include <numeric>
#include <set>

#include "dynfg/data/datasets.hpp"
#include "helpers.hpp"

using namespace dynfg;
using namespace dynfg::data;
namespace fs = std::filesystem;

namespace {

Dataset tiny_dataset(std::size_t n) {
    Dataset ds;
    ds.channels = 1;
    ds.height = 2;
    ds.width = 3;
    for (std::size_t i = 0; i < n; ++i) {
        for (int p = 0; p < 6; ++p) ds.pixels.push_back(static_cast<std::uint8_t>((i * 7 + p * 40) % 256));
        ds.labels.push_back(static_cast<std::uint8_t>(i % 10));
    }
    return ds;
}

void write_bytes(const fs::path& p, const std::string& bytes) { std::ofstream(p, std::ios::binary) << bytes; }

}  // namespace

TEST(Idx, RoundTripAndScaling) {
    Dataset ds = tiny_dataset(5);
    ds.pixels[0] = 255;
    ds.pixels[1] = 0;
    const auto dir = test::scratch("idx");
    write_idx(ds, dir / "img", dir / "lab");
    const Dataset back = load_mnist_idx(dir / "img", dir / "lab");
    EXPECT_EQ(back.pixels, ds.pixels);
    EXPECT_EQ(back.labels, ds.labels);
    EXPECT_EQ(idx_image_bytes(back), idx_image_bytes(ds));
    const std::vector<std::size_t> first{0};
    const Tensor t = back.images(first);
    EXPECT_EQ(t.shape(), (Shape{1, 1, 2, 3}));
    EXPECT_EQ(t.data()[0], Real(1));
    EXPECT_EQ(t.data()[1], Real(0));
}

TEST(Idx, ErrorsAreDistinct) {
    const Dataset ds = tiny_dataset(4);
    const auto dir = test::scratch("idx_err");
    const std::string img = idx_image_bytes(ds), lab = idx_label_bytes(ds);
    write_bytes(dir / "lab", lab);

    std::string bad = img;
    bad[3] = 0x01;
    write_bytes(dir / "magic", bad);
    try {
        load_mnist_idx(dir / "magic", dir / "lab");
        FAIL();
    } catch (const MagicError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("0x00000803"), std::string::npos) << msg;
        EXPECT_NE(msg.find("0x00000801"), std::string::npos) << msg;
    }
    write_bytes(dir / "trunc", img.substr(0, img.size() - 3));
    EXPECT_THROW(load_mnist_idx(dir / "trunc", dir / "lab"), TruncatedError);
    write_bytes(dir / "short_header", img.substr(0, 10));
    EXPECT_THROW(load_mnist_idx(dir / "short_header", dir / "lab"), TruncatedError);
    write_bytes(dir / "img", img);
    write_bytes(dir / "lab3", idx_label_bytes(tiny_dataset(3)));
    EXPECT_THROW(load_mnist_idx(dir / "img", dir / "lab3"), DimensionError);
    EXPECT_THROW(load_mnist_idx(dir / "nope", dir / "lab"), DataError);
}

TEST(Batches, FullBatchIsPermutation) {
    const auto b = batches(10, 10, 1, 0);
    ASSERT_EQ(b.size(), 1u);
    std::vector<std::size_t> sorted = b[0];
    std::sort(sorted.begin(), sorted.end());
    std::vector<std::size_t> all(10);
    std::iota(all.begin(), all.end(), 0);
    EXPECT_EQ(sorted, all);
}

TEST(Batches, SeededAndCovering) {
    EXPECT_EQ(batches(103, 16, 5, 2), batches(103, 16, 5, 2));
    EXPECT_NE(batches(103, 16, 5, 2), batches(103, 16, 5, 3));
    const auto b = batches(103, 16, 5, 2);
    EXPECT_EQ(b.size(), 7u);
    EXPECT_EQ(b.back().size(), 7u);
    std::set<std::size_t> seen;
    for (const auto& batch : b) seen.insert(batch.begin(), batch.end());
    EXPECT_EQ(seen.size(), 103u);
    EXPECT_THROW(batches(10, 0, 1, 0), std::invalid_argument);
}

TEST(Subset, SeededPrefix) {
    const Dataset ds = tiny_dataset(50);
    const Dataset a = subset(ds, 20, 3), b = subset(ds, 20, 3);
    EXPECT_EQ(a.size(), 20u);
    EXPECT_EQ(a.pixels, b.pixels);
    EXPECT_EQ(subset(ds, 0, 3).pixels, ds.pixels);
    EXPECT_EQ(subset(ds, 80, 3).labels, ds.labels);
}

TEST(Mnist, OfficialFiles) {
    if (!test::have_mnist()) GTEST_SKIP() << "MNIST not found under " << test::data_dir();
    const Dataset train = load_mnist(test::data_dir() / "mnist", true);
    const Dataset testset = load_mnist(test::data_dir() / "mnist", false);
    EXPECT_EQ(train.size(), 60000u);
    EXPECT_EQ(testset.size(), 10000u);
    EXPECT_EQ(train.sample_shape(), (Shape{1, 28, 28}));
    const auto hist = label_histogram(testset);
    EXPECT_EQ(std::accumulate(hist.begin(), hist.end(), std::size_t{0}), 10000u);
    for (auto h : hist) {
        EXPECT_GE(h, 892u);
        EXPECT_LE(h, 1135u);
    }
}

TEST(Cifar, OfficialFiles) {
    if (!test::have_cifar()) GTEST_SKIP() << "CIFAR-10 not found under " << test::data_dir();
    const Dataset train = load_cifar10_bin(test::data_dir(), true);
    EXPECT_EQ(train.size(), 50000u);
    EXPECT_EQ(train.sample_shape(), (Shape{3, 32, 32}));
    EXPECT_EQ(load_cifar10_bin(test::data_dir(), false).size(), 10000u);
}

TEST(Cifar, SyntheticBatchesAndErrors) {
    const auto dir = test::scratch("cifar");
    std::string record(3073, '\0');
    record[0] = 7;
    record[1] = static_cast<char>(128);
    std::string batch;
    for (int i = 0; i < 10000; ++i) batch += record;
    write_bytes(dir / "test_batch.bin", batch);
    const Dataset ds = load_cifar10_bin(dir, false);
    EXPECT_EQ(ds.labels[0], 7);
    const std::vector<std::size_t> first{0};
    EXPECT_NEAR(ds.images(first).data()[0], 0.50196, 1e-5);
    EXPECT_THROW(load_cifar10_bin(dir, true), MissingFileError);
    write_bytes(dir / "test_batch.bin", batch.substr(0, 3073 * 5));
    EXPECT_THROW(load_cifar10_bin(dir, false), FileSizeError);
}
