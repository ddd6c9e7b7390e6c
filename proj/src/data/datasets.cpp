#include "dynfg/data/datasets.hpp"

#include <zlib.h>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>

namespace dynfg::data {

namespace fs = std::filesystem;

namespace {

// gzread passes uncompressed files through unchanged.
std::string read_file(const fs::path& path) {
    if (!fs::exists(path)) throw MissingFileError("missing file: " + path.string());
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) throw DataError("cannot open " + path.string());
    std::string out;
    std::vector<char> buf(1 << 20);
    for (;;) {
        const int n = gzread(f, buf.data(), static_cast<unsigned>(buf.size()));
        if (n < 0) {
            int code = 0;
            const std::string msg = gzerror(f, &code);
            gzclose(f);
            throw DataError("read error in " + path.string() + ": " + msg);
        }
        if (n == 0) break;
        out.append(buf.data(), static_cast<std::size_t>(n));
    }
    gzclose(f);
    return out;
}

std::uint32_t be32(const std::string& b, std::size_t off) {
    return (std::uint32_t(std::uint8_t(b[off])) << 24) | (std::uint32_t(std::uint8_t(b[off + 1])) << 16) |
           (std::uint32_t(std::uint8_t(b[off + 2])) << 8) | std::uint32_t(std::uint8_t(b[off + 3]));
}

void put_be32(std::string& b, std::uint32_t v) {
    for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<char>((v >> s) & 0xff));
}

std::string hex(std::uint32_t v) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "0x%08x", v);
    return buf;
}

void check_header(const std::string& bytes, std::size_t header, const fs::path& path) {
    if (bytes.size() < header) {
        throw TruncatedError(path.string() + ": truncated header (" + std::to_string(bytes.size()) + " bytes, need " +
                             std::to_string(header) + ")");
    }
}

void check_magic(const std::string& bytes, std::uint32_t expected, const fs::path& path) {
    check_header(bytes, 4, path);
    const std::uint32_t found = be32(bytes, 0);
    if (found != expected) {
        throw MagicError(path.string() + ": bad magic number, expected " + hex(expected) + ", found " + hex(found));
    }
}

fs::path first_existing(const fs::path& dir, const std::string& stem) {
    for (const auto& name : {stem, stem + ".gz"}) {
        if (fs::exists(dir / name)) return dir / name;
    }
    return dir / stem;
}

}  // namespace

Tensor Dataset::images(std::span<const std::size_t> idx) const {
    const auto ss = static_cast<std::size_t>(sample_size());
    std::vector<Real> v(idx.size() * ss);
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= size()) throw std::out_of_range("dataset index " + std::to_string(idx[i]) + " out of range");
        const std::uint8_t* src = pixels.data() + idx[i] * ss;
        Real* dst = v.data() + i * ss;
        for (std::size_t j = 0; j < ss; ++j) dst[j] = static_cast<Real>(src[j]) / Real(255);
    }
    return Tensor::from_data({static_cast<Index>(idx.size()), channels, height, width}, std::move(v));
}

Tensor Dataset::images() const {
    std::vector<std::size_t> all(size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return images(all);
}

std::vector<int> Dataset::labels_at(std::span<const std::size_t> idx) const {
    std::vector<int> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(labels.at(i));
    return out;
}

Dataset load_mnist_idx(const fs::path& images_path, const fs::path& labels_path, const std::string& split) {
    const std::string ib = read_file(images_path);
    const std::string lb = read_file(labels_path);
    check_magic(ib, kIdxImageMagic, images_path);
    check_magic(lb, kIdxLabelMagic, labels_path);
    check_header(ib, 16, images_path);
    check_header(lb, 8, labels_path);

    const std::uint32_t n = be32(ib, 4), rows = be32(ib, 8), cols = be32(ib, 12);
    const std::uint32_t nl = be32(lb, 4);
    if (n != nl) {
        throw DimensionError("mnist: " + std::to_string(n) + " images but " + std::to_string(nl) + " labels");
    }
    const std::size_t need_i = 16 + std::size_t(n) * rows * cols;
    if (ib.size() < need_i) {
        throw TruncatedError(images_path.string() + ": truncated, " + std::to_string(ib.size()) + " bytes, header implies " +
                             std::to_string(need_i));
    }
    if (lb.size() < 8 + std::size_t(n)) {
        throw TruncatedError(labels_path.string() + ": truncated, " + std::to_string(lb.size()) +
                             " bytes, header implies " + std::to_string(8 + std::size_t(n)));
    }

    Dataset ds;
    ds.channels = 1;
    ds.height = rows;
    ds.width = cols;
    ds.split = split;
    ds.pixels.assign(ib.begin() + 16, ib.begin() + static_cast<std::ptrdiff_t>(need_i));
    ds.labels.resize(n);
    for (std::uint32_t i = 0; i < n; ++i) ds.labels[i] = std::uint8_t(lb[8 + i]);
    return ds;
}

Dataset load_mnist(const fs::path& dir, bool train) {
    const std::string pre = train ? "train" : "t10k";
    return load_mnist_idx(first_existing(dir, pre + "-images-idx3-ubyte"), first_existing(dir, pre + "-labels-idx1-ubyte"),
                          train ? "train" : "test");
}

std::string idx_image_bytes(const Dataset& ds) {
    if (ds.channels != 1) throw DimensionError("idx images need a single channel");
    std::string b;
    b.reserve(16 + ds.pixels.size());
    put_be32(b, kIdxImageMagic);
    put_be32(b, static_cast<std::uint32_t>(ds.size()));
    put_be32(b, static_cast<std::uint32_t>(ds.height));
    put_be32(b, static_cast<std::uint32_t>(ds.width));
    b.append(reinterpret_cast<const char*>(ds.pixels.data()), ds.pixels.size());
    return b;
}

std::string idx_label_bytes(const Dataset& ds) {
    std::string b;
    put_be32(b, kIdxLabelMagic);
    put_be32(b, static_cast<std::uint32_t>(ds.size()));
    for (int l : ds.labels) b.push_back(static_cast<char>(l));
    return b;
}

void write_idx(const Dataset& ds, const fs::path& images_path, const fs::path& labels_path) {
    for (const auto& [path, bytes] : {std::pair{images_path, idx_image_bytes(ds)}, std::pair{labels_path, idx_label_bytes(ds)}}) {
        std::ofstream out(path, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw DataError("cannot write " + path.string());
    }
}

Dataset load_cifar10_bin(const fs::path& dir, bool train) {
    fs::path root = dir;
    if (!fs::exists(root / "test_batch.bin") && fs::exists(dir / "cifar-10-batches-bin")) root = dir / "cifar-10-batches-bin";
    std::vector<fs::path> files;
    if (train) {
        for (int i = 1; i <= 5; ++i) files.push_back(root / ("data_batch_" + std::to_string(i) + ".bin"));
    } else {
        files.push_back(root / "test_batch.bin");
    }

    Dataset ds;
    ds.channels = 3;
    ds.height = 32;
    ds.width = 32;
    ds.split = train ? "train" : "test";
    constexpr std::size_t rec = 3073;
    ds.pixels.reserve(files.size() * 10000 * 3072);
    ds.labels.reserve(files.size() * 10000);
    for (const auto& f : files) {
        if (!fs::exists(f)) throw MissingFileError("cifar10: missing file " + f.string());
        const auto sz = fs::file_size(f);
        if (sz != kCifarBatchBytes) {
            throw FileSizeError("cifar10: " + f.string() + " has " + std::to_string(sz) + " bytes, expected " +
                                std::to_string(kCifarBatchBytes));
        }
        std::ifstream in(f, std::ios::binary);
        std::string bytes(sz, '\0');
        in.read(bytes.data(), static_cast<std::streamsize>(sz));
        if (!in) throw TruncatedError("cifar10: short read from " + f.string());
        for (std::size_t r = 0; r < 10000; ++r) {
            const char* p = bytes.data() + r * rec;
            ds.labels.push_back(std::uint8_t(p[0]));
            ds.pixels.insert(ds.pixels.end(), reinterpret_cast<const std::uint8_t*>(p + 1),
                             reinterpret_cast<const std::uint8_t*>(p + rec));
        }
    }
    return ds;
}

Dataset subset(const Dataset& ds, std::size_t n, std::uint64_t seed) {
    if (n == 0 || n >= ds.size()) return ds;
    std::vector<std::size_t> perm(ds.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::seed_seq ss{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 0x5eedu};
    std::mt19937_64 rng(ss);
    std::shuffle(perm.begin(), perm.end(), rng);
    perm.resize(n);

    Dataset out;
    out.channels = ds.channels;
    out.height = ds.height;
    out.width = ds.width;
    out.split = ds.split;
    const auto ssz = static_cast<std::size_t>(ds.sample_size());
    out.pixels.reserve(n * ssz);
    for (std::size_t i : perm) {
        out.pixels.insert(out.pixels.end(), ds.pixels.begin() + static_cast<std::ptrdiff_t>(i * ssz),
                          ds.pixels.begin() + static_cast<std::ptrdiff_t>((i + 1) * ssz));
        out.labels.push_back(ds.labels[i]);
    }
    return out;
}

std::vector<std::vector<std::size_t>> batches(std::size_t n, std::size_t batch_size, std::uint64_t seed,
                                              std::uint64_t epoch) {
    if (batch_size == 0) throw std::invalid_argument("batch_size must be at least 1");
    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::seed_seq ss{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                     static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32)};
    std::mt19937_64 rng(ss);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < n; i += batch_size) {
        out.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(i),
                         perm.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch_size)));
    }
    return out;
}

std::vector<std::vector<std::size_t>> batches(const Dataset& ds, std::size_t batch_size, std::uint64_t seed,
                                              std::uint64_t epoch) {
    return batches(ds.size(), batch_size, seed, epoch);
}

std::vector<std::vector<std::size_t>> sequential_batches(std::size_t n, std::size_t batch_size) {
    if (batch_size == 0) throw std::invalid_argument("batch_size must be at least 1");
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < n; i += batch_size) {
        auto& b = out.emplace_back();
        for (std::size_t j = i; j < std::min(n, i + batch_size); ++j) b.push_back(j);
    }
    return out;
}

std::vector<std::size_t> label_histogram(const Dataset& ds, int classes) {
    std::vector<std::size_t> h(static_cast<std::size_t>(classes), 0);
    for (int l : ds.labels) {
        if (l < 0 || l >= classes) throw std::out_of_range("label " + std::to_string(l) + " outside histogram");
        ++h[static_cast<std::size_t>(l)];
    }
    return h;
}

}  // namespace dynfg::data
