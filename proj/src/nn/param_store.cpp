#include "dynfg/nn/param_store.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace dynfg::nn {

namespace {

constexpr char kMagic[8] = {'D', 'Y', 'N', 'F', 'G', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <class T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

class Reader {
public:
    explicit Reader(const std::string& s) : s_(s) {}

    template <class T>
    T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, s_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    std::string bytes(std::size_t n) {
        need(n);
        std::string r = s_.substr(pos_, n);
        pos_ += n;
        return r;
    }

    bool done() const { return pos_ == s_.size(); }

private:
    void need(std::size_t n) const {
        if (pos_ + n > s_.size()) throw CheckpointError("checkpoint truncated at byte " + std::to_string(pos_));
    }
    const std::string& s_;
    std::size_t pos_ = 0;
};

void write_entry(std::string& out, const std::string& name, const Tensor& t, std::uint8_t kind) {
    put<std::uint8_t>(out, kind);
    put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    put<std::uint8_t>(out, static_cast<std::uint8_t>(sizeof(Real)));
    put<std::uint8_t>(out, static_cast<std::uint8_t>(t.ndim()));
    for (Index e : t.shape()) put<std::int64_t>(out, e);
    for (Real v : t.data()) put<Real>(out, v);
}

}  // namespace

Tensor ParamStore::add(const std::string& name, Tensor value, bool parameter) {
    if (index_.count(name)) throw std::invalid_argument("duplicate tensor name '" + name + "'");
    auto& list = parameter ? params_ : buffers_;
    index_[name] = {parameter, list.size()};
    list.emplace_back(name, value);
    return value;
}

Tensor ParamStore::add_parameter(const std::string& name, Tensor value) {
    value.set_requires_grad(true);
    return add(name, std::move(value), true);
}

Tensor ParamStore::add_buffer(const std::string& name, Tensor value) { return add(name, std::move(value), false); }

Tensor ParamStore::parameter(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end() || !it->second.first) throw std::out_of_range("no parameter named '" + name + "'");
    return params_[it->second.second].second;
}

Tensor ParamStore::buffer(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end() || it->second.first) throw std::out_of_range("no buffer named '" + name + "'");
    return buffers_[it->second.second].second;
}

Index ParamStore::parameter_count() const { return parameter_count(""); }

Index ParamStore::parameter_count(const std::string& prefix) const {
    Index n = 0;
    for (const auto& [name, t] : params_) {
        if (name.compare(0, prefix.size(), prefix) == 0) n += t.numel();
    }
    return n;
}

void ParamStore::zero_grad() {
    for (auto& [name, t] : params_) t.zero_grad();
}

void ParamStore::clear_grad() {
    for (auto& [name, t] : params_) t.clear_grad();
}

std::string ParamStore::serialize() const {
    std::string out(kMagic, sizeof(kMagic));
    put<std::uint32_t>(out, kVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(params_.size() + buffers_.size()));
    for (const auto& [name, t] : params_) write_entry(out, name, t, 0);
    for (const auto& [name, t] : buffers_) write_entry(out, name, t, 1);
    return out;
}

void ParamStore::deserialize(const std::string& bytes) {
    Reader in(bytes);
    if (in.bytes(sizeof(kMagic)) != std::string(kMagic, sizeof(kMagic))) {
        throw CheckpointError("not a checkpoint (bad magic)");
    }
    const auto version = in.get<std::uint32_t>();
    if (version != kVersion) throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    const auto count = in.get<std::uint32_t>();
    if (count != params_.size() + buffers_.size()) {
        throw CheckpointError("checkpoint holds " + std::to_string(count) + " tensors, model has " +
                              std::to_string(params_.size() + buffers_.size()));
    }
    for (std::uint32_t k = 0; k < count; ++k) {
        const auto kind = in.get<std::uint8_t>();
        const auto name_len = in.get<std::uint16_t>();
        const std::string name = in.bytes(name_len);
        const auto dtype = in.get<std::uint8_t>();
        const auto rank = in.get<std::uint8_t>();
        Shape shape(rank);
        for (auto& e : shape) e = in.get<std::int64_t>();

        auto it = index_.find(name);
        if (it == index_.end()) throw CheckpointError("checkpoint tensor '" + name + "' is not part of the model");
        if (it->second.first != (kind == 0)) throw CheckpointError("tensor '" + name + "' changed kind");
        Tensor t = (it->second.first ? params_ : buffers_)[it->second.second].second;
        if (t.shape() != shape) {
            throw CheckpointError("tensor '" + name + "' has shape " + shape_str(shape) + " in the checkpoint but " +
                                  shape_str(t.shape()) + " in the model");
        }
        auto dst = t.mutable_data();
        if (dtype == 8) {
            for (auto& v : dst) v = static_cast<Real>(in.get<double>());
        } else if (dtype == 4) {
            for (auto& v : dst) v = static_cast<Real>(in.get<float>());
        } else {
            throw CheckpointError("tensor '" + name + "' has unknown dtype " + std::to_string(dtype));
        }
    }
    if (!in.done()) throw CheckpointError("trailing bytes after the last tensor");
}

void ParamStore::save(const std::filesystem::path& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot write " + path.string());
    const std::string bytes = serialize();
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void ParamStore::load(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot read " + path.string());
    const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    deserialize(bytes);
}

}  // namespace dynfg::nn
