#pragma once

#include <filesystem>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dynfg/tensor.hpp"

namespace dynfg::nn {

/// Named trainable parameters and persistent buffers, iterated in
/// registration order.
///
/// Handles returned by the store alias the stored tensors, so layers keep
/// their own copies and `load` overwrites values in place.
class ParamStore {
public:
    using Entry = std::pair<std::string, Tensor>;

    Tensor add_parameter(const std::string& name, Tensor value);
    Tensor add_buffer(const std::string& name, Tensor value);

    Tensor parameter(const std::string& name) const;
    Tensor buffer(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    const std::vector<Entry>& parameters() const { return params_; }
    const std::vector<Entry>& buffers() const { return buffers_; }

    Index parameter_count() const;
    /// Sum of parameter counts whose name starts with `prefix`.
    Index parameter_count(const std::string& prefix) const;

    void zero_grad();
    void clear_grad();

    /// Checkpoint container: magic "DYNFGCKP", u32 version, u32 count, then
    /// per tensor: u8 kind (0 parameter, 1 buffer), u16 name length, name,
    /// u8 dtype (4 = f32, 8 = f64), u8 rank, rank x i64 extents, raw
    /// little-endian values.
    std::string serialize() const;
    /// Requires the same names, kinds and shapes as the stored tensors.
    void deserialize(const std::string& bytes);

    void save(const std::filesystem::path& path) const;
    void load(const std::filesystem::path& path);

private:
    Tensor add(const std::string& name, Tensor value, bool parameter);

    std::vector<Entry> params_;
    std::vector<Entry> buffers_;
    std::unordered_map<std::string, std::pair<bool, std::size_t>> index_;
};

/// Raised when a checkpoint does not describe the model it is loaded into.
class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace dynfg::nn
