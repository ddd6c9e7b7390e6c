#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dynfg/fg/filter_generation.hpp"
#include "dynfg/models/dyn_model.hpp"
#include "dynfg/nn/optimizer.hpp"

namespace dynfg::experiment {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using KeyValues = std::map<std::string, std::string>;

/// Flat key=value run description. Keys not given take dataset-dependent
/// defaults: MNIST trains 20 epochs on all data with the generate path,
/// CIFAR-10 trains 10 epochs on a 10000/2000 subset with the factored path
/// unless full_scale is set.
struct ExperimentConfig {
    models::DatasetKind dataset = models::DatasetKind::Mnist;
    models::ModelMode mode = models::ModelMode::FilterGeneration;
    Index n_enc = 20;
    Index repo_size = 5;  // 0 = "default"
    int epochs = 20;
    std::size_t batch_size = 64;
    double lr = 1e-3;
    nn::OptimizerKind optimizer = nn::OptimizerKind::Adam;
    double momentum = 0.9;
    std::uint64_t seed = 1;
    std::size_t subset = 0;  // 0 = all
    std::size_t test_subset = 0;
    std::string out = "runs/default";
    std::string data_dir = "data";
    double rec_weight = 1.0;
    fg::DynConvImpl dynconv = fg::DynConvImpl::Generate;
    int warmup_epochs = 0;  // reconstruction-only epochs before joint training
    bool full_scale = false;

    static const std::vector<std::string>& keys();
    static ExperimentConfig defaults(models::DatasetKind dataset);

    /// Unknown keys and malformed values raise ConfigError.
    static ExperimentConfig from_pairs(const KeyValues& kv);
    static ExperimentConfig parse(const std::string& text);
    static ExperimentConfig load(const std::filesystem::path& path);

    /// Every key, one `key=value` per line in `keys()` order.
    std::string serialize() const;
    KeyValues to_pairs() const;
    std::uint64_t hash() const;

    models::ModelConfig model_config() const;
    nn::OptimizerConfig optimizer_config() const;

    bool operator==(const ExperimentConfig&) const = default;
};

/// Parses `key=value` lines; '#' starts a comment, blank lines are skipped.
KeyValues parse_key_values(const std::string& text);

}  // namespace dynfg::experiment
