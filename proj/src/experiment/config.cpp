#include "dynfg/experiment/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "dynfg/hash.hpp"

namespace dynfg::experiment {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
    T out{};
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size()) {
        throw ConfigError("config key '" + key + "': cannot parse '" + v + "' as a number");
    }
    return out;
}

double parse_real(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    double out = 0;
    try {
        out = std::stod(v, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos == 0 || pos != v.size()) throw ConfigError("config key '" + key + "': cannot parse '" + v + "' as a number");
    return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError("config key '" + key + "': expected true or false, got '" + v + "'");
}

// Shortest %g form that parses back to the same double.
std::string fmt_real(double v) {
    char buf[64];
    for (int prec = 1; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof buf, "%.*g", prec, v);
        if (std::stod(buf) == v) break;
    }
    return buf;
}

}  // namespace

KeyValues parse_key_values(const std::string& text) {
    KeyValues kv;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value, got '" + line + "'");
        }
        const std::string key = trim(line.substr(0, eq));
        if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
        if (kv.count(key)) throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
        kv[key] = trim(line.substr(eq + 1));
    }
    return kv;
}

const std::vector<std::string>& ExperimentConfig::keys() {
    static const std::vector<std::string> k = {
        "dataset", "mode",   "n_enc",    "repo_size", "epochs",     "batch_size",    "lr",         "optimizer",
        "momentum", "seed",  "subset",   "test_subset", "out",      "data_dir",      "rec_weight", "dynconv",
        "warmup_epochs", "full_scale"};
    return k;
}

ExperimentConfig ExperimentConfig::defaults(models::DatasetKind dataset) {
    ExperimentConfig c;
    c.dataset = dataset;
    if (dataset == models::DatasetKind::Cifar10) {
        c.epochs = 10;
        c.subset = 10000;
        c.test_subset = 2000;
        c.repo_size = 0;
        c.dynconv = fg::DynConvImpl::Factored;
    }
    return c;
}

ExperimentConfig ExperimentConfig::from_pairs(const KeyValues& kv) {
    const auto& known = keys();
    for (const auto& [k, v] : kv) {
        if (std::find(known.begin(), known.end(), k) == known.end()) throw ConfigError("unknown config key '" + k + "'");
    }
    auto dataset = models::DatasetKind::Mnist;
    bool full = false;
    try {
        if (auto it = kv.find("dataset"); it != kv.end()) dataset = models::parse_dataset(it->second);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config key 'dataset': ") + e.what());
    }
    if (auto it = kv.find("full_scale"); it != kv.end()) full = parse_bool("full_scale", it->second);

    ExperimentConfig c = defaults(dataset);
    if (full) {
        c.full_scale = true;
        c.subset = 0;
        c.test_subset = 0;
    }
    for (const auto& [k, v] : kv) {
        try {
            if (k == "dataset" || k == "full_scale") continue;
            if (k == "mode") c.mode = models::parse_mode(v);
            else if (k == "n_enc") c.n_enc = parse_number<Index>(k, v);
            else if (k == "repo_size") {
                c.repo_size = v == "default" ? 0 : parse_number<Index>(k, v);
                if (v != "default" && c.repo_size < 1) throw ConfigError("repo_size must be positive or 'default'");
            }
            else if (k == "epochs") c.epochs = parse_number<int>(k, v);
            else if (k == "batch_size") c.batch_size = parse_number<std::size_t>(k, v);
            else if (k == "lr") c.lr = parse_real(k, v);
            else if (k == "optimizer") {
                if (v == "adam") c.optimizer = nn::OptimizerKind::Adam;
                else if (v == "sgd") c.optimizer = nn::OptimizerKind::SGD;
                else throw ConfigError("config key 'optimizer': expected adam or sgd, got '" + v + "'");
            } else if (k == "momentum") c.momentum = parse_real(k, v);
            else if (k == "seed") c.seed = parse_number<std::uint64_t>(k, v);
            else if (k == "subset") c.subset = parse_number<std::size_t>(k, v);
            else if (k == "test_subset") c.test_subset = parse_number<std::size_t>(k, v);
            else if (k == "out") c.out = v;
            else if (k == "data_dir") c.data_dir = v;
            else if (k == "rec_weight") c.rec_weight = parse_real(k, v);
            else if (k == "dynconv") c.dynconv = fg::parse_impl(v);
            else if (k == "warmup_epochs") c.warmup_epochs = parse_number<int>(k, v);
        } catch (const std::invalid_argument& e) {
            throw ConfigError("config key '" + k + "': " + e.what());
        }
    }
    if (c.n_enc < 1) throw ConfigError("n_enc must be positive");
    if (c.repo_size < 0) throw ConfigError("repo_size must be positive or 'default'");
    if (c.epochs < 0) throw ConfigError("epochs must be non-negative");
    if (c.warmup_epochs < 0) throw ConfigError("warmup_epochs must be non-negative");
    if (c.batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (!(c.lr > 0)) throw ConfigError("lr must be positive");
    return c;
}

ExperimentConfig ExperimentConfig::parse(const std::string& text) { return from_pairs(parse_key_values(text)); }

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

KeyValues ExperimentConfig::to_pairs() const {
    KeyValues kv;
    kv["dataset"] = models::dataset_name(dataset);
    kv["mode"] = models::mode_name(mode);
    kv["n_enc"] = std::to_string(n_enc);
    kv["repo_size"] = repo_size == 0 ? "default" : std::to_string(repo_size);
    kv["epochs"] = std::to_string(epochs);
    kv["batch_size"] = std::to_string(batch_size);
    kv["lr"] = fmt_real(lr);
    kv["optimizer"] = optimizer == nn::OptimizerKind::Adam ? "adam" : "sgd";
    kv["momentum"] = fmt_real(momentum);
    kv["seed"] = std::to_string(seed);
    kv["subset"] = std::to_string(subset);
    kv["test_subset"] = std::to_string(test_subset);
    kv["out"] = out;
    kv["data_dir"] = data_dir;
    kv["rec_weight"] = fmt_real(rec_weight);
    kv["dynconv"] = fg::impl_name(dynconv);
    kv["warmup_epochs"] = std::to_string(warmup_epochs);
    kv["full_scale"] = full_scale ? "true" : "false";
    return kv;
}

std::string ExperimentConfig::serialize() const {
    const KeyValues kv = to_pairs();
    std::string s;
    for (const auto& k : keys()) s += k + "=" + kv.at(k) + "\n";
    return s;
}

std::uint64_t ExperimentConfig::hash() const { return fnv1a(serialize()); }

models::ModelConfig ExperimentConfig::model_config() const {
    models::ModelConfig m;
    m.dataset = dataset;
    m.mode = mode;
    m.n_enc = n_enc;
    m.repo_size = repo_size;
    m.impl = dynconv;
    m.seed = seed;
    return m;
}

nn::OptimizerConfig ExperimentConfig::optimizer_config() const {
    nn::OptimizerConfig o;
    o.kind = optimizer;
    o.lr = lr;
    o.momentum = optimizer == nn::OptimizerKind::SGD ? momentum : 0.0;
    return o;
}

}  // namespace dynfg::experiment
