#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <sstream>

#include "dynfg/experiment/commands.hpp"

using namespace dynfg;
using namespace dynfg::experiment;

namespace {

// Flags shared by train and sweep; each maps onto a config key.
struct ConfigFlags {
    std::string config_path;
    std::map<std::string, std::string> values;
    std::vector<std::string> sets;

    void add_to(CLI::App* app) {
        app->add_option("--config", config_path, "key=value config file")->check(CLI::ExistingFile);
        const std::vector<std::pair<std::string, std::string>> flags = {
            {"--dataset", "dataset"},     {"--mode", "mode"},
            {"--n-enc", "n_enc"},         {"--repo-size", "repo_size"},
            {"--epochs", "epochs"},       {"--batch-size", "batch_size"},
            {"--lr", "lr"},               {"--optimizer", "optimizer"},
            {"--seed", "seed"},           {"--subset", "subset"},
            {"--test-subset", "test_subset"}, {"--out", "out"},
            {"--data-dir", "data_dir"},   {"--dynconv", "dynconv"},
            {"--rec-weight", "rec_weight"}, {"--warmup-epochs", "warmup_epochs"},
            {"--full-scale", "full_scale"}};
        for (const auto& [flag, key] : flags) {
            app->add_option_function<std::string>(flag, [this, key = key](const std::string& v) { values[key] = v; },
                                                  "config key " + key);
        }
        app->add_option("--set", sets, "extra key=value overrides");
    }

    ExperimentConfig build() const {
        KeyValues kv;
        if (!config_path.empty()) {
            std::ifstream in(config_path);
            std::stringstream ss;
            ss << in.rdbuf();
            kv = parse_key_values(ss.str());
        }
        for (const auto& s : sets) {
            const auto eq = s.find('=');
            if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
            kv[s.substr(0, eq)] = s.substr(eq + 1);
        }
        for (const auto& [k, v] : values) kv[k] = v;
        return ExperimentConfig::from_pairs(kv);
    }
};

struct SplitFlags {
    SplitOptions opts;
    void add_to(CLI::App* app) {
        app->add_option("--split", opts.split, "train or test")->check(CLI::IsMember({"train", "test"}));
        app->add_option("--data-dir", opts.data_dir, "dataset root (defaults to the run's data_dir)");
        app->add_option("--limit", opts.limit, "number of samples (default: the run's subset setting)");
    }
};

std::vector<Index> parse_list(const std::string& s) {
    std::vector<Index> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item == "default") out.push_back(0);
        else out.push_back(std::stoll(item));
    }
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Sample-specific dynamic filter generation: training and analysis"};
    app.require_subcommand(1);

    ConfigFlags train_flags;
    auto* train = app.add_subcommand("train", "train a baseline or filter-generation model");
    train_flags.add_to(train);

    std::string run_path;
    SplitFlags eval_split;
    auto* eval = app.add_subcommand("eval", "top-1 accuracy of a checkpoint");
    eval->add_option("--checkpoint", run_path, "run directory or checkpoint.bin")->required();
    eval_split.add_to(eval);

    SplitFlags swap_split;
    std::uint64_t swap_seed = 1;
    bool identity = false;
    auto* swap = app.add_subcommand("swap", "accuracy when filters come from a different sample");
    swap->add_option("--checkpoint", run_path, "run directory or checkpoint.bin")->required();
    swap->add_option("--seed", swap_seed, "derangement seed");
    swap->add_flag("--identity", identity, "use the identity mapping instead of a derangement");
    swap_split.add_to(swap);

    SplitFlags export_split;
    std::string what = "coefficients", export_out = "export";
    auto* exp = app.add_subcommand("export", "write per-layer coefficients, filters, features or feature maps");
    exp->add_option("--checkpoint", run_path, "run directory or checkpoint.bin")->required();
    exp->add_option("--what", what, "coefficients, filters, features or featmaps");
    exp->add_option("--out", export_out, "output directory");
    export_split.add_to(exp);

    ConfigFlags sweep_flags;
    std::string n_enc_values = "5,10,20", s_values = "5";
    bool with_baseline = false;
    auto* sweep = app.add_subcommand("sweep", "train a grid over n_enc and repository size");
    sweep_flags.add_to(sweep);
    sweep->add_option("--n-enc-values", n_enc_values, "comma-separated encoder widths");
    sweep->add_option("--s-values", s_values, "comma-separated repository sizes ('default' allowed)");
    sweep->add_flag("--baseline", with_baseline, "add a baseline row");

    std::uint64_t gc_seed = 1;
    double gc_tol = 1e-4;
    auto* gc = app.add_subcommand("gradcheck", "compare analytic and numeric gradients");
    gc->add_option("--seed", gc_seed, "input seed");
    gc->add_option("--tol", gc_tol, "relative error tolerance");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) {
            const ExperimentConfig cfg = train_flags.build();
            const auto r = cmd_train(cfg, &std::cout);
            std::cout << "wrote " << r.out_dir.string() << '\n';
        } else if (eval->parsed()) {
            std::printf("accuracy %.6f\n", cmd_eval(run_path, eval_split.opts));
        } else if (swap->parsed()) {
            std::printf("swap accuracy %.6f\n", cmd_swap(run_path, swap_seed, identity, swap_split.opts));
        } else if (exp->parsed()) {
            for (const auto& p : cmd_export(run_path, parse_export_kind(what), export_out, export_split.opts)) {
                std::cout << p.string() << '\n';
            }
        } else if (sweep->parsed()) {
            const auto cells = cmd_sweep(sweep_flags.build(), parse_list(n_enc_values), parse_list(s_values),
                                         with_baseline, &std::cout);
            std::cout << format_sweep(cells);
        } else if (gc->parsed()) {
            return cmd_gradcheck(gc_seed, gc_tol, std::cout) == 0 ? 0 : 1;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
