#pragma once

#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "dynfg/data/datasets.hpp"
#include "dynfg/experiment/config.hpp"
#include "dynfg/gradcheck.hpp"
#include "dynfg/models/dyn_model.hpp"

namespace dynfg::experiment {

struct EpochMetrics {
    int epoch = 0;
    double train_acc = 0;  // running accuracy over the epoch's training batches
    double test_acc = 0;
    double loss_rec = 0;
    double loss_cls = 0;
    double loss_total = 0;
    double seconds = 0;  // written to timing.tsv only
};

/// Tab-separated, header row first; excludes wall time so runs with equal
/// config and seed give identical bytes.
std::string format_metrics(const std::vector<EpochMetrics>& rows);
std::vector<EpochMetrics> parse_metrics(const std::string& text);

struct TrainResult {
    std::vector<EpochMetrics> metrics;
    std::filesystem::path out_dir;
};

/// Raised when a loss or activation turns non-finite during training.
class TrainingDiverged : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

data::Dataset load_split(const ExperimentConfig& cfg, bool train);

/// Writes config.txt, metrics.tsv, timing.tsv, checkpoint.bin and
/// checkpoint.manifest under cfg.out. `log` receives one line per epoch.
TrainResult cmd_train(const ExperimentConfig& cfg, std::ostream* log = nullptr);

/// Same loop on caller-provided data and model.
TrainResult train_model(models::DynModel& model, const ExperimentConfig& cfg, const data::Dataset& train,
                        const data::Dataset& test, std::ostream* log = nullptr);

void save_checkpoint(const models::DynModel& model, const ExperimentConfig& cfg, const std::filesystem::path& dir);

struct LoadedRun {
    ExperimentConfig config;
    std::unique_ptr<models::DynModel> model;
};

/// `path` is a run directory or a checkpoint.bin next to its manifest.
/// Raises nn::CheckpointError on an architecture mismatch.
LoadedRun load_run(const std::filesystem::path& path);

/// Top-1 accuracy with batchnorm in eval mode. `predictions` receives the
/// argmax per sample when given.
double evaluate(const models::DynModel& model, const data::Dataset& ds, std::vector<int>* predictions = nullptr,
                std::size_t batch_size = 256);

struct SplitOptions {
    std::string split = "test";   // "test" or "train"
    std::string data_dir;         // overrides the run's data_dir when set
    std::size_t limit = 0;        // 0: the run's own subset setting
};

/// Loads the split the run was trained/evaluated on.
data::Dataset load_split_for(const ExperimentConfig& cfg, const SplitOptions& opts);

double cmd_eval(const std::filesystem::path& run, const SplitOptions& opts = {});

/// Permutation with no fixed point (a single random cycle), keyed by seed.
std::vector<std::size_t> derangement(std::size_t n, std::uint64_t seed);

/// Classifies sample i with filters generated from sample perm[i].
double swap_accuracy(const models::DynModel& model, const data::Dataset& ds, const std::vector<std::size_t>& perm,
                     std::size_t batch_size = 256);

/// Raises std::invalid_argument for a baseline checkpoint.
double cmd_swap(const std::filesystem::path& run, std::uint64_t seed, bool identity = false,
                const SplitOptions& opts = {});

enum class ExportKind { Coefficients, Filters, Features, FeatureMaps };
ExportKind parse_export_kind(const std::string& s);
const char* export_kind_name(ExportKind k);

/// One file `<kind>_layer<k>.tsv` per dynamic layer in `out_dir`: header row,
/// then label followed by the flattened vector, %.9g.
std::vector<std::filesystem::path> export_model(const models::DynModel& model, const data::Dataset& ds, ExportKind kind,
                                                const std::filesystem::path& out_dir, std::size_t batch_size = 128);
std::vector<std::filesystem::path> cmd_export(const std::filesystem::path& run, ExportKind kind,
                                              const std::filesystem::path& out_dir, const SplitOptions& opts = {});

struct SweepCell {
    std::string name;
    models::ModelMode mode = models::ModelMode::FilterGeneration;
    Index n_enc = 0;
    Index repo_size = 0;
    double acc_epoch1 = -1;
    double acc_final = -1;
    std::string status = "ok";
};

/// Trains every (n_enc, s) pair (plus a baseline row when requested) with
/// the base config's seed, each in `<out>/<cell>`, and writes
/// `<out>/sweep.tsv`. A failing cell is recorded and the sweep continues.
std::vector<SweepCell> cmd_sweep(const ExperimentConfig& base, const std::vector<Index>& n_enc_values,
                                 const std::vector<Index>& repo_sizes, bool include_baseline,
                                 std::ostream* log = nullptr);
std::string format_sweep(const std::vector<SweepCell>& cells);

struct GradcheckCase {
    std::string name;
    GradcheckReport report;
};

/// Central-difference checks of every differentiable op and of the full
/// filter-generation loss on a 4-sample MNIST-geometry batch. Needs the
/// double-precision build. `include_pipeline` false skips the full-model cases.
std::vector<GradcheckCase> gradcheck_suite(std::uint64_t seed, const GradcheckOptions& opts = {},
                                           bool include_pipeline = true);

/// Prints one line per case; returns the number of cases at or above `tol`.
int cmd_gradcheck(std::uint64_t seed, double tol, std::ostream& out);

}  // namespace dynfg::experiment
