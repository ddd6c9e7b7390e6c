#include "dynfg/experiment/commands.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "dynfg/nn/optimizer.hpp"

namespace dynfg::experiment {

namespace fs = std::filesystem;
using models::DynModel;
using models::ModelMode;

namespace {

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + p.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_text(const fs::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::binary);
    out << s;
    if (!out) throw std::runtime_error("cannot write " + p.string());
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

fs::path mnist_dir(const fs::path& root) { return fs::exists(root / "mnist") ? root / "mnist" : root; }

std::string section(const std::string& text, const std::string& name) {
    const std::string tag = "[" + name + "]\n";
    const auto b = text.find(tag);
    if (b == std::string::npos) throw nn::CheckpointError("manifest has no [" + name + "] section");
    const auto start = b + tag.size();
    const auto e = text.find("\n[", start);
    return text.substr(start, e == std::string::npos ? std::string::npos : e + 1 - start);
}

std::string timing_tsv(const std::vector<EpochMetrics>& rows) {
    std::string s = "epoch\tseconds\n";
    for (const auto& r : rows) s += std::to_string(r.epoch) + "\t" + fmt("%.3f", r.seconds) + "\n";
    return s;
}

}  // namespace

std::string format_metrics(const std::vector<EpochMetrics>& rows) {
    std::string s = "epoch\ttrain_acc\ttest_acc\tloss_rec\tloss_cls\tloss_total\n";
    for (const auto& r : rows) {
        s += std::to_string(r.epoch) + "\t" + fmt("%.6f", r.train_acc) + "\t" + fmt("%.6f", r.test_acc) + "\t" +
             fmt("%.6f", r.loss_rec) + "\t" + fmt("%.6f", r.loss_cls) + "\t" + fmt("%.6f", r.loss_total) + "\n";
    }
    return s;
}

std::vector<EpochMetrics> parse_metrics(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::getline(in, line);
    std::vector<EpochMetrics> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        EpochMetrics m;
        ls >> m.epoch >> m.train_acc >> m.test_acc >> m.loss_rec >> m.loss_cls >> m.loss_total;
        if (!ls) throw std::runtime_error("malformed metrics row: " + line);
        rows.push_back(m);
    }
    return rows;
}

data::Dataset load_split(const ExperimentConfig& cfg, bool train) {
    return load_split_for(cfg, SplitOptions{train ? "train" : "test", "", 0});
}

data::Dataset load_split_for(const ExperimentConfig& cfg, const SplitOptions& opts) {
    if (opts.split != "train" && opts.split != "test") {
        throw std::invalid_argument("unknown split '" + opts.split + "' (expected train or test)");
    }
    const bool train = opts.split == "train";
    const fs::path root = opts.data_dir.empty() ? fs::path(cfg.data_dir) : fs::path(opts.data_dir);
    data::Dataset ds = cfg.dataset == models::DatasetKind::Mnist ? data::load_mnist(mnist_dir(root), train)
                                                                  : data::load_cifar10_bin(root, train);
    const std::size_t n = opts.limit ? opts.limit : (train ? cfg.subset : cfg.test_subset);
    return data::subset(ds, n, cfg.seed);
}

double evaluate(const DynModel& model, const data::Dataset& ds, std::vector<int>* predictions, std::size_t batch_size) {
    NoGradGuard guard;
    if (predictions) predictions->clear();
    std::size_t correct = 0;
    for (const auto& b : data::sequential_batches(ds.size(), batch_size)) {
        const auto pred = argmax_rows(model.forward(ds.images(b), Mode::Eval).logits);
        for (std::size_t i = 0; i < b.size(); ++i) correct += pred[i] == ds.labels[b[i]];
        if (predictions) predictions->insert(predictions->end(), pred.begin(), pred.end());
    }
    return ds.size() ? static_cast<double>(correct) / static_cast<double>(ds.size()) : 0.0;
}

void save_checkpoint(const DynModel& model, const ExperimentConfig& cfg, const fs::path& dir) {
    fs::create_directories(dir);
    model.params().save(dir / "checkpoint.bin");
    write_text(dir / "checkpoint.manifest", "[config]\n" + cfg.serialize() + "[architecture]\n" + model.architecture());
}

LoadedRun load_run(const fs::path& path) {
    const fs::path ckpt = fs::is_directory(path) ? path / "checkpoint.bin" : path;
    fs::path manifest = ckpt;
    manifest.replace_extension(".manifest");
    if (!fs::exists(ckpt)) throw nn::CheckpointError("missing checkpoint " + ckpt.string());
    if (!fs::exists(manifest)) throw nn::CheckpointError("missing manifest " + manifest.string());
    const std::string text = read_text(manifest);
    LoadedRun run;
    run.config = ExperimentConfig::parse(section(text, "config"));
    run.model = std::make_unique<DynModel>(run.config.model_config());
    if (run.model->architecture() != section(text, "architecture")) {
        throw nn::CheckpointError("architecture mismatch between " + manifest.string() + " and the model built from its config");
    }
    run.model->params().load(ckpt);
    return run;
}

TrainResult train_model(DynModel& model, const ExperimentConfig& cfg, const data::Dataset& train,
                        const data::Dataset& test, std::ostream* log) {
    const fs::path out = cfg.out;
    fs::create_directories(out);
    write_text(out / "config.txt", cfg.serialize());

    TrainResult result;
    result.out_dir = out;
    const ModelMode mode = cfg.mode;
    const Real rec_w = static_cast<Real>(cfg.rec_weight);

    if (cfg.warmup_epochs > 0 && mode == ModelMode::FilterGeneration) {
        nn::ParamStore ae;
        for (const auto& [name, p] : model.params().parameters()) {
            if (name.rfind("ae.", 0) == 0) ae.add_parameter(name, p);
        }
        nn::Optimizer ae_opt(cfg.optimizer_config());
        for (int w = 1; w <= cfg.warmup_epochs; ++w) {
            for (const auto& b : data::batches(train, cfg.batch_size, cfg.seed ^ 0xae, static_cast<std::uint64_t>(w))) {
                const Tensor x = train.images(b);
                const auto fwd = model.forward(x, Mode::Train);
                models::bce_reconstruction_loss(fwd.reconstruction, x).backward();
                for (const auto& [name, p] : model.params().parameters()) {
                    if (name.rfind("ae.", 0) != 0) Tensor(p).clear_grad();
                }
                ae_opt.step(ae);
            }
            if (log) *log << "warmup " << w << "/" << cfg.warmup_epochs << " done\n";
        }
    }

    nn::Optimizer opt(cfg.optimizer_config());
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        double rec = 0, cls = 0, tot = 0;
        std::size_t seen = 0, correct = 0, bi = 0;
        for (const auto& b : data::batches(train, cfg.batch_size, cfg.seed, static_cast<std::uint64_t>(epoch))) {
            const Tensor x = train.images(b);
            const std::vector<int> y = train.labels_at(b);
            models::LossBundle loss;
            try {
                const auto fwd = model.forward(x, Mode::Train);
                loss = models::total_loss(fwd.reconstruction, fwd.logits, x, y, mode, rec_w);
                const auto pred = argmax_rows(fwd.logits);
                for (std::size_t i = 0; i < y.size(); ++i) correct += pred[i] == y[i];
                loss.total.backward();
            } catch (const NumericError& e) {
                std::ostringstream msg;
                msg << "training diverged at epoch " << epoch << ", batch " << bi << ": " << e.what();
                if (loss.total.defined()) {
                    msg << " (loss_rec " << loss.rec.item() << ", loss_cls " << loss.cls.item() << ", loss_total "
                        << loss.total.item() << ")";
                }
                throw TrainingDiverged(msg.str());
            }
            const double n = static_cast<double>(b.size());
            rec += n * static_cast<double>(loss.rec.item());
            cls += n * static_cast<double>(loss.cls.item());
            tot += n * static_cast<double>(loss.total.item());
            seen += b.size();
            opt.step(model.params());
            ++bi;
        }
        EpochMetrics m;
        m.epoch = epoch;
        m.train_acc = seen ? static_cast<double>(correct) / static_cast<double>(seen) : 0.0;
        m.loss_rec = seen ? rec / static_cast<double>(seen) : 0.0;
        m.loss_cls = seen ? cls / static_cast<double>(seen) : 0.0;
        m.loss_total = seen ? tot / static_cast<double>(seen) : 0.0;
        m.test_acc = evaluate(model, test);
        m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.metrics.push_back(m);
        write_text(out / "metrics.tsv", format_metrics(result.metrics));
        write_text(out / "timing.tsv", timing_tsv(result.metrics));
        if (log) {
            *log << "epoch " << epoch << "/" << cfg.epochs << " train_acc " << fmt("%.4f", m.train_acc) << " test_acc "
                 << fmt("%.4f", m.test_acc) << " loss " << fmt("%.5f", m.loss_total) << " (" << fmt("%.1f", m.seconds)
                 << " s)\n"
                 << std::flush;
        }
    }
    if (cfg.epochs == 0) {
        write_text(out / "metrics.tsv", format_metrics({}));
        write_text(out / "timing.tsv", timing_tsv({}));
    }
    save_checkpoint(model, cfg, out);
    return result;
}

TrainResult cmd_train(const ExperimentConfig& cfg, std::ostream* log) {
    const data::Dataset train = load_split(cfg, true);
    const data::Dataset test = load_split(cfg, false);
    DynModel model(cfg.model_config());
    if (log) {
        *log << "training " << models::dataset_name(cfg.dataset) << "/" << models::mode_name(cfg.mode) << " on "
             << train.size() << " samples, testing on " << test.size() << ", " << model.params().parameter_count()
             << " parameters\n";
    }
    return train_model(model, cfg, train, test, log);
}

double cmd_eval(const fs::path& run, const SplitOptions& opts) {
    const LoadedRun r = load_run(run);
    return evaluate(*r.model, load_split_for(r.config, opts));
}

std::vector<std::size_t> derangement(std::size_t n, std::uint64_t seed) {
    if (n < 2) throw std::invalid_argument("a derangement needs at least two samples");
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), std::size_t{0});
    std::mt19937_64 rng(seed);
    // Sattolo: every element lands in one cycle of length n.
    for (std::size_t i = n - 1; i > 0; --i) {
        std::uniform_int_distribution<std::size_t> pick(0, i - 1);
        std::swap(p[i], p[pick(rng)]);
    }
    return p;
}

double swap_accuracy(const DynModel& model, const data::Dataset& ds, const std::vector<std::size_t>& perm,
                     std::size_t batch_size) {
    if (model.config().mode != ModelMode::FilterGeneration) {
        throw std::invalid_argument("swap needs a filter-generation checkpoint; baseline models have no generated filters");
    }
    if (perm.size() != ds.size()) throw std::invalid_argument("swap permutation size does not match the split");
    NoGradGuard guard;
    std::size_t correct = 0;
    for (const auto& b : data::sequential_batches(ds.size(), batch_size)) {
        std::vector<std::size_t> src(b.size());
        for (std::size_t i = 0; i < b.size(); ++i) src[i] = perm[b[i]];
        const auto pred = argmax_rows(model.forward_fg(ds.images(b), Mode::Eval, ds.images(src)).logits);
        for (std::size_t i = 0; i < b.size(); ++i) correct += pred[i] == ds.labels[b[i]];
    }
    return ds.size() ? static_cast<double>(correct) / static_cast<double>(ds.size()) : 0.0;
}

double cmd_swap(const fs::path& run, std::uint64_t seed, bool identity, const SplitOptions& opts) {
    const LoadedRun r = load_run(run);
    if (r.config.mode != ModelMode::FilterGeneration) {
        throw std::invalid_argument("swap needs a filter-generation checkpoint; baseline models have no generated filters");
    }
    const data::Dataset ds = load_split_for(r.config, opts);
    std::vector<std::size_t> perm(ds.size());
    if (identity) {
        std::iota(perm.begin(), perm.end(), std::size_t{0});
    } else {
        perm = derangement(ds.size(), seed);
    }
    return swap_accuracy(*r.model, ds, perm);
}

ExportKind parse_export_kind(const std::string& s) {
    if (s == "coefficients") return ExportKind::Coefficients;
    if (s == "filters") return ExportKind::Filters;
    if (s == "features") return ExportKind::Features;
    if (s == "featmaps") return ExportKind::FeatureMaps;
    throw std::invalid_argument("unknown export kind '" + s + "' (expected coefficients, filters, features or featmaps)");
}

const char* export_kind_name(ExportKind k) {
    switch (k) {
        case ExportKind::Coefficients: return "coefficients";
        case ExportKind::Filters: return "filters";
        case ExportKind::Features: return "features";
        case ExportKind::FeatureMaps: return "featmaps";
    }
    return "?";
}

std::vector<fs::path> export_model(const DynModel& model, const data::Dataset& ds, ExportKind kind,
                                   const fs::path& out_dir, std::size_t batch_size) {
    if (model.config().mode != ModelMode::FilterGeneration) {
        throw std::invalid_argument("export needs a filter-generation checkpoint");
    }
    fs::create_directories(out_dir);
    const std::size_t layers = model.dynamic_layer_count();
    std::vector<Index> width(layers);
    for (std::size_t k = 0; k < layers; ++k) {
        const auto& d = model.dynamic_layer(k);
        switch (kind) {
            case ExportKind::Coefficients: width[k] = d.filters() * d.repo_size(); break;
            case ExportKind::Filters: width[k] = d.filters() * d.repository().target.length(); break;
            case ExportKind::Features: width[k] = d.coefficient_map().feature_length(); break;
            case ExportKind::FeatureMaps: {
                const Shape s = model.classifier().output_shapes()[model.dynamic_row(k)];
                width[k] = s[1] * s[2] * s[3];
                break;
            }
        }
    }

    std::vector<fs::path> paths;
    std::vector<std::ofstream> files;
    for (std::size_t k = 0; k < layers; ++k) {
        paths.push_back(out_dir / (std::string(export_kind_name(kind)) + "_layer" + std::to_string(k + 1) + ".tsv"));
        files.emplace_back(paths.back());
        if (!files.back()) throw std::runtime_error("cannot write " + paths.back().string());
        files.back() << "label";
        for (Index j = 0; j < width[k]; ++j) files.back() << "\tv" << j;
        files.back() << '\n';
    }

    NoGradGuard guard;
    char buf[32];
    for (const auto& b : data::sequential_batches(ds.size(), batch_size)) {
        const auto r = model.forward(ds.images(b), Mode::Eval);
        for (std::size_t k = 0; k < layers; ++k) {
            Tensor t;
            switch (kind) {
                case ExportKind::Coefficients: t = r.coefficients[k]; break;
                case ExportKind::Filters:
                    t = r.filters[k].defined() ? r.filters[k]
                                               : fg::combine_filters(model.dynamic_layer(k).repository(), r.coefficients[k]);
                    break;
                case ExportKind::Features: t = r.features[k]; break;
                case ExportKind::FeatureMaps: t = r.feature_maps[k]; break;
            }
            const auto v = t.data();
            const auto w = static_cast<std::size_t>(width[k]);
            if (v.size() != w * b.size()) throw std::logic_error("export width does not match the model geometry");
            for (std::size_t i = 0; i < b.size(); ++i) {
                files[k] << ds.labels[b[i]];
                for (std::size_t j = 0; j < w; ++j) {
                    std::snprintf(buf, sizeof buf, "\t%.9g", static_cast<double>(v[i * w + j]));
                    files[k] << buf;
                }
                files[k] << '\n';
            }
        }
    }
    for (std::size_t k = 0; k < layers; ++k) {
        files[k].close();
        if (!files[k]) throw std::runtime_error("cannot write " + paths[k].string());
    }
    return paths;
}

std::vector<fs::path> cmd_export(const fs::path& run, ExportKind kind, const fs::path& out_dir, const SplitOptions& opts) {
    const LoadedRun r = load_run(run);
    return export_model(*r.model, load_split_for(r.config, opts), kind, out_dir);
}

std::string format_sweep(const std::vector<SweepCell>& cells) {
    std::string s = "cell\tmode\tn_enc\ts\tacc_epoch1\tacc_final\tstatus\n";
    auto acc = [](double a) { return a < 0 ? std::string("NA") : fmt("%.6f", a); };
    for (const auto& c : cells) {
        s += c.name + "\t" + models::mode_name(c.mode) + "\t" +
             (c.mode == ModelMode::Baseline ? std::string("NA") : std::to_string(c.n_enc)) + "\t" +
             (c.mode == ModelMode::Baseline ? std::string("NA")
                                            : (c.repo_size == 0 ? std::string("default") : std::to_string(c.repo_size))) +
             "\t" + acc(c.acc_epoch1) + "\t" + acc(c.acc_final) + "\t" + c.status + "\n";
    }
    return s;
}

std::vector<SweepCell> cmd_sweep(const ExperimentConfig& base, const std::vector<Index>& n_enc_values,
                                 const std::vector<Index>& repo_sizes, bool include_baseline, std::ostream* log) {
    std::vector<SweepCell> cells;
    if (include_baseline) {
        SweepCell c;
        c.name = "baseline";
        c.mode = ModelMode::Baseline;
        cells.push_back(c);
    }
    for (Index n : n_enc_values) {
        for (Index s : repo_sizes) {
            SweepCell c;
            c.name = "nenc" + std::to_string(n) + "_s" + (s == 0 ? std::string("default") : std::to_string(s));
            c.n_enc = n;
            c.repo_size = s;
            cells.push_back(c);
        }
    }
    const fs::path root = base.out;
    fs::create_directories(root);

    data::Dataset train, test;
    bool loaded = false;
    for (auto& c : cells) {
        ExperimentConfig cfg = base;
        cfg.mode = c.mode;
        if (c.mode == ModelMode::FilterGeneration) {
            cfg.n_enc = c.n_enc;
            cfg.repo_size = c.repo_size;
        }
        cfg.out = (root / c.name).string();
        try {
            if (!loaded) {
                train = load_split(base, true);
                test = load_split(base, false);
                loaded = true;
            }
            if (log) *log << "sweep cell " << c.name << '\n';
            DynModel model(cfg.model_config());
            const auto r = train_model(model, cfg, train, test, log);
            if (!r.metrics.empty()) {
                c.acc_epoch1 = r.metrics.front().test_acc;
                c.acc_final = r.metrics.back().test_acc;
            }
        } catch (const std::exception& e) {
            c.status = std::string("error: ") + e.what();
            for (char& ch : c.status) {
                if (ch == '\t' || ch == '\n') ch = ' ';
            }
            if (log) *log << "sweep cell " << c.name << " failed: " << e.what() << '\n';
        }
        write_text(root / "sweep.tsv", format_sweep(cells));
    }
    return cells;
}

int cmd_gradcheck(std::uint64_t seed, double tol, std::ostream& out) {
    GradcheckOptions opts;
    opts.seed = seed;
    int failed = 0;
    for (const auto& c : gradcheck_suite(seed, opts)) {
        const bool ok = c.report.passed(tol);
        failed += !ok;
        out << (ok ? "PASS " : "FAIL ") << c.name << " max_rel " << fmt("%.3e", c.report.max_rel_error) << " checked "
            << c.report.checked;
        if (!ok) out << " worst " << c.report.worst;
        out << '\n';
    }
    return failed;
}

}  // namespace dynfg::experiment
