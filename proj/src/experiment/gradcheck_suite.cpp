#include <memory>
#include <random>

#include "dynfg/experiment/commands.hpp"

namespace dynfg::experiment {

namespace {

struct Rng {
    std::mt19937_64 gen;
    explicit Rng(std::uint64_t seed) : gen(seed) {}

    Tensor uniform(Shape shape, double lo = -1.0, double hi = 1.0, bool grad = true) {
        std::uniform_real_distribution<double> d(lo, hi);
        std::vector<Real> v(static_cast<std::size_t>(shape_numel(shape)));
        for (auto& x : v) x = static_cast<Real>(d(gen));
        Tensor t = Tensor::from_data(std::move(shape), std::move(v));
        t.set_requires_grad(grad);
        return t;
    }
};

// Weighted sum so every output element gets a distinct upstream gradient.
Tensor probe(const Tensor& y, const Tensor& w) { return sum(mul(y, w)); }

}  // namespace

std::vector<GradcheckCase> gradcheck_suite(std::uint64_t seed, const GradcheckOptions& opts, bool include_pipeline) {
    if constexpr (!kReferencePrecision) {
        throw std::logic_error("gradcheck suite requires the 64-bit reference build");
    }
    Rng rng(seed);
    std::vector<GradcheckCase> out;
    auto run = [&](const std::string& name, const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                   GradcheckOptions o) { out.push_back({name, gradcheck(f, std::move(inputs), o)}); };
    auto unary = [&](const std::string& name, Shape shape, const std::function<Tensor(const Tensor&)>& op) {
        Tensor x = rng.uniform(shape);
        Tensor w = rng.uniform(op(x.detach()).shape(), -1, 1, false);
        run(name, [=] { return probe(op(x), w); }, {x}, opts);
    };

    {
        Tensor x = rng.uniform({2, 3, 7, 6});
        Tensor k = rng.uniform({4, 3, 3, 3});
        Tensor b = rng.uniform({4});
        Tensor w = rng.uniform({2, 4, 4, 3}, -1, 1, false);
        run("conv2d stride 2 pad 1", [=] { return probe(conv2d(x, k, b, {2, 1}), w); }, {x, k, b}, opts);
    }
    {
        Tensor x = rng.uniform({2, 3, 5, 5});
        Tensor k = rng.uniform({4, 3, 1, 1});
        Tensor w = rng.uniform({2, 4, 5, 5}, -1, 1, false);
        run("conv2d pointwise", [=] { return probe(conv2d(x, k, Tensor(), {1, 0}), w); }, {x, k}, opts);
    }
    {
        Tensor x = rng.uniform({3, 2, 6, 6});
        Tensor k = rng.uniform({3, 4, 2, 3, 3});
        Tensor b = rng.uniform({4});
        Tensor w = rng.uniform({3, 4, 6, 6}, -1, 1, false);
        run("conv2d_per_sample", [=] { return probe(conv2d_per_sample(x, k, b, {1, 1}), w); }, {x, k, b}, opts);
    }
    unary("max_pool2d", {2, 3, 6, 6}, [](const Tensor& x) { return max_pool2d(x, 2, 2); });
    unary("avg_pool2d", {2, 3, 6, 6}, [](const Tensor& x) { return avg_pool2d(x, 3, 1); });
    unary("upsample_nearest", {2, 3, 3, 4}, [](const Tensor& x) { return upsample_nearest(x, 2); });
    for (Mode mode : {Mode::Train, Mode::Eval}) {
        Tensor x = rng.uniform({3, 4, 3, 3});
        Tensor g = rng.uniform({4}, 0.5, 1.5);
        Tensor b = rng.uniform({4});
        Tensor w = rng.uniform({3, 4, 3, 3}, -1, 1, false);
        RunningStats stats{rng.uniform({4}, -0.5, 0.5, false), rng.uniform({4}, 0.5, 2.0, false)};
        run(mode == Mode::Train ? "batch_norm2d train" : "batch_norm2d eval",
            [=]() mutable { return probe(batch_norm2d(x, g, b, stats, mode), w); }, {x, g, b}, opts);
    }
    unary("relu", {4, 7}, [](const Tensor& x) { return relu(x); });
    unary("leaky_relu", {4, 7}, [](const Tensor& x) { return leaky_relu(x, Real(0.2)); });
    unary("sigmoid", {4, 7}, [](const Tensor& x) { return sigmoid(scale(x, 4)); });
    {
        Tensor x = rng.uniform({3, 5}), wt = rng.uniform({5, 4}), b = rng.uniform({4});
        Tensor w = rng.uniform({3, 4}, -1, 1, false);
        run("linear", [=] { return probe(linear(x, wt, b), w); }, {x, wt, b}, opts);
    }
    {
        Tensor a = rng.uniform({3, 5}), b = rng.uniform({5, 2});
        Tensor w = rng.uniform({3, 2}, -1, 1, false);
        run("matmul", [=] { return probe(matmul(a, b), w); }, {a, b}, opts);
    }
    {
        Tensor a = rng.uniform({2, 3, 4}), b = rng.uniform({2, 4, 5});
        Tensor w = rng.uniform({2, 3, 5}, -1, 1, false);
        run("bmm", [=] { return probe(bmm(a, b), w); }, {a, b}, opts);
    }
    unary("log_softmax", {3, 10}, [](const Tensor& x) { return log_softmax(scale(x, 3)); });
    unary("flatten", {2, 3, 2, 2}, [](const Tensor& x) { return flatten(x); });
    unary("reshape", {2, 3, 4}, [](const Tensor& x) { return x.reshape({4, 6}); });
    unary("scale", {5}, [](const Tensor& x) { return scale(x, Real(-2.5)); });
    unary("sum", {3, 4}, [](const Tensor& x) { return sum(x); });
    unary("mean", {3, 4}, [](const Tensor& x) { return mean(x); });
    {
        Tensor a = rng.uniform({3, 4}), b = rng.uniform({3, 4});
        Tensor w = rng.uniform({3, 4}, -1, 1, false);
        run("add", [=] { return probe(add(a, b), w); }, {a, b}, opts);
        run("mul", [=] { return probe(mul(a, b), w); }, {a, b}, opts);
    }
    {
        Tensor x = rng.uniform({2, 3, 2, 2}), b = rng.uniform({3});
        Tensor w = rng.uniform({2, 3, 2, 2}, -1, 1, false);
        run("add_channel_bias", [=] { return probe(add_channel_bias(x, b), w); }, {x, b}, opts);
    }
    {
        const fg::FilterShape shape{3, 2, 3};
        nn::ParamStore store;
        fg::DynConvLayer layer(store, "dyn", shape, 6, 4, {1, 1}, seed);
        Tensor x = rng.uniform({2, 2, 5, 5});
        Tensor feat = rng.uniform({2, 6});
        Tensor w = rng.uniform({2, 3, 5, 5}, -1, 1, false);
        std::vector<Tensor> inputs{x, feat};
        for (const auto& [n, p] : store.parameters()) inputs.push_back(p);
        for (fg::DynConvImpl impl : {fg::DynConvImpl::Generate, fg::DynConvImpl::Factored}) {
            run(std::string("dynamic conv ") + fg::impl_name(impl),
                [=, &layer] { return probe(layer.forward(x, feat, impl).output, w); }, inputs, opts);
        }
    }
    {
        Tensor o = rng.uniform({2, 6}, 0.05, 0.95);
        Tensor t = rng.uniform({2, 6}, 0.0, 1.0);
        run("bce", [=] { return models::bce_reconstruction_loss(o, t); }, {o, t}, opts);
    }
    {
        Tensor lp = rng.uniform({3, 4});
        const std::vector<int> labels{1, 3, 0};
        run("nll", [=] { return models::nll_classification_loss(lp, labels); }, {lp}, opts);
    }
    if (!include_pipeline) return out;
    for (fg::DynConvImpl impl : {fg::DynConvImpl::Generate, fg::DynConvImpl::Factored}) {
        models::ModelConfig mc;
        mc.dataset = models::DatasetKind::Mnist;
        mc.mode = models::ModelMode::FilterGeneration;
        mc.n_enc = 20;
        mc.repo_size = 5;
        mc.impl = impl;
        mc.seed = seed;
        auto model = std::make_shared<models::DynModel>(mc);
        Tensor x = rng.uniform({4, 1, 28, 28}, 0.0, 1.0, false);
        const std::vector<int> labels{0, 3, 7, 9};
        std::vector<Tensor> inputs;
        for (const auto& [n, p] : model->params().parameters()) inputs.push_back(p);
        GradcheckOptions o = opts;
        o.max_per_tensor = 6;
        run(std::string("mnist pipeline total loss, ") + fg::impl_name(impl),
            [=] {
                const auto r = model->forward(x, Mode::Train);
                return models::total_loss(r.reconstruction, r.logits, x, labels, models::ModelMode::FilterGeneration)
                    .total;
            },
            inputs, o);
    }
    return out;
}

}  // namespace dynfg::experiment
