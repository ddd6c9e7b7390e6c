#include <cmath>

#include "dynfg/models/dyn_model.hpp"
#include "dynfg/models/losses.hpp"
#include "helpers.hpp"

using namespace dynfg;
using namespace dynfg::models;
using dynfg::test::random_tensor;
using dynfg::test::values;

TEST(Bce, PerfectReconstructionIsNearZero) {
    const Tensor t = Tensor::from_data({1, 4}, {0, 1, 0, 1});
    EXPECT_LE(bce_reconstruction_loss(t, t).item(), 2.3e-6);
}

TEST(Bce, HalfProbability) {
    EXPECT_NEAR(bce_reconstruction_loss(Tensor::full({1, 1}, 0.5), Tensor::full({1, 1}, 1)).item(), 0.693147, 1e-6);
}

TEST(Bce, ClampedWorstCase) {
    const Tensor t = Tensor::from_data({1, 4}, {0, 1, 1, 0});
    const Tensor o = Tensor::from_data({1, 4}, {1, 0, 0, 1});
    EXPECT_NEAR(bce_reconstruction_loss(o, t).item(), 16.118, 1e-2);
}

TEST(Bce, GradientAtSaturatedOutput) {
    Tensor o = Tensor::from_data({1, 1}, {1});
    o.set_requires_grad(true);
    bce_reconstruction_loss(o, Tensor::zeros({1, 1})).backward();
    EXPECT_TRUE(std::isfinite(double(o.grad()[0])));
    EXPECT_GT(o.grad()[0], 0);
}

TEST(Nll, UniformCertainAndMean) {
    const Tensor uniform = log_softmax(Tensor::zeros({2, 10}));
    const std::vector<int> labels{3, 7};
    EXPECT_NEAR(nll_classification_loss(uniform, labels).item(), 2.302585, 1e-6);
    std::vector<Real> lp(10, -50);
    lp[4] = 0;
    const std::vector<int> four{4};
    EXPECT_EQ(nll_classification_loss(Tensor::from_data({1, 10}, lp), four).item(), Real(0));
    const Tensor x = log_softmax(random_tensor({3, 10}, 1));
    const std::vector<int> y{1, 2, 3};
    const double expect = -(x.at({0, 1}) + x.at({1, 2}) + x.at({2, 3})) / 3.0;
    EXPECT_NEAR(nll_classification_loss(x, y).item(), expect, 1e-12);
    const std::vector<int> bad{10, 0, 0};
    EXPECT_THROW(nll_classification_loss(x, bad), std::exception);
}

TEST(TotalLoss, AdditiveAndBaseline) {
    const Tensor rec = Tensor::full({2, 1, 2, 2}, 0.3), target = Tensor::full({2, 1, 2, 2}, 1);
    const Tensor logits = log_softmax(random_tensor({2, 10}, 1));
    const std::vector<int> y{0, 1};
    const auto l = total_loss(rec, logits, target, y, ModelMode::FilterGeneration);
    EXPECT_NEAR(l.total.item(), l.rec.item() + l.cls.item(), 1e-12);
    const auto b = total_loss(Tensor(), logits, target, y, ModelMode::Baseline);
    EXPECT_EQ(b.total.item(), b.cls.item());
    EXPECT_EQ(b.rec.item(), Real(0));
}

TEST(DynModel, MnistOutputs) {
    ModelConfig cfg;
    cfg.repo_size = 5;
    const DynModel m(cfg);
    const auto r = m.forward(random_tensor({2, 1, 28, 28}, 1, 0, 1), Mode::Train);
    EXPECT_EQ(r.reconstruction.shape(), (Shape{2, 1, 28, 28}));
    EXPECT_EQ(r.logits.shape(), (Shape{2, 10}));
    ASSERT_EQ(r.features.size(), 2u);
    for (const auto& f : r.features) EXPECT_EQ(f.shape(), (Shape{2, 20}));
    EXPECT_EQ(r.coefficients[1].shape(), (Shape{2, 5, 5}));
    EXPECT_EQ(r.feature_maps[0].shape(), (Shape{2, 5, 24, 24}));
    for (Real v : r.reconstruction.data()) {
        EXPECT_GE(v, 0);
        EXPECT_LE(v, 1);
    }
}

TEST(DynModel, CifarFeatureLengths) {
    ModelConfig cfg;
    cfg.dataset = DatasetKind::Cifar10;
    cfg.impl = fg::DynConvImpl::Factored;
    const DynModel m(cfg);
    const auto r = m.forward(random_tensor({2, 3, 32, 32}, 2, 0, 1), Mode::Train);
    std::vector<Index> lengths;
    for (const auto& f : r.features) lengths.push_back(f.dim(1));
    EXPECT_EQ(lengths, (std::vector<Index>{64, 96, 128, 128}));
    EXPECT_EQ(r.logits.shape(), (Shape{2, 10}));
    EXPECT_EQ(r.reconstruction.shape(), (Shape{2, 3, 32, 32}));
    // default repository size min(N, L_k)
    EXPECT_EQ(m.dynamic_layer(0).repo_size(), 27);
    EXPECT_EQ(m.dynamic_layer(1).repo_size(), 128);
}

TEST(DynModel, DuplicateImagesGiveIdenticalRows) {
    const DynModel m(ModelConfig{});
    const Tensor one = random_tensor({1, 1, 28, 28}, 3, 0, 1);
    std::vector<Real> two(values(one));
    two.insert(two.end(), one.data().begin(), one.data().end());
    const auto r = m.forward(Tensor::from_data({2, 1, 28, 28}, two), Mode::Eval);
    for (Index j = 0; j < 10; ++j) EXPECT_EQ(r.logits.at({0, j}), r.logits.at({1, j}));
}

TEST(DynModel, PermutingBatchPermutesOutputs) {
    const DynModel m(ModelConfig{});
    const Tensor x = random_tensor({3, 1, 28, 28}, 4, 0, 1);
    std::vector<Real> p;
    for (Index s : {2, 0, 1}) p.insert(p.end(), x.data().begin() + s * 784, x.data().begin() + (s + 1) * 784);
    const auto a = m.forward(x, Mode::Eval), b = m.forward(Tensor::from_data({3, 1, 28, 28}, p), Mode::Eval);
    const Index order[3] = {2, 0, 1};
    for (Index i = 0; i < 3; ++i)
        for (Index j = 0; j < 10; ++j) EXPECT_EQ(b.logits.at({i, j}), a.logits.at({order[i], j}));
}

TEST(DynModel, BaselineLogits) {
    for (auto ds : {DatasetKind::Mnist, DatasetKind::Cifar10}) {
        ModelConfig cfg;
        cfg.dataset = ds;
        cfg.mode = ModelMode::Baseline;
        const DynModel m(cfg);
        Shape s{1};
        for (Index d : m.image_shape()) s.push_back(d);
        const auto r = m.forward(Tensor::zeros(s), Mode::Eval);
        EXPECT_EQ(r.logits.shape(), (Shape{1, 10}));
        for (Real v : r.logits.data()) EXPECT_TRUE(std::isfinite(double(v)));
        EXPECT_FALSE(r.reconstruction.defined());
    }
}

TEST(DynModel, JointLossReachesEveryParameter) {
    ModelConfig cfg;
    cfg.repo_size = 5;
    DynModel m(cfg);
    const Tensor x = random_tensor({4, 1, 28, 28}, 5, 0, 1);
    const std::vector<int> y{1, 2, 3, 4};
    const auto r = m.forward(x, Mode::Train);
    const auto l = total_loss(r.reconstruction, r.logits, x, y, ModelMode::FilterGeneration);
    EXPECT_NEAR(l.total.item(), l.rec.item() + l.cls.item(), 1e-9);
    l.total.backward();
    for (const auto& [name, p] : m.params().parameters()) {
        ASSERT_TRUE(p.has_grad()) << name;
        double norm = 0;
        for (Real g : p.grad()) norm += std::abs(double(g));
        EXPECT_GT(norm, 0) << name;
    }
}

TEST(DynModel, BaselineAndFgShareClassifierGeometry) {
    for (auto ds : {DatasetKind::Mnist, DatasetKind::Cifar10}) {
        ModelConfig a, b;
        a.dataset = b.dataset = ds;
        b.mode = ModelMode::Baseline;
        EXPECT_EQ(DynModel(a).classifier().output_shapes(), DynModel(b).classifier().output_shapes());
    }
}

TEST(DynModel, SwappedGeneratorChangesPredictionsOnlyThroughFilters) {
    const DynModel m(ModelConfig{});
    const Tensor x = random_tensor({2, 1, 28, 28}, 6, 0, 1);
    const auto same = m.forward_fg(x, Mode::Eval, x);
    const auto plain = m.forward_fg(x, Mode::Eval);
    EXPECT_EQ(values(same.logits), values(plain.logits));
}
