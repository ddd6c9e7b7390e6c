#include <Eigen/Dense>

#include "dynfg/models/architectures.hpp"
#include "dynfg/nn/chain.hpp"
#include "dynfg/nn/init.hpp"
#include "dynfg/nn/optimizer.hpp"
#include "helpers.hpp"

using namespace dynfg;
using namespace dynfg::nn;
using dynfg::test::random_tensor;
using dynfg::test::values;

TEST(Init, KaimingVariance) {
    const Tensor w = init_kaiming({100, 100}, 3);
    double s2 = 0;
    for (Real v : w.data()) s2 += double(v) * v;
    const double var = s2 / w.numel();
    EXPECT_NEAR(var, 2.0 / 100, 0.2 * 2.0 / 100);
    EXPECT_EQ(init_kaiming({5, 1, 5, 5}, 1).numel(), 125);
    EXPECT_EQ(values(init_kaiming({5, 1, 5, 5}, 1)), values(init_kaiming({5, 1, 5, 5}, 1)));
}

TEST(Init, OrthogonalRows) {
    const Tensor one = init_orthogonal(1, 25, 2);
    double n = 0;
    for (Real v : one.data()) n += double(v) * v;
    EXPECT_NEAR(n, 1, 1e-9);

    const Tensor b = init_orthogonal(5, 25, 3);
    Eigen::Map<const Eigen::Matrix<Real, -1, -1, Eigen::RowMajor>> m(b.data().data(), 5, 25);
    const Eigen::MatrixXd g = (m * m.transpose()).cast<double>();
    EXPECT_LT((g - Eigen::MatrixXd::Identity(5, 5)).cwiseAbs().maxCoeff(), 1e-6);

    const Tensor sq = init_orthogonal(4, 4, 4);
    Eigen::Map<const Eigen::Matrix<Real, -1, -1, Eigen::RowMajor>> q(sq.data().data(), 4, 4);
    EXPECT_NEAR(std::abs(double(q.determinant())), 1, 1e-6);

    EXPECT_THROW(init_orthogonal(6, 5, 1), ShapeError);
}

TEST(Chain, EmptyIsIdentity) {
    auto [chain, store] = build_chain({}, {1, 4, 4}, 1);
    const Tensor x = random_tensor({2, 1, 4, 4}, 1);
    EXPECT_EQ(values(chain.forward(x, Mode::Eval)), values(x));
}

TEST(Chain, MnistTablesShapes) {
    auto [cls, s1] = build_chain(models::arch::mnist_classifier(), {1, 28, 28}, 1);
    EXPECT_EQ(cls.forward(Tensor::zeros({2, 1, 28, 28}), Mode::Eval).shape(), (Shape{2, 10}));
    std::vector<std::string> got;
    for (const auto& s : cls.output_shapes()) got.push_back(format_output_size(s));
    EXPECT_EQ(got, (std::vector<std::string>{"24x24x5", "12x12x5", "8x8x5", "4x4x5", "10"}));

    auto enc_specs = models::arch::mnist_encoder(20);
    auto dec_specs = models::arch::mnist_decoder(20);
    enc_specs.insert(enc_specs.end(), dec_specs.begin(), dec_specs.end());
    got.clear();
    for (const auto& s : infer_shapes(enc_specs, {1, 1, 28, 28})) got.push_back(format_output_size(s));
    EXPECT_EQ(got, (std::vector<std::string>{"28x28x20", "14x14x20", "28x28x20", "28x28x1"}));
}

TEST(Chain, InconsistentRowIsShapeError) {
    std::vector<LayerSpec> specs{LayerSpec::conv(LayerKind::Conv, 1, 4, 5, 1, 0),
                                 LayerSpec::conv(LayerKind::Conv, 3, 4, 3, 1, 0)};
    EXPECT_THROW(infer_shapes(specs, {1, 1, 28, 28}), ShapeError);
    const std::vector<LayerSpec> too_big{LayerSpec::conv(LayerKind::Conv, 1, 4, 9, 1, 0)};
    EXPECT_THROW(infer_shapes(too_big, {1, 1, 4, 4}), ShapeError);
}

TEST(Chain, PreActivationsAreRecorded) {
    auto [enc, store] = build_chain(models::arch::mnist_encoder(5), {1, 28, 28}, 2);
    std::vector<Tensor> pre;
    const Tensor y = enc.forward(random_tensor({2, 1, 28, 28}, 3, 0, 1), Mode::Train, nullptr, &pre);
    ASSERT_EQ(pre.size(), 2u);
    EXPECT_EQ(pre[0].shape(), (Shape{2, 5, 28, 28}));
    EXPECT_EQ(pre[1].shape(), y.shape());
    // y = lrelu(pre)
    for (Index i = 0; i < y.numel(); ++i) {
        const Real p = pre[1].data()[i];
        EXPECT_EQ(y.data()[i], p > 0 ? p : Real(0.2) * p);
    }
}

TEST(ParamStore, SaveLoadSaveIsByteIdentical) {
    auto [chain, store] = build_chain(models::arch::mnist_classifier(), {1, 28, 28}, 7);
    const auto dir = test::scratch("params");
    store.save(dir / "a.bin");
    auto [chain2, store2] = build_chain(models::arch::mnist_classifier(), {1, 28, 28}, 99);
    store2.load(dir / "a.bin");
    EXPECT_EQ(store2.serialize(), store.serialize());
    const Tensor x = random_tensor({1, 1, 28, 28}, 1, 0, 1);
    EXPECT_EQ(values(chain.forward(x, Mode::Eval)), values(chain2.forward(x, Mode::Eval)));
}

TEST(ParamStore, MismatchedCheckpointRejected) {
    auto [a, sa] = build_chain(models::arch::mnist_classifier(), {1, 28, 28}, 1);
    auto [b, sb] = build_chain(models::arch::mnist_encoder(5), {1, 28, 28}, 1);
    EXPECT_THROW(sb.deserialize(sa.serialize()), CheckpointError);
    std::string bytes = sa.serialize();
    bytes[0] = 'X';
    EXPECT_THROW(sa.deserialize(bytes), CheckpointError);
}

TEST(Optimizer, SgdStep) {
    ParamStore store;
    Tensor w = store.add_parameter("w", Tensor::full({1}, 1));
    w.mutable_grad()[0] = 2;
    Optimizer opt({OptimizerKind::SGD, 0.1});
    opt.step(store);
    EXPECT_NEAR(w.item(), 0.8, 1e-12);
    EXPECT_FALSE(w.has_grad());
}

TEST(Optimizer, ZeroGradientLeavesParameters) {
    for (auto kind : {OptimizerKind::SGD, OptimizerKind::Adam}) {
        ParamStore store;
        Tensor w = store.add_parameter("w", Tensor::from_data({3}, {1, -2, 3}));
        for (auto& g : w.mutable_grad()) g = 0;
        Optimizer opt({kind, 0.1});
        opt.step(store);
        EXPECT_EQ(values(w), (std::vector<Real>{1, -2, 3}));
    }
}

TEST(Optimizer, AdamFirstStepIsLr) {
    ParamStore store;
    Tensor w = store.add_parameter("w", Tensor::from_data({2}, {0.5, 0.5}));
    w.mutable_grad()[0] = 3;
    w.mutable_grad()[1] = -0.01;
    Optimizer opt({OptimizerKind::Adam, 1e-3});
    opt.step(store);
    EXPECT_NEAR(w.data()[0], 0.5 - 1e-3, 1e-6);
    EXPECT_NEAR(w.data()[1], 0.5 + 1e-3, 1e-6);
}

TEST(Optimizer, MissingGradientNamesParameter) {
    ParamStore store;
    store.add_parameter("layer.weight", Tensor::zeros({2}));
    Optimizer opt({});
    try {
        opt.step(store);
        FAIL();
    } catch (const std::runtime_error& e) {
        EXPECT_NE(std::string(e.what()).find("layer.weight"), std::string::npos);
    }
}
