#include <cmath>
#include <limits>

#include "dynfg/gradcheck.hpp"
#include "helpers.hpp"

using namespace dynfg;
using dynfg::test::random_tensor;
using dynfg::test::values;

TEST(Tensor, FromDataChecksCount) {
    EXPECT_THROW(Tensor::from_data({2, 2}, {1, 2, 3}), ShapeError);
    const Tensor t = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
    EXPECT_EQ(t.numel(), 6);
    EXPECT_EQ(t.at({1, 2}), Real(6));
}

TEST(Tensor, NonFiniteValuesAreRejected) {
    const Tensor big = Tensor::from_data({1}, {std::numeric_limits<Real>::max()});
    EXPECT_THROW(mul(big, big), NumericError);
}

TEST(Conv2d, TwoByTwoIdentityDiagonal) {
    const Tensor x = Tensor::from_data({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
    const Tensor k = Tensor::from_data({1, 1, 2, 2}, {1, 0, 0, 1});
    const Tensor y = conv2d(x, k, Tensor(), {1, 0});
    EXPECT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
    EXPECT_EQ(values(y), (std::vector<Real>{6, 8, 12, 14}));
}

TEST(Conv2d, PointwiseScale) {
    const Tensor x = Tensor::full({1, 1, 4, 4}, 1);
    const Tensor k = Tensor::full({1, 1, 1, 1}, 2);
    const Tensor y = conv2d(x, k, Tensor(), {1, 0});
    for (Real v : y.data()) EXPECT_EQ(v, Real(2));
}

TEST(Conv2d, OutputExtent) {
    EXPECT_EQ(conv_out_extent(28, 5, 1, 0), 24);
    EXPECT_EQ(conv_out_extent(28, 5, 2, 2), 14);
    EXPECT_EQ(conv_out_extent(32, 3, 1, 1), 32);
}

TEST(Conv2d, ChannelMismatchIsShapeError) {
    const Tensor x = Tensor::zeros({1, 2, 5, 5});
    const Tensor k = Tensor::zeros({3, 1, 3, 3});
    EXPECT_THROW(conv2d(x, k, Tensor(), {1, 0}), ShapeError);
}

TEST(Conv2dPerSample, ReplicatedFiltersMatchSharedConvExactly) {
    for (Conv2dParams p : {Conv2dParams{1, 0}, Conv2dParams{1, 2}, Conv2dParams{2, 1}}) {
        const Tensor x = random_tensor({4, 3, 9, 9}, 1);
        const Tensor k = random_tensor({5, 3, 3, 3}, 2);
        const Tensor b = random_tensor({5}, 3);
        std::vector<Real> rep;
        for (int i = 0; i < 4; ++i) rep.insert(rep.end(), k.data().begin(), k.data().end());
        const Tensor kb = Tensor::from_data({4, 5, 3, 3, 3}, rep);
        EXPECT_EQ(values(conv2d_per_sample(x, kb, b, p)), values(conv2d(x, k, b, p)));
    }
}

TEST(Conv2dPerSample, SingleOutputChannelMatchesSharedConv) {
    const Tensor x = random_tensor({2, 4, 7, 7}, 4);
    const Tensor k = random_tensor({1, 4, 5, 5}, 5);
    std::vector<Real> rep(values(k));
    rep.insert(rep.end(), k.data().begin(), k.data().end());
    const Tensor kb = Tensor::from_data({2, 1, 4, 5, 5}, rep);
    EXPECT_EQ(values(conv2d_per_sample(x, kb, Tensor(), {1, 2})), values(conv2d(x, k, Tensor(), {1, 2})));
}

TEST(Conv2dPerSample, ZeroFiltersGiveBias) {
    const Tensor x = random_tensor({2, 1, 6, 6}, 6);
    const Tensor k = Tensor::zeros({2, 3, 1, 3, 3});
    const Tensor b = Tensor::from_data({3}, {1, -2, 0.5});
    const Tensor y = conv2d_per_sample(x, k, b, {1, 0});
    for (Index n = 0; n < 2; ++n)
        for (Index c = 0; c < 3; ++c)
            for (Index i = 0; i < 16; ++i) EXPECT_EQ(y.data()[(n * 3 + c) * 16 + i], b.data()[c]);
}

TEST(Pool, MaxAndAverage) {
    const Tensor x = Tensor::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
    EXPECT_EQ(max_pool2d(x, 2, 2).item(), Real(4));
    const Tensor c = Tensor::full({1, 2, 4, 4}, Real(3.25));
    const Tensor avg = avg_pool2d(c, 4, 1);
    for (Real v : avg.data()) EXPECT_EQ(v, Real(3.25));
    EXPECT_EQ(max_pool2d(Tensor::zeros({1, 5, 12, 12}), 2, 2).shape(), (Shape{1, 5, 6, 6}));
}

TEST(Upsample, NearestBlocks) {
    const Tensor x = Tensor::from_data({1, 1, 2, 2}, {1, 2, 3, 4});
    EXPECT_EQ(values(upsample_nearest(x, 2)), (std::vector<Real>{1, 1, 2, 2, 1, 1, 2, 2, 3, 3, 4, 4, 3, 3, 4, 4}));
}

TEST(BatchNorm, TrainNormalizesTwoValues) {
    const Tensor x = Tensor::from_data({2, 1, 1, 1}, {-1, 1});
    auto stats = RunningStats::fresh(1);
    const Tensor y = batch_norm2d(x, Tensor::full({1}, 1), Tensor::zeros({1}), stats, Mode::Train);
    const double expect = 1.0 / std::sqrt(1.0 + 1e-5);
    EXPECT_NEAR(y.data()[0], -expect, 1e-6);
    EXPECT_NEAR(y.data()[1], expect, 1e-6);
}

TEST(BatchNorm, ConstantInputGivesBeta) {
    const Tensor x = Tensor::full({3, 2, 2, 2}, 7);
    auto stats = RunningStats::fresh(2);
    const Tensor beta = Tensor::from_data({2}, {0.5, -1});
    const Tensor y = batch_norm2d(x, Tensor::full({2}, 3), beta, stats, Mode::Train);
    for (Index i = 0; i < 24; ++i) EXPECT_NEAR(y.data()[i], (i / 4) % 2 == 0 ? 0.5 : -1.0, 1e-12);
}

TEST(BatchNorm, EvalWithUnitStatsIsAffine) {
    const Tensor x = random_tensor({2, 1, 3, 3}, 9);
    RunningStats stats{Tensor::zeros({1}), Tensor::full({1}, 1)};
    const Tensor y = batch_norm2d(x, Tensor::full({1}, 2), Tensor::full({1}, 0.25), stats, Mode::Eval);
    const double s = 2.0 / std::sqrt(1.0 + 1e-5);
    for (Index i = 0; i < x.numel(); ++i) EXPECT_NEAR(y.data()[i], s * x.data()[i] + 0.25, 1e-6);
}

TEST(BatchNorm, TrainNeedsTwoValuesPerChannel) {
    auto stats = RunningStats::fresh(1);
    EXPECT_THROW(batch_norm2d(Tensor::zeros({1, 1, 1, 1}), Tensor::full({1}, 1), Tensor::zeros({1}), stats, Mode::Train),
                 ShapeError);
}

TEST(Activation, LeakyRelu) {
    EXPECT_NEAR(leaky_relu(Tensor::from_data({1}, {-2}), Real(0.2)).item(), -0.4, 1e-7);
    const Tensor x = random_tensor({10}, 11);
    EXPECT_EQ(values(leaky_relu(x, 1)), values(x));
    EXPECT_EQ(values(relu(Tensor::from_data({2}, {-1, 3}))), (std::vector<Real>{0, 3}));
}

TEST(Linear, AllOnes) {
    const Tensor x = Tensor::from_data({1, 3}, {1, 2, 3});
    EXPECT_EQ(linear(x, Tensor::full({3, 1}, 1), Tensor::zeros({1})).item(), Real(6));
}

TEST(LogSoftmax, UniformShiftAndSaturation) {
    const Tensor u = log_softmax(Tensor::zeros({1, 10}));
    for (Real v : u.data()) EXPECT_NEAR(v, -2.302585, 1e-6);
    const Tensor x = random_tensor({3, 10}, 12);
    EXPECT_LT(test::max_abs_diff(log_softmax(x), log_softmax(add(x, Tensor::full({3, 10}, 50)))), 1e-9);
    std::vector<Real> big(10, 0);
    big[4] = 1000;
    const Tensor s = log_softmax(Tensor::from_data({1, 10}, big));
    EXPECT_NEAR(s.data()[4], 0, 1e-12);
    for (Index i = 0; i < 3; ++i) {
        double total = 0;
        for (Index j = 0; j < 10; ++j) total += std::exp(double(log_softmax(x).data()[i * 10 + j]));
        EXPECT_NEAR(total, 1, 1e-9);
    }
}

TEST(Autograd, SquareSum) {
    Tensor x = Tensor::from_data({2}, {1, 2});
    x.set_requires_grad(true);
    const Tensor loss = sum(mul(x, x));
    loss.backward();
    EXPECT_EQ(std::vector<Real>(x.grad().begin(), x.grad().end()), (std::vector<Real>{2, 4}));
    EXPECT_THROW(loss.backward(), AutogradError);
}

TEST(Autograd, NonScalarBackwardIsError) {
    Tensor x = random_tensor({3}, 1, -1, 1, true);
    EXPECT_THROW(scale(x, 2).backward(), AutogradError);
}

TEST(Autograd, NoGradGuardSkipsGraph) {
    Tensor x = random_tensor({3}, 1, -1, 1, true);
    NoGradGuard guard;
    EXPECT_FALSE(sum(x).requires_grad());
}

TEST(Gradcheck, SumIsExact) {
    Tensor x = random_tensor({4}, 2, -1, 1, true);
    const auto r = gradcheck([](const Tensor& t) { return sum(t); }, x);
    EXPECT_LT(r.max_rel_error, 1e-9);
}

TEST(Gradcheck, ConvLeakyReluSum) {
    if constexpr (!kReferencePrecision) GTEST_SKIP();
    Tensor x = random_tensor({1, 2, 6, 6}, 3, -1, 1, true);
    Tensor k = random_tensor({3, 2, 3, 3}, 4, -1, 1, true);
    const auto r = gradcheck([&] { return sum(leaky_relu(conv2d(x, k, Tensor(), {1, 1}), Real(0.2))); }, {x, k});
    EXPECT_LT(r.max_rel_error, 1e-6) << r.worst;
}
