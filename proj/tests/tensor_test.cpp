#include <agcn/gradcheck.hpp>
#include <agcn/loss.hpp>
#include <agcn/ops.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace agcn;

namespace {

Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0)
{
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> v(numel(shape));
    for (auto& x : v)
        x = dist(rng);
    return Tensor<double>(std::move(shape), std::move(v));
}

// Projects an arbitrary output onto a fixed random direction so every output
// element influences the scalar loss.
Tensor<double> project(const Tensor<double>& y, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    return sum(mul(y, random_tensor(y.shape(), rng)));
}

void expect_gradcheck(const std::function<Tensor<double>()>& fn,
                      std::vector<std::pair<std::string, Tensor<double>>> inputs)
{
    auto report = gradcheck<double>(fn, std::move(inputs));
    EXPECT_TRUE(report.passed) << report.to_text();
}

} // namespace

TEST(Tensor, ElementCountMatchesShape)
{
    Tensor<float> t(Shape{2, 3, 4});
    EXPECT_EQ(t.size(), 24u);
    EXPECT_THROW(Tensor<float>(Shape{2, 2}, std::vector<float>{1, 2, 3}), DimensionError);
    EXPECT_THROW(Tensor<float>(Shape{2, 0}), DimensionError);
}

TEST(Tensor, GradientMatchesShapeOnceMaterialized)
{
    Tensor<double> x(Shape{2, 3}, 1.0);
    x.set_requires_grad(true);
    Tape<double> tape;
    {
        TapeScope<double> scope(tape);
        auto loss = sum(mul(x, x));
        tape.backward(loss);
    }
    ASSERT_TRUE(x.has_grad());
    EXPECT_EQ(x.grad().size(), x.size());
}

TEST(Matmul, IdentityLeavesOperandUnchanged)
{
    Tensor<double> eye(Shape{2, 2}, {1, 0, 0, 1});
    Tensor<double> m(Shape{2, 2}, {1, 2, 3, 4});
    auto r = matmul(eye, m);
    EXPECT_EQ(std::vector<double>(r.data().begin(), r.data().end()), (std::vector<double>{1, 2, 3, 4}));
}

TEST(Matmul, HandComputedProduct)
{
    Tensor<double> a(Shape{2, 2}, {1, 2, 3, 4});
    Tensor<double> b(Shape{2, 2}, {5, 6, 7, 8});
    auto r = matmul(a, b);
    EXPECT_EQ(std::vector<double>(r.data().begin(), r.data().end()), (std::vector<double>{19, 22, 43, 50}));
}

TEST(Matmul, ZeroMatrixGivesZero)
{
    std::mt19937_64 rng(3);
    Tensor<double> z(Shape{3, 4}, 0.0);
    auto r = matmul(z, random_tensor({4, 5}, rng));
    for (auto v : r.data())
        EXPECT_EQ(v, 0.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes)
{
    Tensor<double> a(Shape{2, 3});
    Tensor<double> b(Shape{4, 2});
    try {
        matmul(a, b);
        FAIL() << "expected DimensionError";
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("[2, 3]"), std::string::npos);
        EXPECT_NE(msg.find("[4, 2]"), std::string::npos);
    }
}

TEST(Matmul, AgreesWithTripleLoopOnRandom8x8)
{
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        auto a = random_tensor({8, 8}, rng);
        auto b = random_tensor({8, 8}, rng);
        auto r = matmul(a, b);
        for (std::size_t i = 0; i < 8; ++i)
            for (std::size_t j = 0; j < 8; ++j) {
                double acc = 0.0;
                for (std::size_t k = 0; k < 8; ++k)
                    acc += a.at({i, k}) * b.at({k, j});
                EXPECT_NEAR(r.at({i, j}), acc, 1e-12);
            }
    }
}

TEST(Matmul, SharedRightOperandAcrossBatch)
{
    std::mt19937_64 rng(5);
    auto a = random_tensor({3, 4, 2}, rng);
    auto b = random_tensor({2, 5}, rng);
    auto r = matmul(a, b);
    ASSERT_EQ(r.shape(), (Shape{3, 4, 5}));
    for (std::size_t n = 0; n < 3; ++n)
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 0; j < 5; ++j) {
                double acc = 0.0;
                for (std::size_t k = 0; k < 2; ++k)
                    acc += a.at({n, i, k}) * b.at({k, j});
                EXPECT_NEAR(r.at({n, i, j}), acc, 1e-12);
            }
}

TEST(Softmax, ZerosGiveUniform)
{
    auto y = softmax(Tensor<double>(Shape{3}, 0.0), 0);
    for (auto v : y.data())
        EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
}

TEST(Softmax, LogTwoCase)
{
    auto y = softmax(Tensor<double>(Shape{2}, {0.0, std::log(2.0)}), 0);
    EXPECT_NEAR(y[0], 1.0 / 3.0, 1e-15);
    EXPECT_NEAR(y[1], 2.0 / 3.0, 1e-15);
}

TEST(Softmax, ShiftInvariantAndSlicesSumToOne)
{
    std::mt19937_64 rng(2);
    auto x = random_tensor({4, 5, 3}, rng, -5, 5);
    auto shifted = detail::unary(x, [](double v) { return v + 17.5; }, [](double, double) { return 1.0; });
    for (std::size_t axis = 0; axis < 3; ++axis) {
        auto a = softmax(x, axis);
        auto b = softmax(shifted, axis);
        for (std::size_t i = 0; i < a.size(); ++i)
            EXPECT_NEAR(a[i], b[i], 1e-12);
        auto s = mean(a, {axis});
        for (auto v : s.data())
            EXPECT_NEAR(v * static_cast<double>(x.dim(axis)), 1.0, 1e-6);
    }
    EXPECT_THROW(softmax(x, 3), DimensionError);
}

TEST(TemporalConv, UnitKernelIsIdentity)
{
    std::mt19937_64 rng(4);
    auto x = random_tensor({2, 1, 5, 3}, rng);
    auto y = temporal_conv(x, Tensor<double>(Shape{1, 1, 1, 1}, 1.0), 1, 0);
    ASSERT_EQ(y.shape(), x.shape());
    for (std::size_t i = 0; i < x.size(); ++i)
        EXPECT_EQ(y[i], x[i]);
}

TEST(TemporalConv, HandConvolutionWithZeroPad)
{
    Tensor<double> x(Shape{1, 1, 3, 1}, {1, 2, 3});
    auto y = temporal_conv(x, Tensor<double>(Shape{1, 1, 3, 1}, 1.0), 1, 1);
    EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()), (std::vector<double>{3, 6, 5}));
}

TEST(TemporalConv, StrideTwoLength)
{
    auto y = temporal_conv(Tensor<double>(Shape{1, 2, 4, 3}, 1.0), Tensor<double>(Shape{5, 2, 3, 1}, 1.0), 2, 1);
    EXPECT_EQ(y.shape(), (Shape{1, 5, 2, 3}));
}

TEST(TemporalConv, EvenKernelRejected)
{
    EXPECT_THROW(temporal_conv(Tensor<double>(Shape{1, 1, 4, 2}), Tensor<double>(Shape{1, 1, 2, 1}), 1, 0),
                 DimensionError);
}

TEST(BatchNorm, ConstantInputGivesBeta)
{
    Tensor<double> x(Shape{4, 2, 3}, 2.5);
    Tensor<double> gamma(Shape{2}, {1.7, 0.3}), beta(Shape{2}, {0.25, -1.0});
    Tensor<double> rm(Shape{2}, 0.0), rv(Shape{2}, 1.0);
    auto y = batch_norm(x, gamma, beta, rm, rv, true);
    for (std::size_t b = 0; b < 4; ++b)
        for (std::size_t i = 0; i < 3; ++i) {
            EXPECT_DOUBLE_EQ(y.at({b, 0, i}), 0.25);
            EXPECT_DOUBLE_EQ(y.at({b, 1, i}), -1.0);
        }
}

TEST(BatchNorm, UnitVarianceInputPassesThrough)
{
    Tensor<double> x(Shape{2, 1}, {-1.0, 1.0});
    Tensor<double> gamma(Shape{1}, 1.0), beta(Shape{1}, 0.0);
    Tensor<double> rm(Shape{1}, 0.0), rv(Shape{1}, 1.0);
    auto y = batch_norm(x, gamma, beta, rm, rv, true);
    const double s = 1.0 / std::sqrt(1.0 + 1e-5);
    EXPECT_NEAR(y[0], -s, 1e-15);
    EXPECT_NEAR(y[1], s, 1e-15);
    // running stats: momentum 0.1, unbiased batch variance 2
    EXPECT_NEAR(rm[0], 0.0, 1e-15);
    EXPECT_NEAR(rv[0], 0.9 * 1.0 + 0.1 * 2.0, 1e-15);
}

TEST(BatchNorm, EvalWithUnitStatsIsAffine)
{
    std::mt19937_64 rng(9);
    auto x = random_tensor({3, 2, 4}, rng);
    Tensor<double> gamma(Shape{2}, {2.0, -0.5}), beta(Shape{2}, {0.1, 0.2});
    Tensor<double> rm(Shape{2}, 0.0), rv(Shape{2}, 1.0);
    auto y = batch_norm(x, gamma, beta, rm, rv, false);
    const double s = 1.0 / std::sqrt(1.0 + 1e-5);
    for (std::size_t b = 0; b < 3; ++b)
        for (std::size_t c = 0; c < 2; ++c)
            for (std::size_t i = 0; i < 4; ++i)
                EXPECT_NEAR(y.at({b, c, i}), gamma[c] * x.at({b, c, i}) * s + beta[c], 1e-14);
    EXPECT_EQ(rm[0], 0.0);
    EXPECT_EQ(rv[1], 1.0);
}

TEST(MiscPrimitives, Relu)
{
    auto y = relu(Tensor<double>(Shape{2}, {-2.0, 3.0}));
    EXPECT_EQ(y[0], 0.0);
    EXPECT_EQ(y[1], 3.0);
}

TEST(MiscPrimitives, DropoutRateZeroIsIdentity)
{
    std::mt19937_64 rng(1);
    auto x = random_tensor({10}, rng);
    for (bool training : {true, false}) {
        auto y = dropout(x, 0.0, 42, training);
        for (std::size_t i = 0; i < x.size(); ++i)
            EXPECT_EQ(y[i], x[i]);
    }
}

TEST(MiscPrimitives, DropoutScalesSurvivorsAndIsIdentityInEval)
{
    Tensor<double> x(Shape{1000}, 1.0);
    auto y = dropout(x, 0.5, 7, true);
    std::size_t kept = 0;
    for (auto v : y.data()) {
        EXPECT_TRUE(v == 0.0 || v == 2.0);
        kept += v != 0.0;
    }
    EXPECT_GT(kept, 400u);
    EXPECT_LT(kept, 600u);
    auto e = dropout(x, 0.5, 7, false);
    for (auto v : e.data())
        EXPECT_EQ(v, 1.0);
    EXPECT_THROW(dropout(x, 1.0, 7, true), ValidationError);
}

TEST(MiscPrimitives, MeanOfConstant)
{
    auto y = mean(Tensor<double>(Shape{2, 3, 4}, 1.25), {1, 2});
    ASSERT_EQ(y.shape(), (Shape{2}));
    EXPECT_DOUBLE_EQ(y[0], 1.25);
    EXPECT_DOUBLE_EQ(y[1], 1.25);
}

TEST(MiscPrimitives, BroadcastMismatchRejected)
{
    EXPECT_THROW(add(Tensor<double>(Shape{2, 3}), Tensor<double>(Shape{2})), DimensionError);
    auto y = add(Tensor<double>(Shape{2, 3}, 1.0), Tensor<double>(Shape{3}, {1, 2, 3}));
    EXPECT_EQ(y.at({1, 2}), 4.0);
}

TEST(MiscPrimitives, PermuteMovesAxes)
{
    std::mt19937_64 rng(8);
    auto x = random_tensor({2, 3, 4}, rng);
    auto y = permute(x, {2, 0, 1});
    ASSERT_EQ(y.shape(), (Shape{4, 2, 3}));
    for (std::size_t a = 0; a < 2; ++a)
        for (std::size_t b = 0; b < 3; ++b)
            for (std::size_t c = 0; c < 4; ++c)
                EXPECT_EQ(y.at({c, a, b}), x.at({a, b, c}));
}

TEST(Backward, SumOfSquares)
{
    Tensor<double> x(Shape{2}, {1.0, 2.0});
    x.set_requires_grad(true);
    Tape<double> tape;
    TapeScope<double> scope(tape);
    tape.backward(sum(mul(x, x)));
    EXPECT_EQ(x.grad()[0], 2.0);
    EXPECT_EQ(x.grad()[1], 4.0);
}

TEST(Backward, CrossEntropyAtUniformLogits)
{
    Tensor<double> logits(Shape{1, 3}, 0.0);
    logits.set_requires_grad(true);
    Tape<double> tape;
    TapeScope<double> scope(tape);
    const std::vector<std::size_t> target{0};
    tape.backward(cross_entropy(logits, std::span<const std::size_t>(target)));
    EXPECT_NEAR(logits.grad()[0], -2.0 / 3.0, 1e-15);
    EXPECT_NEAR(logits.grad()[1], 1.0 / 3.0, 1e-15);
    EXPECT_NEAR(logits.grad()[2], 1.0 / 3.0, 1e-15);
}

TEST(Backward, AccumulatesAcrossUses)
{
    Tensor<double> x(Shape{1}, 3.0);
    x.set_requires_grad(true);
    Tape<double> tape;
    TapeScope<double> scope(tape);
    tape.backward(sum(add(mul(x, x), x))); // d/dx (x^2 + x) = 7
    EXPECT_EQ(x.grad()[0], 7.0);
}

TEST(Backward, NonScalarLossRejected)
{
    Tensor<double> x(Shape{2}, 1.0);
    x.set_requires_grad(true);
    Tape<double> tape;
    TapeScope<double> scope(tape);
    auto y = mul(x, x);
    EXPECT_THROW(tape.backward(y), AutodiffError);
}

TEST(Backward, SecondPassWithoutRerecordingRejected)
{
    Tensor<double> x(Shape{2}, 1.0);
    x.set_requires_grad(true);
    Tape<double> tape;
    TapeScope<double> scope(tape);
    auto loss = sum(mul(x, x));
    tape.backward(loss);
    EXPECT_THROW(tape.backward(loss), AutodiffError);
}

TEST(Backward, DisconnectedLossRejected)
{
    Tensor<double> x(Shape{2}, 1.0);
    Tape<double> tape;
    TapeScope<double> scope(tape);
    EXPECT_THROW(tape.backward(sum(x)), AutodiffError);
}

TEST(Backward, DeterministicWithFixedDropoutSeed)
{
    std::mt19937_64 rng(12);
    auto w = random_tensor({4, 3}, rng);
    auto x = random_tensor({2, 3, 5}, rng);
    auto run = [&]() {
        w.zero_grad();
        Tape<double> tape;
        TapeScope<double> scope(tape);
        auto y = dropout(relu(channel_mix(x, w.set_requires_grad(true))), 0.5, 99, true);
        tape.backward(sum(mul(y, y)));
        return std::vector<double>(w.grad().begin(), w.grad().end());
    };
    EXPECT_EQ(run(), run());
}

// Finite-difference checks for every primitive, double precision.

TEST(PrimitiveGradients, Elementwise)
{
    std::mt19937_64 rng(21);
    auto a = random_tensor({3, 4}, rng);
    auto b = random_tensor({3, 4}, rng);
    auto c = random_tensor({4}, rng);
    auto pos = random_tensor({3, 4}, rng, 0.5, 2.0);
    expect_gradcheck([&] { return project(add(a, b), 1); }, {{"a", a}, {"b", b}});
    expect_gradcheck([&] { return project(sub(a, c), 2); }, {{"a", a}, {"c", c}});
    expect_gradcheck([&] { return project(mul(a, c), 3); }, {{"a", a}, {"c", c}});
    expect_gradcheck([&] { return project(scale(a, 0.37), 4); }, {{"a", a}});
    expect_gradcheck([&] { return project(exp(a), 5); }, {{"a", a}});
    expect_gradcheck([&] { return project(log(pos), 6); }, {{"pos", pos}});
    expect_gradcheck([&] { return project(relu(a), 7); }, {{"a", a}});
    expect_gradcheck([&] { return project(dropout(a, 0.3, 17, true), 8); }, {{"a", a}});
}

TEST(PrimitiveGradients, ShapeOps)
{
    std::mt19937_64 rng(22);
    auto x = random_tensor({2, 3, 4}, rng);
    expect_gradcheck([&] { return project(reshape(x, {6, 4}), 1); }, {{"x", x}});
    expect_gradcheck([&] { return project(permute(x, {1, 2, 0}), 2); }, {{"x", x}});
    expect_gradcheck([&] { return project(mean(x, {0, 2}), 3); }, {{"x", x}});
    expect_gradcheck([&] { return sum(x); }, {{"x", x}});
}

TEST(PrimitiveGradients, Matmul)
{
    std::mt19937_64 rng(23);
    auto a = random_tensor({2, 3, 4}, rng);
    auto b = random_tensor({2, 4, 5}, rng);
    auto m = random_tensor({4, 5}, rng);
    expect_gradcheck([&] { return project(matmul(a, b), 1); }, {{"a", a}, {"b", b}});
    expect_gradcheck([&] { return project(matmul(a, m), 2); }, {{"a", a}, {"m", m}});
}

TEST(PrimitiveGradients, Softmax)
{
    std::mt19937_64 rng(24);
    auto x = random_tensor({3, 4, 2}, rng, -2, 2);
    for (std::size_t axis = 0; axis < 3; ++axis)
        expect_gradcheck([&] { return project(softmax(x, axis), axis + 1); }, {{"x", x}});
}

TEST(PrimitiveGradients, TemporalConvAndChannelMix)
{
    std::mt19937_64 rng(25);
    auto x = random_tensor({2, 3, 6, 4}, rng);
    auto w = random_tensor({2, 3, 3, 1}, rng);
    auto w1 = random_tensor({5, 3}, rng);
    expect_gradcheck([&] { return project(temporal_conv(x, w, 1, 1), 1); }, {{"x", x}, {"w", w}});
    expect_gradcheck([&] { return project(temporal_conv(x, w, 2, 1), 2); }, {{"x", x}, {"w", w}});
    expect_gradcheck([&] { return project(channel_mix(x, w1), 3); }, {{"x", x}, {"w", w1}});
}

TEST(PrimitiveGradients, BatchNorm)
{
    std::mt19937_64 rng(26);
    auto x = random_tensor({3, 2, 5}, rng);
    auto gamma = random_tensor({2}, rng, 0.5, 1.5);
    auto beta = random_tensor({2}, rng);
    Tensor<double> rm(Shape{2}, 0.0), rv(Shape{2}, 1.0);
    for (bool training : {true, false})
        expect_gradcheck([&] { return project(batch_norm(x, gamma, beta, rm, rv, training), 1); },
                         {{"x", x}, {"gamma", gamma}, {"beta", beta}});
}

TEST(PrimitiveGradients, CrossEntropy)
{
    std::mt19937_64 rng(27);
    auto logits = random_tensor({4, 3}, rng, -3, 3);
    const std::vector<std::size_t> t{0, 2, 1, 2};
    expect_gradcheck([&] { return cross_entropy(logits, std::span<const std::size_t>(t)); }, {{"logits", logits}});
}

TEST(GradCheck, SinglePrecisionRejected)
{
    Tensor<float> x(Shape{2}, 1.0f);
    EXPECT_THROW(gradcheck<float>([&] { return sum(x); }, {{"x", x}}), PrecisionError);
}

TEST(GradCheck, LinearOpIsNearlyExact)
{
    std::mt19937_64 rng(28);
    auto x = random_tensor({3, 4}, rng);
    auto w = random_tensor({4, 2}, rng);
    auto b = random_tensor({2}, rng);
    auto report = gradcheck<double>([&] { return project(linear(x, w, b), 5); }, {{"w", w}, {"b", b}});
    EXPECT_TRUE(report.passed);
    EXPECT_LT(report.max_rel_error(), 1e-8) << report.to_text();
}

TEST(GradCheck, CorruptedAdjointFails)
{
    // x^2 with a sign-flipped adjoint
    auto bad_square = [](const Tensor<double>& x) {
        Tensor<double> out(x.shape());
        for (std::size_t i = 0; i < x.size(); ++i)
            out.mutable_data()[i] = x[i] * x[i];
        if (auto* tape = recording_tape({&x}))
            tape->record(out.node(), [x, out]() {
                auto gx = x.node()->grad_span();
                for (std::size_t i = 0; i < x.size(); ++i)
                    gx[i] -= out.grad()[i] * 2.0 * x[i];
            });
        return out;
    };
    std::mt19937_64 rng(29);
    auto x = random_tensor({5}, rng, 0.5, 1.5);
    auto report = gradcheck<double>([&] { return sum(bad_square(x)); }, {{"x", x}});
    EXPECT_FALSE(report.passed);
    EXPECT_NEAR(report.max_rel_error(), 2.0, 1e-6);
}
