#include <agcn/gradcheck.hpp>
#include <agcn/loss.hpp>
#include <agcn/model.hpp>
#include <agcn/oracles.hpp>

#include <gtest/gtest.h>

#include <map>
#include <random>
#include <set>

using namespace agcn;

namespace {

template <class T = double>
Tensor<T> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0)
{
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<T> v(numel(shape));
    for (auto& x : v)
        x = static_cast<T>(dist(rng));
    return Tensor<T>(std::move(shape), std::move(v));
}

Tensor<double> identity(std::size_t n)
{
    Tensor<double> t(Shape{n, n});
    for (std::size_t i = 0; i < n; ++i)
        t.mutable_data()[i * n + i] = 1.0;
    return t;
}

SkeletonSpec random_tree(std::mt19937_64& rng, std::size_t n)
{
    SkeletonSpec s{"random", n, {}, 0};
    for (std::size_t v = 1; v < n; ++v)
        s.edges.emplace_back(std::uniform_int_distribution<std::size_t>(0, v - 1)(rng), v);
    s.center = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
    return s;
}

template <class T>
void randomize(AdaptiveLayer<T>& layer, std::mt19937_64& rng)
{
    for (std::size_t k = 0; k < kNumSubsets; ++k) {
        for (Tensor<T>* t : {&layer.B[k], &layer.theta[k], &layer.phi[k]}) {
            if (t->size() <= 1)
                continue;
            for (auto& v : t->mutable_data())
                v = static_cast<T>(std::uniform_real_distribution<double>(-0.5, 0.5)(rng));
        }
    }
}

std::vector<Tensor<double>> copy_weights(const std::array<Tensor<double>, 3>& W)
{
    return {W[0].detach(), W[1].detach(), W[2].detach()};
}

Tensor<double> projected_loss(const Tensor<double>& y, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    return sum(mul(y, random_tensor(y.shape(), rng)));
}

NetworkOptions tiny_options()
{
    NetworkOptions opt;
    opt.channels = {4, 4, 4, 6, 6, 6, 8, 8, 8};
    opt.temporal_kernel = 3;
    return opt;
}

} // namespace

// --- embedded_gaussian -----------------------------------------------------

TEST(EmbeddedGaussian, ZeroEmbeddingsGiveUniformRows)
{
    std::mt19937_64 rng(1);
    auto f = random_tensor({2, 3, 4, 5}, rng);
    auto c = embedded_gaussian(f, Tensor<double>(Shape{2, 3}), Tensor<double>(Shape{2, 3}));
    ASSERT_EQ(c.shape(), (Shape{2, 5, 5}));
    for (auto v : c.data())
        EXPECT_NEAR(v, 0.2, 1e-15);
}

TEST(EmbeddedGaussian, SingleJoint)
{
    std::mt19937_64 rng(2);
    auto c = embedded_gaussian(random_tensor({1, 3, 4, 1}, rng), random_tensor({2, 3}, rng), random_tensor({2, 3}, rng));
    ASSERT_EQ(c.size(), 1u);
    EXPECT_EQ(c[0], 1.0);
}

TEST(EmbeddedGaussian, MatchesLoopOracleAndRowsSumToOne)
{
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        auto f = random_tensor({2, 3, 5, 4}, rng);
        auto wt = random_tensor({2, 3}, rng);
        auto wp = random_tensor({2, 3}, rng);
        auto fast = embedded_gaussian(f, wt, wp);
        auto ref = oracle::embedded_gaussian(f, wt, wp);
        for (std::size_t i = 0; i < fast.size(); ++i)
            EXPECT_NEAR(fast[i], ref[i], 1e-12);
        for (std::size_t r = 0; r < 2 * 4; ++r) {
            double row = 0.0;
            for (std::size_t j = 0; j < 4; ++j)
                row += fast[r * 4 + j];
            EXPECT_NEAR(row, 1.0, 1e-6);
        }
    }
}

TEST(EmbeddedGaussian, RowsSumToOneInSinglePrecision)
{
    std::mt19937_64 rng(4);
    auto f = random_tensor<float>({3, 4, 6, 8}, rng, -2, 2);
    auto c = embedded_gaussian(f, random_tensor<float>({3, 4}, rng), random_tensor<float>({3, 4}, rng));
    for (std::size_t r = 0; r < 3 * 8; ++r) {
        double row = 0.0;
        for (std::size_t j = 0; j < 8; ++j) {
            const double v = c[r * 8 + j];
            EXPECT_GE(v, 0.0);
            EXPECT_LE(v, 1.0);
            row += v;
        }
        EXPECT_NEAR(row, 1.0, 1e-6);
    }
}

// --- adaptive_spatial_forward ------------------------------------------------

TEST(AdaptiveSpatial, AdjacencyOnlyWithIdentityWeightsMatchesLoop)
{
    const auto spec = toy9();
    const auto A = adjacency_tensors<double>(normalized_adjacency(spec));
    ParameterSet<double> ps;
    std::mt19937_64 rng(5);
    auto layer = AdaptiveLayer<double>::create(ps, "l", 3, 3, 9, 1, {true, false, false}, rng);
    for (auto& w : layer.W)
        w = identity(3);
    auto f = random_tensor({2, 3, 4, 9}, rng);
    auto out = adaptive_spatial_forward(f, layer, A, /*with_residual=*/false);
    for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t c = 0; c < 3; ++c)
            for (std::size_t t = 0; t < 4; ++t)
                for (std::size_t i = 0; i < 9; ++i) {
                    double acc = 0.0;
                    for (std::size_t k = 0; k < 3; ++k)
                        for (std::size_t j = 0; j < 9; ++j)
                            acc += f.at({b, c, t, j}) * A[k].at({j, i});
                    EXPECT_NEAR(out.at({b, c, t, i}), acc, 1e-12);
                }
}

TEST(AdaptiveSpatial, FreshInitLearnedTermsAreUniform)
{
    const auto A = adjacency_tensors<double>(normalized_adjacency(toy9()));
    ParameterSet<double> ps;
    std::mt19937_64 rng(6);
    auto layer = AdaptiveLayer<double>::create(ps, "l", 3, 5, 9, 2, {false, true, true}, rng);
    auto f = random_tensor({2, 3, 4, 9}, rng);
    auto out = adaptive_spatial_forward(f, layer, A);
    Tensor<double> uniform(Shape{9, 9}, 1.0 / 9.0);
    auto ref = oracle::matrix_layer(f, copy_weights(layer.W), {uniform, uniform, uniform});
    auto res = oracle::matrix_layer(f, {layer.residual->detach()}, {identity(9)});
    for (std::size_t i = 0; i < out.size(); ++i)
        EXPECT_NEAR(out[i], ref[i] + res[i], 1e-12);
}

TEST(AdaptiveSpatial, SingleVertex)
{
    SkeletonSpec one{"one", 1, {}, 0};
    const double alpha = 0.001;
    const auto A = adjacency_tensors<double>(normalized_adjacency(one, alpha));
    ParameterSet<double> ps;
    std::mt19937_64 rng(7);
    auto layer = AdaptiveLayer<double>::create(ps, "l", 2, 2, 1, 1, {true, false, false}, rng);
    auto f = random_tensor({1, 2, 3, 1}, rng);
    auto out = adaptive_spatial_forward(f, layer, A);
    // Only the root subset has an entry: 1/(1+alpha). Residual is the identity.
    for (std::size_t co = 0; co < 2; ++co)
        for (std::size_t t = 0; t < 3; ++t) {
            double expected = f.at({0, co, t, 0});
            for (std::size_t ci = 0; ci < 2; ++ci)
                expected += layer.W[0].at({co, ci}) * f.at({0, ci, t, 0}) / (1.0 + alpha);
            EXPECT_NEAR(out.at({0, co, t, 0}), expected, 1e-14);
        }
}

TEST(AdaptiveSpatial, AllTermsDisabledRejected)
{
    const auto A = adjacency_tensors<double>(normalized_adjacency(toy9()));
    ParameterSet<double> ps;
    std::mt19937_64 rng(8);
    auto layer = AdaptiveLayer<double>::create(ps, "l", 2, 2, 9, 1, {false, false, false}, rng);
    EXPECT_THROW(adaptive_spatial_forward(random_tensor({1, 2, 2, 9}, rng), layer, A), ValidationError);
    auto cfg = make_network_config(toy9(), 3, 4, 1, [] {
        auto o = tiny_options();
        o.terms = {false, false, false};
        return o;
    }());
    EXPECT_THROW(validate_network_config(cfg), ValidationError);
}

TEST(AdaptiveSpatial, MatchesMatrixOracleOnRandomInstances)
{
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t N = 2 + rng() % 7, T = 1 + rng() % 8;
        const auto spec = random_tree(rng, N);
        const auto A = adjacency_tensors<double>(normalized_adjacency(spec));
        ParameterSet<double> ps;
        auto layer = AdaptiveLayer<double>::create(ps, "l", 3, 4, N, 2, {}, rng);
        randomize(layer, rng);
        auto f = random_tensor({2, 3, T, N}, rng);
        auto out = adaptive_spatial_forward(f, layer, A, false);
        std::vector<Tensor<double>> graphs;
        for (std::size_t k = 0; k < 3; ++k) {
            auto c = oracle::embedded_gaussian(f, layer.theta[k], layer.phi[k]);
            std::vector<double> g(2 * N * N);
            for (std::size_t b = 0; b < 2; ++b)
                for (std::size_t e = 0; e < N * N; ++e)
                    g[b * N * N + e] = A[k][e] + layer.B[k][e] + c[b * N * N + e];
            graphs.emplace_back(Shape{2, N, N}, std::move(g));
        }
        auto ref = oracle::matrix_layer(f, copy_weights(layer.W), graphs);
        for (std::size_t i = 0; i < out.size(); ++i)
            ASSERT_NEAR(out[i], ref[i], 1e-12);
    }
}

TEST(AdaptiveSpatial, SinglePrecisionMatchesOracle)
{
    std::mt19937_64 rng(10);
    const auto spec = toy9();
    const auto na = normalized_adjacency(spec);
    const auto Af = adjacency_tensors<float>(na);
    const auto Ad = adjacency_tensors<double>(na);
    ParameterSet<float> ps;
    auto layer = AdaptiveLayer<float>::create(ps, "l", 3, 4, 9, 2, {}, rng);
    randomize(layer, rng);
    auto f = random_tensor<float>({2, 3, 5, 9}, rng);
    auto out = adaptive_spatial_forward(f, layer, Af, false);

    auto to_double = [](const Tensor<float>& t) {
        return Tensor<double>(t.shape(), std::vector<double>(t.data().begin(), t.data().end()));
    };
    const auto fd = to_double(f);
    std::vector<Tensor<double>> graphs, weights;
    for (std::size_t k = 0; k < 3; ++k) {
        auto c = oracle::embedded_gaussian(fd, to_double(layer.theta[k]), to_double(layer.phi[k]));
        std::vector<double> g(2 * 81);
        for (std::size_t b = 0; b < 2; ++b)
            for (std::size_t e = 0; e < 81; ++e)
                g[b * 81 + e] = Ad[k][e] + layer.B[k][e] + c[b * 81 + e];
        graphs.emplace_back(Shape{2, 9, 9}, std::move(g));
        weights.push_back(to_double(layer.W[k]));
    }
    auto ref = oracle::matrix_layer(fd, weights, graphs);
    // Tolerance relative to the sum of absolute contributions.
    auto magnitude = [](Tensor<double> t) {
        for (auto& v : t.mutable_data())
            v = std::abs(v);
        return t;
    };
    std::vector<Tensor<double>> abs_graphs, abs_weights;
    for (std::size_t k = 0; k < 3; ++k) {
        abs_graphs.push_back(magnitude(graphs[k]));
        abs_weights.push_back(magnitude(weights[k]));
    }
    auto scale = oracle::matrix_layer(magnitude(fd), abs_weights, abs_graphs);
    for (std::size_t i = 0; i < out.size(); ++i)
        EXPECT_NEAR(out[i], ref[i], 1e-6 * std::max(1.0, scale[i]));
}

// --- baseline_spatial_forward ------------------------------------------------

TEST(BaselineSpatial, UnitMaskEqualsAdaptiveAdjacencyOnly)
{
    std::mt19937_64 rng(11);
    const auto A = adjacency_tensors<double>(normalized_adjacency(toy9()));
    ParameterSet<double> ps;
    auto base = BaselineLayer<double>::create(ps, "b", 3, 5, 9, true, rng);
    auto adapt = AdaptiveLayer<double>::create(ps, "a", 3, 5, 9, 1, {true, false, false}, rng);
    adapt.W = base.W;
    adapt.residual = base.residual;
    auto f = random_tensor({2, 3, 6, 9}, rng);
    auto y1 = baseline_spatial_forward(f, base, A);
    auto y2 = adaptive_spatial_forward(f, adapt, A);
    for (std::size_t i = 0; i < y1.size(); ++i)
        EXPECT_NEAR(y1[i], y2[i], 1e-12);
}

TEST(BaselineSpatial, RandomMaskMatchesPerEdgeScalingOracle)
{
    std::mt19937_64 rng(12);
    const auto na = normalized_adjacency(toy9());
    const auto A = adjacency_tensors<double>(na);
    ParameterSet<double> ps;
    auto layer = BaselineLayer<double>::create(ps, "b", 3, 4, 9, true, rng);
    for (auto& m : layer.M)
        for (auto& v : m.mutable_data())
            v = std::uniform_real_distribution<double>(0.0, 2.0)(rng);
    auto f = random_tensor({2, 3, 4, 9}, rng);
    auto out = baseline_spatial_forward(f, layer, A, false);
    std::vector<Tensor<double>> graphs;
    for (std::size_t k = 0; k < 3; ++k) {
        std::vector<double> g(81);
        for (std::size_t j = 0; j < 9; ++j)
            for (std::size_t i = 0; i < 9; ++i)
                g[j * 9 + i] = na.matrices[k](j, i) * layer.M[k].at({j, i});
        graphs.emplace_back(Shape{9, 9}, std::move(g));
    }
    auto ref = oracle::matrix_layer(f, copy_weights(layer.W), graphs);
    for (std::size_t i = 0; i < out.size(); ++i)
        EXPECT_NEAR(out[i], ref[i], 1e-12);
}

TEST(BaselineSpatial, ZeroMaskCutsTheOnlyEdge)
{
    // Two joints, center 0: joint 1 feeds joint 0 only through the centripetal
    // subset entry (1, 0).
    SkeletonSpec pair{"pair", 2, {{0, 1}}, 0};
    const auto A = adjacency_tensors<double>(normalized_adjacency(pair));
    ASSERT_NE(A[1].at({1, 0}), 0.0);
    ParameterSet<double> ps;
    std::mt19937_64 rng(13);
    auto layer = BaselineLayer<double>::create(ps, "b", 2, 2, 2, true, rng);
    layer.M[1].mutable_data()[1 * 2 + 0] = 0.0;
    auto f = random_tensor({1, 2, 3, 2}, rng);
    auto g = f.detach();
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t t = 0; t < 3; ++t)
            g.mutable_data()[(c * 3 + t) * 2 + 1] += 5.0; // perturb joint 1
    auto y1 = baseline_spatial_forward(f, layer, A, false);
    auto y2 = baseline_spatial_forward(g, layer, A, false);
    for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t t = 0; t < 3; ++t)
            EXPECT_EQ(y1.at({0, c, t, 0}), y2.at({0, c, t, 0}));
    // With the mask restored, joint 0 sees the perturbation.
    layer.M[1].mutable_data()[1 * 2 + 0] = 1.0;
    auto y3 = baseline_spatial_forward(f, layer, A, false);
    auto y4 = baseline_spatial_forward(g, layer, A, false);
    EXPECT_NE(y3.at({0, 0, 0, 0}), y4.at({0, 0, 0, 0}));
}

// --- block ---------------------------------------------------------------------

TEST(Block, EvalModeIsDeterministic)
{
    std::mt19937_64 rng(14);
    ParameterSet<double> ps;
    const auto A = adjacency_tensors<double>(normalized_adjacency(toy9()));
    BlockConfig cfg{3, 6, 1, 3, 0.5};
    auto block = Block<double>::create(ps, "b", cfg, 9, rng);
    auto x = random_tensor({2, 3, 6, 9}, rng);
    auto y1 = block_forward(x, block, A, Mode::eval, 1);
    auto y2 = block_forward(x, block, A, Mode::eval, 2);
    for (std::size_t i = 0; i < y1.size(); ++i)
        EXPECT_EQ(y1[i], y2[i]);
}

TEST(Block, StrideTwoHalvesTime)
{
    std::mt19937_64 rng(15);
    ParameterSet<double> ps;
    const auto A = adjacency_tensors<double>(normalized_adjacency(toy9()));
    BlockConfig cfg{4, 4, 2, 9, 0.5};
    auto block = Block<double>::create(ps, "b", cfg, 9, rng);
    auto y = block_forward(random_tensor({2, 4, 8, 9}, rng), block, A, Mode::train, 3);
    EXPECT_EQ(y.shape(), (Shape{2, 4, 4, 9}));
}

TEST(Block, ZeroBranchPassesResidualThrough)
{
    std::mt19937_64 rng(16);
    const auto A = adjacency_tensors<double>(normalized_adjacency(toy9()));
    for (std::size_t cin : {4u, 3u}) {
        ParameterSet<double> ps;
        BlockConfig cfg{cin, 4, 1, 3, 0.5};
        auto block = Block<double>::create(ps, "b", cfg, 9, rng);
        for (auto& v : block.temporal_weight.mutable_data())
            v = 0.0;
        auto x = random_tensor({2, cin, 5, 9}, rng);
        auto y = block_forward(x, block, A, Mode::train, 4);
        Tensor<double> r = x;
        if (block.residual_weight)
            r = (*block.residual_bn)(temporal_conv(x, *block.residual_weight, 1, 0), Mode::train);
        for (std::size_t i = 0; i < y.size(); ++i)
            EXPECT_NEAR(y[i], std::max(0.0, r[i]), 1e-12);
    }
}

// --- network ---------------------------------------------------------------------

TEST(Network, ZeroInputGivesClassifierBias)
{
    Network<double> net(make_network_config(toy9(), 3, 4, 2, tiny_options()), 1);
    const auto& bias = net.parameters().get("fc.bias");
    for (Mode mode : {Mode::eval, Mode::train}) {
        auto logits = net.forward(Tensor<double>(Shape{3, 3, 8, 9, 2}), mode, 5);
        ASSERT_EQ(logits.shape(), (Shape{3, 4}));
        for (std::size_t b = 0; b < 3; ++b)
            for (std::size_t k = 0; k < 4; ++k)
                EXPECT_NEAR(logits.at({b, k}), bias[k], 1e-12);
    }
}

TEST(Network, IdenticalSamplesGiveIdenticalRows)
{
    std::mt19937_64 rng(17);
    Network<double> net(make_network_config(toy9(), 3, 4, 1, tiny_options()), 2);
    auto one = random_tensor({1, 3, 8, 9, 1}, rng);
    std::vector<double> v;
    for (int i = 0; i < 3; ++i)
        v.insert(v.end(), one.data().begin(), one.data().end());
    auto logits = net.forward(Tensor<double>(Shape{3, 3, 8, 9, 1}, v), Mode::eval);
    for (std::size_t b = 1; b < 3; ++b)
        for (std::size_t k = 0; k < 4; ++k)
            EXPECT_EQ(logits.at({b, k}), logits.at({0, k}));
}

TEST(Network, ToyShapeContract)
{
    std::mt19937_64 rng(18);
    Network<float> net(make_network_config(toy9(), 3, 4, 1), 3);
    auto logits = net.forward(random_tensor<float>({2, 3, 16, 9, 1}, rng), Mode::train, 1);
    EXPECT_EQ(logits.shape(), (Shape{2, 4}));
    EXPECT_THROW(net.forward(random_tensor<float>({2, 3, 16, 8, 1}, rng), Mode::eval), DimensionError);
}

TEST(Network, FullPlanHasPaperChannels)
{
    auto cfg = make_network_config(ntu25(), 3, 60, 2);
    ASSERT_EQ(cfg.blocks.size(), 9u);
    std::vector<std::size_t> out;
    for (const auto& b : cfg.blocks)
        out.push_back(b.out_channels);
    EXPECT_EQ(out, (std::vector<std::size_t>{64, 64, 64, 128, 128, 128, 256, 256, 256}));
}

// --- count_params -------------------------------------------------------------------

TEST(CountParams, AblationDeltas)
{
    const auto spec = toy9();
    const std::size_t N = spec.num_joints;
    auto count = [&](GraphTerms terms, std::size_t classes = 4) {
        NetworkOptions opt;
        opt.terms = terms;
        return Network<float>(make_network_config(spec, 3, classes, 1, opt), 0).count_params();
    };
    const auto full = count({});
    const auto cfg = make_network_config(spec, 3, 4, 1);
    std::size_t c_delta = 0;
    for (const auto& b : cfg.blocks)
        c_delta += kNumSubsets * 2 * b.embed() * b.in_channels;
    EXPECT_EQ(full - count({true, true, false}), c_delta);
    EXPECT_EQ(full - count({true, false, true}), cfg.blocks.size() * kNumSubsets * N * N);
    EXPECT_EQ(full, count({false, true, true}));
    EXPECT_EQ(count({}, 8) - full, 4 * (256 + 1));
}

// --- gradients -------------------------------------------------------------------------

TEST(ModelGradients, EmbeddedGaussian)
{
    std::mt19937_64 rng(19);
    auto f = random_tensor({2, 3, 4, 9}, rng);
    auto wt = random_tensor({2, 3}, rng, -0.5, 0.5);
    auto wp = random_tensor({2, 3}, rng, -0.5, 0.5);
    auto report = gradcheck<double>([&] { return projected_loss(embedded_gaussian(f, wt, wp), 1); },
                                    {{"W_theta", wt}, {"W_phi", wp}, {"f_in", f}});
    EXPECT_TRUE(report.passed) << report.to_text();
}

TEST(ModelGradients, AdaptiveLayerAllTerms)
{
    std::mt19937_64 rng(20);
    const auto A = adjacency_tensors<double>(normalized_adjacency(toy9()));
    ParameterSet<double> ps;
    auto layer = AdaptiveLayer<double>::create(ps, "l", 3, 4, 9, 2, {}, rng);
    randomize(layer, rng);
    auto f = random_tensor({2, 3, 4, 9}, rng);
    std::vector<std::pair<std::string, Tensor<double>>> params;
    for (auto& e : ps.entries())
        params.emplace_back(e.name, e.tensor);
    auto report = gradcheck<double>([&] { return projected_loss(adaptive_spatial_forward(f, layer, A), 2); }, params);
    EXPECT_TRUE(report.passed) << report.to_text();
}

TEST(ModelGradients, BaselineLayerMask)
{
    std::mt19937_64 rng(21);
    const auto A = adjacency_tensors<double>(normalized_adjacency(toy9()));
    ParameterSet<double> ps;
    auto layer = BaselineLayer<double>::create(ps, "b", 3, 4, 9, true, rng);
    auto f = random_tensor({2, 3, 4, 9}, rng);
    std::vector<std::pair<std::string, Tensor<double>>> params;
    for (auto& e : ps.entries())
        params.emplace_back(e.name, e.tensor);
    auto report = gradcheck<double>([&] { return projected_loss(baseline_spatial_forward(f, layer, A), 3); }, params);
    EXPECT_TRUE(report.passed) << report.to_text();
}

TEST(ModelGradients, TinyNetworkCrossEntropy)
{
    std::mt19937_64 rng(22);
    Network<double> net(make_network_config(toy9(), 3, 4, 1, tiny_options()), 4);
    for (std::size_t i = 0; i < net.num_blocks(); ++i)
        if (net.block(i).adaptive)
            randomize(*net.block(i).adaptive, rng);
    auto x = random_tensor({2, 3, 8, 9, 1}, rng);
    const std::vector<std::size_t> targets{1, 3};
    std::vector<std::pair<std::string, Tensor<double>>> params;
    for (auto& e : net.parameters().entries())
        if (e.trainable)
            params.emplace_back(e.name, e.tensor);
    GradCheckOptions opt;
    opt.max_coords = 200;
    opt.seed = 5;
    auto report = gradcheck<double>(
        [&] { return cross_entropy(net.forward(x, Mode::train, 77), std::span<const std::size_t>(targets)); }, params,
        opt);
    EXPECT_TRUE(report.passed) << report.to_text();
}

// --- coverage inventory -------------------------------------------------------------

TEST(Inventory, EveryModelOperationHasAnOracleOrGradientCheck)
{
    const std::map<std::string, std::vector<std::string>> coverage{
        {"embedded_gaussian", {"EmbeddedGaussian.MatchesLoopOracleAndRowsSumToOne", "ModelGradients.EmbeddedGaussian"}},
        {"adaptive_spatial_forward",
         {"AdaptiveSpatial.MatchesMatrixOracleOnRandomInstances", "ModelGradients.AdaptiveLayerAllTerms"}},
        {"baseline_spatial_forward",
         {"BaselineSpatial.RandomMaskMatchesPerEdgeScalingOracle", "ModelGradients.BaselineLayerMask"}},
        {"block_forward", {"Block.ZeroBranchPassesResidualThrough", "ModelGradients.TinyNetworkCrossEntropy"}},
        {"network_forward", {"ModelGradients.TinyNetworkCrossEntropy"}},
        {"count_params", {"CountParams.AblationDeltas"}},
    };
    const std::vector<std::string> operations{"embedded_gaussian",        "adaptive_spatial_forward",
                                              "baseline_spatial_forward", "block_forward",
                                              "network_forward",          "count_params"};
    std::set<std::string> registered;
    const auto* unit = ::testing::UnitTest::GetInstance();
    for (int i = 0; i < unit->total_test_suite_count(); ++i) {
        const auto* suite = unit->GetTestSuite(i);
        for (int j = 0; j < suite->total_test_count(); ++j)
            registered.insert(std::string(suite->name()) + "." + suite->GetTestInfo(j)->name());
    }
    for (const auto& op : operations) {
        auto it = coverage.find(op);
        ASSERT_NE(it, coverage.end()) << "operation " << op << " has no oracle or gradient check";
        for (const auto& test : it->second)
            EXPECT_TRUE(registered.count(test)) << op << " maps to missing test " << test;
    }
}
