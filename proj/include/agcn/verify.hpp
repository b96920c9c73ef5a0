#pragma once

// Ready-made gradient checks on model fragments, in double precision.

#include "gradcheck.hpp"
#include "loss.hpp"
#include "model.hpp"

#include <random>
#include <string>

namespace agcn {

namespace detail {

inline Tensor<double> random_tensor(Shape shape, std::mt19937_64& rng, double bound = 1.0)
{
    std::uniform_real_distribution<double> dist(-bound, bound);
    std::vector<double> v(numel(shape));
    for (auto& x : v)
        x = dist(rng);
    return Tensor<double>(std::move(shape), std::move(v));
}

// B and theta start at zero, where their gradients are degenerate; move them
// off zero so the check exercises every path.
inline void perturb(AdaptiveLayer<double>& layer, std::mt19937_64& rng)
{
    std::uniform_real_distribution<double> dist(-0.5, 0.5);
    for (std::size_t k = 0; k < kNumSubsets; ++k)
        for (Tensor<double>* t : {&layer.B[k], &layer.theta[k], &layer.phi[k]})
            if (t->size() > 1)
                for (auto& v : t->mutable_data())
                    v = dist(rng);
}

// Random linear functional of y, so every output coordinate matters.
inline Tensor<double> projected(const Tensor<double>& y, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    return sum(mul(y, random_tensor(y.shape(), rng)));
}

inline std::vector<std::pair<std::string, Tensor<double>>> trainable(ParameterSet<double>& ps)
{
    std::vector<std::pair<std::string, Tensor<double>>> out;
    for (auto& e : ps.entries())
        if (e.trainable)
            out.emplace_back(e.name, e.tensor);
    return out;
}

} // namespace detail

inline const std::vector<std::string>& gradcheck_fragments()
{
    static const std::vector<std::string> names{"gaussian", "layer", "block", "network"};
    return names;
}

// gaussian: embedded_gaussian weights and input
// layer:    one adaptive layer with A, B and C on toy9
// block:    one full block (spatial, BN, dropout with a frozen seed, temporal, residual)
// network:  the whole toy network on a 2-sample batch (200 sampled coordinates)
inline GradCheckReport gradcheck_fragment(const std::string& fragment, std::uint64_t seed,
                                          GradCheckOptions opt = {})
{
    std::mt19937_64 rng(seed);
    const auto spec = toy9();
    const auto A = adjacency_tensors<double>(normalized_adjacency(spec));
    if (fragment == "gaussian") {
        auto f = detail::random_tensor({2, 3, 4, 9}, rng);
        auto wt = detail::random_tensor({2, 3}, rng, 0.5);
        auto wp = detail::random_tensor({2, 3}, rng, 0.5);
        return gradcheck<double>([&] { return detail::projected(embedded_gaussian(f, wt, wp), seed + 1); },
                                 {{"W_theta", wt}, {"W_phi", wp}, {"f_in", f}}, opt);
    }
    if (fragment == "layer") {
        ParameterSet<double> ps;
        auto layer = AdaptiveLayer<double>::create(ps, "layer", 3, 4, 9, 2, {}, rng);
        detail::perturb(layer, rng);
        auto f = detail::random_tensor({2, 3, 4, 9}, rng);
        auto params = detail::trainable(ps);
        params.emplace_back("f_in", f);
        return gradcheck<double>([&] { return detail::projected(adaptive_spatial_forward(f, layer, A), seed + 1); },
                                 params, opt);
    }
    if (fragment == "block") {
        ParameterSet<double> ps;
        BlockConfig cfg;
        cfg.in_channels = 3;
        cfg.out_channels = 4;
        cfg.stride = 2;
        cfg.temporal_kernel = 3;
        auto block = Block<double>::create(ps, "block", cfg, 9, rng);
        detail::perturb(*block.adaptive, rng);
        auto x = detail::random_tensor({2, 3, 6, 9}, rng);
        auto params = detail::trainable(ps);
        params.emplace_back("x", x);
        if (opt.max_coords == 0)
            opt.max_coords = 200;
        return gradcheck<double>(
            [&] { return detail::projected(block_forward(x, block, A, Mode::train, seed + 2), seed + 1); }, params,
            opt);
    }
    if (fragment == "network") {
        NetworkOptions no;
        no.channels = {4, 4, 4, 6, 6, 6, 8, 8, 8};
        no.temporal_kernel = 3;
        Network<double> net(make_network_config(spec, 3, 4, 1, no), seed);
        for (std::size_t i = 0; i < net.num_blocks(); ++i)
            detail::perturb(*net.block(i).adaptive, rng);
        auto x = detail::random_tensor({2, 3, 8, 9, 1}, rng);
        const std::vector<std::size_t> targets{1, 3};
        if (opt.max_coords == 0)
            opt.max_coords = 200;
        opt.seed = seed;
        return gradcheck<double>(
            [&] {
                return cross_entropy(net.forward(x, Mode::train, seed + 3), std::span<const std::size_t>(targets));
            },
            detail::trainable(net.parameters()), opt);
    }
    throw ValidationError("unknown gradcheck fragment '" + fragment + "' (expected gaussian, layer, block or network)");
}

} // namespace agcn
