#pragma once

// Brute-force reference implementations. These use plain index loops over
// raw values only and share no arithmetic with the fast paths in ops.hpp or
// model.hpp. Intended for small instances (N, T <= 8).

#include <agcn/graph.hpp>
#include <agcn/tensor.hpp>

#include <cmath>
#include <vector>

namespace agcn::oracle {

// out[b, co, t, i] = sum_k sum_ci sum_j W_k[co, ci] f[b, ci, t, j] G_k[j, i]
// where each G_k is either [N, N] (shared) or [B, N, N] (per sample).
inline Tensor<double> matrix_layer(const Tensor<double>& f_in, const std::vector<Tensor<double>>& W,
                                   const std::vector<Tensor<double>>& G)
{
    if (W.size() != G.size() || f_in.rank() != 4)
        throw DimensionError("oracle::matrix_layer: inconsistent operands");
    const std::size_t B = f_in.dim(0), Cin = f_in.dim(1), T = f_in.dim(2), N = f_in.dim(3);
    const std::size_t Cout = W.empty() ? Cin : W[0].dim(0);
    const auto f = f_in.data();
    std::vector<double> out(B * Cout * T * N, 0.0);
    for (std::size_t b = 0; b < B; ++b)
        for (std::size_t k = 0; k < W.size(); ++k) {
            const auto w = W[k].data();
            const auto g = G[k].data();
            const std::size_t g_off = G[k].rank() == 3 ? b * N * N : 0;
            for (std::size_t co = 0; co < Cout; ++co)
                for (std::size_t ci = 0; ci < Cin; ++ci)
                    for (std::size_t t = 0; t < T; ++t)
                        for (std::size_t i = 0; i < N; ++i) {
                            double acc = 0.0;
                            for (std::size_t j = 0; j < N; ++j)
                                acc += f[((b * Cin + ci) * T + t) * N + j] * g[g_off + j * N + i];
                            out[((b * Cout + co) * T + t) * N + i] += w[co * Cin + ci] * acc;
                        }
        }
    return Tensor<double>(Shape{B, Cout, T, N}, std::move(out));
}

// Per sample: C[i, j] = exp(s_ij) / sum_j' exp(s_ij') with
// s_ij = sum_{c, t} theta[c, t, i] phi[c, t, j], theta = W_theta f, phi = W_phi f.
inline Tensor<double> embedded_gaussian(const Tensor<double>& f_in, const Tensor<double>& w_theta,
                                        const Tensor<double>& w_phi)
{
    const std::size_t B = f_in.dim(0), Cin = f_in.dim(1), T = f_in.dim(2), N = f_in.dim(3);
    const std::size_t Ce = w_theta.dim(0);
    const auto f = f_in.data();
    const auto wt = w_theta.data();
    const auto wp = w_phi.data();
    std::vector<double> out(B * N * N);
    for (std::size_t b = 0; b < B; ++b) {
        std::vector<double> theta(Ce * T * N, 0.0), phi(Ce * T * N, 0.0);
        for (std::size_t e = 0; e < Ce; ++e)
            for (std::size_t t = 0; t < T; ++t)
                for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t c = 0; c < Cin; ++c) {
                        const double v = f[((b * Cin + c) * T + t) * N + n];
                        theta[(e * T + t) * N + n] += wt[e * Cin + c] * v;
                        phi[(e * T + t) * N + n] += wp[e * Cin + c] * v;
                    }
        for (std::size_t i = 0; i < N; ++i) {
            std::vector<double> s(N, 0.0);
            for (std::size_t j = 0; j < N; ++j)
                for (std::size_t e = 0; e < Ce; ++e)
                    for (std::size_t t = 0; t < T; ++t)
                        s[j] += theta[(e * T + t) * N + i] * phi[(e * T + t) * N + j];
            double denom = 0.0;
            for (std::size_t j = 0; j < N; ++j)
                denom += std::exp(s[j]);
            for (std::size_t j = 0; j < N; ++j)
                out[(b * N + i) * N + j] = std::exp(s[j]) / denom;
        }
    }
    return Tensor<double>(Shape{B, N, N}, std::move(out));
}

// Vertex-wise graph convolution with cardinality normalization:
//   out(i) = sum_k sum_{j : i in S_k(j)} f(j) w_k / Z_k(i),  Z_k(i) = |{j : i in S_k(j)}|
// The receiving side follows the right-multiplication convention of the matrix
// layer, so joint i gathers from every j whose subset k contains i.
inline Tensor<double> vertexwise(const Tensor<double>& f_in, const SkeletonSpec& spec,
                                 const std::vector<Tensor<double>>& w)
{
    const auto pa = build_partitions(spec);
    const std::size_t B = f_in.dim(0), Cin = f_in.dim(1), T = f_in.dim(2), N = f_in.dim(3);
    if (N != spec.num_joints || w.size() != kNumSubsets)
        throw DimensionError("oracle::vertexwise: operands do not match the skeleton");
    const std::size_t Cout = w[0].dim(0);
    const auto f = f_in.data();
    std::vector<double> out(B * Cout * T * N, 0.0);
    for (std::size_t k = 0; k < kNumSubsets; ++k) {
        const auto& member = pa.subsets[k];
        const auto wk = w[k].data();
        for (std::size_t i = 0; i < N; ++i) {
            std::size_t z = 0;
            for (std::size_t j = 0; j < N; ++j)
                z += member(j, i) != 0.0;
            if (z == 0)
                continue;
            for (std::size_t j = 0; j < N; ++j) {
                if (member(j, i) == 0.0)
                    continue;
                for (std::size_t b = 0; b < B; ++b)
                    for (std::size_t co = 0; co < Cout; ++co)
                        for (std::size_t ci = 0; ci < Cin; ++ci)
                            for (std::size_t t = 0; t < T; ++t)
                                out[((b * Cout + co) * T + t) * N + i] +=
                                    wk[co * Cin + ci] * f[((b * Cin + ci) * T + t) * N + j] / static_cast<double>(z);
            }
        }
    }
    return Tensor<double>(Shape{B, Cout, T, N}, std::move(out));
}

} // namespace agcn::oracle
