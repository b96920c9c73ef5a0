#pragma once

// Differentiable primitives. Every function computes its value eagerly and,
// when recording, registers the adjoint on the active tape.
//
// Broadcasting is limited to leading axes: in a binary op, one operand's
// shape must equal the other's or be a suffix of it.

#include <agcn/tensor.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <random>
#include <memory>
#include <vector>

namespace agcn {

namespace detail {

// Register-blocked kernel: C[P,R] += op(A)[P,Q] * B[Q,R] with row strides
// lda, ldb, ldc. op(A) is A (A[i*lda + q]) or its transpose (A[q*lda + i]).
// Each C entry accumulates its products in q order before being added to C.
template <class T>
struct SimdTraits {
    typedef T vec __attribute__((vector_size(32)));
    typedef T unaligned_vec __attribute__((vector_size(32), aligned(alignof(T))));
    static constexpr std::size_t lanes = 32 / sizeof(T);
};

// Computes rows [i0, i0 + MR) for columns [0, w), w <= NR, of the block
// whose first column B and C point at. Partial blocks read a zero-padded
// [Q, NR] copy of B.
template <std::size_t MR, bool TransA, class T>
void gemm_block(std::size_t i0, std::size_t Q, std::size_t w, const T* A, std::size_t lda, const T* B,
                std::size_t ldb, T* C, std::size_t ldc)
{
    using vec = typename SimdTraits<T>::vec;
    using uvec = typename SimdTraits<T>::unaligned_vec;
    constexpr std::size_t V = SimdTraits<T>::lanes;
    vec acc0[MR] = {}, acc1[MR] = {};
    for (std::size_t q = 0; q < Q; ++q) {
        const vec b0 = *reinterpret_cast<const uvec*>(B + q * ldb);
        const vec b1 = *reinterpret_cast<const uvec*>(B + q * ldb + V);
        for (std::size_t ii = 0; ii < MR; ++ii) {
            const T a = TransA ? A[q * lda + i0 + ii] : A[(i0 + ii) * lda + q];
            acc0[ii] += b0 * a;
            acc1[ii] += b1 * a;
        }
    }
    for (std::size_t ii = 0; ii < MR; ++ii) {
        alignas(32) T out[2 * V];
        *reinterpret_cast<vec*>(out) = acc0[ii];
        *reinterpret_cast<vec*>(out + V) = acc1[ii];
        T* c = C + (i0 + ii) * ldc;
        for (std::size_t r = 0; r < w; ++r)
            c[r] += out[r];
    }
}

template <bool TransA, class T>
void gemm_kernel(std::size_t P, std::size_t Q, std::size_t R, const T* A, std::size_t lda, const T* B,
                 std::size_t ldb, T* C, std::size_t ldc)
{
    constexpr std::size_t NR = 2 * SimdTraits<T>::lanes;
    const std::size_t full = R - R % NR;
    thread_local std::vector<T> tail;
    if (full < R) {
        tail.assign(Q * NR, T(0));
        for (std::size_t q = 0; q < Q; ++q)
            std::copy_n(B + q * ldb + full, R - full, tail.data() + q * NR);
    }
    auto run = [&]<std::size_t MR>(std::size_t i0) {
        for (std::size_t r0 = 0; r0 < full; r0 += NR)
            gemm_block<MR, TransA>(i0, Q, NR, A, lda, B + r0, ldb, C + r0, ldc);
        if (full < R)
            gemm_block<MR, TransA>(i0, Q, R - full, A, lda, tail.data(), NR, C + full, ldc);
    };
    std::size_t i0 = 0;
    for (; i0 + 4 <= P; i0 += 4)
        run.template operator()<4>(i0);
    for (; i0 < P; ++i0)
        run.template operator()<1>(i0);
}

// Dot product with eight independent partial sums so the loop vectorizes
// without reassociation flags. The summation order is fixed.
template <class T>
T dot(const T* a, const T* b, std::size_t n)
{
    T part[8] = {};
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8)
        for (std::size_t l = 0; l < 8; ++l)
            part[l] += a[i + l] * b[i + l];
    T acc = ((part[0] + part[1]) + (part[2] + part[3])) + ((part[4] + part[5]) + (part[6] + part[7]));
    for (; i < n; ++i)
        acc += a[i] * b[i];
    return acc;
}

// C[P,R] += A[P,Q] * B[Q,R]
template <class T>
void gemm_nn(std::size_t P, std::size_t Q, std::size_t R, const T* A, const T* B, T* C)
{
    gemm_kernel<false>(P, Q, R, A, Q, B, R, C, R);
}

// C[P,R] += A^T * B with A stored [Q,P]
template <class T>
void gemm_tn(std::size_t P, std::size_t Q, std::size_t R, const T* A, const T* B, T* C)
{
    gemm_kernel<true>(P, Q, R, A, P, B, R, C, R);
}

// C[P,R] += A * B^T with A [P,Q] (row stride lda) and B stored [R,Q] (row
// stride ldb), via a transposed copy of B.
template <class T>
void gemm_nt(std::size_t P, std::size_t Q, std::size_t R, const T* A, std::size_t lda, const T* B, std::size_t ldb,
             T* C, std::size_t ldc)
{
    std::vector<T> bt(Q * R);
    for (std::size_t r = 0; r < R; ++r)
        for (std::size_t q = 0; q < Q; ++q)
            bt[q * R + r] = B[r * ldb + q];
    gemm_kernel<false>(P, Q, R, A, lda, bt.data(), R, C, ldc);
}

template <class T>
void gemm_nt(std::size_t P, std::size_t Q, std::size_t R, const T* A, const T* B, T* C)
{
    gemm_nt(P, Q, R, A, Q, B, Q, C, R);
}

inline bool is_suffix(const Shape& small, const Shape& big)
{
    if (small.size() > big.size())
        return false;
    return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

struct Broadcast {
    bool a_is_big;
    std::size_t outer;
    std::size_t inner;
    Shape shape;
};

inline Broadcast broadcast_plan(const Shape& a, const Shape& b, const char* op)
{
    if (a == b)
        return {true, 1, numel(a), a};
    if (is_suffix(b, a))
        return {true, numel(a) / numel(b), numel(b), a};
    if (is_suffix(a, b))
        return {false, numel(b) / numel(a), numel(a), b};
    throw DimensionError(std::string(op) + ": cannot broadcast " + to_string(a) + " with " + to_string(b));
}

template <class T, class Fwd, class Back>
Tensor<T> broadcast_binary(const Tensor<T>& a, const Tensor<T>& b, const char* op, Fwd fwd, Back back)
{
    const auto plan = broadcast_plan(a.shape(), b.shape(), op);
    Tensor<T> out(plan.shape);
    auto o = out.mutable_data();
    auto av = a.data();
    auto bv = b.data();
    for (std::size_t outer = 0; outer < plan.outer; ++outer) {
        for (std::size_t i = 0; i < plan.inner; ++i) {
            const std::size_t big = outer * plan.inner + i;
            const std::size_t ia = plan.a_is_big ? big : i;
            const std::size_t ib = plan.a_is_big ? i : big;
            o[big] = fwd(av[ia], bv[ib]);
        }
    }
    if (auto* tape = recording_tape({&a, &b})) {
        tape->record(out.node(), [a, b, out, plan, back]() {
            auto g = out.grad();
            auto av = a.data();
            auto bv = b.data();
            std::span<T> ga, gb;
            if (a.requires_grad())
                ga = a.node()->grad_span();
            if (b.requires_grad())
                gb = b.node()->grad_span();
            for (std::size_t outer = 0; outer < plan.outer; ++outer) {
                for (std::size_t i = 0; i < plan.inner; ++i) {
                    const std::size_t big = outer * plan.inner + i;
                    const std::size_t ia = plan.a_is_big ? big : i;
                    const std::size_t ib = plan.a_is_big ? i : big;
                    T da, db;
                    back(av[ia], bv[ib], g[big], da, db);
                    if (!ga.empty())
                        ga[ia] += da;
                    if (!gb.empty())
                        gb[ib] += db;
                }
            }
        });
    }
    return out;
}

// f: value -> value, df: (input, output) -> derivative
template <class T, class F, class DF>
Tensor<T> unary(const Tensor<T>& x, F f, DF df)
{
    Tensor<T> out(x.shape());
    auto o = out.mutable_data();
    auto xv = x.data();
    for (std::size_t i = 0; i < xv.size(); ++i)
        o[i] = f(xv[i]);
    if (auto* tape = recording_tape({&x})) {
        tape->record(out.node(), [x, out, df]() {
            auto g = out.grad();
            auto xv = x.data();
            auto ov = out.data();
            auto gx = x.node()->grad_span();
            for (std::size_t i = 0; i < g.size(); ++i)
                gx[i] += g[i] * df(xv[i], ov[i]);
        });
    }
    return out;
}

inline std::uint64_t splitmix64(std::uint64_t x)
{
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

} // namespace detail

// Deterministic seed derivation for independent random streams.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream)
{
    return detail::splitmix64(seed ^ detail::splitmix64(stream));
}

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b)
{
    return detail::broadcast_binary(
        a, b, "add", [](T x, T y) { return x + y; },
        [](T, T, T g, T& da, T& db) {
            da = g;
            db = g;
        });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b)
{
    return detail::broadcast_binary(
        a, b, "sub", [](T x, T y) { return x - y; },
        [](T, T, T g, T& da, T& db) {
            da = g;
            db = -g;
        });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b)
{
    return detail::broadcast_binary(
        a, b, "mul", [](T x, T y) { return x * y; },
        [](T x, T y, T g, T& da, T& db) {
            da = g * y;
            db = g * x;
        });
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T factor)
{
    return detail::unary(x, [factor](T v) { return v * factor; }, [factor](T, T) { return factor; });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x)
{
    return detail::unary(
        x, [](T v) { return v < T(0) ? T(0) : v; }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <class T>
Tensor<T> exp(const Tensor<T>& x)
{
    return detail::unary(x, [](T v) { return std::exp(v); }, [](T, T y) { return y; });
}

template <class T>
Tensor<T> log(const Tensor<T>& x)
{
    return detail::unary(x, [](T v) { return std::log(v); }, [](T v, T) { return T(1) / v; });
}

// Inverted dropout: survivors are scaled by 1/(1-rate) in training so that
// evaluation is the identity.
template <class T>
Tensor<T> dropout(const Tensor<T>& x, double rate, std::uint64_t seed, bool training)
{
    if (rate < 0.0 || rate >= 1.0)
        throw ValidationError("dropout rate must lie in [0, 1), got " + std::to_string(rate));
    if (!training || rate == 0.0)
        return x;
    std::mt19937_64 rng(seed);
    const T keep_scale = T(1) / T(1 - rate);
    auto mask = std::make_shared<std::vector<T>>(x.size());
    for (auto& m : *mask) {
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        m = u < rate ? T(0) : keep_scale;
    }
    Tensor<T> out(x.shape());
    auto o = out.mutable_data();
    auto xv = x.data();
    for (std::size_t i = 0; i < o.size(); ++i)
        o[i] = xv[i] * (*mask)[i];
    if (auto* tape = recording_tape({&x})) {
        tape->record(out.node(), [x, out, mask]() {
            auto g = out.grad();
            auto gx = x.node()->grad_span();
            for (std::size_t i = 0; i < g.size(); ++i)
                gx[i] += g[i] * (*mask)[i];
        });
    }
    return out;
}

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape)
{
    if (numel(shape) != x.size())
        throw DimensionError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
    Tensor<T> out(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()));
    if (auto* tape = recording_tape({&x})) {
        tape->record(out.node(), [x, out]() {
            auto g = out.grad();
            auto gx = x.node()->grad_span();
            for (std::size_t i = 0; i < g.size(); ++i)
                gx[i] += g[i];
        });
    }
    return out;
}

namespace detail {

// Visits every element of `out_shape` in row-major order, passing the
// matching linear offset into a source tensor with the given strides.
template <class F>
void strided_walk(const Shape& out_shape, const std::vector<std::size_t>& src_strides, F&& f)
{
    const std::size_t rank = out_shape.size();
    const std::size_t total = numel(out_shape);
    if (rank == 0) {
        f(std::size_t{0}, std::size_t{0});
        return;
    }
    std::vector<std::size_t> idx(rank, 0);
    std::size_t src = 0;
    const std::size_t last = rank - 1;
    const std::size_t inner = out_shape[last];
    const std::size_t inner_stride = src_strides[last];
    for (std::size_t lin = 0; lin < total; lin += inner) {
        for (std::size_t i = 0; i < inner; ++i)
            f(lin + i, src + i * inner_stride);
        for (std::size_t ax = last; ax-- > 0;) {
            ++idx[ax];
            src += src_strides[ax];
            if (idx[ax] < out_shape[ax])
                break;
            src -= src_strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
}

inline std::vector<std::size_t> row_major_strides(const Shape& shape)
{
    std::vector<std::size_t> strides(shape.size(), 1);
    for (std::size_t i = shape.size(); i-- > 1;)
        strides[i - 1] = strides[i] * shape[i];
    return strides;
}

} // namespace detail

// out.shape[i] = x.shape[axes[i]]
template <class T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes)
{
    const auto& in_shape = x.shape();
    if (axes.size() != in_shape.size())
        throw DimensionError("permute: " + std::to_string(axes.size()) + " axes for shape " + to_string(in_shape));
    std::vector<bool> seen(axes.size(), false);
    Shape out_shape(axes.size());
    const auto in_strides = detail::row_major_strides(in_shape);
    std::vector<std::size_t> src_strides(axes.size());
    for (std::size_t i = 0; i < axes.size(); ++i) {
        if (axes[i] >= axes.size() || seen[axes[i]])
            throw DimensionError("permute: invalid axis order");
        seen[axes[i]] = true;
        out_shape[i] = in_shape[axes[i]];
        src_strides[i] = in_strides[axes[i]];
    }
    Tensor<T> out(out_shape);
    auto o = out.mutable_data();
    auto xv = x.data();
    detail::strided_walk(out_shape, src_strides, [&](std::size_t dst, std::size_t src) { o[dst] = xv[src]; });
    if (auto* tape = recording_tape({&x})) {
        tape->record(out.node(), [x, out, out_shape, src_strides]() {
            auto g = out.grad();
            auto gx = x.node()->grad_span();
            detail::strided_walk(out_shape, src_strides,
                                 [&](std::size_t dst, std::size_t src) { gx[src] += g[dst]; });
        });
    }
    return out;
}

// Batched product over the last two axes. Batch prefixes must be equal, or
// one operand is a plain matrix shared across the other's batch.
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b)
{
    const auto& as = a.shape();
    const auto& bs = b.shape();
    auto fail = [&]() {
        throw DimensionError("matmul: incompatible shapes " + to_string(as) + " and " + to_string(bs));
    };
    if (as.size() < 2 || bs.size() < 2)
        fail();
    const std::size_t P = as[as.size() - 2], Q = as.back();
    const std::size_t Q2 = bs[bs.size() - 2], R = bs.back();
    if (Q != Q2)
        fail();
    const Shape a_batch(as.begin(), as.end() - 2);
    const Shape b_batch(bs.begin(), bs.end() - 2);
    if (!(a_batch == b_batch || a_batch.empty() || b_batch.empty()))
        fail();
    const Shape batch = a_batch.size() >= b_batch.size() ? a_batch : b_batch;
    const std::size_t nb = numel(batch);
    const std::size_t a_step = a_batch.empty() ? 0 : P * Q;
    const std::size_t b_step = b_batch.empty() ? 0 : Q * R;

    Shape out_shape = batch;
    out_shape.push_back(P);
    out_shape.push_back(R);
    Tensor<T> out(out_shape);
    {
        auto o = out.mutable_data();
        const T* ap = a.data().data();
        const T* bp = b.data().data();
        for (std::size_t n = 0; n < nb; ++n)
            detail::gemm_nn(P, Q, R, ap + n * a_step, bp + n * b_step, o.data() + n * P * R);
    }
    if (auto* tape = recording_tape({&a, &b})) {
        tape->record(out.node(), [a, b, out, P, Q, R, nb, a_step, b_step]() {
            const T* g = out.grad().data();
            const T* ap = a.data().data();
            const T* bp = b.data().data();
            if (a.requires_grad()) {
                T* ga = a.node()->grad_span().data();
                for (std::size_t n = 0; n < nb; ++n)
                    detail::gemm_nt(P, R, Q, g + n * P * R, bp + n * b_step, ga + n * a_step);
            }
            if (b.requires_grad()) {
                T* gb = b.node()->grad_span().data();
                for (std::size_t n = 0; n < nb; ++n)
                    detail::gemm_tn(Q, P, R, ap + n * a_step, g + n * P * R, gb + n * b_step);
            }
        });
    }
    return out;
}

template <class T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis)
{
    const auto& s = x.shape();
    if (axis >= s.size())
        throw DimensionError("softmax: axis " + std::to_string(axis) + " out of range for " + to_string(s));
    const std::size_t len = s[axis];
    std::size_t inner = 1;
    for (std::size_t i = axis + 1; i < s.size(); ++i)
        inner *= s[i];
    const std::size_t outer = x.size() / (len * inner);

    Tensor<T> out(s);
    auto o = out.mutable_data();
    auto xv = x.data();
    for (std::size_t p = 0; p < outer; ++p) {
        for (std::size_t q = 0; q < inner; ++q) {
            const std::size_t base = p * len * inner + q;
            T mx = -std::numeric_limits<T>::infinity();
            for (std::size_t l = 0; l < len; ++l)
                mx = std::max(mx, xv[base + l * inner]);
            T total = T(0);
            for (std::size_t l = 0; l < len; ++l) {
                const T e = std::exp(xv[base + l * inner] - mx);
                o[base + l * inner] = e;
                total += e;
            }
            for (std::size_t l = 0; l < len; ++l)
                o[base + l * inner] /= total;
        }
    }
    if (auto* tape = recording_tape({&x})) {
        tape->record(out.node(), [x, out, len, inner, outer]() {
            auto g = out.grad();
            auto y = out.data();
            auto gx = x.node()->grad_span();
            for (std::size_t p = 0; p < outer; ++p) {
                for (std::size_t q = 0; q < inner; ++q) {
                    const std::size_t base = p * len * inner + q;
                    T dot = T(0);
                    for (std::size_t l = 0; l < len; ++l)
                        dot += g[base + l * inner] * y[base + l * inner];
                    for (std::size_t l = 0; l < len; ++l) {
                        const std::size_t i = base + l * inner;
                        gx[i] += y[i] * (g[i] - dot);
                    }
                }
            }
        });
    }
    return out;
}

// Mean over the listed axes; reduced axes are dropped from the shape.
template <class T>
Tensor<T> mean(const Tensor<T>& x, std::vector<std::size_t> axes)
{
    const auto& s = x.shape();
    std::sort(axes.begin(), axes.end());
    axes.erase(std::unique(axes.begin(), axes.end()), axes.end());
    std::vector<bool> reduced(s.size(), false);
    for (auto ax : axes) {
        if (ax >= s.size())
            throw DimensionError("mean: axis " + std::to_string(ax) + " out of range for " + to_string(s));
        reduced[ax] = true;
    }
    Shape out_shape;
    std::size_t count = 1;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (reduced[i])
            count *= s[i];
        else
            out_shape.push_back(s[i]);
    }
    // Strides into the output for every input axis (0 on reduced axes).
    std::vector<std::size_t> dst_strides(s.size(), 0);
    {
        std::size_t stride = 1;
        for (std::size_t i = s.size(); i-- > 0;) {
            if (!reduced[i]) {
                dst_strides[i] = stride;
                stride *= s[i];
            }
        }
    }
    Tensor<T> out(out_shape);
    auto o = out.mutable_data();
    auto xv = x.data();
    detail::strided_walk(s, dst_strides, [&](std::size_t src, std::size_t dst) { o[dst] += xv[src]; });
    const T inv = T(1) / static_cast<T>(count);
    for (auto& v : o)
        v *= inv;
    if (auto* tape = recording_tape({&x})) {
        tape->record(out.node(), [x, out, s, dst_strides, inv]() {
            auto g = out.grad();
            auto gx = x.node()->grad_span();
            detail::strided_walk(s, dst_strides, [&](std::size_t src, std::size_t dst) { gx[src] += g[dst] * inv; });
        });
    }
    return out;
}

template <class T>
Tensor<T> sum(const Tensor<T>& x)
{
    T total = T(0);
    for (auto v : x.data())
        total += v;
    auto out = Tensor<T>::scalar(total);
    if (auto* tape = recording_tape({&x})) {
        tape->record(out.node(), [x, out]() {
            const T g = out.grad()[0];
            auto gx = x.node()->grad_span();
            for (auto& v : gx)
                v += g;
        });
    }
    return out;
}

// Convolution along the time axis of x[B, Cin, T, N] with w[Cout, Cin, Kt, 1].
// The joint axis is untouched. Output length floor((T + 2 pad - Kt)/stride) + 1.
template <class T>
Tensor<T> temporal_conv(const Tensor<T>& x, const Tensor<T>& w, std::size_t stride, std::size_t pad)
{
    const auto& xs = x.shape();
    const auto& ws = w.shape();
    if (xs.size() != 4 || ws.size() != 4 || ws[3] != 1 || ws[1] != xs[1])
        throw DimensionError("temporal_conv: input " + to_string(xs) + " incompatible with kernel " + to_string(ws));
    const std::size_t Kt = ws[2];
    if (Kt % 2 == 0)
        throw DimensionError("temporal_conv: even kernel length " + std::to_string(Kt) + " has no symmetric padding");
    if (stride == 0)
        throw DimensionError("temporal_conv: stride must be positive");
    const std::size_t B = xs[0], Cin = xs[1], T_in = xs[2], N = xs[3];
    const std::size_t Cout = ws[0];
    if (T_in + 2 * pad < Kt)
        throw DimensionError("temporal_conv: sequence shorter than kernel");
    const std::size_t T_out = (T_in + 2 * pad - Kt) / stride + 1;

    // Valid output-time range for tap k: 0 <= t*stride + k - pad < T_in
    struct Range {
        std::size_t begin, end;
    };
    std::vector<Range> ranges(Kt);
    for (std::size_t k = 0; k < Kt; ++k) {
        std::size_t begin = 0;
        while (begin < T_out && begin * stride + k < pad)
            ++begin;
        std::size_t end = begin;
        while (end < T_out && end * stride + k - pad < T_in)
            ++end;
        ranges[k] = {begin, end};
    }

    // Per tap k the convolution is a matrix product W_k[Cout, Cin] X_k[Cin, L]
    // where X_k holds the input frames feeding output frames [t0, t1).
    // Weights are regrouped tap-major; strided inputs are gathered first.
    auto wk = std::make_shared<std::vector<T>>(Kt * Cout * Cin);
    {
        const T* wp = w.data().data();
        for (std::size_t co = 0; co < Cout; ++co)
            for (std::size_t ci = 0; ci < Cin; ++ci)
                for (std::size_t k = 0; k < Kt; ++k)
                    (*wk)[(k * Cout + co) * Cin + ci] = wp[(co * Cin + ci) * Kt + k];
    }
    const std::size_t in_len = T_in * N, out_len = T_out * N;
    // Pointer to X_k for sample b (row stride returned in ld), gathering
    // into `buf` when stride > 1.
    auto tap_input = [=](const T* xb, std::size_t k, std::vector<T>& buf, std::size_t& ld) -> const T* {
        const auto [t0, t1] = ranges[k];
        if (stride == 1) {
            ld = in_len;
            return xb + (t0 + k - pad) * N;
        }
        ld = (t1 - t0) * N;
        buf.resize(Cin * ld);
        for (std::size_t ci = 0; ci < Cin; ++ci)
            for (std::size_t t = t0; t < t1; ++t)
                std::copy_n(xb + ci * in_len + (t * stride + k - pad) * N, N, buf.data() + ci * ld + (t - t0) * N);
        return buf.data();
    };

    Tensor<T> out(Shape{B, Cout, T_out, N});
    {
        T* o = out.mutable_data().data();
        const T* xp = x.data().data();
        std::vector<T> buf;
        for (std::size_t b = 0; b < B; ++b)
            for (std::size_t k = 0; k < Kt; ++k) {
                const auto [t0, t1] = ranges[k];
                if (t0 >= t1)
                    continue;
                std::size_t ld = 0;
                const T* xk = tap_input(xp + b * Cin * in_len, k, buf, ld);
                detail::gemm_kernel<false>(Cout, Cin, (t1 - t0) * N, wk->data() + k * Cout * Cin, Cin, xk, ld,
                                           o + b * Cout * out_len + t0 * N, out_len);
            }
    }
    if (auto* tape = recording_tape({&x, &w})) {
        tape->record(out.node(), [=]() {
            const T* g = out.grad().data();
            const T* xp = x.data().data();
            T* gx = x.requires_grad() ? x.node()->grad_span().data() : nullptr;
            std::vector<T> gwk(w.requires_grad() ? Kt * Cout * Cin : 0, T(0));
            std::vector<T> buf, gbuf;
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t k = 0; k < Kt; ++k) {
                    const auto [t0, t1] = ranges[k];
                    if (t0 >= t1)
                        continue;
                    const std::size_t L = (t1 - t0) * N;
                    const T* gk = g + b * Cout * out_len + t0 * N;
                    if (gx) {
                        // dX_k = W_k^T G_k
                        if (stride == 1) {
                            detail::gemm_kernel<true>(Cin, Cout, L, wk->data() + k * Cout * Cin, Cin, gk, out_len,
                                                      gx + b * Cin * in_len + (t0 + k - pad) * N, in_len);
                        } else {
                            gbuf.assign(Cin * L, T(0));
                            detail::gemm_kernel<true>(Cin, Cout, L, wk->data() + k * Cout * Cin, Cin, gk, out_len,
                                                      gbuf.data(), L);
                            for (std::size_t ci = 0; ci < Cin; ++ci)
                                for (std::size_t t = t0; t < t1; ++t) {
                                    T* dst = gx + b * Cin * in_len + ci * in_len + (t * stride + k - pad) * N;
                                    const T* src = gbuf.data() + ci * L + (t - t0) * N;
                                    for (std::size_t n = 0; n < N; ++n)
                                        dst[n] += src[n];
                                }
                        }
                    }
                    if (!gwk.empty()) {
                        // dW_k = G_k X_k^T
                        std::size_t ld = 0;
                        const T* xk = tap_input(xp + b * Cin * in_len, k, buf, ld);
                        detail::gemm_nt(Cout, L, Cin, gk, out_len, xk, ld, gwk.data() + k * Cout * Cin, Cin);
                    }
                }
            if (!gwk.empty()) {
                T* gw = w.node()->grad_span().data();
                for (std::size_t co = 0; co < Cout; ++co)
                    for (std::size_t ci = 0; ci < Cin; ++ci)
                        for (std::size_t k = 0; k < Kt; ++k)
                            gw[(co * Cin + ci) * Kt + k] += gwk[(k * Cout + co) * Cin + ci];
            }
        });
    }
    return out;
}

// 1x1 convolution: out[b, co, ...] = sum_ci w[co, ci] * x[b, ci, ...].
template <class T>
Tensor<T> channel_mix(const Tensor<T>& x, const Tensor<T>& w)
{
    const auto& xs = x.shape();
    const auto& ws = w.shape();
    if (xs.size() < 2 || ws.size() != 2 || ws[1] != xs[1])
        throw DimensionError("channel_mix: input " + to_string(xs) + " incompatible with weights " + to_string(ws));
    const std::size_t B = xs[0], Cin = xs[1], Cout = ws[0];
    const std::size_t inner = x.size() / (B * Cin);
    Shape out_shape = xs;
    out_shape[1] = Cout;
    Tensor<T> out(out_shape);
    {
        T* o = out.mutable_data().data();
        const T* xp = x.data().data();
        const T* wp = w.data().data();
        // Per sample: O[Cout, inner] = W[Cout, Cin] X[Cin, inner]
        for (std::size_t b = 0; b < B; ++b)
            detail::gemm_nn(Cout, Cin, inner, wp, xp + b * Cin * inner, o + b * Cout * inner);
    }
    if (auto* tape = recording_tape({&x, &w})) {
        tape->record(out.node(), [x, w, out, B, Cin, Cout, inner]() {
            const T* g = out.grad().data();
            const T* xp = x.data().data();
            const T* wp = w.data().data();
            if (x.requires_grad()) {
                T* gx = x.node()->grad_span().data();
                for (std::size_t b = 0; b < B; ++b)
                    detail::gemm_tn(Cin, Cout, inner, wp, g + b * Cout * inner, gx + b * Cin * inner);
            }
            if (w.requires_grad()) {
                T* gw = w.node()->grad_span().data();
                for (std::size_t b = 0; b < B; ++b)
                    detail::gemm_nt(Cout, inner, Cin, g + b * Cout * inner, xp + b * Cin * inner, gw);
            }
        });
    }
    return out;
}

struct BatchNormOptions {
    double momentum = 0.1;
    double eps = 1e-5;
};

// Normalizes x[B, C, ...] per channel (axis 1). In training the batch
// statistics are used and the running estimates are updated in place:
//   running = (1 - momentum) * running + momentum * batch
// with the unbiased batch variance. Evaluation uses the running estimates.
template <class T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, Tensor<T>& running_mean,
                     Tensor<T>& running_var, bool training, BatchNormOptions opt = {})
{
    const auto& xs = x.shape();
    if (xs.size() < 2)
        throw DimensionError("batch_norm: input needs a channel axis, got " + to_string(xs));
    const std::size_t B = xs[0], C = xs[1];
    const std::size_t inner = x.size() / (B * C);
    for (const Tensor<T>* p : std::initializer_list<const Tensor<T>*>{&gamma, &beta, &running_mean, &running_var})
        if (p->size() != C)
            throw DimensionError("batch_norm: parameter of size " + std::to_string(p->size()) + " for " +
                                 std::to_string(C) + " channels");
    const std::size_t count = B * inner;
    const T eps = static_cast<T>(opt.eps);

    auto xhat = std::make_shared<std::vector<T>>(x.size());
    auto inv_std = std::make_shared<std::vector<T>>(C);
    Tensor<T> out(xs);
    auto o = out.mutable_data();
    auto xv = x.data();
    auto gv = gamma.data();
    auto bv = beta.data();
    auto rm = running_mean.mutable_data();
    auto rv = running_var.mutable_data();

    for (std::size_t c = 0; c < C; ++c) {
        T mu, var;
        if (training) {
            T acc = T(0);
            for (std::size_t b = 0; b < B; ++b) {
                const T* row = xv.data() + (b * C + c) * inner;
                for (std::size_t i = 0; i < inner; ++i)
                    acc += row[i];
            }
            mu = acc / static_cast<T>(count);
            T sq = T(0);
            for (std::size_t b = 0; b < B; ++b) {
                const T* row = xv.data() + (b * C + c) * inner;
                for (std::size_t i = 0; i < inner; ++i) {
                    const T d = row[i] - mu;
                    sq += d * d;
                }
            }
            var = sq / static_cast<T>(count);
            const T unbiased = count > 1 ? sq / static_cast<T>(count - 1) : var;
            const T m = static_cast<T>(opt.momentum);
            rm[c] = (T(1) - m) * rm[c] + m * mu;
            rv[c] = (T(1) - m) * rv[c] + m * unbiased;
        } else {
            mu = rm[c];
            var = rv[c];
        }
        const T is = T(1) / std::sqrt(var + eps);
        (*inv_std)[c] = is;
        for (std::size_t b = 0; b < B; ++b) {
            const std::size_t off = (b * C + c) * inner;
            for (std::size_t i = 0; i < inner; ++i) {
                const T h = (xv[off + i] - mu) * is;
                (*xhat)[off + i] = h;
                o[off + i] = gv[c] * h + bv[c];
            }
        }
    }

    if (auto* tape = recording_tape({&x, &gamma, &beta})) {
        tape->record(out.node(), [x, gamma, beta, out, xhat, inv_std, B, C, inner, count, training]() {
            auto g = out.grad();
            auto gv = gamma.data();
            std::span<T> gx, ggamma, gbeta;
            if (x.requires_grad())
                gx = x.node()->grad_span();
            if (gamma.requires_grad())
                ggamma = gamma.node()->grad_span();
            if (beta.requires_grad())
                gbeta = beta.node()->grad_span();
            for (std::size_t c = 0; c < C; ++c) {
                T sum_g = T(0), sum_gh = T(0);
                for (std::size_t b = 0; b < B; ++b) {
                    const std::size_t off = (b * C + c) * inner;
                    for (std::size_t i = 0; i < inner; ++i) {
                        sum_g += g[off + i];
                        sum_gh += g[off + i] * (*xhat)[off + i];
                    }
                }
                if (!ggamma.empty())
                    ggamma[c] += sum_gh;
                if (!gbeta.empty())
                    gbeta[c] += sum_g;
                if (gx.empty())
                    continue;
                const T scale = gv[c] * (*inv_std)[c];
                if (training) {
                    const T n = static_cast<T>(count);
                    for (std::size_t b = 0; b < B; ++b) {
                        const std::size_t off = (b * C + c) * inner;
                        for (std::size_t i = 0; i < inner; ++i)
                            gx[off + i] += scale * (g[off + i] - sum_g / n - (*xhat)[off + i] * sum_gh / n);
                    }
                } else {
                    for (std::size_t b = 0; b < B; ++b) {
                        const std::size_t off = (b * C + c) * inner;
                        for (std::size_t i = 0; i < inner; ++i)
                            gx[off + i] += scale * g[off + i];
                    }
                }
            }
        });
    }
    return out;
}

// x[B, Cin] * w[Cin, K] + bias[K]
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias)
{
    return add(matmul(x, w), bias);
}

} // namespace agcn
