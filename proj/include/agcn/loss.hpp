#pragma once

#include <agcn/ops.hpp>

#include <span>

namespace agcn {

// Mean over the batch of -log softmax(logits)[target], computed through a
// max-shifted log-sum-exp. The adjoint is (softmax - onehot) / B.
template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::size_t> targets)
{
    if (logits.rank() != 2)
        throw DimensionError("cross_entropy: logits must be [B, K], got " + to_string(logits.shape()));
    const std::size_t B = logits.dim(0), K = logits.dim(1);
    if (targets.size() != B)
        throw DimensionError("cross_entropy: " + std::to_string(targets.size()) + " targets for batch of " +
                             std::to_string(B));
    for (auto t : targets)
        if (t >= K)
            throw ValidationError("cross_entropy: target " + std::to_string(t) + " outside [0, " + std::to_string(K) +
                                  ")");

    auto probs = std::make_shared<std::vector<T>>(B * K);
    auto lv = logits.data();
    T total = T(0);
    for (std::size_t b = 0; b < B; ++b) {
        const T* row = lv.data() + b * K;
        T mx = row[0];
        for (std::size_t k = 1; k < K; ++k)
            mx = std::max(mx, row[k]);
        T z = T(0);
        for (std::size_t k = 0; k < K; ++k) {
            const T e = std::exp(row[k] - mx);
            (*probs)[b * K + k] = e;
            z += e;
        }
        for (std::size_t k = 0; k < K; ++k)
            (*probs)[b * K + k] /= z;
        total += mx + std::log(z) - row[targets[b]];
    }
    auto out = Tensor<T>::scalar(total / static_cast<T>(B));
    if (auto* tape = recording_tape({&logits})) {
        std::vector<std::size_t> tgt(targets.begin(), targets.end());
        tape->record(out.node(), [logits, out, probs, tgt, B, K]() {
            const T g = out.grad()[0] / static_cast<T>(B);
            auto gl = logits.node()->grad_span();
            for (std::size_t b = 0; b < B; ++b)
                for (std::size_t k = 0; k < K; ++k) {
                    const T onehot = k == tgt[b] ? T(1) : T(0);
                    gl[b * K + k] += g * ((*probs)[b * K + k] - onehot);
                }
        });
    }
    return out;
}

} // namespace agcn
