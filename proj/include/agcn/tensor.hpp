#pragma once

// Dense row-major tensors with an explicit reverse-mode tape.
//
// A Tensor is a shared handle to a node holding the value and, once
// materialized, the gradient. Operations executed while a Tape is active on
// the current thread (see TapeScope) and touching at least one tensor with
// requires_grad() record an adjoint closure on that tape. Tape::backward
// replays the closures in reverse recording order, so every node's gradient
// is complete before it is propagated further.

#include <agcn/errors.hpp>

#include <algorithm>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

namespace agcn {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape)
{
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i)
            os << ", ";
        os << shape[i];
    }
    os << ']';
    return os.str();
}

template <class T>
struct TensorNode {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad; // empty until materialized
    bool requires_grad = false;

    std::span<T> grad_span()
    {
        if (grad.empty())
            grad.assign(value.size(), T(0));
        return grad;
    }
};

template <class T>
class Tensor {
public:
    using value_type = T;

    Tensor() : Tensor(Shape{}, T(0)) {}

    explicit Tensor(Shape shape, T fill = T(0)) : node_(std::make_shared<TensorNode<T>>())
    {
        for (auto e : shape)
            if (e == 0)
                throw DimensionError("tensor extents must be positive, got " + to_string(shape));
        node_->value.assign(numel(shape), fill);
        node_->shape = std::move(shape);
    }

    Tensor(Shape shape, std::vector<T> values) : node_(std::make_shared<TensorNode<T>>())
    {
        for (auto e : shape)
            if (e == 0)
                throw DimensionError("tensor extents must be positive, got " + to_string(shape));
        if (values.size() != numel(shape))
            throw DimensionError("shape " + to_string(shape) + " needs " + std::to_string(numel(shape)) +
                                 " elements, got " + std::to_string(values.size()));
        node_->shape = std::move(shape);
        node_->value = std::move(values);
    }

    static Tensor scalar(T v) { return Tensor(Shape{}, std::vector<T>{v}); }

    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
    std::size_t size() const { return node_->value.size(); }

    std::span<const T> data() const { return node_->value; }
    // Mutation is meant for leaves (initialization, optimizer updates).
    std::span<T> mutable_data() { return node_->value; }

    T operator[](std::size_t i) const { return node_->value[i]; }

    T item() const
    {
        if (size() != 1)
            throw DimensionError("item() on tensor of shape " + to_string(shape()));
        return node_->value[0];
    }

    T at(std::initializer_list<std::size_t> index) const
    {
        if (index.size() != rank())
            throw DimensionError("index rank mismatch for shape " + to_string(shape()));
        std::size_t offset = 0;
        std::size_t axis = 0;
        for (auto i : index) {
            if (i >= node_->shape[axis])
                throw DimensionError("index out of range for shape " + to_string(shape()));
            offset = offset * node_->shape[axis] + i;
            ++axis;
        }
        return node_->value[offset];
    }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool on)
    {
        node_->requires_grad = on;
        return *this;
    }

    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const T> grad() const { return node_->grad; }
    void zero_grad() { node_->grad.clear(); }

    // Value copy without gradient history.
    Tensor detach() const { return Tensor(shape(), node_->value); }

    bool same_node(const Tensor& other) const { return node_ == other.node_; }
    const std::shared_ptr<TensorNode<T>>& node() const { return node_; }

private:
    std::shared_ptr<TensorNode<T>> node_;
};

template <class T>
class Tape {
public:
    using Adjoint = std::function<void()>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // The tape recording on this thread, or nullptr.
    static Tape*& active()
    {
        thread_local Tape* slot = nullptr;
        return slot;
    }

    // Registers `adjoint` as the backward rule producing inputs' gradients
    // from output->grad. Marks the output as gradient-carrying.
    void record(const std::shared_ptr<TensorNode<T>>& output, Adjoint adjoint)
    {
        if (consumed_)
            throw AutodiffError("cannot record on a tape that already ran backward");
        output->requires_grad = true;
        entries_.push_back({output, std::move(adjoint)});
    }

    std::size_t size() const { return entries_.size(); }
    bool consumed() const { return consumed_; }

    void backward(const Tensor<T>& loss)
    {
        if (consumed_)
            throw AutodiffError("backward called twice on the same tape; re-record the forward pass");
        if (loss.size() != 1 || loss.rank() > 1)
            throw AutodiffError("backward needs a scalar loss, got shape " + to_string(loss.shape()));
        if (!loss.requires_grad())
            throw AutodiffError("loss is not connected to any requires_grad leaf");
        consumed_ = true;
        loss.node()->grad_span()[0] += T(1);
        for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) {
            if (!it->output->grad.empty())
                it->adjoint();
        }
        entries_.clear();
    }

private:
    struct Entry {
        std::shared_ptr<TensorNode<T>> output;
        Adjoint adjoint;
    };
    std::vector<Entry> entries_;
    bool consumed_ = false;
};

// Makes `tape` the active tape of this thread for the scope's lifetime.
template <class T>
class TapeScope {
public:
    explicit TapeScope(Tape<T>& tape) : previous_(Tape<T>::active()) { Tape<T>::active() = &tape; }
    ~TapeScope() { Tape<T>::active() = previous_; }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape<T>* previous_;
};

// Suspends recording (evaluation passes inside a training loop).
template <class T>
class NoGradScope {
public:
    NoGradScope() : previous_(Tape<T>::active()) { Tape<T>::active() = nullptr; }
    ~NoGradScope() { Tape<T>::active() = previous_; }
    NoGradScope(const NoGradScope&) = delete;
    NoGradScope& operator=(const NoGradScope&) = delete;

private:
    Tape<T>* previous_;
};

// Returns the active tape if any of `inputs` needs a gradient.
template <class T>
Tape<T>* recording_tape(std::initializer_list<const Tensor<T>*> inputs)
{
    auto* tape = Tape<T>::active();
    if (!tape)
        return nullptr;
    for (auto* t : inputs)
        if (t->requires_grad())
            return tape;
    return nullptr;
}

} // namespace agcn
