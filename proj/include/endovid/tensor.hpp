#pragma once

// Dense tensors with reverse-mode differentiation.
//
// A Tensor is a cheap handle onto a shared graph node. Ops return new nodes
// that remember their inputs and a backward closure; nodes are only linked into
// the graph when at least one input requires a gradient, so a forward pass over
// parameters that do not require gradients (the teacher) builds no graph at all.
//
// Two precisions are instantiated: double for finite-difference checking and
// float for training.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace endovid::ag {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

template <typename T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // empty until something flows into this node
    bool requires_grad = false;
    std::uint64_t id = 0;  // creation order; inputs always have smaller ids
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward_fn;

    std::vector<T>& grad_buffer() {
        if (grad.empty()) grad.assign(value.size(), T(0));
        return grad;
    }
};

template <typename T>
class Tensor {
public:
    using value_type = T;

    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

    static Tensor from(Shape shape, std::vector<T> values, bool requires_grad = false);
    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, T value, bool requires_grad = false);
    static Tensor scalar(T value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    /// Extent of axis `axis`; negative values count from the back.
    std::size_t dim(int axis) const;
    std::size_t numel() const { return node_->value.size(); }

    std::span<const T> values() const { return node_->value; }
    /// In-place access for parameter updates. Only valid on leaves.
    std::span<T> mutable_values();
    T item() const;
    T at(std::initializer_list<std::size_t> index) const;

    bool requires_grad() const { return node_->requires_grad; }
    bool has_grad() const { return !node_->grad.empty(); }
    /// Gradient values; an empty span when nothing has flowed in yet.
    std::span<const T> grad() const { return node_->grad; }
    void zero_grad() { node_->grad.clear(); }
    bool is_leaf() const { return !node_->backward_fn; }

    /// Same values, cut from the graph.
    Tensor detach() const;

    Node<T>* node() const { return node_.get(); }
    const std::shared_ptr<Node<T>>& node_ptr() const { return node_; }

private:
    std::shared_ptr<Node<T>> node_;
};

/// Build the result node of an op. `backward` is dropped when no input requires a gradient.
template <typename T>
Tensor<T> make_op_result(Shape shape, std::vector<T> value, std::vector<const Tensor<T>*> inputs,
                         std::function<void(Node<T>&)> backward);

/// Populate gradients of every leaf reachable from `root`, which must hold one element.
/// Gradients accumulate by summation across uses and across calls.
template <typename T>
void backward(const Tensor<T>& root);

// --- elementwise with numpy-style broadcasting ---
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> scale(const Tensor<T>& a, T factor);

template <typename T> Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <typename T> Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <typename T> Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }

// --- linear algebra ---
/// a[..., M, K] x b[..., K, N]. Batch extents must match, or b may be rank 2 and
/// is then shared by every batch entry of a.
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// --- normalisation and activations (last axis) ---
template <typename T> Tensor<T> softmax(const Tensor<T>& x, T tau = T(1));
template <typename T> Tensor<T> log_softmax(const Tensor<T>& x, T tau = T(1));
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-6));
template <typename T> Tensor<T> gelu(const Tensor<T>& x);
/// x / max(||x||_2, eps) along the last axis.
template <typename T> Tensor<T> l2_normalize(const Tensor<T>& x, T eps = T(1e-12));

// --- layout ---
template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T> Tensor<T> permute(const Tensor<T>& x, const std::vector<std::size_t>& axes);
template <typename T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end);
template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis);

// --- reductions ---
template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x, std::size_t axis);

/// Cast values into another precision as a fresh leaf.
template <typename U, typename T>
Tensor<U> cast(const Tensor<T>& x, bool requires_grad = false) {
    std::vector<U> v(x.values().begin(), x.values().end());
    return Tensor<U>::from(x.shape(), std::move(v), requires_grad);
}

}  // namespace endovid::ag
