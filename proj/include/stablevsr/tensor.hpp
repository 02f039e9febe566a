#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <memory>
#include <ostream>
#include <random>
#include <string>
#include <unordered_set>
#include <vector>

#include "stablevsr/errors.hpp"

namespace stablevsr {

using Index = Eigen::Index;

/// NCHW extent of a rank-4 tensor.
struct Shape {
    Index n = 1;
    Index c = 1;
    Index h = 1;
    Index w = 1;

    Index size() const { return n * c * h * w; }
    Index plane() const { return h * w; }
    bool operator==(const Shape&) const = default;
};

inline std::string to_string(const Shape& s)
{
    return "(" + std::to_string(s.n) + "," + std::to_string(s.c) + "," + std::to_string(s.h) + "," +
           std::to_string(s.w) + ")";
}

inline std::ostream& operator<<(std::ostream& os, const Shape& s) { return os << to_string(s); }

template <typename Scalar>
using RowMatrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense NCHW array with value semantics.
///
/// Storage is a contiguous Eigen array; `item(b)` exposes one batch entry as a
/// (channels x height*width) row-major matrix so convolutions reduce to GEMMs.
template <typename Scalar>
class Tensor {
public:
    using Storage = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
    using ItemMap = Eigen::Map<RowMatrix<Scalar>>;
    using ConstItemMap = Eigen::Map<const RowMatrix<Scalar>>;

    Tensor() = default;

    explicit Tensor(Shape shape, Scalar fill = Scalar(0)) : shape_(shape), values_(shape.size())
    {
        if (shape.n < 1 || shape.c < 1 || shape.h < 1 || shape.w < 1)
            throw ShapeError("tensor extents must be positive, got " + to_string(shape));
        values_.setConstant(fill);
    }

    Tensor(Shape shape, Storage values) : shape_(shape), values_(std::move(values))
    {
        if (values_.size() != shape.size())
            throw ShapeError("storage size does not match shape " + to_string(shape));
    }

    static Tensor zeros(Shape shape) { return Tensor(shape); }

    /// Standard normal entries from a seeded engine.
    template <typename Rng>
    static Tensor randn(Shape shape, Rng& rng)
    {
        Tensor t(shape);
        std::normal_distribution<double> dist(0.0, 1.0);
        for (Index i = 0; i < t.size(); ++i)
            t.values_[i] = static_cast<Scalar>(dist(rng));
        return t;
    }

    template <typename Rng>
    static Tensor uniform(Shape shape, Rng& rng, double lo = 0.0, double hi = 1.0)
    {
        Tensor t(shape);
        std::uniform_real_distribution<double> dist(lo, hi);
        for (Index i = 0; i < t.size(); ++i)
            t.values_[i] = static_cast<Scalar>(dist(rng));
        return t;
    }

    const Shape& shape() const { return shape_; }
    Index size() const { return values_.size(); }
    bool empty() const { return values_.size() == 0; }

    Storage& values() { return values_; }
    const Storage& values() const { return values_; }
    Scalar* data() { return values_.data(); }
    const Scalar* data() const { return values_.data(); }

    Scalar& operator()(Index b, Index c, Index y, Index x)
    {
        return values_[((b * shape_.c + c) * shape_.h + y) * shape_.w + x];
    }
    Scalar operator()(Index b, Index c, Index y, Index x) const
    {
        return values_[((b * shape_.c + c) * shape_.h + y) * shape_.w + x];
    }

    ItemMap item(Index b) { return ItemMap(data() + b * shape_.c * shape_.plane(), shape_.c, shape_.plane()); }
    ConstItemMap item(Index b) const
    {
        return ConstItemMap(data() + b * shape_.c * shape_.plane(), shape_.c, shape_.plane());
    }

    Scalar norm() const { return values_.matrix().norm(); }
    Scalar sum() const { return values_.sum(); }
    bool all_finite() const { return values_.allFinite(); }

    Tensor& operator+=(const Tensor& other)
    {
        if (!(shape_ == other.shape_))
            throw ShapeError("shape mismatch in +=: " + to_string(shape_) + " vs " + to_string(other.shape_));
        values_ += other.values_;
        return *this;
    }

    Tensor& operator*=(Scalar a)
    {
        values_ *= a;
        return *this;
    }

    template <typename Other>
    Tensor<Other> cast() const
    {
        return Tensor<Other>(shape_, values_.template cast<Other>().eval());
    }

    /// Channel block [begin, begin+count) of every batch entry.
    Tensor channels(Index begin, Index count) const
    {
        if (begin < 0 || count < 1 || begin + count > shape_.c)
            throw ShapeError("channel slice out of range");
        Tensor out({shape_.n, count, shape_.h, shape_.w});
        for (Index b = 0; b < shape_.n; ++b)
            out.item(b) = item(b).middleRows(begin, count);
        return out;
    }

    /// Batch entry `b` as a standalone (1, C, H, W) tensor.
    Tensor batch_entry(Index b) const
    {
        Tensor out({1, shape_.c, shape_.h, shape_.w});
        out.item(0) = item(b);
        return out;
    }

private:
    Shape shape_{0, 0, 0, 0};
    Storage values_;
};

template <typename Scalar>
Scalar dot(const Tensor<Scalar>& a, const Tensor<Scalar>& b)
{
    if (!(a.shape() == b.shape()))
        throw ShapeError("dot: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    return (a.values() * b.values()).sum();
}

/// Stacks equally shaped (1, C, H, W) tensors along the batch axis.
template <typename Scalar>
Tensor<Scalar> stack_batch(const std::vector<Tensor<Scalar>>& items)
{
    if (items.empty())
        throw ShapeError("stack_batch: no inputs");
    Shape s = items.front().shape();
    Tensor<Scalar> out({static_cast<Index>(items.size()), s.c, s.h, s.w});
    for (size_t i = 0; i < items.size(); ++i) {
        const Shape& si = items[i].shape();
        if (si.n != 1 || si.c != s.c || si.h != s.h || si.w != s.w)
            throw ShapeError("stack_batch: inconsistent item shape " + to_string(si));
        out.item(static_cast<Index>(i)) = items[i].item(0);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Reverse-mode tape.

namespace detail {
inline bool& grad_enabled_flag()
{
    thread_local bool enabled = true;
    return enabled;
}
}  // namespace detail

/// Disables graph construction on this thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
    ~NoGradGuard() { detail::grad_enabled_flag() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

inline bool grad_enabled() { return detail::grad_enabled_flag(); }

/// A tensor participating in the dynamic tape.
///
/// Copies share the underlying node. Leaves created with `requires_grad`
/// accumulate gradients across `backward` calls until `zero_grad`.
template <typename Scalar>
class Variable {
public:
    struct Node {
        Tensor<Scalar> value;
        Tensor<Scalar> grad;
        bool requires_grad = false;
        std::vector<std::shared_ptr<Node>> parents;
        std::function<void(Node&)> backward;

        Tensor<Scalar>& grad_buffer()
        {
            if (grad.empty())
                grad = Tensor<Scalar>::zeros(value.shape());
            return grad;
        }
    };

    Variable() = default;

    explicit Variable(Tensor<Scalar> value, bool requires_grad = false) : node_(std::make_shared<Node>())
    {
        node_->value = std::move(value);
        node_->requires_grad = requires_grad;
    }

    /// Result node of an operation. The backward closure is kept only if some
    /// parent requires a gradient and grad mode is on.
    static Variable from_op(Tensor<Scalar> value, std::vector<Variable> inputs, std::function<void(Node&)> backward)
    {
        Variable out(std::move(value));
        if (!grad_enabled())
            return out;
        bool any = false;
        for (const auto& in : inputs)
            any = any || in.requires_grad();
        if (!any)
            return out;
        out.node_->requires_grad = true;
        for (auto& in : inputs)
            if (in.requires_grad())
                out.node_->parents.push_back(in.node_);
        out.node_->backward = std::move(backward);
        return out;
    }

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->value.shape(); }
    const Tensor<Scalar>& value() const { return node_->value; }
    Tensor<Scalar>& mutable_value() { return node_->value; }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    /// Only meaningful on leaves; interior nodes get the flag from their inputs.
    void set_requires_grad(bool flag) { node_->requires_grad = flag; }
    bool is_leaf() const { return !node_->backward; }

    /// Accumulated gradient; zeros if nothing has flowed in yet.
    const Tensor<Scalar>& grad() const { return node_->grad_buffer(); }
    Tensor<Scalar>& grad() { return node_->grad_buffer(); }
    void zero_grad()
    {
        if (!node_->grad.empty())
            node_->grad.values().setZero();
    }

    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& node_ptr() const { return node_; }

    /// Same values, cut from the tape.
    Variable detach() const { return Variable(node_->value); }

private:
    std::shared_ptr<Node> node_;
};

/// Back-propagates d(root)/d(node) into every tape participant reachable from
/// `root`. Leaf gradients accumulate; interior gradients are recomputed.
template <typename Scalar>
void backward(const Variable<Scalar>& root)
{
    using Node = typename Variable<Scalar>::Node;
    if (!root.defined() || root.value().size() != 1)
        throw UsageError("backward: root must be a scalar (single-element) variable");
    if (!root.requires_grad())
        return;

    // Iterative post-order DFS; recursion depth would grow with BPTT length.
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(root.node(), 0);
    visited.insert(root.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (visited.insert(parent).second)
                stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (Node* node : order)
        if (node->backward && !node->grad.empty())
            node->grad.values().setZero();

    root.node()->grad_buffer().values().array() += Scalar(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward)
            node->backward(*node);
    }
}

}  // namespace stablevsr
