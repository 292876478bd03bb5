#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "occludere/error.hpp"

namespace occludere {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '(';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
    os << ')';
    return os.str();
}

namespace detail {

inline std::uint64_t next_node_id() {
    static std::atomic<std::uint64_t> counter{0};
    return ++counter;
}

inline bool& grad_mode_flag() {
    thread_local bool enabled = true;
    return enabled;
}

template <class T>
struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this node's grad and accumulates into the parents' grads.
    std::function<void(Node&)> backward_fn;
    std::uint64_t id = next_node_id();

    bool is_leaf() const { return !backward_fn; }
};

} // namespace detail

/// Disables graph recording for its lifetime (inference, latent extraction).
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
    ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode_flag(); }

/// Dense row-major tensor participating in a reverse-mode differentiation graph.
///
/// A tensor is a shared handle: copies alias the same node. Data is fixed once
/// an operation has produced it; only leaf parameters are rewritten in place by
/// optimizers, and grad buffers change during backward passes.
template <class T>
class BasicTensor {
public:
    using value_type = T;
    using NodeT = detail::Node<T>;

    BasicTensor() = default;

    explicit BasicTensor(Shape shape, T fill = T{0}, bool requires_grad = false)
        : node_(std::make_shared<NodeT>()) {
        validate_shape(shape);
        node_->data.assign(numel(shape), fill);
        node_->shape = std::move(shape);
        node_->requires_grad = requires_grad;
    }

    BasicTensor(Shape shape, std::vector<T> data, bool requires_grad = false)
        : node_(std::make_shared<NodeT>()) {
        validate_shape(shape);
        require(numel(shape) == data.size(), ErrorKind::shape,
                "data length " + std::to_string(data.size()) + " does not match shape " +
                    shape_str(shape));
        node_->shape = std::move(shape);
        node_->data = std::move(data);
        node_->requires_grad = requires_grad;
    }

    static BasicTensor scalar(T value, bool requires_grad = false) {
        return BasicTensor(Shape{1}, std::vector<T>{value}, requires_grad);
    }

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t size() const { return node_->data.size(); }
    std::uint64_t node_id() const { return node_->id; }

    std::span<const T> data() const { return node_->data; }
    std::span<T> mutable_data() { return node_->data; }
    T item() const {
        require(size() == 1, ErrorKind::contract, "item() on tensor of shape " + shape_str(shape()));
        return node_->data[0];
    }
    T operator[](std::size_t i) const { return node_->data[i]; }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool flag) { node_->requires_grad = flag; }
    bool has_grad() const { return !node_->grad.empty(); }
    std::span<const T> grad() const { return node_->grad; }
    std::span<T> mutable_grad() {
        ensure_grad();
        return node_->grad;
    }
    void zero_grad() {
        if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T{0});
    }
    void ensure_grad() {
        if (node_->grad.size() != node_->data.size()) node_->grad.assign(node_->data.size(), T{0});
    }

    bool is_leaf() const { return node_->is_leaf(); }

    /// Leaf copy of the values with no graph history.
    BasicTensor detach() const { return BasicTensor(shape(), node_->data, false); }

    NodeT& node() const { return *node_; }
    const std::shared_ptr<NodeT>& node_ptr() const { return node_; }

    /// Builds the result of an operation. Parents are recorded only when
    /// graph recording is enabled and at least one parent needs a gradient.
    static BasicTensor from_op(Shape shape, std::vector<T> data,
                               std::vector<BasicTensor> parents,
                               std::function<void(NodeT&)> backward_fn) {
        BasicTensor out(std::move(shape), std::move(data));
        bool needs = false;
        if (grad_enabled())
            for (const auto& p : parents) needs = needs || p.requires_grad();
        if (needs) {
            out.node_->requires_grad = true;
            out.node_->parents.reserve(parents.size());
            for (auto& p : parents) out.node_->parents.push_back(p.node_);
            out.node_->backward_fn = std::move(backward_fn);
        }
        return out;
    }

private:
    static void validate_shape(const Shape& shape) {
        require(!shape.empty(), ErrorKind::shape, "tensor rank must be at least 1");
        for (auto e : shape)
            require(e > 0, ErrorKind::shape, "non-positive extent in shape " + shape_str(shape));
    }

    std::shared_ptr<NodeT> node_;
};

using Tensor = BasicTensor<double>;
using Tensor32 = BasicTensor<float>;

/// Runs reverse-mode differentiation from a scalar loss.
///
/// Leaf tensors accumulate into their grad buffers across calls and must be
/// zeroed explicitly. Interior nodes are reset at the start of every pass, so
/// repeated passes over the same graph add exactly one loss gradient each.
template <class T>
void backward(const BasicTensor<T>& loss) {
    require(loss.defined() && loss.size() == 1, ErrorKind::contract,
            "backward requires a scalar loss, got shape " +
                (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
    using NodeT = detail::Node<T>;

    // Iterative post-order DFS; reversed it is a topological order from the loss.
    std::vector<NodeT*> order;
    std::unordered_set<NodeT*> seen;
    std::vector<std::pair<NodeT*, std::size_t>> stack;
    NodeT* root = &loss.node();
    stack.emplace_back(root, 0);
    seen.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            NodeT* parent = node->parents[next++].get();
            if (parent->requires_grad && seen.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (NodeT* node : order) {
        if (node->grad.size() != node->data.size()) node->grad.assign(node->data.size(), T{0});
        else if (!node->is_leaf()) std::fill(node->grad.begin(), node->grad.end(), T{0});
    }
    root->grad[0] += T{1};
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        NodeT* node = *it;
        if (!node->is_leaf()) node->backward_fn(*node);
    }
}

} // namespace occludere
