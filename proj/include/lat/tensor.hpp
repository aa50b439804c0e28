#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "lat/error.hpp"
#include "lat/rng.hpp"

namespace lat {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t e : shape) n *= e;
    return n;
}

inline std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

inline thread_local bool g_grad_enabled = true;

// Scoped inference mode: ops built inside record no graph.
struct NoGradGuard {
    bool prev = g_grad_enabled;
    NoGradGuard() { g_grad_enabled = false; }
    ~NoGradGuard() { g_grad_enabled = prev; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// Dense row-major tensor with reverse-mode autodiff.
//
// A TensorT is a shared handle onto a graph node. Ops record a backward
// closure only when some input participates in gradient flow, so plain
// inference builds no graph at all. backward() runs the closures in
// reverse topological order and accumulates into .grad buffers.
template <typename T>
class TensorT {
public:
    struct Node {
        Shape shape;
        std::vector<T> data;
        std::vector<T> grad;  // empty until first accumulation
        bool requires_grad = false;
        std::vector<std::shared_ptr<Node>> parents;
        std::function<void(Node&)> backward;
    };

    TensorT() = default;

    static TensorT zeros(Shape shape) {
        return TensorT(std::make_shared<Node>(
            Node{std::move(shape), {}, {}, false, {}, nullptr}))
            .fill_(T(0));
    }

    static TensorT full(Shape shape, T value) {
        return TensorT(std::make_shared<Node>(
            Node{std::move(shape), {}, {}, false, {}, nullptr}))
            .fill_(value);
    }

    static TensorT scalar(T value) { return full({}, value); }

    static TensorT from(Shape shape, std::vector<T> values) {
        if (numel(shape) != values.size()) {
            throw ShapeError("Tensor::from: " + std::to_string(values.size()) +
                             " values for shape " + shape_str(shape));
        }
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->data = std::move(values);
        return TensorT(std::move(n));
    }

    static TensorT randn(Shape shape, Rng& rng, T stddev = T(1)) {
        auto t = zeros(std::move(shape));
        for (auto& v : t.node_->data) v = static_cast<T>(rng.gaussian()) * stddev;
        return t;
    }

    // -------- metadata --------

    const Shape& shape() const { return check_node()->shape; }
    std::size_t ndim() const { return shape().size(); }
    std::size_t size() const { return check_node()->data.size(); }

    std::size_t rows() const {
        require_ndim(2, "rows");
        return shape()[0];
    }
    std::size_t cols() const {
        require_ndim(2, "cols");
        return shape()[1];
    }

    bool defined() const { return node_ != nullptr; }

    // -------- element access --------

    std::vector<T>& data() { return check_node()->data; }
    const std::vector<T>& data() const { return check_node()->data; }

    T& operator[](std::size_t i) { return check_node()->data[i]; }
    const T& operator[](std::size_t i) const { return check_node()->data[i]; }

    T& at(std::size_t r, std::size_t c) {
        require_ndim(2, "at(r,c)");
        return node_->data[r * shape()[1] + c];
    }
    const T& at(std::size_t r, std::size_t c) const {
        require_ndim(2, "at(r,c)");
        return node_->data[r * shape()[1] + c];
    }

    T item() const {
        if (size() != 1) {
            throw ShapeError("item: tensor has " + std::to_string(size()) + " elements");
        }
        return node_->data[0];
    }

    bool all_finite() const {
        for (T v : data()) {
            if (!std::isfinite(static_cast<double>(v))) return false;
        }
        return true;
    }

    // -------- autodiff --------

    bool requires_grad() const { return check_node()->requires_grad; }

    TensorT& set_requires_grad(bool flag) {
        check_node()->requires_grad = flag;
        return *this;
    }

    bool has_grad() const { return !check_node()->grad.empty(); }

    const std::vector<T>& grad() const {
        if (!has_grad()) throw Error("grad: no gradient has been accumulated");
        return node_->grad;
    }

    void zero_grad() { check_node()->grad.clear(); }

    // Reverse pass from a scalar. Closures of interior nodes run exactly
    // once, in reverse topological order.
    void backward() {
        if (size() != 1) throw ShapeError("backward: tensor must be scalar");
        std::vector<Node*> topo;
        topo_order(check_node().get(), topo);
        ensure_grad(*node_);
        node_->grad[0] = T(1);
        for (auto it = topo.rbegin(); it != topo.rend(); ++it) {
            Node* n = *it;
            if (n->backward && !n->grad.empty()) n->backward(*n);
        }
    }

    // Value copy with no graph attached.
    TensorT detach() const {
        auto n = std::make_shared<Node>();
        n->shape = shape();
        n->data = data();
        return TensorT(std::move(n));
    }

    // -------- graph plumbing (used by op implementations) --------

    static TensorT make_op(Shape shape, std::vector<T> data,
                           std::vector<TensorT> inputs,
                           std::function<void(Node&)> backward) {
        if (numel(shape) != data.size()) {
            throw ShapeError("make_op: data size does not match shape " + shape_str(shape));
        }
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->data = std::move(data);
        bool needs = false;
        if (g_grad_enabled) {
            for (const auto& in : inputs) needs = needs || in.requires_grad();
        }
        if (needs) {
            n->requires_grad = true;
            n->parents.reserve(inputs.size());
            for (auto& in : inputs) n->parents.push_back(in.node_);
            n->backward = std::move(backward);
        }
        return TensorT(std::move(n));
    }

    static void ensure_grad(Node& n) {
        if (n.grad.empty()) n.grad.assign(n.data.size(), T(0));
    }

    std::shared_ptr<Node> node() const { return node_; }

private:
    explicit TensorT(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    TensorT& fill_(T v) {
        node_->data.assign(numel(node_->shape), v);
        return *this;
    }

    const std::shared_ptr<Node>& check_node() const {
        if (!node_) throw Error("use of an undefined tensor");
        return node_;
    }

    void require_ndim(std::size_t nd, const char* what) const {
        if (ndim() != nd) {
            throw ShapeError(std::string(what) + ": expected " + std::to_string(nd) +
                             "-d tensor, got shape " + shape_str(shape()));
        }
    }

    // Iterative post-order DFS; graphs can be a few thousand nodes deep.
    static void topo_order(Node* root, std::vector<Node*>& out) {
        std::unordered_set<Node*> visited;
        std::vector<std::pair<Node*, std::size_t>> stack;
        stack.emplace_back(root, 0);
        visited.insert(root);
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < node->parents.size()) {
                Node* p = node->parents[next++].get();
                if (visited.insert(p).second) stack.emplace_back(p, 0);
            } else {
                out.push_back(node);
                stack.pop_back();
            }
        }
    }

    std::shared_ptr<Node> node_;
};

}  // namespace lat
