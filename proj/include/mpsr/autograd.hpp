#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "mpsr/tensor.hpp"

namespace mpsr::ag {

struct Node {
    Tensor value;
    Tensor grad;  // allocated on first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;

    /// Gradient buffer of this node, zero-initialised on first use.
    Tensor& grad_buffer();
};

/// Handle to a node of the dynamic graph. Cheap to copy.
class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    bool defined() const { return node_ != nullptr; }
    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }

    bool has_grad() const { return node_ && !node_->grad.empty(); }
    const Tensor& grad() const { return node_->grad; }
    Tensor& mutable_grad() { return node_->grad_buffer(); }
    void zero_grad();

    /// Scalar value of a 1-element variable.
    double item() const;

    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& shared() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

Var constant(Tensor value);
Var leaf(Tensor value, bool requires_grad = true);
/// New constant holding a copy of v's value; cuts the graph.
Var detach(const Var& v);

/// Builds the output node of an op. When grad mode is off or no input
/// requires a gradient, the result is a constant and `backward` is dropped.
Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward);

/// Reverse sweep from a scalar root; gradients accumulate into leaves.
void backward(const Var& root);

bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

} // namespace mpsr::ag
