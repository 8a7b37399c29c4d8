#include "mpsr/autograd.hpp"

#include <unordered_set>

namespace mpsr::ag {

namespace {
thread_local bool g_grad_enabled = true;
}

Tensor& Node::grad_buffer()
{
    if (grad.empty())
        grad = Tensor(value.shape());
    return grad;
}

void Var::zero_grad()
{
    if (node_ && !node_->grad.empty())
        node_->grad.fill(0.0);
}

double Var::item() const
{
    if (value().size() != 1)
        throw ShapeError("item() on non-scalar " + shape().str());
    return value()[0];
}

Var constant(Tensor value)
{
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    return Var(node);
}

Var leaf(Tensor value, bool requires_grad)
{
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    node->requires_grad = requires_grad;
    return Var(node);
}

Var detach(const Var& v)
{
    return constant(v.value());
}

Var make_result(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward)
{
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    if (!g_grad_enabled)
        return Var(node);
    bool any = false;
    for (const Var& v : inputs)
        any = any || v.requires_grad();
    if (!any)
        return Var(node);
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (const Var& v : inputs)
        node->inputs.push_back(v.shared());
    node->backward = std::move(backward);
    return Var(node);
}

void backward(const Var& root)
{
    if (!root.requires_grad())
        return;
    if (root.value().size() != 1)
        throw ShapeError("backward() needs a scalar root, got " + root.shape().str());

    // Iterative post-order DFS gives a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(root.node(), 0);
    seen.insert(root.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            Node* child = node->inputs[next++].get();
            if (child->requires_grad && !seen.count(child)) {
                seen.insert(child);
                stack.emplace_back(child, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root.node()->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward && !node->grad.empty()) {
            node->backward(*node);
            node->grad = Tensor();  // interior gradients are not kept
        }
    }
}

bool grad_enabled()
{
    return g_grad_enabled;
}

NoGradGuard::NoGradGuard()
    : previous_(g_grad_enabled)
{
    g_grad_enabled = false;
}

NoGradGuard::~NoGradGuard()
{
    g_grad_enabled = previous_;
}

} // namespace mpsr::ag
