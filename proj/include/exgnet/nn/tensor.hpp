#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace exg::nn {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// One vertex of the reverse-mode tape. `backward_fn` reads this node's
/// grad and accumulates into the parents' grads.
struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;
    bool requires_grad = false;
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backward_fn;
    const char* op = "leaf";

    Node();
    Node(const Node&) = delete;
    Node& operator=(const Node&) = delete;

    bool is_leaf() const { return parents.empty(); }
    /// Allocates a zero grad buffer on first use.
    std::vector<double>& grad_buffer();

    /// Number of nodes ever constructed in this process.
    static std::uint64_t created();
};

/// Shared handle to a Node. Copies alias the same storage.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(NodePtr node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t numel() const { return node_->value.size(); }

    std::span<double> data() { return node_->value; }
    std::span<const double> data() const { return node_->value; }
    const std::vector<double>& values() const { return node_->value; }
    double item() const;
    double at(std::size_t i) const { return node_->value.at(i); }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }
    /// Empty span when no gradient has reached this tensor.
    std::span<const double> grad() const { return node_->grad; }
    std::vector<double>& grad_buffer() { return node_->grad_buffer(); }
    void zero_grad();

    /// Reverse sweep from this scalar. Leaf grads accumulate across calls;
    /// interior grads are reset at the start of every sweep.
    void backward() const;

    /// Same values, cut from the tape.
    Tensor detach() const;

    Node* node() const { return node_.get(); }
    const NodePtr& node_ptr() const { return node_; }

private:
    NodePtr node_;
};

bool grad_enabled();

/// Sets tape recording on or off in scope.
class GradModeGuard {
public:
    explicit GradModeGuard(bool enabled);
    ~GradModeGuard();
    GradModeGuard(const GradModeGuard&) = delete;
    GradModeGuard& operator=(const GradModeGuard&) = delete;

private:
    bool previous_;
};

class NoGradGuard : public GradModeGuard {
public:
    NoGradGuard() : GradModeGuard(false) {}
};

/// Builds a result node. Parents and the backward closure are kept only when
/// recording is on and some parent requires grad.
Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> parents,
                   std::function<void(Node&)> backward_fn, const char* op);

}  // namespace exg::nn
