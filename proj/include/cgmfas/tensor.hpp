#pragma once

#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "cgmfas/common.hpp"

namespace cgmfas::nn {

using Shape = std::vector<int>;

inline long shape_size(const Shape& s) {
    long n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "x" : "") + std::to_string(s[i]);
    return out + "]";
}

/// One node of the per-step computation tape. 32-bit values; the gradient
/// buffer is allocated lazily on first accumulation.
struct Node {
    Shape shape;
    std::vector<float> value;
    std::vector<float> grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void()> backward;

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), 0.0f);
    }
};

/// Value-semantic handle to a tape node.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    const Shape& shape() const { return node_->shape; }
    int dim(std::size_t i) const { return node_->shape[i]; }
    long size() const { return static_cast<long>(node_->value.size()); }
    float* data() { return node_->value.data(); }
    const float* data() const { return node_->value.data(); }
    float* grad() { node_->ensure_grad(); return node_->grad.data(); }
    bool requires_grad() const { return node_->requires_grad; }
    const std::shared_ptr<Node>& node() const { return node_; }
    bool valid() const { return node_ != nullptr; }

private:
    std::shared_ptr<Node> node_;
};

/// Off-tape leaf: a parameter (requires_grad) or a constant input.
inline Tensor make_leaf(Shape shape, bool requires_grad) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value.assign(static_cast<std::size_t>(shape_size(n->shape)), 0.0f);
    n->requires_grad = requires_grad;
    return Tensor(n);
}

/// Records ops in creation order for one training step; backward replays
/// the record in reverse. In inference mode emitted nodes carry no
/// gradient machinery at all.
class Tape {
public:
    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}

    bool grad_enabled() const { return grad_enabled_; }

    Tensor emit(Shape shape, std::vector<std::shared_ptr<Node>> parents) {
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->value.assign(static_cast<std::size_t>(shape_size(n->shape)), 0.0f);
        if (grad_enabled_) {
            for (const auto& p : parents)
                if (p->requires_grad) n->requires_grad = true;
            if (n->requires_grad) n->parents = std::move(parents);
        }
        ops_.push_back(n);
        return Tensor(n);
    }

    void backward(const Tensor& loss) {
        if (!grad_enabled_) throw NumericalError("backward on an inference tape");
        if (loss.size() != 1) throw NumericalError("backward needs a scalar loss");
        loss.node()->ensure_grad();
        loss.node()->grad[0] = 1.0f;
        for (auto it = ops_.rbegin(); it != ops_.rend(); ++it)
            if ((*it)->requires_grad && (*it)->backward) (*it)->backward();
    }

private:
    bool grad_enabled_;
    std::vector<std::shared_ptr<Node>> ops_;
};

}  // namespace cgmfas::nn
