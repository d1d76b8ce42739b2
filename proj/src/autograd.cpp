#include "strata/autograd.hpp"

#include <algorithm>

namespace strata::num {

const Tensor& Var::value() const {
    if (!tape_) throw UsageError("use of an unbound Var");
    tape_->check(*this);
    return tape_->value(index_);
}

Tape& Var::tape() const {
    if (!tape_) throw UsageError("use of an unbound Var");
    return *tape_;
}

bool Var::requires_grad() const {
    tape().check(*this);
    return tape_->requires_grad(index_);
}

void Tape::check(const Var& v) const {
    if (v.tape_ != this) throw UsageError("Var belongs to a different tape");
    if (v.generation_ != generation_ || v.index_ >= nodes_.size()) {
        throw UsageError("stale Var: the tape was cleared (backward already ran for this forward pass)");
    }
}

const Tensor& Tape::value(std::size_t i) const {
    const Node& n = nodes_[i];
    return n.external ? *n.external : n.value;
}

Tensor* Tape::grad_slot(std::size_t i) {
    Node& n = nodes_[i];
    if (!n.requires_grad) return nullptr;
    if (n.grad.empty()) n.grad = Tensor(value(i).shape(), 0.0);
    return &n.grad;
}

void Tape::add_grad(std::size_t i, const Tensor& g) {
    Node& n = nodes_[i];
    if (!n.requires_grad) return;
    if (g.shape() != value(i).shape()) throw DimensionError("gradient shape " + shape_str(g.shape()) + " does not match " + shape_str(value(i).shape()));
    if (n.grad.empty()) {
        n.grad = g;
        return;
    }
    auto d = n.grad.data();
    auto s = g.data();
    for (std::size_t j = 0; j < d.size(); ++j) d[j] += s[j];
}

void Tape::add_grad(std::size_t i, Tensor&& g) {
    Node& n = nodes_[i];
    if (!n.requires_grad) return;
    if (n.grad.empty() && g.shape() == value(i).shape()) {
        n.grad = std::move(g);
        return;
    }
    add_grad(i, static_cast<const Tensor&>(g));
}

Var Tape::push(Node node) {
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1, generation_);
}

Var Tape::constant(Tensor value) {
    Node n;
    n.value = std::move(value);
    return push(std::move(n));
}

Var Tape::param(Param& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second, generation_);
    Node n;
    n.external = &p.value;
    n.param = &p;
    n.requires_grad = true;
    Var v = push(std::move(n));
    param_nodes_.emplace(&p, v.index());
    return v;
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
    return record(std::move(value), std::vector<Var>(inputs), std::move(backward));
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, BackwardFn backward) {
    Node n;
    n.value = std::move(value);
    for (const auto& in : inputs) {
        check(in);
        n.requires_grad = n.requires_grad || nodes_[in.index()].requires_grad;
    }
    if (n.requires_grad) n.backward = std::move(backward);
    return push(std::move(n));
}

void Tape::backward(const Var& loss) {
    if (loss.tape_ == this && loss.generation_ != generation_) {
        throw UsageError("backward called twice without a new forward pass");
    }
    check(loss);
    if (value(loss.index()).size() != 1) {
        throw UsageError("backward requires a scalar loss, got shape " + shape_str(value(loss.index()).shape()));
    }
    if (Tensor* g = grad_slot(loss.index())) {
        (*g)[0] = 1.0;
        for (std::size_t i = loss.index() + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (n.grad.empty()) continue;
            if (n.backward) n.backward(*this, i);
            if (n.param) {
                auto dst = n.param->grad.data();
                auto src = n.grad.data();
                for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
            }
        }
    }
    clear();
}

void Tape::clear() {
    nodes_.clear();
    param_nodes_.clear();
    ++generation_;
}

}  // namespace strata::num
