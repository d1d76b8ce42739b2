#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "strata/tensor.hpp"

namespace strata::num {

class Tape;

/// Handle to a value recorded on a Tape. Becomes stale once the tape is
/// cleared (after backward or an explicit clear).
class Var {
public:
    Var() = default;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    std::size_t index() const noexcept { return index_; }
    Tape& tape() const;
    bool requires_grad() const;

private:
    friend class Tape;
    Var(Tape* tape, std::size_t index, std::uint64_t generation)
        : tape_(tape), index_(index), generation_(generation) {}

    Tape* tape_ = nullptr;
    std::size_t index_ = 0;
    std::uint64_t generation_ = 0;
};

/// Reverse-mode tape. Nodes are appended in evaluation order, which is a
/// topological order, so backward walks the vector from the end.
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, std::size_t self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value);
    /// Leaf bound to a Param; the same Param always maps to one leaf.
    Var param(Param& p);

    /// Records an op output. The closure is dropped when no input needs a gradient.
    Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);
    Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn backward);

    /// Seeds d(loss)=1, accumulates into Param::grad, then clears the tape.
    void backward(const Var& loss);
    void clear();

    std::size_t size() const noexcept { return nodes_.size(); }
    std::uint64_t generation() const noexcept { return generation_; }

    // Accessors used by op backward closures.
    const Tensor& value(std::size_t i) const;
    const Tensor& grad(std::size_t i) const { return nodes_[i].grad; }
    /// Gradient accumulator of node i, or nullptr when i needs no gradient.
    Tensor* grad_slot(std::size_t i);
    /// Adds g into node i's gradient, adopting it outright when the slot is still empty.
    void add_grad(std::size_t i, const Tensor& g);
    void add_grad(std::size_t i, Tensor&& g);
    bool requires_grad(std::size_t i) const { return nodes_[i].requires_grad; }

    void warn(std::string message) { warnings_.push_back(std::move(message)); }
    const std::vector<std::string>& warnings() const noexcept { return warnings_; }

    void check(const Var& v) const;

private:
    struct Node {
        Tensor value;
        const Tensor* external = nullptr;
        Tensor grad;
        BackwardFn backward;
        Param* param = nullptr;
        bool requires_grad = false;
    };

    Var push(Node node);

    std::vector<Node> nodes_;
    std::unordered_map<const Param*, std::size_t> param_nodes_;
    std::vector<std::string> warnings_;
    std::uint64_t generation_ = 1;
};

}  // namespace strata::num
