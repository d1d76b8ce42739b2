#pragma once

#include <cstddef>
#include <random>
#include <span>
#include <vector>

#include "strata/autograd.hpp"

namespace strata::num {

using Rng = std::mt19937_64;

/// Compressed neighbor lists with one aggregation coefficient per entry.
/// Row i aggregates sum_j coeff(i,j) * x_j over its entries.
struct NeighborLists {
    std::vector<std::size_t> offsets;  // size n + 1
    std::vector<std::size_t> neighbors;
    std::vector<double> coeffs;

    std::size_t node_count() const noexcept { return offsets.empty() ? 0 : offsets.size() - 1; }
    std::size_t degree(std::size_t i) const noexcept { return offsets[i + 1] - offsets[i]; }

    /// Unweighted mean: every coefficient is 1/|N(i)|.
    static NeighborLists mean(const std::vector<std::vector<std::size_t>>& lists);
    /// Weighted mean with per-neighborhood normalization w_ij / sum_j w_ij.
    static NeighborLists weighted_mean(const std::vector<std::vector<std::size_t>>& lists,
                                       const std::vector<std::vector<double>>& weights);
    /// Block-diagonal replication for `copies` disjoint graphs laid out back to back.
    NeighborLists replicated(std::size_t copies) const;
};

// Elementwise and structural ops. Shapes must match exactly unless noted.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var scale(const Var& x, double c);
/// Adds a vector of extent last-dim to every slice along the last axis.
Var add_bias(const Var& x, const Var& bias);
/// a * x + (1 - a) * y with a a single-element Var.
Var scalar_mix(const Var& a, const Var& x, const Var& y);

Var matmul(const Var& a, const Var& b);
/// x[..., in] * W^T with W [out, in]; leading axes are flattened.
Var linear(const Var& x, const Var& weight);
Var linear(const Var& x, const Var& weight, const Var& bias);
/// Batched product over axis 0: a [B,m,k] x b [B,k,n], or b [B,n,k] when transpose_b.
Var bmm(const Var& a, const Var& b, bool transpose_b = false);

Var transpose(const Var& x);
Var reshape(const Var& x, Shape shape);
Var permute(const Var& x, const std::vector<std::size_t>& axes);
Var concat(std::span<const Var> parts, std::size_t axis);

Var relu(const Var& x);
Var hardswish(const Var& x);
Var softmax_lastdim(const Var& x);
Var layernorm(const Var& x, const Var& gain, const Var& bias, double eps = 1e-5);
/// Inverted dropout; identity when !train or p == 0.
Var dropout(const Var& x, double p, Rng& rng, bool train);

/// Row i = sum_j coeff(i,j) x_j. Nodes without neighbors produce zeros and log a tape warning.
Var neighbor_aggregate(const Var& x, const NeighborLists& lists);
Var segment_mean(const Var& x, const std::vector<std::vector<std::size_t>>& neighbors);

Var sum(const Var& x);
Var mse(const Var& pred, const Tensor& target);

// Plain forward kernels shared with tests and evaluation code.
Tensor softmax_lastdim(const Tensor& x);
Tensor permuted(const Tensor& x, const std::vector<std::size_t>& axes);
double hardswish(double x) noexcept;
double hardswish_grad(double x) noexcept;

}  // namespace strata::num
