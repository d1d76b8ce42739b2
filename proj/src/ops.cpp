#include "strata/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numeric>

namespace strata::num {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

MatMap as_mat(Tensor& t, std::size_t rows, std::size_t cols) {
    return MatMap(t.raw(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

ConstMatMap as_mat(const Tensor& t, std::size_t rows, std::size_t cols) {
    return ConstMatMap(t.raw(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

Tape& same_tape(const Var& a, const Var& b) {
    Tape& t = a.tape();
    if (&b.tape() != &t) throw UsageError("operands recorded on different tapes");
    return t;
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) {
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                             shape_str(b.shape()));
    }
}

void accumulate(Tensor* dst, const Tensor& src, double factor = 1.0) {
    if (!dst) return;
    auto d = dst->data();
    auto s = src.data();
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += factor * s[i];
}

std::size_t last_dim(const Tensor& t) { return t.shape().back(); }
std::size_t leading(const Tensor& t) { return t.size() / last_dim(t); }

std::vector<std::size_t> strides_of(const Shape& shape) {
    std::vector<std::size_t> s(shape.size(), 1);
    for (std::size_t i = shape.size(); i-- > 1;) s[i - 1] = s[i] * shape[i];
    return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// NeighborLists

NeighborLists NeighborLists::mean(const std::vector<std::vector<std::size_t>>& lists) {
    NeighborLists out;
    out.offsets.reserve(lists.size() + 1);
    out.offsets.push_back(0);
    for (const auto& l : lists) {
        const double c = l.empty() ? 0.0 : 1.0 / static_cast<double>(l.size());
        for (auto j : l) {
            out.neighbors.push_back(j);
            out.coeffs.push_back(c);
        }
        out.offsets.push_back(out.neighbors.size());
    }
    return out;
}

NeighborLists NeighborLists::weighted_mean(const std::vector<std::vector<std::size_t>>& lists,
                                           const std::vector<std::vector<double>>& weights) {
    if (lists.size() != weights.size()) throw DimensionError("weighted_mean: list/weight count mismatch");
    NeighborLists out;
    out.offsets.push_back(0);
    for (std::size_t i = 0; i < lists.size(); ++i) {
        if (lists[i].size() != weights[i].size()) {
            throw DimensionError("weighted_mean: node " + std::to_string(i) + " has mismatched weights");
        }
        const double total = std::accumulate(weights[i].begin(), weights[i].end(), 0.0);
        for (std::size_t e = 0; e < lists[i].size(); ++e) {
            out.neighbors.push_back(lists[i][e]);
            out.coeffs.push_back(total > 0.0 ? weights[i][e] / total : 0.0);
        }
        out.offsets.push_back(out.neighbors.size());
    }
    return out;
}

NeighborLists NeighborLists::replicated(std::size_t copies) const {
    const std::size_t n = node_count();
    NeighborLists out;
    out.offsets.reserve(n * copies + 1);
    out.neighbors.reserve(neighbors.size() * copies);
    out.coeffs.reserve(coeffs.size() * copies);
    out.offsets.push_back(0);
    for (std::size_t c = 0; c < copies; ++c) {
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t e = offsets[i]; e < offsets[i + 1]; ++e) {
                out.neighbors.push_back(neighbors[e] + c * n);
                out.coeffs.push_back(coeffs[e]);
            }
            out.offsets.push_back(out.neighbors.size());
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Elementwise

Var add(const Var& a, const Var& b) {
    Tape& t = same_tape(a, b);
    require_same_shape("add", a.value(), b.value());
    Tensor out = a.value();
    accumulate(&out, b.value());
    return t.record(std::move(out), {a, b}, [ia = a.index(), ib = b.index()](Tape& t, std::size_t self) {
        t.add_grad(ia, t.grad(self));
        t.add_grad(ib, t.grad(self));
    });
}

Var sub(const Var& a, const Var& b) {
    Tape& t = same_tape(a, b);
    require_same_shape("sub", a.value(), b.value());
    Tensor out = a.value();
    accumulate(&out, b.value(), -1.0);
    return t.record(std::move(out), {a, b}, [ia = a.index(), ib = b.index()](Tape& t, std::size_t self) {
        t.add_grad(ia, t.grad(self));
        accumulate(t.grad_slot(ib), t.grad(self), -1.0);
    });
}

Var scale(const Var& x, double c) {
    Tensor out = x.value();
    for (auto& v : out.data()) v *= c;
    return x.tape().record(std::move(out), {x}, [ix = x.index(), c](Tape& t, std::size_t self) {
        accumulate(t.grad_slot(ix), t.grad(self), c);
    });
}

Var add_bias(const Var& x, const Var& bias) {
    Tape& t = same_tape(x, bias);
    const Tensor& xv = x.value();
    const Tensor& bv = bias.value();
    const std::size_t d = last_dim(xv);
    if (bv.size() != d) {
        throw DimensionError("add_bias: bias " + shape_str(bv.shape()) + " does not match last axis of " +
                             shape_str(xv.shape()));
    }
    Tensor out = xv;
    const std::size_t rows = leading(xv);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < d; ++c) out[r * d + c] += bv[c];
    return t.record(std::move(out), {x, bias},
                    [ix = x.index(), ib = bias.index(), rows, d](Tape& t, std::size_t self) {
                        const Tensor& g = t.grad(self);
                        accumulate(t.grad_slot(ix), g);
                        if (Tensor* gb = t.grad_slot(ib)) {
                            for (std::size_t r = 0; r < rows; ++r)
                                for (std::size_t c = 0; c < d; ++c) (*gb)[c] += g[r * d + c];
                        }
                    });
}

Var scalar_mix(const Var& a, const Var& x, const Var& y) {
    Tape& t = same_tape(x, y);
    if (&a.tape() != &t) throw UsageError("scalar_mix: operands recorded on different tapes");
    require_same_shape("scalar_mix", x.value(), y.value());
    const double alpha = a.value().item();
    const Tensor& xv = x.value();
    const Tensor& yv = y.value();
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = alpha * xv[i] + (1.0 - alpha) * yv[i];
    return t.record(std::move(out), {a, x, y},
                    [ia = a.index(), ix = x.index(), iy = y.index()](Tape& t, std::size_t self) {
                        const Tensor& g = t.grad(self);
                        const double alpha = t.value(ia)[0];
                        accumulate(t.grad_slot(ix), g, alpha);
                        accumulate(t.grad_slot(iy), g, 1.0 - alpha);
                        if (Tensor* ga = t.grad_slot(ia)) {
                            const Tensor& xv = t.value(ix);
                            const Tensor& yv = t.value(iy);
                            double s = 0.0;
                            for (std::size_t i = 0; i < g.size(); ++i) s += g[i] * (xv[i] - yv[i]);
                            (*ga)[0] += s;
                        }
                    });
}

// ---------------------------------------------------------------------------
// Products

Var matmul(const Var& a, const Var& b) {
    Tape& t = same_tape(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
        throw DimensionError("matmul: incompatible shapes " + shape_str(av.shape()) + " and " +
                             shape_str(bv.shape()));
    }
    const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
    Tensor out({m, n});
    as_mat(out, m, n).noalias() = as_mat(av, m, k) * as_mat(bv, k, n);
    return t.record(std::move(out), {a, b}, [ia = a.index(), ib = b.index(), m, k, n](Tape& t, std::size_t self) {
        const auto g = as_mat(t.grad(self), m, n);
        if (Tensor* ga = t.grad_slot(ia)) as_mat(*ga, m, k).noalias() += g * as_mat(t.value(ib), k, n).transpose();
        if (Tensor* gb = t.grad_slot(ib)) as_mat(*gb, k, n).noalias() += as_mat(t.value(ia), m, k).transpose() * g;
    });
}

namespace {

Var linear_impl(const Var& x, const Var& weight, const Var* bias) {
    Tape& t = same_tape(x, weight);
    const Tensor& xv = x.value();
    const Tensor& wv = weight.value();
    if (wv.rank() != 2 || last_dim(xv) != wv.dim(1)) {
        throw DimensionError("linear: input " + shape_str(xv.shape()) + " incompatible with weight " +
                             shape_str(wv.shape()));
    }
    const std::size_t rows = leading(xv), in = wv.dim(1), outd = wv.dim(0);
    if (bias && bias->value().size() != outd) {
        throw DimensionError("linear: bias " + shape_str(bias->value().shape()) + " does not match weight " +
                             shape_str(wv.shape()));
    }
    Shape oshape = xv.shape();
    oshape.back() = outd;
    Tensor out(oshape);
    auto om = as_mat(out, rows, outd);
    om.noalias() = as_mat(xv, rows, in) * as_mat(wv, outd, in).transpose();
    std::vector<Var> inputs{x, weight};
    std::size_t ib = 0;
    if (bias) {
        if (&bias->tape() != &t) throw UsageError("linear: bias recorded on a different tape");
        const auto& bv = bias->value();
        om.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bv.raw(), static_cast<Eigen::Index>(outd));
        inputs.push_back(*bias);
        ib = bias->index();
    }
    const bool has_bias = bias != nullptr;
    return t.record(std::move(out), inputs,
                    [ix = x.index(), iw = weight.index(), ib, has_bias, rows, in, outd](Tape& t, std::size_t self) {
                        const auto g = as_mat(t.grad(self), rows, outd);
                        if (Tensor* gx = t.grad_slot(ix))
                            as_mat(*gx, rows, in).noalias() += g * as_mat(t.value(iw), outd, in);
                        if (Tensor* gw = t.grad_slot(iw))
                            as_mat(*gw, outd, in).noalias() += g.transpose() * as_mat(t.value(ix), rows, in);
                        if (has_bias) {
                            if (Tensor* gb = t.grad_slot(ib)) {
                                Eigen::Map<Eigen::RowVectorXd>(gb->raw(), static_cast<Eigen::Index>(outd)) +=
                                    g.colwise().sum();
                            }
                        }
                    });
}

}  // namespace

Var linear(const Var& x, const Var& weight) { return linear_impl(x, weight, nullptr); }
Var linear(const Var& x, const Var& weight, const Var& bias) { return linear_impl(x, weight, &bias); }

Var bmm(const Var& a, const Var& b, bool transpose_b) {
    Tape& t = same_tape(a, b);
    const Tensor& av = a.value();
    const Tensor& bv = b.value();
    if (av.rank() != 3 || bv.rank() != 3 || av.dim(0) != bv.dim(0) ||
        av.dim(2) != (transpose_b ? bv.dim(2) : bv.dim(1))) {
        throw DimensionError("bmm: incompatible shapes " + shape_str(av.shape()) + " and " + shape_str(bv.shape()) +
                             (transpose_b ? " (transposed)" : ""));
    }
    const std::size_t batch = av.dim(0), m = av.dim(1), k = av.dim(2);
    const std::size_t n = transpose_b ? bv.dim(1) : bv.dim(2);
    Tensor out({batch, m, n});
    // b is [n, k] per batch when transposed, [k, n] otherwise.
    const std::size_t bs_p = transpose_b ? 1 : n, bs_j = transpose_b ? k : 1;
    for (std::size_t q = 0; q < batch; ++q) {
        const double* ap = av.raw() + q * m * k;
        const double* bp = bv.raw() + q * k * n;
        double* op = out.raw() + q * m * n;
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) {
                double s = 0.0;
                for (std::size_t p = 0; p < k; ++p) s += ap[i * k + p] * bp[p * bs_p + j * bs_j];
                op[i * n + j] = s;
            }
    }
    return t.record(std::move(out), {a, b},
                    [ia = a.index(), ib = b.index(), batch, m, k, n, bs_p, bs_j](Tape& t, std::size_t self) {
                        const Tensor& g = t.grad(self);
                        const Tensor& av = t.value(ia);
                        const Tensor& bv = t.value(ib);
                        if (Tensor* ga = t.grad_slot(ia)) {
                            for (std::size_t q = 0; q < batch; ++q) {
                                const double* gp = g.raw() + q * m * n;
                                const double* bp = bv.raw() + q * k * n;
                                double* dst = ga->raw() + q * m * k;
                                for (std::size_t i = 0; i < m; ++i)
                                    for (std::size_t p = 0; p < k; ++p) {
                                        double s = 0.0;
                                        for (std::size_t j = 0; j < n; ++j) s += gp[i * n + j] * bp[p * bs_p + j * bs_j];
                                        dst[i * k + p] += s;
                                    }
                            }
                        }
                        if (Tensor* gb = t.grad_slot(ib)) {
                            for (std::size_t q = 0; q < batch; ++q) {
                                const double* gp = g.raw() + q * m * n;
                                const double* ap = av.raw() + q * m * k;
                                double* dst = gb->raw() + q * k * n;
                                for (std::size_t p = 0; p < k; ++p)
                                    for (std::size_t j = 0; j < n; ++j) {
                                        double s = 0.0;
                                        for (std::size_t i = 0; i < m; ++i) s += gp[i * n + j] * ap[i * k + p];
                                        dst[p * bs_p + j * bs_j] += s;
                                    }
                            }
                        }
                    });
}

// ---------------------------------------------------------------------------
// Structural

Var transpose(const Var& x) {
    if (x.value().rank() != 2) throw DimensionError("transpose requires a matrix, got " + shape_str(x.shape()));
    return permute(x, {1, 0});
}

Var reshape(const Var& x, Shape shape) {
    Tensor out = x.value().reshaped(std::move(shape));
    return x.tape().record(std::move(out), {x}, [ix = x.index()](Tape& t, std::size_t self) {
        if (t.requires_grad(ix)) t.add_grad(ix, t.grad(self).reshaped(t.value(ix).shape()));
    });
}

Tensor permuted(const Tensor& x, const std::vector<std::size_t>& axes) {
    const Shape& in = x.shape();
    if (axes.size() != in.size()) {
        throw DimensionError("permute: " + std::to_string(axes.size()) + " axes for shape " + shape_str(in));
    }
    std::vector<bool> seen(axes.size(), false);
    Shape out_shape(axes.size());
    for (std::size_t i = 0; i < axes.size(); ++i) {
        if (axes[i] >= in.size() || seen[axes[i]]) throw DimensionError("permute: invalid axis order");
        seen[axes[i]] = true;
        out_shape[i] = in[axes[i]];
    }
    const auto in_strides = strides_of(in);
    std::vector<std::size_t> src_strides(axes.size());
    for (std::size_t i = 0; i < axes.size(); ++i) src_strides[i] = in_strides[axes[i]];
    Tensor out(out_shape);
    // Trailing axes that keep their place form contiguous runs.
    std::size_t r = axes.size(), run = 1;
    while (r > 1 && axes[r - 1] == r - 1 && src_strides[r - 1] == run) {
        run *= out_shape[r - 1];
        --r;
    }
    std::vector<std::size_t> idx(r, 0);
    std::size_t src = 0;
    for (std::size_t o = 0; o < out.size(); o += run) {
        std::copy_n(x.raw() + src, run, out.raw() + o);
        // odometer increment over output indices
        for (std::size_t a = r; a-- > 0;) {
            ++idx[a];
            src += src_strides[a];
            if (idx[a] < out_shape[a]) break;
            src -= src_strides[a] * idx[a];
            idx[a] = 0;
        }
    }
    return out;
}

Var permute(const Var& x, const std::vector<std::size_t>& axes) {
    Tensor out = permuted(x.value(), axes);
    std::vector<std::size_t> inverse(axes.size());
    for (std::size_t i = 0; i < axes.size(); ++i) inverse[axes[i]] = i;
    return x.tape().record(std::move(out), {x}, [ix = x.index(), inverse](Tape& t, std::size_t self) {
        if (t.requires_grad(ix)) t.add_grad(ix, permuted(t.grad(self), inverse));
    });
}

Var concat(std::span<const Var> parts, std::size_t axis) {
    if (parts.empty()) throw DimensionError("concat: no inputs");
    Tape& t = parts.front().tape();
    const Shape& first = parts.front().shape();
    if (axis >= first.size()) throw DimensionError("concat: axis out of range for " + shape_str(first));
    Shape out_shape = first;
    out_shape[axis] = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        if (&p.tape() != &t) throw UsageError("concat: inputs recorded on different tapes");
        bool ok = s.size() == first.size();
        for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == first[i];
        if (!ok) throw DimensionError("concat: shape " + shape_str(s) + " incompatible with " + shape_str(first));
        out_shape[axis] += s[axis];
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= first[i];
    for (std::size_t i = axis + 1; i < first.size(); ++i) inner *= first[i];
    const std::size_t out_row = out_shape[axis] * inner;
    Tensor out(out_shape);
    std::vector<std::size_t> widths;
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t w = p.shape()[axis] * inner;
        const Tensor& pv = p.value();
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(pv.raw() + o * w, w, out.raw() + o * out_row + offset);
        widths.push_back(w);
        offset += w;
    }
    std::vector<std::size_t> ids;
    for (const auto& p : parts) ids.push_back(p.index());
    return t.record(std::move(out), std::vector<Var>(parts.begin(), parts.end()),
                    [ids, widths, outer, out_row](Tape& t, std::size_t self) {
                        const Tensor& g = t.grad(self);
                        std::size_t offset = 0;
                        for (std::size_t i = 0; i < ids.size(); ++i) {
                            if (Tensor* gp = t.grad_slot(ids[i])) {
                                for (std::size_t o = 0; o < outer; ++o)
                                    for (std::size_t c = 0; c < widths[i]; ++c)
                                        (*gp)[o * widths[i] + c] += g[o * out_row + offset + c];
                            }
                            offset += widths[i];
                        }
                    });
}

// ---------------------------------------------------------------------------
// Nonlinearities and normalization

Var relu(const Var& x) {
    Tensor out = x.value();
    for (auto& v : out.data()) v = v > 0.0 ? v : 0.0;
    return x.tape().record(std::move(out), {x}, [ix = x.index()](Tape& t, std::size_t self) {
        if (Tensor* gx = t.grad_slot(ix)) {
            const Tensor& xv = t.value(ix);
            const Tensor& g = t.grad(self);
            for (std::size_t i = 0; i < g.size(); ++i)
                if (xv[i] > 0.0) (*gx)[i] += g[i];
        }
    });
}

double hardswish(double x) noexcept { return x * std::clamp(x + 3.0, 0.0, 6.0) / 6.0; }

double hardswish_grad(double x) noexcept {
    if (x <= -3.0) return 0.0;
    if (x >= 3.0) return 1.0;
    return (2.0 * x + 3.0) / 6.0;
}

Var hardswish(const Var& x) {
    Tensor out = x.value();
    for (auto& v : out.data()) v = hardswish(v);
    return x.tape().record(std::move(out), {x}, [ix = x.index()](Tape& t, std::size_t self) {
        if (Tensor* gx = t.grad_slot(ix)) {
            const Tensor& xv = t.value(ix);
            const Tensor& g = t.grad(self);
            for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * hardswish_grad(xv[i]);
        }
    });
}

Tensor softmax_lastdim(const Tensor& x) {
    Tensor out = x;
    const std::size_t d = last_dim(x), rows = leading(x);
    for (std::size_t r = 0; r < rows; ++r) {
        double* row = out.raw() + r * d;
        const double mx = *std::max_element(row, row + d);
        double z = 0.0;
        for (std::size_t c = 0; c < d; ++c) {
            row[c] = std::exp(row[c] - mx);
            z += row[c];
        }
        for (std::size_t c = 0; c < d; ++c) row[c] /= z;
    }
    return out;
}

Var softmax_lastdim(const Var& x) {
    Tensor out = softmax_lastdim(x.value());
    const std::size_t d = last_dim(out), rows = leading(out);
    return x.tape().record(std::move(out), {x}, [ix = x.index(), d, rows](Tape& t, std::size_t self) {
        if (Tensor* gx = t.grad_slot(ix)) {
            const Tensor& y = t.value(self);
            const Tensor& g = t.grad(self);
            for (std::size_t r = 0; r < rows; ++r) {
                double dot = 0.0;
                for (std::size_t c = 0; c < d; ++c) dot += g[r * d + c] * y[r * d + c];
                for (std::size_t c = 0; c < d; ++c) (*gx)[r * d + c] += y[r * d + c] * (g[r * d + c] - dot);
            }
        }
    });
}

Var layernorm(const Var& x, const Var& gain, const Var& bias, double eps) {
    Tape& t = same_tape(x, gain);
    if (&bias.tape() != &t) throw UsageError("layernorm: operands recorded on different tapes");
    if (!(eps > 0.0)) throw std::invalid_argument("layernorm: eps must be positive");
    const Tensor& xv = x.value();
    const std::size_t d = last_dim(xv), rows = leading(xv);
    if (gain.value().size() != d || bias.value().size() != d) {
        throw DimensionError("layernorm: affine parameters must have extent " + std::to_string(d));
    }
    const Tensor& gv = gain.value();
    const Tensor& bv = bias.value();
    Tensor out(xv.shape());
    std::vector<double> xhat(xv.size());
    std::vector<double> inv_std(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const double* row = xv.raw() + r * d;
        double mean = 0.0;
        for (std::size_t c = 0; c < d; ++c) mean += row[c];
        mean /= static_cast<double>(d);
        double var = 0.0;
        for (std::size_t c = 0; c < d; ++c) var += (row[c] - mean) * (row[c] - mean);
        var /= static_cast<double>(d);
        const double is = 1.0 / std::sqrt(var + eps);
        inv_std[r] = is;
        for (std::size_t c = 0; c < d; ++c) {
            const double h = (row[c] - mean) * is;
            xhat[r * d + c] = h;
            out[r * d + c] = h * gv[c] + bv[c];
        }
    }
    return t.record(std::move(out), {x, gain, bias},
                    [ix = x.index(), ig = gain.index(), ib = bias.index(), d, rows, xhat = std::move(xhat),
                     inv_std = std::move(inv_std)](Tape& t, std::size_t self) {
                        const Tensor& g = t.grad(self);
                        const Tensor& gv = t.value(ig);
                        Tensor* gx = t.grad_slot(ix);
                        Tensor* gg = t.grad_slot(ig);
                        Tensor* gb = t.grad_slot(ib);
                        const double inv_d = 1.0 / static_cast<double>(d);
                        for (std::size_t r = 0; r < rows; ++r) {
                            const double* gr = g.raw() + r * d;
                            const double* hr = xhat.data() + r * d;
                            if (gg || gb) {
                                for (std::size_t c = 0; c < d; ++c) {
                                    if (gg) (*gg)[c] += gr[c] * hr[c];
                                    if (gb) (*gb)[c] += gr[c];
                                }
                            }
                            if (gx) {
                                double mean_dh = 0.0, mean_dh_h = 0.0;
                                for (std::size_t c = 0; c < d; ++c) {
                                    const double dh = gr[c] * gv[c];
                                    mean_dh += dh;
                                    mean_dh_h += dh * hr[c];
                                }
                                mean_dh *= inv_d;
                                mean_dh_h *= inv_d;
                                for (std::size_t c = 0; c < d; ++c) {
                                    const double dh = gr[c] * gv[c];
                                    (*gx)[r * d + c] += inv_std[r] * (dh - mean_dh - hr[c] * mean_dh_h);
                                }
                            }
                        }
                    });
}

Var dropout(const Var& x, double p, Rng& rng, bool train) {
    if (p < 0.0 || p >= 1.0) throw std::invalid_argument("dropout: p must lie in [0, 1)");
    if (!train || p == 0.0) return x;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double keep_scale = 1.0 / (1.0 - p);
    std::vector<double> mask(x.value().size());
    for (auto& m : mask) m = u(rng) < p ? 0.0 : keep_scale;
    Tensor out = x.value();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
    return x.tape().record(std::move(out), {x}, [ix = x.index(), mask = std::move(mask)](Tape& t, std::size_t self) {
        if (Tensor* gx = t.grad_slot(ix)) {
            const Tensor& g = t.grad(self);
            for (std::size_t i = 0; i < g.size(); ++i) (*gx)[i] += g[i] * mask[i];
        }
    });
}

// ---------------------------------------------------------------------------
// Graph aggregation

Var neighbor_aggregate(const Var& x, const NeighborLists& lists) {
    const Tensor& xv = x.value();
    if (xv.rank() != 2 || xv.dim(0) != lists.node_count()) {
        throw DimensionError("neighbor_aggregate: features " + shape_str(xv.shape()) + " do not match " +
                             std::to_string(lists.node_count()) + " nodes");
    }
    const std::size_t n = xv.dim(0), d = xv.dim(1);
    for (auto j : lists.neighbors) {
        if (j >= n) throw DimensionError("neighbor_aggregate: neighbor index " + std::to_string(j) + " out of range");
    }
    Tensor out({n, d}, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        if (lists.degree(i) == 0) {
            x.tape().warn("node " + std::to_string(i) + " has no neighbors; aggregate defined as zero");
            continue;
        }
        double* orow = out.raw() + i * d;
        for (std::size_t e = lists.offsets[i]; e < lists.offsets[i + 1]; ++e) {
            const double c = lists.coeffs[e];
            const double* xr = xv.raw() + lists.neighbors[e] * d;
            for (std::size_t f = 0; f < d; ++f) orow[f] += c * xr[f];
        }
    }
    // lists is captured by pointer: callers keep it alive until the tape is consumed.
    return x.tape().record(std::move(out), {x}, [ix = x.index(), lists = &lists, n, d](Tape& t, std::size_t self) {
        if (Tensor* gx = t.grad_slot(ix)) {
            const Tensor& g = t.grad(self);
            for (std::size_t i = 0; i < n; ++i) {
                const double* gr = g.raw() + i * d;
                for (std::size_t e = lists->offsets[i]; e < lists->offsets[i + 1]; ++e) {
                    const double c = lists->coeffs[e];
                    double* dst = gx->raw() + lists->neighbors[e] * d;
                    for (std::size_t f = 0; f < d; ++f) dst[f] += c * gr[f];
                }
            }
        }
    });
}

Var segment_mean(const Var& x, const std::vector<std::vector<std::size_t>>& neighbors) {
    auto lists = std::make_shared<NeighborLists>(NeighborLists::mean(neighbors));
    Var out = neighbor_aggregate(x, *lists);
    // Keep the temporary lists alive for the backward closure.
    return out.tape().record(out.value(), {out}, [io = out.index(), lists](Tape& t, std::size_t self) {
        accumulate(t.grad_slot(io), t.grad(self));
    });
}

// ---------------------------------------------------------------------------
// Reductions

Var sum(const Var& x) {
    const Tensor& xv = x.value();
    double s = 0.0;
    for (double v : xv.data()) s += v;
    return x.tape().record(Tensor::scalar(s), {x}, [ix = x.index()](Tape& t, std::size_t self) {
        if (Tensor* gx = t.grad_slot(ix)) {
            const double g = t.grad(self)[0];
            for (auto& v : gx->data()) v += g;
        }
    });
}

Var mse(const Var& pred, const Tensor& target) {
    const Tensor& pv = pred.value();
    require_same_shape("mse", pv, target);
    const double inv_n = 1.0 / static_cast<double>(pv.size());
    double s = 0.0;
    for (std::size_t i = 0; i < pv.size(); ++i) s += (pv[i] - target[i]) * (pv[i] - target[i]);
    return pred.tape().record(Tensor::scalar(s * inv_n), {pred},
                              [ip = pred.index(), target, inv_n](Tape& t, std::size_t self) {
                                  if (Tensor* gp = t.grad_slot(ip)) {
                                      const double g = t.grad(self)[0] * 2.0 * inv_n;
                                      const Tensor& pv = t.value(ip);
                                      for (std::size_t i = 0; i < pv.size(); ++i) (*gp)[i] += g * (pv[i] - target[i]);
                                  }
                              });
}

}  // namespace strata::num
