#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <numbers>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "aavit/errors.hpp"

// Dense row-major tensors with dynamically recorded reverse-mode autodiff.
// The scalar type is a template parameter: float is the standard training
// precision, double the verification precision used by gradient checks. A
// graph is recorded per forward pass, consumed by backward(), and freed when
// the last Tensor handle goes away.

namespace aavit {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ']';
    return os.str();
}

namespace detail {

template <typename S>
struct TensorNode {
    Shape shape;
    std::vector<S> value;
    std::vector<S> grad;  // empty until backward (or an accumulate) touches it
    bool requires_grad = false;
    const char* op = "leaf";
    std::vector<std::shared_ptr<TensorNode>> parents;
    std::function<void(TensorNode&)> backprop;  // reads this->grad, adds into parents

    std::vector<S>& grad_buffer() {
        if (grad.empty()) grad.assign(value.size(), S(0));
        return grad;
    }
};

}  // namespace detail

template <typename S>
class Tensor {
    using Node = detail::TensorNode<S>;

public:
    using scalar_type = S;

    Tensor() = default;

    static Tensor zeros(Shape shape) { return full(std::move(shape), S(0)); }

    static Tensor full(Shape shape, S v) {
        auto n = std::make_shared<Node>();
        n->value.assign(shape_numel(shape), v);
        n->shape = std::move(shape);
        return Tensor(std::move(n));
    }

    static Tensor from_data(Shape shape, std::vector<S> data) {
        if (shape_numel(shape) != data.size()) {
            throw shape_error("tensor data length " + std::to_string(data.size()) +
                              " does not match shape " + shape_str(shape));
        }
        auto n = std::make_shared<Node>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        Tensor t(std::move(n));
        t.ensure_finite("from_data");
        return t;
    }

    static Tensor scalar(S v) { return from_data({1}, {v}); }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t size() const { return node_->value.size(); }
    std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
    std::size_t rank() const { return node_->shape.size(); }

    const std::vector<S>& value() const { return node_->value; }
    std::vector<S>& mutable_value() { return node_->value; }
    S item() const {
        if (size() != 1) throw contract_error("item() on tensor of shape " + shape_str(shape()));
        return node_->value[0];
    }
    /// Element of a rank-2 tensor.
    S at(std::size_t r, std::size_t c) const { return node_->value[r * node_->shape[1] + c]; }

    bool requires_grad() const { return node_->requires_grad; }
    Tensor& set_requires_grad(bool b = true) {
        node_->requires_grad = b;
        return *this;
    }

    bool has_grad() const { return !node_->grad.empty(); }
    const std::vector<S>& grad() const {
        if (node_->grad.empty()) throw contract_error("grad() before backward populated it");
        return node_->grad;
    }
    void zero_grad() { node_->grad.assign(node_->value.size(), S(0)); }

    const char* op_name() const { return node_->op; }

    // Internal: graph plumbing shared by the op definitions below.
    explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}
    const std::shared_ptr<Node>& node() const { return node_; }

    void ensure_finite(const char* where) const {
        for (S v : node_->value) {
            if (!std::isfinite(static_cast<double>(v))) {
                throw numeric_error(std::string("non-finite value produced by ") + where);
            }
        }
    }

private:
    std::shared_ptr<Node> node_;
};

namespace detail {

template <typename S>
Tensor<S> make_op(Shape shape, std::vector<S> value, const char* op,
                  std::vector<std::shared_ptr<TensorNode<S>>> parents,
                  std::function<void(TensorNode<S>&)> backprop) {
    auto n = std::make_shared<TensorNode<S>>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    n->op = op;
    for (const auto& p : parents) {
        if (p->requires_grad) {
            n->requires_grad = true;
            break;
        }
    }
    n->parents = std::move(parents);
    if (n->requires_grad) n->backprop = std::move(backprop);
    Tensor<S> t(std::move(n));
    t.ensure_finite(op);
    return t;
}

template <typename S>
void accumulate(TensorNode<S>& dst, const std::vector<S>& g) {
    auto& buf = dst.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise and broadcast ops
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.shape() != b.shape()) {
        throw shape_error("add: shapes differ " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
    }
    std::vector<S> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
    auto* pa = a.node().get();
    auto* pb = b.node().get();
    return detail::make_op<S>(
        a.shape(), std::move(out), "add", {a.node(), b.node()},
        [pa, pb](detail::TensorNode<S>& self) {
            if (pa->requires_grad) detail::accumulate(*pa, self.grad);
            if (pb->requires_grad) detail::accumulate(*pb, self.grad);
        });
}

/// x[... x d] plus a length-d vector added to every row.
template <typename S>
Tensor<S> add_rowwise(const Tensor<S>& x, const Tensor<S>& bias) {
    if (x.rank() < 1 || bias.rank() != 1 || x.shape().back() != bias.dim(0)) {
        throw shape_error("add_rowwise: " + shape_str(x.shape()) + " vs " +
                          shape_str(bias.shape()));
    }
    const std::size_t d = bias.dim(0);
    const std::size_t rows = x.size() / d;
    std::vector<S> out(x.size());
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < d; ++j) out[r * d + j] = x.value()[r * d + j] + bias.value()[j];
    auto* px = x.node().get();
    auto* pb = bias.node().get();
    return detail::make_op<S>(
        x.shape(), std::move(out), "add_rowwise", {x.node(), bias.node()},
        [px, pb, rows, d](detail::TensorNode<S>& self) {
            if (px->requires_grad) detail::accumulate(*px, self.grad);
            if (pb->requires_grad) {
                auto& gb = pb->grad_buffer();
                for (std::size_t r = 0; r < rows; ++r)
                    for (std::size_t j = 0; j < d; ++j) gb[j] += self.grad[r * d + j];
            }
        });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.shape() != b.shape()) {
        throw shape_error("mul: shapes differ " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
    }
    std::vector<S> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
    auto* pa = a.node().get();
    auto* pb = b.node().get();
    return detail::make_op<S>(
        a.shape(), std::move(out), "mul", {a.node(), b.node()},
        [pa, pb](detail::TensorNode<S>& self) {
            if (pa->requires_grad) {
                auto& ga = pa->grad_buffer();
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    ga[i] += self.grad[i] * pb->value[i];
            }
            if (pb->requires_grad) {
                auto& gb = pb->grad_buffer();
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    gb[i] += self.grad[i] * pa->value[i];
            }
        });
}

template <typename S>
Tensor<S> scale(const Tensor<S>& x, S c) {
    std::vector<S> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] * c;
    auto* px = x.node().get();
    return detail::make_op<S>(x.shape(), std::move(out), "scale", {x.node()},
                              [px, c](detail::TensorNode<S>& self) {
                                  auto& gx = px->grad_buffer();
                                  for (std::size_t i = 0; i < self.grad.size(); ++i)
                                      gx[i] += self.grad[i] * c;
                              });
}

// ---------------------------------------------------------------------------
// Matrix ops (rank 2)
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
        throw shape_error("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                          shape_str(b.shape()));
    }
    const std::size_t m = a.dim(0), k = a.dim(1), p = b.dim(1);
    std::vector<S> out(m * p, S(0));
    const auto& av = a.value();
    const auto& bv = b.value();
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t l = 0; l < k; ++l) {
            const S ail = av[i * k + l];
            const S* brow = bv.data() + l * p;
            S* orow = out.data() + i * p;
            for (std::size_t j = 0; j < p; ++j) orow[j] += ail * brow[j];
        }
    }
    auto* pa = a.node().get();
    auto* pb = b.node().get();
    return detail::make_op<S>(
        {m, p}, std::move(out), "matmul", {a.node(), b.node()},
        [pa, pb, m, k, p](detail::TensorNode<S>& self) {
            const auto& g = self.grad;
            if (pa->requires_grad) {
                // dA = G . B^T
                auto& ga = pa->grad_buffer();
                for (std::size_t i = 0; i < m; ++i)
                    for (std::size_t l = 0; l < k; ++l) {
                        S acc = 0;
                        for (std::size_t j = 0; j < p; ++j)
                            acc += g[i * p + j] * pb->value[l * p + j];
                        ga[i * k + l] += acc;
                    }
            }
            if (pb->requires_grad) {
                // dB = A^T . G
                auto& gb = pb->grad_buffer();
                for (std::size_t l = 0; l < k; ++l)
                    for (std::size_t j = 0; j < p; ++j) {
                        S acc = 0;
                        for (std::size_t i = 0; i < m; ++i)
                            acc += pa->value[i * k + l] * g[i * p + j];
                        gb[l * p + j] += acc;
                    }
            }
        });
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& x) {
    if (x.rank() != 2) throw shape_error("transpose: rank-2 required, got " + shape_str(x.shape()));
    const std::size_t m = x.dim(0), n = x.dim(1);
    std::vector<S> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = x.value()[i * n + j];
    auto* px = x.node().get();
    return detail::make_op<S>({n, m}, std::move(out), "transpose", {x.node()},
                              [px, m, n](detail::TensorNode<S>& self) {
                                  auto& gx = px->grad_buffer();
                                  for (std::size_t i = 0; i < m; ++i)
                                      for (std::size_t j = 0; j < n; ++j)
                                          gx[i * n + j] += self.grad[j * m + i];
                              });
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape) {
    if (shape_numel(shape) != x.size()) {
        throw shape_error("reshape: cannot view " + shape_str(x.shape()) + " as " +
                          shape_str(shape));
    }
    auto* px = x.node().get();
    return detail::make_op<S>(std::move(shape), x.value(), "reshape", {x.node()},
                              [px](detail::TensorNode<S>& self) {
                                  detail::accumulate(*px, self.grad);
                              });
}

template <typename S>
Tensor<S> slice_cols(const Tensor<S>& x, std::size_t c0, std::size_t c1) {
    if (x.rank() != 2 || c0 >= c1 || c1 > x.dim(1)) {
        throw shape_error("slice_cols: [" + std::to_string(c0) + "," + std::to_string(c1) +
                          ") out of " + shape_str(x.shape()));
    }
    const std::size_t rows = x.dim(0), cols = x.dim(1), w = c1 - c0;
    std::vector<S> out(rows * w);
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < w; ++j) out[r * w + j] = x.value()[r * cols + c0 + j];
    auto* px = x.node().get();
    return detail::make_op<S>({rows, w}, std::move(out), "slice_cols", {x.node()},
                              [px, rows, cols, c0, w](detail::TensorNode<S>& self) {
                                  auto& gx = px->grad_buffer();
                                  for (std::size_t r = 0; r < rows; ++r)
                                      for (std::size_t j = 0; j < w; ++j)
                                          gx[r * cols + c0 + j] += self.grad[r * w + j];
                              });
}

template <typename S>
Tensor<S> concat_cols(const std::vector<Tensor<S>>& parts) {
    if (parts.empty()) throw contract_error("concat_cols: no inputs");
    const std::size_t rows = parts[0].dim(0);
    std::size_t total = 0;
    std::vector<std::shared_ptr<detail::TensorNode<S>>> parents;
    for (const auto& p : parts) {
        if (p.rank() != 2 || p.dim(0) != rows) {
            throw shape_error("concat_cols: row mismatch at " + shape_str(p.shape()));
        }
        total += p.dim(1);
        parents.push_back(p.node());
    }
    std::vector<S> out(rows * total);
    std::size_t off = 0;
    for (const auto& p : parts) {
        const std::size_t w = p.dim(1);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < w; ++j) out[r * total + off + j] = p.value()[r * w + j];
        off += w;
    }
    return detail::make_op<S>(
        {rows, total}, std::move(out), "concat_cols", std::move(parents),
        [rows, total](detail::TensorNode<S>& self) {
            std::size_t off = 0;
            for (auto& parent : self.parents) {
                const std::size_t w = parent->shape[1];
                if (parent->requires_grad) {
                    auto& gp = parent->grad_buffer();
                    for (std::size_t r = 0; r < rows; ++r)
                        for (std::size_t j = 0; j < w; ++j)
                            gp[r * w + j] += self.grad[r * total + off + j];
                }
                off += w;
            }
        });
}

// ---------------------------------------------------------------------------
// Nonlinearities and normalization
// ---------------------------------------------------------------------------

/// Tanh-form GELU: 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
/// The gradient differentiates this same approximation.
template <typename S>
Tensor<S> gelu(const Tensor<S>& x) {
    const S k = static_cast<S>(std::sqrt(2.0 / std::numbers::pi));
    const S c = static_cast<S>(0.044715);
    std::vector<S> out(x.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const S v = x.value()[i];
        out[i] = S(0.5) * v * (S(1) + std::tanh(k * (v + c * v * v * v)));
    }
    auto* px = x.node().get();
    return detail::make_op<S>(
        x.shape(), std::move(out), "gelu", {x.node()},
        [px, k, c](detail::TensorNode<S>& self) {
            auto& gx = px->grad_buffer();
            for (std::size_t i = 0; i < self.grad.size(); ++i) {
                const S v = px->value[i];
                const S t = std::tanh(k * (v + c * v * v * v));
                const S sech2 = S(1) - t * t;
                const S inner = k * (S(1) + S(3) * c * v * v);
                const S d = S(0.5) * (S(1) + t) + S(0.5) * v * sech2 * inner;
                gx[i] += self.grad[i] * d;
            }
        });
}

/// Softmax over the last axis, row max subtracted for stability.
template <typename S>
Tensor<S> softmax_rowwise(const Tensor<S>& x) {
    if (x.rank() < 1 || x.shape().back() < 1) {
        throw shape_error("softmax_rowwise: bad shape " + shape_str(x.shape()));
    }
    const std::size_t d = x.shape().back();
    const std::size_t rows = x.size() / d;
    std::vector<S> out(x.size());
    for (std::size_t r = 0; r < rows; ++r) {
        const S* in = x.value().data() + r * d;
        S* o = out.data() + r * d;
        S mx = in[0];
        for (std::size_t j = 1; j < d; ++j) mx = std::max(mx, in[j]);
        S sum = 0;
        for (std::size_t j = 0; j < d; ++j) {
            o[j] = std::exp(in[j] - mx);
            sum += o[j];
        }
        for (std::size_t j = 0; j < d; ++j) o[j] /= sum;
    }
    auto* px = x.node().get();
    return detail::make_op<S>(
        x.shape(), std::move(out), "softmax_rowwise", {x.node()},
        [px, rows, d](detail::TensorNode<S>& self) {
            auto& gx = px->grad_buffer();
            for (std::size_t r = 0; r < rows; ++r) {
                const S* y = self.value.data() + r * d;
                const S* g = self.grad.data() + r * d;
                S dot = 0;
                for (std::size_t j = 0; j < d; ++j) dot += g[j] * y[j];
                for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += y[j] * (g[j] - dot);
            }
        });
}

inline constexpr double kLayerNormEps = 1e-5;

/// Per-row (x - mean) / sqrt(var + eps) * gain + bias with the biased
/// (divide-by-d) variance.
template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gain, const Tensor<S>& bias,
                     S eps = static_cast<S>(kLayerNormEps)) {
    const std::size_t d = x.shape().back();
    if (gain.rank() != 1 || bias.rank() != 1 || gain.dim(0) != d || bias.dim(0) != d) {
        throw shape_error("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" +
                          shape_str(bias.shape()) + " vs x " + shape_str(x.shape()));
    }
    const std::size_t rows = x.size() / d;
    std::vector<S> out(x.size());
    std::vector<S> xhat(x.size());
    std::vector<S> rstd(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const S* in = x.value().data() + r * d;
        S mean = 0;
        for (std::size_t j = 0; j < d; ++j) mean += in[j];
        mean /= static_cast<S>(d);
        S var = 0;
        for (std::size_t j = 0; j < d; ++j) var += (in[j] - mean) * (in[j] - mean);
        var /= static_cast<S>(d);
        rstd[r] = S(1) / std::sqrt(var + eps);
        for (std::size_t j = 0; j < d; ++j) {
            xhat[r * d + j] = (in[j] - mean) * rstd[r];
            out[r * d + j] = xhat[r * d + j] * gain.value()[j] + bias.value()[j];
        }
    }
    auto* px = x.node().get();
    auto* pg = gain.node().get();
    auto* pb = bias.node().get();
    return detail::make_op<S>(
        x.shape(), std::move(out), "layer_norm", {x.node(), gain.node(), bias.node()},
        [px, pg, pb, rows, d, xhat = std::move(xhat),
         rstd = std::move(rstd)](detail::TensorNode<S>& self) {
            for (std::size_t r = 0; r < rows; ++r) {
                const S* g = self.grad.data() + r * d;
                const S* xh = xhat.data() + r * d;
                if (pg->requires_grad) {
                    auto& gg = pg->grad_buffer();
                    for (std::size_t j = 0; j < d; ++j) gg[j] += g[j] * xh[j];
                }
                if (pb->requires_grad) {
                    auto& gb = pb->grad_buffer();
                    for (std::size_t j = 0; j < d; ++j) gb[j] += g[j];
                }
                if (px->requires_grad) {
                    auto& gx = px->grad_buffer();
                    S mean_dxh = 0, mean_dxh_xh = 0;
                    for (std::size_t j = 0; j < d; ++j) {
                        const S dxh = g[j] * pg->value[j];
                        mean_dxh += dxh;
                        mean_dxh_xh += dxh * xh[j];
                    }
                    mean_dxh /= static_cast<S>(d);
                    mean_dxh_xh /= static_cast<S>(d);
                    for (std::size_t j = 0; j < d; ++j) {
                        const S dxh = g[j] * pg->value[j];
                        gx[r * d + j] += rstd[r] * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
                    }
                }
            }
        });
}

// ---------------------------------------------------------------------------
// Adaptive average pooling over the last axis
// ---------------------------------------------------------------------------

/// Output cell i averages the input slice [floor(i*L/P), ceil((i+1)*L/P)).
/// P == 1 reduces to the mean over the last axis, P == L is the identity.
template <typename S>
Tensor<S> adaptive_avg_pool_1d(const Tensor<S>& x, std::size_t out_size) {
    const std::size_t L = x.shape().back();
    if (out_size < 1 || out_size > L) {
        throw config_error("adaptive_avg_pool_1d: out_size " + std::to_string(out_size) +
                           " must be in [1, " + std::to_string(L) + "]");
    }
    const std::size_t P = out_size;
    const std::size_t rows = x.size() / L;
    std::vector<S> out(rows * P);
    for (std::size_t r = 0; r < rows; ++r) {
        const S* in = x.value().data() + r * L;
        for (std::size_t i = 0; i < P; ++i) {
            const std::size_t lo = (i * L) / P;
            const std::size_t hi = ((i + 1) * L + P - 1) / P;
            S acc = 0;
            for (std::size_t j = lo; j < hi; ++j) acc += in[j];
            out[r * P + i] = acc / static_cast<S>(hi - lo);
        }
    }
    Shape shape = x.shape();
    shape.back() = P;
    auto* px = x.node().get();
    return detail::make_op<S>(
        std::move(shape), std::move(out), "adaptive_avg_pool_1d", {x.node()},
        [px, rows, L, P](detail::TensorNode<S>& self) {
            auto& gx = px->grad_buffer();
            for (std::size_t r = 0; r < rows; ++r) {
                for (std::size_t i = 0; i < P; ++i) {
                    const std::size_t lo = (i * L) / P;
                    const std::size_t hi = ((i + 1) * L + P - 1) / P;
                    const S share = self.grad[r * P + i] / static_cast<S>(hi - lo);
                    for (std::size_t j = lo; j < hi; ++j) gx[r * L + j] += share;
                }
            }
        });
}

// ---------------------------------------------------------------------------
// Reductions and loss
// ---------------------------------------------------------------------------

template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
    S acc = 0;
    for (S v : x.value()) acc += v;
    auto* px = x.node().get();
    return detail::make_op<S>({1}, {acc}, "sum", {x.node()},
                              [px](detail::TensorNode<S>& self) {
                                  auto& gx = px->grad_buffer();
                                  for (auto& g : gx) g += self.grad[0];
                              });
}

/// Softmax cross-entropy of a rank-1 logit vector against a class index,
/// evaluated through log-sum-exp. Gradient w.r.t. the logits is p - onehot.
template <typename S>
Tensor<S> cross_entropy(const Tensor<S>& logits, std::size_t true_class) {
    if (logits.rank() != 1) {
        throw shape_error("cross_entropy: rank-1 logits required, got " +
                          shape_str(logits.shape()));
    }
    const std::size_t c = logits.dim(0);
    if (true_class >= c) {
        throw contract_error("cross_entropy: class " + std::to_string(true_class) +
                             " out of range [0, " + std::to_string(c) + ")");
    }
    const auto& v = logits.value();
    S mx = v[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, v[j]);
    S sum = 0;
    for (std::size_t j = 0; j < c; ++j) sum += std::exp(v[j] - mx);
    const S lse = mx + std::log(sum);
    auto* pl = logits.node().get();
    return detail::make_op<S>(
        {1}, {lse - v[true_class]}, "cross_entropy", {logits.node()},
        [pl, c, true_class, mx, sum](detail::TensorNode<S>& self) {
            auto& gl = pl->grad_buffer();
            for (std::size_t j = 0; j < c; ++j) {
                const S p = std::exp(pl->value[j] - mx) / sum;
                gl[j] += self.grad[0] * (p - (j == true_class ? S(1) : S(0)));
            }
        });
}

// ---------------------------------------------------------------------------
// Backward sweep
// ---------------------------------------------------------------------------

/// Reverse topological sweep from a scalar loss. Gradients accumulate
/// additively across fan-out and across repeated backward calls; leaves keep
/// their buffers until zero_grad().
template <typename S>
void backward(const Tensor<S>& loss) {
    if (loss.size() != 1) {
        throw contract_error("backward: loss must be scalar, got " + shape_str(loss.shape()));
    }
    using Node = detail::TensorNode<S>;
    std::vector<Node*> order;
    std::unordered_map<Node*, int> state;  // 0 unseen / 1 open / 2 done
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(loss.node().get(), 0);
    state[loss.node().get()] = 1;
    while (!stack.empty()) {
        auto& [n, idx] = stack.back();
        if (idx < n->parents.size()) {
            Node* p = n->parents[idx++].get();
            if (state[p] == 0) {
                state[p] = 1;
                stack.emplace_back(p, 0);
            }
        } else {
            state[n] = 2;
            order.push_back(n);
            stack.pop_back();
        }
    }
    loss.node()->grad_buffer()[0] += S(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backprop && n->requires_grad && !n->grad.empty()) n->backprop(*n);
    }
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking (verification precision)
// ---------------------------------------------------------------------------

/// Compares reverse-mode gradients of f(theta) against central differences,
/// coordinate by coordinate. f must build a fresh graph from its argument and
/// return a scalar. Returns max over coordinates of |a-n| / max(1, |a|, |n|).
template <typename F>
double grad_check(F&& f, const Tensor<double>& theta, double h = 1e-5) {
    Tensor<double> probe = Tensor<double>::from_data(theta.shape(), theta.value());
    probe.set_requires_grad();
    Tensor<double> loss = f(probe);
    if (loss.size() != 1) throw contract_error("grad_check: f must return a scalar");
    backward(loss);
    const std::vector<double> analytic = probe.grad();

    double worst = 0.0;
    std::vector<double> coords = theta.value();
    for (std::size_t i = 0; i < coords.size(); ++i) {
        const double keep = coords[i];
        coords[i] = keep + h;
        const double fp = f(Tensor<double>::from_data(theta.shape(), coords)).item();
        coords[i] = keep - h;
        const double fm = f(Tensor<double>::from_data(theta.shape(), coords)).item();
        coords[i] = keep;
        const double numeric = (fp - fm) / (2.0 * h);
        const double denom = std::max({1.0, std::abs(analytic[i]), std::abs(numeric)});
        worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
    return worst;
}

}  // namespace aavit
