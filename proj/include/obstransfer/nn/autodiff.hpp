#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "obstransfer/nn/gemm.hpp"
#include "obstransfer/nn/tensor.hpp"

namespace obstransfer::nn {

class Tape;

// Handle to a node on a tape. Cheap to copy; only valid while its tape lives.
struct Var {
    Tape* tape = nullptr;
    std::uint32_t id = 0;
};

// Reverse-mode tape. Nodes are appended in evaluation order, so a reverse
// sweep over the node list is a valid topological order for backprop.
//
// One tape per computation; a tape is not shared between threads.
class Tape {
public:
    using Backprop = std::function<void(Tape&, std::span<const double>)>;

    Tape() { nodes_.reserve(64); }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // A value that never receives gradient.
    Var constant(Tensor value) { return push(std::move(value), false, {}, nullptr); }

    // An input leaf whose gradient can be read back with grad() after backward().
    Var input(Tensor value) { return push(std::move(value), true, {}, nullptr); }

    // A trainable leaf; backward() accumulates into param.grad.
    Var parameter(Tensor& param)
    {
        Tensor copy(param.shape, param.data);
        return push(std::move(copy), true, {}, &param);
    }

    const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
    bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

    // Gradient of the last backward() with respect to `v` (zeros if unreached).
    std::vector<double> grad(Var v) const
    {
        const auto& n = nodes_.at(v.id);
        if (n.grad.empty()) return std::vector<double>(n.value.size(), 0.0);
        return n.grad;
    }

    void backward(Var loss)
    {
        if (consumed_) throw StateError("backward: graph already consumed");
        const Node& root = nodes_.at(loss.id);
        if (root.value.size() != 1 || !root.value.shape.empty())
            throw ShapeError("backward: loss must be a scalar, got shape " + shape_str(root.value.shape));
        consumed_ = true;
        if (root.requires_grad) {
            grad_buffer(loss.id).assign(1, 1.0);
            for (std::size_t i = loss.id + 1; i-- > 0;) {
                Node& n = nodes_[i];
                if (!n.requires_grad || n.grad.empty() || !n.backprop) continue;
                // The closure may append to other nodes' grads but never to n's.
                n.backprop(*this, std::span<const double>(n.grad));
            }
        }
        for (auto& n : nodes_) {
            if (n.param == nullptr) continue;
            auto& g = n.param->grad;
            if (!g) g.emplace(n.param->data.size(), 0.0);
            if (!n.grad.empty())
                for (std::size_t k = 0; k < g->size(); ++k) (*g)[k] += n.grad[k];
        }
    }

    bool consumed() const noexcept { return consumed_; }
    std::size_t size() const noexcept { return nodes_.size(); }

    // Used by op implementations.
    Var push(Tensor value, bool requires_grad, Backprop backprop, Tensor* param)
    {
        nodes_.push_back(Node{std::move(value), {}, requires_grad, std::move(backprop), param});
        return Var{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
    }

    std::vector<double>& grad_buffer(std::uint32_t id)
    {
        Node& n = nodes_[id];
        if (n.grad.empty()) n.grad.assign(n.value.size(), 0.0);
        return n.grad;
    }

private:
    struct Node {
        Tensor value;
        std::vector<double> grad;
        bool requires_grad;
        Backprop backprop;
        Tensor* param;
    };

    std::vector<Node> nodes_;
    bool consumed_ = false;
};

namespace detail {

inline void require_same_tape(Var a, Var b, const char* op)
{
    if (a.tape != b.tape || a.tape == nullptr)
        throw std::invalid_argument(std::string(op) + ": operands live on different tapes");
}

inline void require_finite(const Tensor& t, const char* op)
{
    if (!t.all_finite()) throw NumericError(std::string(op) + ": non-finite value in forward output");
}

inline void accumulate(Tape& tape, Var v, std::span<const double> g)
{
    if (!tape.requires_grad(v)) return;
    auto& buf = tape.grad_buffer(v.id);
    for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i];
}

inline Var emit(Tape& tape, Tensor out, bool requires_grad, Tape::Backprop bp, const char* op)
{
    require_finite(out, op);
    if (!requires_grad) bp = nullptr;
    return tape.push(std::move(out), requires_grad, std::move(bp), nullptr);
}

}  // namespace detail

// ---- elementwise -----------------------------------------------------------

inline Var stop_gradient(Var x)
{
    Tape& t = *x.tape;
    return t.push(Tensor(t.value(x).shape, t.value(x).data), false, {}, nullptr);
}

inline Var add(Var a, Var b)
{
    detail::require_same_tape(a, b, "add");
    Tape& t = *a.tape;
    const Tensor& x = t.value(a);
    const Tensor& y = t.value(b);
    if (x.shape != y.shape) throw ShapeError("add: " + shape_str(x.shape) + " vs " + shape_str(y.shape));
    Tensor out(x.shape);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] + y[i];
    return detail::emit(t, std::move(out), t.requires_grad(a) || t.requires_grad(b),
                        [a, b](Tape& tp, std::span<const double> g) {
                            detail::accumulate(tp, a, g);
                            detail::accumulate(tp, b, g);
                        },
                        "add");
}

inline Var sub(Var a, Var b)
{
    detail::require_same_tape(a, b, "sub");
    Tape& t = *a.tape;
    const Tensor& x = t.value(a);
    const Tensor& y = t.value(b);
    if (x.shape != y.shape) throw ShapeError("sub: " + shape_str(x.shape) + " vs " + shape_str(y.shape));
    Tensor out(x.shape);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] - y[i];
    return detail::emit(t, std::move(out), t.requires_grad(a) || t.requires_grad(b),
                        [a, b](Tape& tp, std::span<const double> g) {
                            detail::accumulate(tp, a, g);
                            if (!tp.requires_grad(b)) return;
                            auto& buf = tp.grad_buffer(b.id);
                            for (std::size_t i = 0; i < g.size(); ++i) buf[i] -= g[i];
                        },
                        "sub");
}

inline Var mul(Var a, Var b)
{
    detail::require_same_tape(a, b, "mul");
    Tape& t = *a.tape;
    const Tensor& x = t.value(a);
    const Tensor& y = t.value(b);
    if (x.shape != y.shape) throw ShapeError("mul: " + shape_str(x.shape) + " vs " + shape_str(y.shape));
    Tensor out(x.shape);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * y[i];
    return detail::emit(t, std::move(out), t.requires_grad(a) || t.requires_grad(b),
                        [a, b](Tape& tp, std::span<const double> g) {
                            const Tensor& xv = tp.value(a);
                            const Tensor& yv = tp.value(b);
                            if (tp.requires_grad(a)) {
                                auto& buf = tp.grad_buffer(a.id);
                                for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i] * yv[i];
                            }
                            if (tp.requires_grad(b)) {
                                auto& buf = tp.grad_buffer(b.id);
                                for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i] * xv[i];
                            }
                        },
                        "mul");
}

inline Var scale(Var a, double s)
{
    Tape& t = *a.tape;
    const Tensor& x = t.value(a);
    Tensor out(x.shape);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = s * x[i];
    return detail::emit(t, std::move(out), t.requires_grad(a),
                        [a, s](Tape& tp, std::span<const double> g) {
                            auto& buf = tp.grad_buffer(a.id);
                            for (std::size_t i = 0; i < g.size(); ++i) buf[i] += s * g[i];
                        },
                        "scale");
}

inline Var relu(Var a)
{
    Tape& t = *a.tape;
    const Tensor& x = t.value(a);
    Tensor out(x.shape);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] > 0.0 ? x[i] : 0.0;
    return detail::emit(t, std::move(out), t.requires_grad(a),
                        [a](Tape& tp, std::span<const double> g) {
                            const Tensor& xv = tp.value(a);
                            auto& buf = tp.grad_buffer(a.id);
                            for (std::size_t i = 0; i < g.size(); ++i)
                                if (xv[i] > 0.0) buf[i] += g[i];
                        },
                        "relu");
}

inline Var tanh(Var a)
{
    Tape& t = *a.tape;
    const Tensor& x = t.value(a);
    Tensor out(x.shape);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x[i]);
    const std::uint32_t out_id = static_cast<std::uint32_t>(t.size());
    return detail::emit(t, std::move(out), t.requires_grad(a),
                        [a, out_id](Tape& tp, std::span<const double> g) {
                            const Tensor& y = tp.value(Var{&tp, out_id});
                            auto& buf = tp.grad_buffer(a.id);
                            for (std::size_t i = 0; i < g.size(); ++i) buf[i] += g[i] * (1.0 - y[i] * y[i]);
                        },
                        "tanh");
}

inline Var reshape(Var a, Shape shape)
{
    Tape& t = *a.tape;
    const Tensor& x = t.value(a);
    if (shape_size(shape) != x.size())
        throw ShapeError("reshape: cannot view " + shape_str(x.shape) + " as " + shape_str(shape));
    Tensor out(std::move(shape), x.data);
    return detail::emit(t, std::move(out), t.requires_grad(a),
                        [a](Tape& tp, std::span<const double> g) { detail::accumulate(tp, a, g); }, "reshape");
}

// ---- reductions / losses ---------------------------------------------------

inline Var sum(Var a)
{
    Tape& t = *a.tape;
    const Tensor& x = t.value(a);
    double s = 0.0;
    for (double v : x.data) s += v;
    const std::size_t n = x.size();
    return detail::emit(t, Tensor::scalar(s), t.requires_grad(a),
                        [a, n](Tape& tp, std::span<const double> g) {
                            auto& buf = tp.grad_buffer(a.id);
                            for (std::size_t i = 0; i < n; ++i) buf[i] += g[0];
                        },
                        "sum");
}

/// Mean over all elements of (a - b)^2.
inline Var mse(Var a, Var b)
{
    detail::require_same_tape(a, b, "mse");
    Tape& t = *a.tape;
    const Tensor& x = t.value(a);
    const Tensor& y = t.value(b);
    if (x.shape != y.shape) throw ShapeError("mse: " + shape_str(x.shape) + " vs " + shape_str(y.shape));
    if (x.size() == 0) throw ShapeError("mse: empty operands");
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - y[i];
        s += d * d;
    }
    const double inv_n = 1.0 / static_cast<double>(x.size());
    return detail::emit(t, Tensor::scalar(s * inv_n), t.requires_grad(a) || t.requires_grad(b),
                        [a, b, inv_n](Tape& tp, std::span<const double> g) {
                            const Tensor& xv = tp.value(a);
                            const Tensor& yv = tp.value(b);
                            const double c = 2.0 * inv_n * g[0];
                            const bool ga = tp.requires_grad(a), gb = tp.requires_grad(b);
                            auto* ba = ga ? &tp.grad_buffer(a.id) : nullptr;
                            auto* bb = gb ? &tp.grad_buffer(b.id) : nullptr;
                            for (std::size_t i = 0; i < xv.size(); ++i) {
                                const double d = c * (xv[i] - yv[i]);
                                if (ba) (*ba)[i] += d;
                                if (bb) (*bb)[i] -= d;
                            }
                        },
                        "mse");
}

/// (1/N) * sum_i ||a_i||^2 over the rows of a [N, ...].
inline Var mean_row_sq_norm(Var a)
{
    Tape& t = *a.tape;
    const Tensor& x = t.value(a);
    if (x.rank() == 0 || x.rows() == 0) throw ShapeError("mean_row_sq_norm: need a non-empty batch");
    double s = 0.0;
    for (double v : x.data) s += v * v;
    const double inv_n = 1.0 / static_cast<double>(x.rows());
    return detail::emit(t, Tensor::scalar(s * inv_n), t.requires_grad(a),
                        [a, inv_n](Tape& tp, std::span<const double> g) {
                            const Tensor& xv = tp.value(a);
                            auto& buf = tp.grad_buffer(a.id);
                            const double c = 2.0 * inv_n * g[0];
                            for (std::size_t i = 0; i < xv.size(); ++i) buf[i] += c * xv[i];
                        },
                        "mean_row_sq_norm");
}

// ---- indexing --------------------------------------------------------------

/// out[i] = q[i, actions[i]] for q of shape [N, A].
inline Var gather_actions(Var q, std::span<const std::size_t> actions)
{
    Tape& t = *q.tape;
    const Tensor& x = t.value(q);
    if (x.rank() != 2 || x.dim(0) != actions.size())
        throw ShapeError("gather_actions: q " + shape_str(x.shape) + " vs " + std::to_string(actions.size()) +
                         " actions");
    const std::size_t n = x.dim(0), a = x.dim(1);
    std::vector<std::size_t> acts(actions.begin(), actions.end());
    Tensor out(Shape{n});
    for (std::size_t i = 0; i < n; ++i) {
        if (acts[i] >= a) throw std::out_of_range("gather_actions: action index out of range");
        out[i] = x[i * a + acts[i]];
    }
    return detail::emit(t, std::move(out), t.requires_grad(q),
                        [q, acts = std::move(acts), a](Tape& tp, std::span<const double> g) {
                            auto& buf = tp.grad_buffer(q.id);
                            for (std::size_t i = 0; i < acts.size(); ++i) buf[i * a + acts[i]] += g[i];
                        },
                        "gather_actions");
}

/// Row-wise max of q [N, A]; ties resolve to the lowest index.
inline Var row_max(Var q)
{
    Tape& t = *q.tape;
    const Tensor& x = t.value(q);
    if (x.rank() != 2) throw ShapeError("row_max: expects [N, A], got " + shape_str(x.shape));
    const std::size_t n = x.dim(0), a = x.dim(1);
    std::vector<std::size_t> arg(n, 0);
    Tensor out(Shape{n});
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 1; j < a; ++j)
            if (x[i * a + j] > x[i * a + arg[i]]) arg[i] = j;
        out[i] = x[i * a + arg[i]];
    }
    return detail::emit(t, std::move(out), t.requires_grad(q),
                        [q, arg = std::move(arg), a](Tape& tp, std::span<const double> g) {
                            auto& buf = tp.grad_buffer(q.id);
                            for (std::size_t i = 0; i < arg.size(); ++i) buf[i * a + arg[i]] += g[i];
                        },
                        "row_max");
}

// ---- layers ----------------------------------------------------------------

/// x [N, in] * w [in, out] + b [out].
inline Var dense(Var x, Var w, Var b)
{
    detail::require_same_tape(x, w, "dense");
    detail::require_same_tape(x, b, "dense");
    Tape& t = *x.tape;
    const Tensor& xv = t.value(x);
    const Tensor& wv = t.value(w);
    const Tensor& bv = t.value(b);
    if (xv.rank() != 2 || wv.rank() != 2 || xv.dim(1) != wv.dim(0) || bv.size() != wv.dim(1))
        throw ShapeError("dense: input " + shape_str(xv.shape) + ", weight " + shape_str(wv.shape) + ", bias " +
                         shape_str(bv.shape));
    const std::size_t n = xv.dim(0), in = wv.dim(0), outd = wv.dim(1);
    Tensor out(Shape{n, outd});
    gemm::nn_acc(xv.data.data(), wv.data.data(), out.data.data(), n, in, outd);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < outd; ++j) out[i * outd + j] += bv[j];
    const bool rg = t.requires_grad(x) || t.requires_grad(w) || t.requires_grad(b);
    return detail::emit(
        t, std::move(out), rg,
        [x, w, b, n, in, outd](Tape& tp, std::span<const double> g) {
            if (tp.requires_grad(w))
                gemm::tn_acc(tp.value(x).data.data(), g.data(), tp.grad_buffer(w.id).data(), n, in, outd);
            if (tp.requires_grad(b)) {
                auto& gb = tp.grad_buffer(b.id);
                for (std::size_t i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < outd; ++j) gb[j] += g[i * outd + j];
            }
            if (tp.requires_grad(x))
                gemm::nt_acc(g.data(), tp.value(w).data.data(), tp.grad_buffer(x.id).data(), n, outd, in);
        },
        "dense");
}

/// Valid (unpadded) 2-D convolution. x [N, C, H, W], w [O, C, k, k], b [O].
inline Var conv2d(Var x, Var w, Var b, std::size_t stride)
{
    detail::require_same_tape(x, w, "conv2d");
    detail::require_same_tape(x, b, "conv2d");
    Tape& t = *x.tape;
    const Tensor& xv = t.value(x);
    const Tensor& wv = t.value(w);
    const Tensor& bv = t.value(b);
    if (xv.rank() != 4 || wv.rank() != 4 || xv.dim(1) != wv.dim(1) || wv.dim(2) != wv.dim(3) ||
        bv.size() != wv.dim(0) || stride == 0)
        throw ShapeError("conv2d: input " + shape_str(xv.shape) + ", weight " + shape_str(wv.shape));
    const std::size_t N = xv.dim(0), C = xv.dim(1), H = xv.dim(2), W = xv.dim(3);
    const std::size_t O = wv.dim(0), K = wv.dim(2);
    if (H < K || W < K) throw ShapeError("conv2d: kernel larger than input " + shape_str(xv.shape));
    const std::size_t Ho = (H - K) / stride + 1, Wo = (W - K) / stride + 1;
    const std::size_t P = Ho * Wo, CKK = C * K * K, cols_w = N * P;

    // im2col over the whole batch: rows = (c, ky, kx), cols = (n, oy, ox).
    auto cols = std::make_shared<std::vector<double>>(CKK * cols_w);
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t ky = 0; ky < K; ++ky)
            for (std::size_t kx = 0; kx < K; ++kx) {
                double* row = cols->data() + ((c * K + ky) * K + kx) * cols_w;
                for (std::size_t n = 0; n < N; ++n) {
                    const double* img = xv.data.data() + (n * C + c) * H * W;
                    for (std::size_t oy = 0; oy < Ho; ++oy) {
                        const double* src = img + (oy * stride + ky) * W + kx;
                        double* dst = row + n * P + oy * Wo;
                        for (std::size_t ox = 0; ox < Wo; ++ox) dst[ox] = src[ox * stride];
                    }
                }
            }

    std::vector<double> Y(O * cols_w, 0.0);
    gemm::nn_acc(wv.data.data(), cols->data(), Y.data(), O, CKK, cols_w);
    Tensor out(Shape{N, O, Ho, Wo});
    for (std::size_t n = 0; n < N; ++n)
        for (std::size_t o = 0; o < O; ++o) {
            const double* src = Y.data() + o * cols_w + n * P;
            double* dst = out.data.data() + (n * O + o) * P;
            for (std::size_t p = 0; p < P; ++p) dst[p] = src[p] + bv[o];
        }

    const bool rg = t.requires_grad(x) || t.requires_grad(w) || t.requires_grad(b);
    return detail::emit(
        t, std::move(out), rg,
        [=](Tape& tp, std::span<const double> g) {
            std::vector<double> G(O * cols_w);
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t o = 0; o < O; ++o) {
                    const double* src = g.data() + (n * O + o) * P;
                    double* dst = G.data() + o * cols_w + n * P;
                    std::copy(src, src + P, dst);
                }
            if (tp.requires_grad(w)) {
                gemm::nt_acc(G.data(), cols->data(), tp.grad_buffer(w.id).data(), O, cols_w, CKK);
            }
            if (tp.requires_grad(b)) {
                auto& gb = tp.grad_buffer(b.id);
                for (std::size_t o = 0; o < O; ++o) {
                    double acc = 0.0;
                    for (std::size_t c = 0; c < cols_w; ++c) acc += G[o * cols_w + c];
                    gb[o] += acc;
                }
            }
            if (tp.requires_grad(x)) {
                std::vector<double> GC(CKK * cols_w, 0.0);
                gemm::tn_acc(tp.value(w).data.data(), G.data(), GC.data(), O, CKK, cols_w);
                auto& gx = tp.grad_buffer(x.id);
                for (std::size_t c = 0; c < C; ++c)
                    for (std::size_t ky = 0; ky < K; ++ky)
                        for (std::size_t kx = 0; kx < K; ++kx) {
                            const double* row = GC.data() + ((c * K + ky) * K + kx) * cols_w;
                            for (std::size_t n = 0; n < N; ++n) {
                                double* img = gx.data() + (n * C + c) * H * W;
                                for (std::size_t oy = 0; oy < Ho; ++oy) {
                                    double* dst = img + (oy * stride + ky) * W + kx;
                                    const double* src = row + n * P + oy * Wo;
                                    for (std::size_t ox = 0; ox < Wo; ++ox) dst[ox * stride] += src[ox];
                                }
                            }
                        }
            }
        },
        "conv2d");
}

/// Scales every row of x [N, d] to Euclidean norm 1. A zero row is an error.
inline Var unit_normalize(Var a)
{
    Tape& t = *a.tape;
    const Tensor& x = t.value(a);
    if (x.rank() != 2) throw ShapeError("unit_normalize: expects [N, d], got " + shape_str(x.shape));
    const std::size_t n = x.dim(0), d = x.dim(1);
    std::vector<double> norms(n);
    Tensor out(x.shape);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += x[i * d + j] * x[i * d + j];
        const double nrm = std::sqrt(s);
        if (!(nrm > 0.0)) throw NumericError("unit_normalize: zero-norm row " + std::to_string(i));
        norms[i] = nrm;
        for (std::size_t j = 0; j < d; ++j) out[i * d + j] = x[i * d + j] / nrm;
    }
    const std::uint32_t out_id = static_cast<std::uint32_t>(t.size());
    return detail::emit(
        t, std::move(out), t.requires_grad(a),
        [a, out_id, norms = std::move(norms), n, d](Tape& tp, std::span<const double> g) {
            // d(x/|x|) = (I - y y^T) / |x|
            const Tensor& y = tp.value(Var{&tp, out_id});
            auto& buf = tp.grad_buffer(a.id);
            for (std::size_t i = 0; i < n; ++i) {
                double dot = 0.0;
                for (std::size_t j = 0; j < d; ++j) dot += g[i * d + j] * y[i * d + j];
                for (std::size_t j = 0; j < d; ++j)
                    buf[i * d + j] += (g[i * d + j] - dot * y[i * d + j]) / norms[i];
            }
        },
        "unit_normalize");
}

/// Per-row affine map selected by action: out_i = W[a_i] z_i + b[a_i].
/// z [N, d]; each W[a] is [d_out, d]; each b[a] is [d_out].
inline Var action_affine(Var z, std::span<const Var> weights, std::span<const Var> biases,
                         std::span<const std::size_t> actions)
{
    Tape& t = *z.tape;
    const Tensor& zv = t.value(z);
    if (zv.rank() != 2 || zv.dim(0) != actions.size())
        throw ShapeError("action_affine: z " + shape_str(zv.shape) + " vs " + std::to_string(actions.size()) +
                         " actions");
    if (weights.empty() || weights.size() != biases.size())
        throw ShapeError("action_affine: weight/bias count mismatch");
    const std::size_t n = zv.dim(0), d = zv.dim(1);
    const std::size_t dout = t.value(weights[0]).dim(0);
    for (std::size_t a = 0; a < weights.size(); ++a) {
        const Tensor& w = t.value(weights[a]);
        if (w.rank() != 2 || w.dim(0) != dout || w.dim(1) != d || t.value(biases[a]).size() != dout)
            throw ShapeError("action_affine: map " + std::to_string(a) + " has shape " + shape_str(w.shape) +
                             ", input dim " + std::to_string(d));
    }
    std::vector<std::size_t> acts(actions.begin(), actions.end());
    Tensor out(Shape{n, dout});
    for (std::size_t i = 0; i < n; ++i) {
        if (acts[i] >= weights.size()) throw std::out_of_range("action_affine: action index out of range");
        const Tensor& w = t.value(weights[acts[i]]);
        const Tensor& b = t.value(biases[acts[i]]);
        for (std::size_t r = 0; r < dout; ++r) {
            double s = b[r];
            for (std::size_t c = 0; c < d; ++c) s += w[r * d + c] * zv[i * d + c];
            out[i * dout + r] = s;
        }
    }
    bool rg = t.requires_grad(z);
    for (std::size_t a = 0; a < weights.size(); ++a) rg = rg || t.requires_grad(weights[a]) || t.requires_grad(biases[a]);
    std::vector<Var> ws(weights.begin(), weights.end()), bs(biases.begin(), biases.end());
    return detail::emit(
        t, std::move(out), rg,
        [z, ws = std::move(ws), bs = std::move(bs), acts = std::move(acts), n, d, dout](Tape& tp,
                                                                                        std::span<const double> g) {
            const Tensor& zv = tp.value(z);
            const bool gz = tp.requires_grad(z);
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t a = acts[i];
                const double* gi = g.data() + i * dout;
                if (tp.requires_grad(ws[a])) {
                    auto& gw = tp.grad_buffer(ws[a].id);
                    for (std::size_t r = 0; r < dout; ++r)
                        for (std::size_t c = 0; c < d; ++c) gw[r * d + c] += gi[r] * zv[i * d + c];
                }
                if (tp.requires_grad(bs[a])) {
                    auto& gb = tp.grad_buffer(bs[a].id);
                    for (std::size_t r = 0; r < dout; ++r) gb[r] += gi[r];
                }
                if (gz) {
                    const Tensor& w = tp.value(ws[a]);
                    auto& gzb = tp.grad_buffer(z.id);
                    for (std::size_t r = 0; r < dout; ++r)
                        for (std::size_t c = 0; c < d; ++c) gzb[i * d + c] += gi[r] * w[r * d + c];
                }
            }
        },
        "action_affine");
}

}  // namespace obstransfer::nn
