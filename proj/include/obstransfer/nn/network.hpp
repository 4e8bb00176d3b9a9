#pragma once

#include <cmath>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "obstransfer/nn/autodiff.hpp"
#include "obstransfer/random.hpp"

namespace obstransfer::nn {

enum class Activation { Linear, ReLU, Tanh };

inline const char* activation_name(Activation a)
{
    switch (a) {
    case Activation::ReLU: return "relu";
    case Activation::Tanh: return "tanh";
    default: return "linear";
    }
}

inline Activation parse_activation(const std::string& s)
{
    if (s == "relu") return Activation::ReLU;
    if (s == "tanh") return Activation::Tanh;
    if (s == "linear") return Activation::Linear;
    throw std::invalid_argument("unknown activation '" + s + "'");
}

struct Dense {
    std::size_t in = 0, out = 0;
    Activation activation = Activation::Linear;
    bool operator==(const Dense&) const = default;
};

struct Conv2d {
    std::size_t in_channels = 0, out_channels = 0, kernel = 0, stride = 1;
    Activation activation = Activation::Linear;
    bool operator==(const Conv2d&) const = default;
};

struct Flatten {
    bool operator==(const Flatten&) const = default;
};

struct UnitNormalize {
    bool operator==(const UnitNormalize&) const = default;
};

using Layer = std::variant<Dense, Conv2d, Flatten, UnitNormalize>;

// Layer list plus the per-sample input shape ({features} or {C, H, W}).
struct NetworkSpec {
    Shape input;
    std::vector<Layer> layers;

    bool operator==(const NetworkSpec&) const = default;

    // Walks the layer list and returns the per-sample output shape.
    // Throws ShapeError when adjacent layers do not compose.
    Shape output_shape() const
    {
        Shape s = input;
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const auto where = "layer " + std::to_string(i) + ": ";
            if (const auto* d = std::get_if<Dense>(&layers[i])) {
                if (s.size() != 1 || s[0] != d->in)
                    throw ShapeError(where + "dense expects [" + std::to_string(d->in) + "], got " + shape_str(s));
                s = {d->out};
            } else if (const auto* c = std::get_if<Conv2d>(&layers[i])) {
                if (s.size() != 3 || s[0] != c->in_channels || s[1] < c->kernel || s[2] < c->kernel ||
                    c->stride == 0)
                    throw ShapeError(where + "conv2d cannot consume " + shape_str(s));
                s = {c->out_channels, (s[1] - c->kernel) / c->stride + 1, (s[2] - c->kernel) / c->stride + 1};
            } else if (std::holds_alternative<Flatten>(layers[i])) {
                s = {shape_size(s)};
            } else {
                if (i + 1 != layers.size()) throw ShapeError(where + "unit-normalize must be the final layer");
                if (s.size() != 1) throw ShapeError(where + "unit-normalize expects a flat vector");
            }
        }
        return s;
    }
};

// Owns the parameters of a NetworkSpec. Parameters are laid out as
// (weight, bias) per Dense/Conv2d layer, in layer order.
class Network {
public:
    Network() = default;

    Network(NetworkSpec spec, Rng& rng) : spec_(std::move(spec))
    {
        spec_.output_shape();
        for (const auto& layer : spec_.layers) {
            if (const auto* d = std::get_if<Dense>(&layer)) {
                params_.emplace_back(init_weight(Shape{d->in, d->out}, d->in, d->out, d->activation, rng));
                params_.emplace_back(Shape{d->out}, 0.0);
            } else if (const auto* c = std::get_if<Conv2d>(&layer)) {
                const std::size_t kk = c->kernel * c->kernel;
                params_.emplace_back(init_weight(Shape{c->out_channels, c->in_channels, c->kernel, c->kernel},
                                                 c->in_channels * kk, c->out_channels * kk, c->activation, rng));
                params_.emplace_back(Shape{c->out_channels}, 0.0);
            }
        }
    }

    // Construct from explicit parameters (checkpoint loading, tests).
    Network(NetworkSpec spec, std::vector<Tensor> params) : spec_(std::move(spec)), params_(std::move(params))
    {
        spec_.output_shape();
        std::size_t k = 0;
        for (const auto& layer : spec_.layers) {
            Shape ws, bs;
            if (const auto* d = std::get_if<Dense>(&layer)) {
                ws = {d->in, d->out};
                bs = {d->out};
            } else if (const auto* c = std::get_if<Conv2d>(&layer)) {
                ws = {c->out_channels, c->in_channels, c->kernel, c->kernel};
                bs = {c->out_channels};
            } else {
                continue;
            }
            if (k + 2 > params_.size() || params_[k].shape != ws || params_[k + 1].shape != bs)
                throw ShapeError("network parameters do not match layer list at parameter " + std::to_string(k));
            k += 2;
        }
        if (k != params_.size()) throw ShapeError("network has surplus parameters");
    }

    const NetworkSpec& spec() const noexcept { return spec_; }
    std::vector<Tensor>& params() noexcept { return params_; }
    const std::vector<Tensor>& params() const noexcept { return params_; }
    Shape input_shape() const { return spec_.input; }
    Shape output_shape() const { return spec_.output_shape(); }

    std::vector<Tensor*> param_ptrs()
    {
        std::vector<Tensor*> out;
        for (auto& p : params_) out.push_back(&p);
        return out;
    }

    // Records the forward pass on `tape`. With trainable=false the weights
    // enter the graph as constants (frozen network).
    Var forward(Tape& tape, Var x, bool trainable = true)
    {
        std::vector<Var> leaves;
        leaves.reserve(params_.size());
        for (auto& p : params_)
            leaves.push_back(trainable ? tape.parameter(p) : tape.constant(Tensor(p.shape, p.data)));
        return forward_with(spec_, tape, x, leaves);
    }

    // Forward pass of `spec` using caller-provided parameter nodes, laid out
    // as (weight, bias) per Dense/Conv2d layer.
    static Var forward_with(const NetworkSpec& spec, Tape& tape, Var x, std::span<const Var> params)
    {
        const Tensor& xv = tape.value(x);
        const Shape& expect = spec.input;
        if (xv.rank() != expect.size() + 1 || !std::equal(expect.begin(), expect.end(), xv.shape.begin() + 1))
            throw ShapeError("network input: expected [N]" + shape_str(expect) + ", got " + shape_str(xv.shape));
        std::size_t k = 0;
        Var h = x;
        for (const auto& layer : spec.layers) {
            if (const auto* d = std::get_if<Dense>(&layer)) {
                h = activate(dense(h, params[k], params[k + 1]), d->activation);
                k += 2;
            } else if (const auto* c = std::get_if<Conv2d>(&layer)) {
                h = activate(conv2d(h, params[k], params[k + 1], c->stride), c->activation);
                k += 2;
            } else if (std::holds_alternative<Flatten>(layer)) {
                const Tensor& hv = tape.value(h);
                h = reshape(h, Shape{hv.rows(), hv.row_size()});
            } else {
                h = unit_normalize(h);
            }
        }
        return h;
    }

    // Forward pass without recording gradients.
    Tensor predict(const Tensor& batch) const
    {
        Tape tape;
        std::vector<Var> leaves;
        leaves.reserve(params_.size());
        for (const auto& p : params_) leaves.push_back(tape.constant(Tensor(p.shape, p.data)));
        Var out = forward_with(spec_, tape, tape.constant(Tensor(batch.shape, batch.data)), leaves);
        return Tensor(tape.value(out).shape, tape.value(out).data);
    }

    std::size_t num_scalars() const
    {
        std::size_t n = 0;
        for (const auto& p : params_) n += p.size();
        return n;
    }

private:
    static Var activate(Var v, Activation a)
    {
        switch (a) {
        case Activation::ReLU: return relu(v);
        case Activation::Tanh: return tanh(v);
        default: return v;
        }
    }

    // Kaiming-uniform for ReLU layers, Xavier-uniform otherwise.
    static Tensor init_weight(Shape shape, std::size_t fan_in, std::size_t fan_out, Activation act, Rng& rng)
    {
        const double bound = act == Activation::ReLU ? std::sqrt(6.0 / static_cast<double>(fan_in))
                                                     : std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
        Tensor w(std::move(shape));
        for (auto& v : w.data) v = rng.uniform(-bound, bound);
        return w;
    }

    NetworkSpec spec_;
    std::vector<Tensor> params_;
};

// Bitwise equality of all parameters (used for frozen-weight contracts).
inline bool bitwise_equal(const std::vector<Tensor>& a, const std::vector<Tensor>& b)
{
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].shape != b[i].shape) return false;
        if (std::memcmp(a[i].data.data(), b[i].data.data(), a[i].data.size() * sizeof(double)) != 0) return false;
    }
    return true;
}

}  // namespace obstransfer::nn
