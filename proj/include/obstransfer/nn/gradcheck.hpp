#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "obstransfer/nn/network.hpp"

namespace obstransfer::nn {

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t entries = 0;
};

// Builds a scalar loss from the supplied leaves.
using LossBuilder = std::function<Var(Tape&, std::span<const Var>)>;

// Compares tape gradients against central finite differences for every
// entry of every leaf. Relative error is |a - n| / max(|a|, |n|, floor).
inline GradCheckResult gradient_check(std::vector<Tensor> leaves, const LossBuilder& build, double h = 1e-5,
                                      double floor = 1e-4)
{
    std::vector<std::vector<double>> analytic;
    {
        Tape tape;
        std::vector<Var> vars;
        for (const auto& l : leaves) vars.push_back(tape.input(Tensor(l.shape, l.data)));
        tape.backward(build(tape, vars));
        for (auto v : vars) analytic.push_back(tape.grad(v));
    }
    auto eval = [&]() {
        Tape tape;
        std::vector<Var> vars;
        for (const auto& l : leaves) vars.push_back(tape.constant(Tensor(l.shape, l.data)));
        return tape.value(build(tape, vars))[0];
    };
    GradCheckResult r;
    for (std::size_t k = 0; k < leaves.size(); ++k) {
        for (std::size_t i = 0; i < leaves[k].size(); ++i) {
            const double saved = leaves[k][i];
            leaves[k][i] = saved + h;
            const double fp = eval();
            leaves[k][i] = saved - h;
            const double fm = eval();
            leaves[k][i] = saved;
            const double numeric = (fp - fm) / (2.0 * h);
            const double a = analytic[k][i];
            const double denom = std::max({std::abs(a), std::abs(numeric), floor});
            r.max_rel_error = std::max(r.max_rel_error, std::abs(a - numeric) / denom);
            ++r.entries;
        }
    }
    return r;
}

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0)
{
    Tensor t(std::move(shape));
    for (auto& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

// Gradient check of a whole network (all parameters and the input) under
// loss = sum(out * probe), where probe is a fixed random tensor.
inline GradCheckResult network_gradient_check(const NetworkSpec& spec, std::size_t batch, Rng& rng)
{
    Network net(spec, rng);
    Shape in_shape{batch};
    in_shape.insert(in_shape.end(), spec.input.begin(), spec.input.end());
    Shape out_shape{batch};
    const auto o = spec.output_shape();
    out_shape.insert(out_shape.end(), o.begin(), o.end());

    std::vector<Tensor> leaves{random_tensor(in_shape, rng)};
    for (const auto& p : net.params()) leaves.emplace_back(random_tensor(p.shape, rng, -0.5, 0.5));
    const Tensor probe = random_tensor(out_shape, rng);

    return gradient_check(std::move(leaves), [&](Tape& tape, std::span<const Var> v) {
        Var out = Network::forward_with(spec, tape, v[0], v.subspan(1));
        return sum(mul(out, tape.constant(Tensor(probe.shape, probe.data))));
    });
}

}  // namespace obstransfer::nn
