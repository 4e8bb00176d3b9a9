#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "obstransfer/nn/tensor.hpp"

namespace obstransfer::nn {

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Bias-corrected Adam over a fixed list of parameters. The optimizer holds
// non-owning pointers; the parameters must outlive it and must not move.
class Adam {
public:
    Adam() = default;

    Adam(std::vector<Tensor*> params, AdamConfig cfg = {}) : cfg_(cfg), params_(std::move(params))
    {
        if (!(cfg_.lr > 0.0) || cfg_.beta1 < 0.0 || cfg_.beta1 >= 1.0 || cfg_.beta2 < 0.0 || cfg_.beta2 >= 1.0)
            throw std::invalid_argument("adam: require lr > 0 and 0 <= beta1, beta2 < 1");
        for (auto* p : params_) {
            m_.emplace_back(p->size(), 0.0);
            v_.emplace_back(p->size(), 0.0);
        }
    }

    // Applies one update and clears the gradients.
    void step()
    {
        for (auto* p : params_)
            if (!p->grad) throw StateError("adam: parameter has no gradient; run backward first");
        ++step_count_;
        const double t = static_cast<double>(step_count_);
        const double c1 = 1.0 - std::pow(cfg_.beta1, t);
        const double c2 = 1.0 - std::pow(cfg_.beta2, t);
        for (std::size_t k = 0; k < params_.size(); ++k) {
            Tensor& p = *params_[k];
            const auto& g = *p.grad;
            auto& m = m_[k];
            auto& v = v_[k];
            for (std::size_t i = 0; i < p.size(); ++i) {
                m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g[i];
                v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
                const double mh = m[i] / c1;
                const double vh = v[i] / c2;
                p.data[i] -= cfg_.lr * mh / (std::sqrt(vh) + cfg_.eps);
            }
            p.grad.reset();
        }
    }

    void zero_grad()
    {
        for (auto* p : params_) p->grad.reset();
    }

    std::uint64_t step_count() const noexcept { return step_count_; }
    const AdamConfig& config() const noexcept { return cfg_; }

private:
    AdamConfig cfg_;
    std::vector<Tensor*> params_;
    std::vector<std::vector<double>> m_, v_;
    std::uint64_t step_count_ = 0;
};

}  // namespace obstransfer::nn
