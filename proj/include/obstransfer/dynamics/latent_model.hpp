#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "obstransfer/nn/network.hpp"

namespace obstransfer::dynamics {

using nn::Shape;
using nn::Tape;
using nn::Tensor;
using nn::Var;

// Per-action affine latent transition and reward maps:
//   P(z, a) = P_w[a] z + P_b[a],   P_w[a] is [d, d]
//   R(z, a) = R_w[a] . z + R_b[a], R_w[a] is [1, d]
// With use_bias = false the biases stay zero and are never trained.
class LatentModel {
public:
    LatentModel() = default;

    LatentModel(std::size_t d, std::size_t num_actions, Rng& rng, bool use_bias = true)
        : d_(d), num_actions_(num_actions), use_bias_(use_bias)
    {
        check_dims();
        const double bound_p = std::sqrt(6.0 / static_cast<double>(2 * d));
        const double bound_r = std::sqrt(6.0 / static_cast<double>(d + 1));
        for (std::size_t a = 0; a < num_actions; ++a) {
            Tensor w({d, d});
            for (auto& v : w.data) v = rng.uniform(-bound_p, bound_p);
            p_w_.push_back(std::move(w));
            p_b_.emplace_back(Shape{d}, 0.0);
        }
        for (std::size_t a = 0; a < num_actions; ++a) {
            Tensor w({1, d});
            for (auto& v : w.data) v = rng.uniform(-bound_r, bound_r);
            r_w_.push_back(std::move(w));
            r_b_.emplace_back(Shape{1}, 0.0);
        }
    }

    LatentModel(std::vector<Tensor> p_w, std::vector<Tensor> p_b, std::vector<Tensor> r_w, std::vector<Tensor> r_b,
                bool use_bias = true)
        : p_w_(std::move(p_w)), p_b_(std::move(p_b)), r_w_(std::move(r_w)), r_b_(std::move(r_b)), use_bias_(use_bias)
    {
        num_actions_ = p_w_.size();
        d_ = p_w_.empty() || p_w_[0].rank() == 0 ? 0 : p_w_[0].shape[0];
        check_dims();
        if (p_b_.size() != num_actions_ || r_w_.size() != num_actions_ || r_b_.size() != num_actions_)
            throw ShapeError("latent model: one (P, R) pair per action required");
        for (std::size_t a = 0; a < num_actions_; ++a) {
            if (p_w_[a].shape != Shape{d_, d_} || p_b_[a].shape != Shape{d_} || r_w_[a].shape != Shape{1, d_} ||
                r_b_[a].shape != Shape{1})
                throw ShapeError("latent model: action " + std::to_string(a) + " maps have wrong shapes for d=" +
                                 std::to_string(d_));
            for (const Tensor* t : {&p_w_[a], &p_b_[a], &r_w_[a], &r_b_[a]})
                if (!t->all_finite()) throw NumericError("latent model: non-finite weight");
            if (!use_bias_)
                for (const Tensor* t : {&p_b_[a], &r_b_[a]})
                    for (double v : t->data)
                        if (v != 0.0) throw std::invalid_argument("latent model: bias must be zero when disabled");
        }
    }

    std::size_t encoding_dim() const noexcept { return d_; }
    std::size_t num_actions() const noexcept { return num_actions_; }
    bool use_bias() const noexcept { return use_bias_; }

    const std::vector<Tensor>& transition_weights() const noexcept { return p_w_; }
    const std::vector<Tensor>& transition_biases() const noexcept { return p_b_; }
    const std::vector<Tensor>& reward_weights() const noexcept { return r_w_; }
    const std::vector<Tensor>& reward_biases() const noexcept { return r_b_; }

    std::vector<Tensor*> transition_params()
    {
        std::vector<Tensor*> out;
        for (auto& t : p_w_) out.push_back(&t);
        if (use_bias_)
            for (auto& t : p_b_) out.push_back(&t);
        return out;
    }

    std::vector<Tensor*> reward_params()
    {
        std::vector<Tensor*> out;
        for (auto& t : r_w_) out.push_back(&t);
        if (use_bias_)
            for (auto& t : r_b_) out.push_back(&t);
        return out;
    }

    std::vector<Tensor*> param_ptrs()
    {
        auto out = transition_params();
        for (auto* t : reward_params()) out.push_back(t);
        return out;
    }

    // All weights in a fixed order, for equality checks and serialisation.
    std::vector<Tensor> snapshot() const
    {
        std::vector<Tensor> out;
        for (const auto* group : {&p_w_, &p_b_, &r_w_, &r_b_})
            for (const auto& t : *group) out.emplace_back(t.shape, t.data);
        return out;
    }

    // Records P(z, a) on the tape. trainable=false enters weights as constants.
    Var next(Tape& tape, Var z, std::span<const std::size_t> actions, bool trainable = true)
    {
        auto [w, b] = leaves(tape, p_w_, p_b_, trainable);
        return nn::action_affine(z, w, b, actions);
    }

    Var reward(Tape& tape, Var z, std::span<const std::size_t> actions, bool trainable = true)
    {
        auto [w, b] = leaves(tape, r_w_, r_b_, trainable);
        Var out = nn::action_affine(z, w, b, actions);
        return nn::reshape(out, Shape{actions.size()});
    }

    Tensor predict_next(const Tensor& z, std::span<const std::size_t> actions) const
    {
        Tape tape;
        auto self = *this;
        Var out = self.next(tape, tape.constant(Tensor(z.shape, z.data)), actions, false);
        return Tensor(tape.value(out).shape, tape.value(out).data);
    }

    Tensor predict_reward(const Tensor& z, std::span<const std::size_t> actions) const
    {
        Tape tape;
        auto self = *this;
        Var out = self.reward(tape, tape.constant(Tensor(z.shape, z.data)), actions, false);
        return Tensor(tape.value(out).shape, tape.value(out).data);
    }

private:
    void check_dims() const
    {
        if (d_ < 1) throw ShapeError("latent model: encoding_dim must be >= 1");
        if (num_actions_ < 1) throw ShapeError("latent model: need at least one action");
    }

    std::pair<std::vector<Var>, std::vector<Var>> leaves(Tape& tape, std::vector<Tensor>& ws, std::vector<Tensor>& bs,
                                                         bool trainable)
    {
        std::vector<Var> w, b;
        for (auto& t : ws) w.push_back(trainable ? tape.parameter(t) : tape.constant(Tensor(t.shape, t.data)));
        for (auto& t : bs)
            b.push_back(trainable && use_bias_ ? tape.parameter(t) : tape.constant(Tensor(t.shape, t.data)));
        return {std::move(w), std::move(b)};
    }

    std::size_t d_ = 0, num_actions_ = 0;
    std::vector<Tensor> p_w_, p_b_, r_w_, r_b_;
    bool use_bias_ = true;
};

// (1/N) sum_i ||pred_i - stop_gradient(target_i)||^2
inline Var loss_P(Var predicted_next, Var target_next)
{
    return nn::mean_row_sq_norm(nn::sub(predicted_next, nn::stop_gradient(target_next)));
}

// (1/N) sum_i (pred_i - r_i)^2
inline Var loss_R(Var predicted_reward, Var rewards) { return nn::mse(predicted_reward, rewards); }

// Frozen copy of the live encoder, refreshed when t is a multiple of the period.
class StableEncoder {
public:
    StableEncoder() = default;
    StableEncoder(const nn::Network& live, std::size_t period) : net_(live), period_(period)
    {
        if (period_ < 1) throw std::invalid_argument("stable encoder period must be >= 1");
    }

    // Returns true when a copy happened.
    bool refresh(const nn::Network& live, std::size_t t)
    {
        if (t % period_ != 0) return false;
        net_ = live;
        return true;
    }

    const nn::Network& network() const noexcept { return net_; }
    std::size_t period() const noexcept { return period_; }

private:
    nn::Network net_;
    std::size_t period_ = 1;
};

}  // namespace obstransfer::dynamics
