#pragma once

#include <cmath>
#include <ostream>
#include <string>
#include <vector>

#include "obstransfer/agent/dqn.hpp"
#include "obstransfer/dynamics/latent_model.hpp"
#include "obstransfer/nn/gradcheck.hpp"

namespace obstransfer::harness {

using nn::Tape;
using nn::Tensor;
using nn::Var;

inline constexpr double kGradTolerance = 1e-4;

struct GradItem {
    std::string name;
    double max_rel_error = 0.0;
    std::size_t entries = 0;
    std::size_t draws = 0;
    bool passed = false;
    std::string note;
};

namespace detail {

inline void fold(GradItem& it, const nn::GradCheckResult& r)
{
    it.max_rel_error = std::max(it.max_rel_error, r.max_rel_error);
    it.entries += r.entries;
    ++it.draws;
}

inline GradItem layer_item(const std::string& name, const nn::NetworkSpec& spec, std::size_t batch, int draws, Rng& rng)
{
    GradItem it;
    it.name = name;
    for (int k = 0; k < draws; ++k) fold(it, nn::network_gradient_check(spec, batch, rng));
    it.passed = it.max_rel_error < kGradTolerance;
    return it;
}

inline std::vector<Tensor> network_leaves(const nn::Network& net, Rng& rng)
{
    std::vector<Tensor> out;
    for (const auto& p : net.params()) out.push_back(nn::random_tensor(p.shape, rng, -0.5, 0.5));
    return out;
}

}  // namespace detail

// Finite-difference checks over every layer type and every loss the agent
// and the latent model train on. Sizes are kept small so the whole suite
// runs in a few seconds.
inline std::vector<GradItem> run_gradcheck_suite(std::uint64_t seed = 1)
{
    using nn::Activation;
    Rng rng(seed);
    std::vector<GradItem> out;
    const int draws = 5;

    out.push_back(detail::layer_item("dense/linear", {{5}, {nn::Dense{5, 4, Activation::Linear}}}, 3, draws, rng));
    out.push_back(detail::layer_item("dense/relu", {{5}, {nn::Dense{5, 4, Activation::ReLU}}}, 3, draws, rng));
    out.push_back(detail::layer_item("dense/tanh", {{5}, {nn::Dense{5, 4, Activation::Tanh}}}, 3, draws, rng));
    out.push_back(detail::layer_item("conv2d/k3s1/relu", {{2, 6, 6}, {nn::Conv2d{2, 3, 3, 1, Activation::ReLU}}}, 2,
                                     draws, rng));
    out.push_back(detail::layer_item("conv2d/k5s2/linear", {{2, 9, 9}, {nn::Conv2d{2, 3, 5, 2, Activation::Linear}}},
                                     2, draws, rng));
    out.push_back(detail::layer_item("conv2d/k3s2/tanh", {{1, 7, 7}, {nn::Conv2d{1, 2, 3, 2, Activation::Tanh}}}, 2,
                                     draws, rng));
    out.push_back(detail::layer_item(
        "conv2d+flatten+dense",
        {{1, 6, 6}, {nn::Conv2d{1, 2, 3, 1, Activation::ReLU}, nn::Flatten{}, nn::Dense{32, 3, Activation::Linear}}}, 2,
        draws, rng));
    out.push_back(detail::layer_item("unit_normalize",
                                     {{4}, {nn::Dense{4, 3, Activation::Linear}, nn::UnitNormalize{}}}, 3, draws, rng));

    // td_loss, rebuilt from leaves so the input and every weight of the
    // encoder and head are perturbed. The value is cross-checked against the
    // agent's own td_loss on the same weights.
    {
        GradItem it;
        it.name = "td_loss";
        const envs::ObservationSpec obs{envs::VectorSpec{4}};
        const auto enc_spec = agent::make_encoder_spec(obs, 3, 6);
        const auto head_spec = agent::make_head_spec(3, 2, 6);
        double value_gap = 0.0;
        for (int k = 0; k < draws; ++k) {
            agent::EncoderQNet net(nn::Network(enc_spec, rng), nn::Network(head_spec, rng));
            agent::Batch b;
            b.obs = nn::random_tensor({4, 4}, rng);
            b.next_obs = nn::random_tensor({4, 4}, rng);
            b.actions = {0, 1, 1, 0};
            b.rewards = nn::random_tensor({4}, rng);
            b.dones = Tensor({4}, std::vector<double>{0, 0, 1, 0});
            const Tensor y = agent::td_targets(net, b, 0.9);
            std::vector<Tensor> leaves{Tensor(b.obs.shape, b.obs.data)};
            for (const auto& p : net.encoder.params()) leaves.emplace_back(p.shape, p.data);
            for (const auto& p : net.head.params()) leaves.emplace_back(p.shape, p.data);
            const std::size_t ne = net.encoder.params().size();
            auto build = [&](Tape& t, std::span<const Var> v) {
                Var z = nn::Network::forward_with(enc_spec, t, v[0], v.subspan(1, ne));
                Var q = nn::Network::forward_with(head_spec, t, z, v.subspan(1 + ne));
                return nn::mse(nn::gather_actions(q, b.actions), t.constant(Tensor(y.shape, y.data)));
            };
            {
                Tape t;
                std::vector<Var> v;
                for (const auto& l : leaves) v.push_back(t.constant(Tensor(l.shape, l.data)));
                Tape t2;
                const double ours = t.value(build(t, v))[0];
                const double theirs = t2.value(agent::td_loss(t2, net, b, 0.9).loss)[0];
                value_gap = std::max(value_gap, std::abs(ours - theirs));
            }
            detail::fold(it, nn::gradient_check(std::move(leaves), build));
        }
        it.passed = it.max_rel_error < kGradTolerance && value_gap == 0.0;
        if (value_gap != 0.0) it.note = "value differs from td_loss by " + std::to_string(value_gap);
        out.push_back(it);
    }

    // loss_P against a constant target: gradients reach z and the model.
    {
        GradItem it;
        it.name = "loss_P";
        const std::size_t d = 3;
        const std::vector<std::size_t> acts{0, 1, 1, 0};
        for (int k = 0; k < draws; ++k) {
            const Tensor target = nn::random_tensor({4, d}, rng);
            std::vector<Tensor> leaves{nn::random_tensor({4, d}, rng)};
            for (int a = 0; a < 2; ++a) {
                leaves.push_back(nn::random_tensor({d, d}, rng));
                leaves.push_back(nn::random_tensor({d}, rng));
            }
            detail::fold(it, nn::gradient_check(std::move(leaves), [&](Tape& t, std::span<const Var> v) {
                             std::vector<Var> w{v[1], v[3]}, bs{v[2], v[4]};
                             return dynamics::loss_P(nn::action_affine(v[0], w, bs, acts),
                                                     t.constant(Tensor(target.shape, target.data)));
                         }));
        }
        it.passed = it.max_rel_error < kGradTolerance;
        out.push_back(it);
    }

    // The target branch of loss_P must receive exactly zero gradient, even
    // when it is a differentiable input (here it would otherwise be -2(p-t)/N).
    {
        GradItem it;
        it.name = "loss_P/stop_gradient";
        double worst = 0.0;
        for (int k = 0; k < draws; ++k) {
            Tape t;
            Var pred = t.input(nn::random_tensor({4, 3}, rng));
            Var target = t.input(nn::random_tensor({4, 3}, rng));
            t.backward(dynamics::loss_P(pred, target));
            for (double g : t.grad(target)) worst = std::max(worst, std::abs(g));
            it.entries += 12;
            ++it.draws;
        }
        it.max_rel_error = worst;
        it.passed = worst == 0.0;
        it.note = "max |grad| on target";
        out.push_back(it);
    }

    {
        GradItem it;
        it.name = "loss_R";
        const std::size_t d = 3;
        const std::vector<std::size_t> acts{0, 1, 1, 0};
        for (int k = 0; k < draws; ++k) {
            std::vector<Tensor> leaves{nn::random_tensor({4, d}, rng), nn::random_tensor({4}, rng),
                                       nn::random_tensor({1, d}, rng), nn::random_tensor({1}, rng),
                                       nn::random_tensor({1, d}, rng), nn::random_tensor({1}, rng)};
            detail::fold(it, nn::gradient_check(std::move(leaves), [&](Tape&, std::span<const Var> v) {
                             std::vector<Var> w{v[2], v[4]}, bs{v[3], v[5]};
                             return dynamics::loss_R(nn::reshape(nn::action_affine(v[0], w, bs, acts), {4}), v[1]);
                         }));
        }
        it.passed = it.max_rel_error < kGradTolerance;
        out.push_back(it);
    }

    // Target-task objective: L_base + lambda (L_P + L_R) through a frozen
    // latent model into the encoder weights.
    {
        GradItem it;
        it.name = "regularized objective";
        const envs::ObservationSpec obs{envs::VectorSpec{4}};
        const auto enc_spec = agent::make_encoder_spec(obs, 3, 5);
        const auto head_spec = agent::make_head_spec(3, 2, 5);
        for (int k = 0; k < 3; ++k) {
            nn::Network enc(enc_spec, rng), head(head_spec, rng);
            dynamics::LatentModel model(3, 2, rng);
            const Tensor o = nn::random_tensor({4, 4}, rng), zn = nn::random_tensor({4, 3}, rng),
                         r = nn::random_tensor({4}, rng), y = nn::random_tensor({4}, rng);
            const std::vector<std::size_t> acts{1, 0, 1, 1};
            std::vector<Tensor> leaves = detail::network_leaves(enc, rng);
            auto hw = detail::network_leaves(head, rng);
            leaves.insert(leaves.end(), hw.begin(), hw.end());
            const std::size_t ne = enc.params().size();
            detail::fold(it, nn::gradient_check(std::move(leaves), [&](Tape& t, std::span<const Var> v) {
                             Var z = nn::Network::forward_with(enc_spec, t, t.constant(Tensor(o.shape, o.data)),
                                                               v.subspan(0, ne));
                             Var q = nn::Network::forward_with(head_spec, t, z, v.subspan(ne));
                             Var base = nn::mse(nn::gather_actions(q, acts), t.constant(Tensor(y.shape, y.data)));
                             Var lp = dynamics::loss_P(model.next(t, z, acts, false),
                                                       t.constant(Tensor(zn.shape, zn.data)));
                             Var lr = dynamics::loss_R(model.reward(t, z, acts, false), t.constant(Tensor(r.shape, r.data)));
                             return nn::add(base, nn::scale(nn::add(lp, lr), 18.0));
                         }));
        }
        it.passed = it.max_rel_error < kGradTolerance;
        out.push_back(it);
    }
    return out;
}

inline bool all_passed(const std::vector<GradItem>& items)
{
    for (const auto& i : items)
        if (!i.passed) return false;
    return true;
}

inline void print_gradcheck(std::ostream& os, const std::vector<GradItem>& items)
{
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-24s %8s %8s %12s  %s\n", "check", "draws", "entries", "max_rel_err", "status");
    os << buf;
    for (const auto& i : items) {
        std::snprintf(buf, sizeof buf, "%-24s %8zu %8zu %12.3e  %s%s%s\n", i.name.c_str(), i.draws, i.entries,
                      i.max_rel_error, i.passed ? "ok" : "FAIL", i.note.empty() ? "" : "  # ", i.note.c_str());
        os << buf;
    }
}

}  // namespace obstransfer::harness
