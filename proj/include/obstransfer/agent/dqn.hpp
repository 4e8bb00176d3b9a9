#pragma once

#include <cmath>
#include <optional>
#include <span>

#include "obstransfer/dynamics/checkpoint.hpp"
#include "obstransfer/envs/environment.hpp"
#include "obstransfer/nn/adam.hpp"
#include "obstransfer/nn/network.hpp"

namespace obstransfer::agent {

using nn::Network;
using nn::NetworkSpec;
using nn::Shape;
using nn::Tape;
using nn::Tensor;
using nn::Var;

// Seed streams derived from the run seed.
enum Stream : std::uint64_t {
    kAgentInit = 1,
    kAct = 2,
    kReplay = 3,
    kModelInit = 4,
    kEnv = 5,
    kEval = 6,
    kAlign = 7,
    kHeldOut = 8,
};

struct AgentConfig {
    double gamma = 0.99;
    double lr = 1e-3;
    std::size_t batch_size = 32;
    std::size_t replay_capacity = 10000;
    std::size_t target_update_period = 10;
    double epsilon_start = 1.0, epsilon_end = 0.05;
    std::size_t epsilon_decay_steps = 5000;
    std::size_t encoding_dim = 16;
    std::size_t hidden = 64;
    double lambda = 18.0;
    std::size_t stable_period = 10;

    void validate() const
    {
        auto fail = [](const std::string& m) { throw std::invalid_argument(m); };
        if (!(gamma > 0.0 && gamma < 1.0)) fail("agent.gamma must be in (0, 1)");
        if (!(lr > 0.0) || !std::isfinite(lr)) fail("agent.lr must be positive");
        if (!(lambda >= 0.0) || !std::isfinite(lambda)) fail("agent.lambda must be >= 0");
        if (encoding_dim < 1) fail("agent.encoding_dim must be >= 1");
        if (hidden < 1) fail("agent.hidden must be >= 1");
        if (batch_size < 1) fail("agent.batch_size must be >= 1");
        if (replay_capacity < batch_size) fail("agent.replay_capacity must be >= agent.batch_size");
        if (target_update_period < 1) fail("agent.target_update_period must be >= 1");
        if (stable_period < 1) fail("agent.stable_period must be >= 1");
        if (!(epsilon_start >= 0 && epsilon_start <= 1 && epsilon_end >= 0 && epsilon_end <= 1))
            fail("agent.epsilon_start and agent.epsilon_end must be in [0, 1]");
        if (epsilon_end > epsilon_start) fail("agent.epsilon_end must not exceed agent.epsilon_start");
    }

    // Geometric decay from start to end over decay_steps, then flat.
    double epsilon(std::size_t t) const
    {
        if (epsilon_decay_steps == 0 || t >= epsilon_decay_steps || epsilon_start == epsilon_end) return epsilon_end;
        if (epsilon_end <= 0.0)
            return epsilon_start * (1.0 - static_cast<double>(t) / static_cast<double>(epsilon_decay_steps));
        const double frac = static_cast<double>(t) / static_cast<double>(epsilon_decay_steps);
        return epsilon_start * std::pow(epsilon_end / epsilon_start, frac);
    }
};

struct Batch {
    Tensor obs, next_obs;  // [B, ...]
    std::vector<std::size_t> actions;
    Tensor rewards, dones;  // [B]
    std::vector<std::size_t> indices;  // buffer slots, for diagnostics
    std::size_t size() const { return actions.size(); }
};

class ReplayBuffer {
public:
    ReplayBuffer(std::size_t capacity, envs::ObservationSpec spec) : capacity_(capacity), spec_(std::move(spec))
    {
        if (capacity_ < 1) throw std::invalid_argument("replay capacity must be >= 1");
        obs_size_ = spec_.size();
    }

    void add(const envs::Transition& t)
    {
        if (t.obs.values.size() != obs_size_ || t.next_obs.values.size() != obs_size_)
            throw ShapeError("replay: observation size does not match the buffer spec");
        if (!std::isfinite(t.reward)) throw NumericError("replay: non-finite reward");
        Slot s{t.obs.values, t.next_obs.values, t.action, t.reward, t.done};
        if (slots_.size() < capacity_)
            slots_.push_back(std::move(s));
        else
            slots_[head_] = std::move(s);
        head_ = (head_ + 1) % capacity_;
    }

    std::size_t size() const noexcept { return slots_.size(); }
    std::size_t capacity() const noexcept { return capacity_; }

    // Uniform with replacement.
    Batch sample(std::size_t n, Rng& rng) const
    {
        if (n == 0) throw std::invalid_argument("replay: empty batch requested");
        if (slots_.size() < n)
            throw StateError("replay: " + std::to_string(slots_.size()) + " transitions stored, batch needs " +
                             std::to_string(n));
        std::vector<std::size_t> idx(n);
        for (auto& i : idx) i = rng.index(slots_.size());
        return gather(idx);
    }

    Batch gather(std::span<const std::size_t> idx) const
    {
        const std::size_t n = idx.size();
        Shape shape{n};
        for (auto s : spec_.shape()) shape.push_back(s);
        Batch b{Tensor(shape), Tensor(shape), std::vector<std::size_t>(n), Tensor({n}), Tensor({n}),
                std::vector<std::size_t>(idx.begin(), idx.end())};
        for (std::size_t k = 0; k < n; ++k) {
            const Slot& s = slots_.at(idx[k]);
            std::copy(s.obs.begin(), s.obs.end(), b.obs.data.begin() + static_cast<std::ptrdiff_t>(k * obs_size_));
            std::copy(s.next.begin(), s.next.end(),
                      b.next_obs.data.begin() + static_cast<std::ptrdiff_t>(k * obs_size_));
            b.actions[k] = s.action;
            b.rewards[k] = s.reward;
            b.dones[k] = s.done ? 1.0 : 0.0;
        }
        return b;
    }

private:
    struct Slot {
        std::vector<double> obs, next;
        std::size_t action;
        double reward;
        bool done;
    };
    std::size_t capacity_, obs_size_ = 0, head_ = 0;
    envs::ObservationSpec spec_;
    std::vector<Slot> slots_;
};

// Vector face: Dense(in,64,ReLU), Dense(64,d), UnitNormalize.
// Image face: three convs (16/32/32 channels, kernel 5 stride 2 when the input
// is large enough, else kernel 3 stride 1), Flatten, Dense(., d), UnitNormalize.
inline NetworkSpec make_encoder_spec(const envs::ObservationSpec& obs, std::size_t d, std::size_t hidden = 64)
{
    obs.validate();
    using nn::Activation;
    if (!obs.is_image()) {
        const std::size_t in = obs.size();
        return {{in}, {nn::Dense{in, hidden, Activation::ReLU}, nn::Dense{hidden, d, Activation::Linear}, nn::UnitNormalize{}}};
    }
    const auto& im = std::get<envs::ImageSpec>(obs.kind);
    const std::size_t channels[3] = {16, 32, 32};
    for (auto [k, s] : {std::pair<std::size_t, std::size_t>{5, 2}, {3, 1}}) {
        std::size_t h = im.height, w = im.width;
        bool fits = true;
        for (int l = 0; l < 3 && fits; ++l) {
            if (h < k || w < k) fits = false;
            else {
                h = (h - k) / s + 1;
                w = (w - k) / s + 1;
            }
        }
        if (!fits) continue;
        NetworkSpec spec{{im.channels, im.height, im.width}, {}};
        std::size_t in_c = im.channels;
        for (std::size_t c : channels) {
            spec.layers.push_back(nn::Conv2d{in_c, c, k, s, Activation::ReLU});
            in_c = c;
        }
        spec.layers.push_back(nn::Flatten{});
        spec.layers.push_back(nn::Dense{32 * h * w, d, Activation::Linear});
        spec.layers.push_back(nn::UnitNormalize{});
        return spec;
    }
    throw ShapeError("image observation " + nn::shape_str(obs.shape()) + " is too small for three 3x3 convolutions");
}

// Dense(d,64,ReLU), Dense(64,|A|).
inline NetworkSpec make_head_spec(std::size_t d, std::size_t num_actions, std::size_t hidden = 64)
{
    using nn::Activation;
    return {{d}, {nn::Dense{d, hidden, Activation::ReLU}, nn::Dense{hidden, num_actions, Activation::Linear}}};
}

// Live encoder and Q head plus their target copies.
struct EncoderQNet {
    Network encoder, head, target_encoder, target_head;

    EncoderQNet() = default;
    EncoderQNet(Network enc, Network hd) : encoder(std::move(enc)), head(std::move(hd))
    {
        const auto z = encoder.output_shape();
        if (z != head.input_shape())
            throw ShapeError("encoder output " + nn::shape_str(z) + " does not feed head input " +
                             nn::shape_str(head.input_shape()));
        sync_target();
    }

    void sync_target()
    {
        target_encoder = encoder;
        target_head = head;
    }

    std::size_t encoding_dim() const { return head.input_shape().at(0); }
    std::size_t num_actions() const { return head.output_shape().at(0); }

    Tensor q_values(const Tensor& obs) const { return head.predict(encoder.predict(obs)); }
    Tensor target_q_values(const Tensor& obs) const { return target_head.predict(target_encoder.predict(obs)); }
};

inline std::size_t argmax_lowest(std::span<const double> q)
{
    std::size_t best = 0;
    for (std::size_t a = 1; a < q.size(); ++a)
        if (q[a] > q[best]) best = a;
    return best;
}

inline Tensor as_batch(const envs::Observation& o)
{
    Shape s{1};
    for (auto d : o.spec.shape()) s.push_back(d);
    return Tensor(std::move(s), o.values);
}

// Epsilon-greedy. One uniform draw decides exploration; a second picks the
// random action.
inline std::size_t act(const EncoderQNet& net, const envs::Observation& obs, double epsilon, Rng& rng)
{
    if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw std::invalid_argument("act: epsilon must be in [0, 1]");
    if (rng.uniform() < epsilon) return rng.index(net.num_actions());
    const Tensor q = net.q_values(as_batch(obs));
    return argmax_lowest(q.data);
}

inline std::size_t greedy(const EncoderQNet& net, const envs::Observation& obs)
{
    return argmax_lowest(net.q_values(as_batch(obs)).data);
}

// TD targets r + gamma (1 - done) max_a' Q_target(o', a'), as a constant.
inline Tensor td_targets(const EncoderQNet& net, const Batch& b, double gamma)
{
    const Tensor qn = net.target_q_values(b.next_obs);
    const std::size_t n = b.size(), A = net.num_actions();
    Tensor y({n});
    for (std::size_t i = 0; i < n; ++i) {
        double m = qn[i * A];
        for (std::size_t a = 1; a < A; ++a) m = std::max(m, qn[i * A + a]);
        y[i] = b.rewards[i] + gamma * (1.0 - b.dones[i]) * m;
    }
    return y;
}

struct TdTerms {
    Var loss;  // scalar
    Var z;     // live phi(o), [B, d]
};

// Records phi(o), Q(o, .) and the TD loss on `tape`. The bootstrap target is
// computed outside the tape from the target networks, so no gradient reaches
// them.
inline TdTerms td_loss(Tape& tape, EncoderQNet& net, const Batch& b, double gamma, bool head_trainable = true)
{
    if (b.size() == 0) throw std::invalid_argument("td_loss: empty batch");
    Var z = net.encoder.forward(tape, tape.constant(Tensor(b.obs.shape, b.obs.data)));
    Var q = net.head.forward(tape, z, head_trainable);
    Var qa = nn::gather_actions(q, b.actions);
    Var loss = nn::mse(qa, tape.constant(td_targets(net, b, gamma)));
    return {loss, z};
}

inline double max_unit_norm_error(const Tensor& z)
{
    double worst = 0.0;
    const std::size_t d = z.row_size();
    for (std::size_t i = 0; i < z.rows(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < d; ++j) s += z[i * d + j] * z[i * d + j];
        worst = std::max(worst, std::abs(std::sqrt(s) - 1.0));
    }
    return worst;
}

struct StepMetrics {
    double loss_base = std::nan("");
    double loss_P = std::nan("");
    double loss_R = std::nan("");
};

// DQN learner: owns the networks, the optimizer and the act stream.
class DqnAgent {
public:
    DqnAgent(const envs::ObservationSpec& obs, std::size_t num_actions, AgentConfig cfg, std::uint64_t seed,
             bool freeze_head = false)
        : cfg_(cfg), act_rng_(derive_seed(seed, kAct)), freeze_head_(freeze_head)
    {
        cfg_.validate();
        Rng init(derive_seed(seed, kAgentInit));
        Network enc(make_encoder_spec(obs, cfg_.encoding_dim, cfg_.hidden), init);
        Network head(make_head_spec(cfg_.encoding_dim, num_actions, cfg_.hidden), init);
        net_ = EncoderQNet(std::move(enc), std::move(head));
        rebuild_optimizer();
    }

    const AgentConfig& config() const noexcept { return cfg_; }
    EncoderQNet& net() noexcept { return net_; }
    const EncoderQNet& net() const noexcept { return net_; }
    std::size_t updates() const noexcept { return updates_; }
    bool head_frozen() const noexcept { return freeze_head_; }

    // Replaces the Q head (fine-tuning from a source policy).
    void load_head(Network head)
    {
        if (head.spec() != net_.head.spec())
            throw ShapeError("loaded Q head does not match this agent's head layout");
        net_.head = std::move(head);
        net_.sync_target();
        rebuild_optimizer();
    }

    void load_encoder(Network enc)
    {
        if (enc.spec() != net_.encoder.spec())
            throw ShapeError("loaded encoder does not match this agent's encoder layout");
        net_.encoder = std::move(enc);
        net_.sync_target();
        rebuild_optimizer();
    }

    std::size_t act(const envs::Observation& obs, double epsilon) { return agent::act(net_, obs, epsilon, act_rng_); }

    nn::Adam& optimizer() { return *opt_; }

    // Applies the optimizer to gradients already on the parameters, then
    // advances the update counter and refreshes the target on its period.
    void apply_update()
    {
        opt_->step();
        ++updates_;
        if (updates_ % cfg_.target_update_period == 0) net_.sync_target();
    }

    StepMetrics train_step_base(const Batch& b)
    {
        Tape tape;
        const TdTerms td = td_loss(tape, net_, b, cfg_.gamma, !freeze_head_);
        tape.backward(td.loss);
        StepMetrics m;
        m.loss_base = tape.value(td.loss)[0];
        apply_update();
        return m;
    }

private:
    void rebuild_optimizer()
    {
        auto params = net_.encoder.param_ptrs();
        if (!freeze_head_)
            for (auto* p : net_.head.param_ptrs()) params.push_back(p);
        opt_.emplace(params, nn::AdamConfig{cfg_.lr});
    }

    AgentConfig cfg_;
    EncoderQNet net_;
    std::optional<nn::Adam> opt_;
    Rng act_rng_;
    std::size_t updates_ = 0;
    bool freeze_head_ = false;
};

inline void save_policy(const EncoderQNet& net, const std::string& path)
{
    auto j = ckpt::envelope("policy", net.encoding_dim(), net.num_actions());
    j["encoder"] = ckpt::network_to_json(net.encoder);
    j["q_head"] = ckpt::network_to_json(net.head);
    ckpt::write_file(path, j);
}

inline EncoderQNet load_policy(const std::string& path)
{
    const auto j = ckpt::open_envelope(ckpt::read_file(path), "policy");
    if (!j.contains("encoder") || !j.contains("q_head"))
        throw ckpt::CheckpointError("policy checkpoint '" + path + "' lacks encoder or q_head");
    try {
        EncoderQNet net(ckpt::network_from_json(j["encoder"]), ckpt::network_from_json(j["q_head"]));
        if (net.encoding_dim() != j.at("encoding_dim").get<std::size_t>() ||
            net.num_actions() != j.at("num_actions").get<std::size_t>())
            throw ckpt::CheckpointError("policy checkpoint header disagrees with its networks");
        return net;
    } catch (const ShapeError& e) {
        throw ckpt::CheckpointError(std::string("policy checkpoint: ") + e.what());
    }
}

}  // namespace obstransfer::agent
