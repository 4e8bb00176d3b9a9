#pragma once

#include <chrono>
#include <cstring>
#include <filesystem>
#include <functional>
#include <optional>

#include "obstransfer/agent/dqn.hpp"
#include "obstransfer/dynamics/checkpoint.hpp"
#include "obstransfer/dynamics/latent_model.hpp"
#include "obstransfer/harness/metrics.hpp"
#include "obstransfer/transfer/env_factory.hpp"
#include "obstransfer/transfer/trajectory.hpp"

namespace obstransfer::transfer {

using agent::AgentConfig;
using agent::Batch;
using agent::DqnAgent;
using agent::EncoderQNet;
using dynamics::LatentModel;
using harness::MetricsRow;
using nn::Tape;
using nn::Tensor;
using nn::Var;

enum class Mode { Source, Single, Transfer, Auxiliary, FineTune, TimeAligned, POnly, ROnly };

inline const char* mode_name(Mode m)
{
    switch (m) {
    case Mode::Source: return "source";
    case Mode::Single: return "single";
    case Mode::Transfer: return "transfer";
    case Mode::Auxiliary: return "auxiliary";
    case Mode::FineTune: return "finetune";
    case Mode::TimeAligned: return "time_aligned";
    case Mode::POnly: return "p_only";
    case Mode::ROnly: return "r_only";
    }
    return "?";
}

inline Mode parse_mode(const std::string& s)
{
    for (Mode m : {Mode::Source, Mode::Single, Mode::Transfer, Mode::Auxiliary, Mode::FineTune, Mode::TimeAligned,
                   Mode::POnly, Mode::ROnly})
        if (s == mode_name(m)) return m;
    throw std::invalid_argument("unknown run mode '" + s +
                                "' (source, single, transfer, auxiliary, finetune, time_aligned, p_only, r_only)");
}

inline bool needs_checkpoint(Mode m)
{
    return m == Mode::Transfer || m == Mode::FineTune || m == Mode::TimeAligned || m == Mode::POnly ||
           m == Mode::ROnly;
}

struct RunSpec {
    EnvSpec env;
    AgentConfig agent;
    Mode mode = Mode::Single;
    std::size_t total_steps = 20000;
    std::size_t eval_every = 1000;
    std::size_t eval_episodes = 20;
    std::uint64_t seed = 0;
    // Source output directory, or a single checkpoint file for the mode.
    std::string in_ckpt;
    // Empty: nothing is written.
    std::string out_dir;
    bool record_wallclock = false;
    // Every traj_every-th source episode is stored for the time-aligned baseline.
    std::size_t traj_every = 10;
    std::size_t align_epochs = 1000, align_batch = 256;

    void validate() const
    {
        env.validate();
        agent.validate();
        if (total_steps < 1) throw std::invalid_argument("run.total_steps must be >= 1");
        if (eval_every < 1) throw std::invalid_argument("run.eval_every must be >= 1");
        if (eval_episodes < 1) throw std::invalid_argument("run.eval_episodes must be >= 1");
        if (needs_checkpoint(mode) && in_ckpt.empty())
            throw std::invalid_argument(std::string("io.in_ckpt is required for run.baseline=") + mode_name(mode));
        if (!needs_checkpoint(mode) && !in_ckpt.empty())
            throw std::invalid_argument(std::string("io.in_ckpt is not used by run.baseline=") + mode_name(mode));
        if (traj_every < 1) throw std::invalid_argument("run.traj_every must be >= 1");
        if (align_epochs < 1 || align_batch < 1) throw std::invalid_argument("align epochs and batch must be >= 1");
    }
};

struct RunResult {
    std::vector<MetricsRow> rows;
    double auc = 0.0;
    std::size_t episodes = 0;
    EncoderQNet net;
    std::optional<LatentModel> model;
    std::optional<nn::Network> stable_encoder;
    std::vector<double> align_losses;  // time-aligned pretraining, epoch means
    std::vector<std::string> files;    // written outputs
};

// FNV-1a over the raw bytes of the weights.
inline std::uint64_t weights_hash(const std::vector<Tensor>& ts)
{
    std::uint64_t h = 1469598103934665603ULL;
    for (const auto& t : ts)
        for (double v : t.data) {
            unsigned char b[sizeof(double)];
            std::memcpy(b, &v, sizeof b);
            for (unsigned char c : b) {
                h ^= c;
                h *= 1099511628211ULL;
            }
        }
    return h;
}

inline std::vector<std::uint64_t> eval_seeds(std::uint64_t run_seed, std::size_t n)
{
    Rng r(derive_seed(run_seed, agent::kEval));
    std::vector<std::uint64_t> s(n);
    for (auto& x : s) x = r.next_u64();
    return s;
}

// Greedy return of each episode, one per reset seed.
inline std::vector<double> evaluate_greedy(const EncoderQNet& net, envs::Environment& env,
                                           std::span<const std::uint64_t> seeds)
{
    std::vector<double> out;
    for (auto s : seeds) {
        auto obs = env.reset(s);
        double ret = 0.0;
        while (!env.done()) {
            auto tr = env.step(agent::greedy(net, obs));
            ret += tr.reward;
            obs = std::move(tr.next_obs);
        }
        out.push_back(ret);
    }
    return out;
}

inline std::pair<double, double> mean_std(const std::vector<double>& v)
{
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return {m, std::sqrt(s / static_cast<double>(v.size()))};
}

// Model phase of the source step: fit P and R to the stable encoder's representations.
inline void update_model(LatentModel& model, nn::Adam& opt, const nn::Network& stable, const Batch& b)
{
    const Tensor zs = stable.predict(b.obs);
    const Tensor zn = stable.predict(b.next_obs);
    Tape tape;
    Var z = tape.constant(Tensor(zs.shape, zs.data));
    Var lp = dynamics::loss_P(model.next(tape, z, b.actions, true), tape.constant(Tensor(zn.shape, zn.data)));
    Var lr = dynamics::loss_R(model.reward(tape, z, b.actions, true), tape.constant(Tensor(b.rewards.shape, b.rewards.data)));
    tape.backward(nn::add(lp, lr));
    opt.step();
}

// One agent step on L_base + lambda (L_P + L_R) with the latent model as a
// constant. The next representation is a stop-gradient target. With
// lambda = 0 or no model this is exactly the base DQN step.
inline agent::StepMetrics update_agent(DqnAgent& ag, const Batch& b, LatentModel* model, bool use_P, bool use_R)
{
    const double lambda = ag.config().lambda;
    auto& net = ag.net();
    Tape tape;
    const auto td = agent::td_loss(tape, net, b, ag.config().gamma, !ag.head_frozen());
    agent::StepMetrics m;
    m.loss_base = tape.value(td.loss)[0];
    Var loss = td.loss;
    if (model != nullptr && lambda > 0.0 && (use_P || use_R)) {
        std::optional<Var> reg;
        if (use_P) {
            const Tensor zn = net.encoder.predict(b.next_obs);
            Var lp = dynamics::loss_P(model->next(tape, td.z, b.actions, false), tape.constant(Tensor(zn.shape, zn.data)));
            m.loss_P = tape.value(lp)[0];
            reg = lp;
        }
        if (use_R) {
            Var lr = dynamics::loss_R(model->reward(tape, td.z, b.actions, false),
                                      tape.constant(Tensor(b.rewards.shape, b.rewards.data)));
            m.loss_R = tape.value(lr)[0];
            reg = reg ? nn::add(*reg, lr) : lr;
        }
        loss = nn::add(loss, nn::scale(*reg, lambda));
    }
    const double norm_err = agent::max_unit_norm_error(tape.value(td.z));
    if (!(norm_err < 1e-9)) throw NumericError("encoder output left the unit sphere (error " + std::to_string(norm_err) + ")");
    tape.backward(loss);
    ag.apply_update();
    return m;
}

struct HeldOutLosses {
    double loss_P, loss_R;
};

// L_P and L_R of (encoder, model) on n fresh transitions collected with the
// agent's final exploration rate.
inline HeldOutLosses heldout_losses(const EncoderQNet& net, const LatentModel& model, envs::Environment& env,
                                    std::size_t n, std::uint64_t seed, double epsilon)
{
    Rng rng(derive_seed(seed, agent::kHeldOut));
    agent::ReplayBuffer buf(n, env.observation_spec());
    auto obs = env.reset(rng.next_u64());
    while (buf.size() < n) {
        auto tr = env.step(agent::act(net, obs, epsilon, rng));
        obs = tr.next_obs;
        const bool done = tr.done;
        buf.add(tr);
        if (done) obs = env.reset(rng.next_u64());
    }
    std::vector<std::size_t> idx(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    const Batch b = buf.gather(idx);
    const Tensor z = net.encoder.predict(b.obs), zn = net.encoder.predict(b.next_obs);
    const Tensor pz = model.predict_next(z, b.actions), pr = model.predict_reward(z, b.actions);
    const std::size_t d = z.row_size();
    double lp = 0.0, lr = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) lp += (pz[i * d + j] - zn[i * d + j]) * (pz[i * d + j] - zn[i * d + j]);
        lr += (pr[i] - b.rewards[i]) * (pr[i] - b.rewards[i]);
    }
    return {lp / static_cast<double>(n), lr / static_cast<double>(n)};
}

namespace detail {

inline std::filesystem::path resolve_input(const std::string& in, const char* file)
{
    const std::filesystem::path p(in);
    if (std::filesystem::is_directory(p)) return p / file;
    return p;
}

// Phase 1 of the time-aligned baseline: replay each stored action sequence
// from its matched reset seed and regress the target encoder onto the stored
// source representations.
inline std::vector<double> pretrain_aligned(DqnAgent& ag, envs::Environment& env, const std::vector<Trajectory>& trajs,
                                            const RunSpec& spec)
{
    const std::size_t d = ag.config().encoding_dim;
    std::vector<std::vector<double>> xs, ys;
    for (const auto& t : trajs) {
        auto obs = env.reset(t.reset_seed);
        for (std::size_t s = 0; s < t.actions.size(); ++s) {
            if (t.reps[s].size() != d)
                throw ShapeError("stored representation width " + std::to_string(t.reps[s].size()) +
                                 " does not match agent.encoding_dim " + std::to_string(d));
            if (env.done()) throw StateError("stored trajectory outlives the target episode");
            xs.push_back(obs.values);
            ys.push_back(t.reps[s]);
            obs = env.step(t.actions[s]).next_obs;
        }
    }
    if (xs.empty()) throw StateError("time-aligned: stored trajectories are empty");
    nn::Network enc = ag.net().encoder;
    nn::Adam opt(enc.param_ptrs(), nn::AdamConfig{ag.config().lr});
    Rng rng(derive_seed(spec.seed, agent::kAlign));
    const auto obs_shape = env.observation_spec().shape();
    const std::size_t N = xs.size(), osz = xs[0].size();
    std::vector<std::size_t> order(N);
    std::vector<double> curve;
    for (std::size_t e = 0; e < spec.align_epochs; ++e) {
        for (std::size_t i = 0; i < N; ++i) order[i] = i;
        for (std::size_t i = N; i > 1; --i) std::swap(order[i - 1], order[rng.index(i)]);
        double total = 0.0;
        for (std::size_t start = 0; start < N; start += spec.align_batch) {
            const std::size_t n = std::min(spec.align_batch, N - start);
            nn::Shape xsh{n};
            xsh.insert(xsh.end(), obs_shape.begin(), obs_shape.end());
            Tensor x(xsh), y({n, d});
            for (std::size_t k = 0; k < n; ++k) {
                std::copy(xs[order[start + k]].begin(), xs[order[start + k]].end(), x.data.begin() + static_cast<std::ptrdiff_t>(k * osz));
                std::copy(ys[order[start + k]].begin(), ys[order[start + k]].end(), y.data.begin() + static_cast<std::ptrdiff_t>(k * d));
            }
            Tape tape;
            Var z = enc.forward(tape, tape.constant(std::move(x)));
            Var loss = nn::mean_row_sq_norm(nn::sub(z, tape.constant(std::move(y))));
            total += tape.value(loss)[0] * static_cast<double>(n);
            tape.backward(loss);
            opt.step();
        }
        curve.push_back(total / static_cast<double>(N));
    }
    ag.load_encoder(std::move(enc));
    return curve;
}

struct Recording {
    std::uint64_t reset_seed;
    std::vector<std::size_t> actions;
    std::vector<std::vector<double>> obs;
};

}  // namespace detail

// Runs one training procedure end to end. Source runs execute the two-phase
// step with a learned latent model and emit the checkpoints the target modes
// consume; target modes load them from spec.in_ckpt.
inline RunResult run(const RunSpec& spec)
{
    spec.validate();
    const auto t0 = std::chrono::steady_clock::now();
    auto env = make_env(spec.env);
    auto eval_env = env->clone();
    const auto obs_spec = env->observation_spec();
    const std::size_t A = env->num_actions();
    const AgentConfig& cfg = spec.agent;
    const std::size_t d = cfg.encoding_dim;

    DqnAgent ag(obs_spec, A, cfg, spec.seed, spec.mode == Mode::FineTune);
    RunResult res;

    std::optional<LatentModel> model;
    std::optional<nn::Adam> model_opt;
    std::optional<dynamics::StableEncoder> stable;
    bool use_P = true, use_R = true;
    std::vector<std::function<void()>> frozen_checks;

    switch (spec.mode) {
    case Mode::Source:
    case Mode::Auxiliary: {
        Rng init(derive_seed(spec.seed, agent::kModelInit));
        model.emplace(d, A, init);
        model_opt.emplace(model->param_ptrs(), nn::AdamConfig{cfg.lr});
        stable.emplace(ag.net().encoder, cfg.stable_period);
        break;
    }
    case Mode::Transfer:
    case Mode::POnly:
    case Mode::ROnly: {
        model = ckpt::load_latent(detail::resolve_input(spec.in_ckpt, "latent.ckpt.json").string(), d, A);
        use_P = spec.mode != Mode::ROnly;
        use_R = spec.mode != Mode::POnly;
        const auto h = weights_hash(model->snapshot());
        frozen_checks.push_back([&model, h] {
            if (weights_hash(model->snapshot()) != h) throw StateError("transferred latent model changed during training");
        });
        break;
    }
    case Mode::FineTune: {
        auto src = agent::load_policy(detail::resolve_input(spec.in_ckpt, "policy.ckpt.json").string());
        if (src.head.spec() != ag.net().head.spec())
            throw ShapeError("source Q head does not fit this agent (encoding_dim, hidden or action count differ)");
        ag.load_head(src.head);
        const auto h = weights_hash(ag.net().head.params());
        frozen_checks.push_back([&ag, h] {
            if (weights_hash(ag.net().head.params()) != h) throw StateError("frozen Q head changed during training");
        });
        break;
    }
    case Mode::TimeAligned: {
        const std::filesystem::path dir = std::filesystem::path(spec.in_ckpt) / "trajectories";
        auto trajs = read_trajectory_dir(std::filesystem::is_directory(dir) ? dir : std::filesystem::path(spec.in_ckpt));
        auto pre_env = env->clone();
        res.align_losses = detail::pretrain_aligned(ag, *pre_env, trajs, spec);
        break;
    }
    case Mode::Single: break;
    }
    const bool regularized = model.has_value() && cfg.lambda > 0.0;

    agent::ReplayBuffer buffer(cfg.replay_capacity, obs_spec);
    Rng replay_rng(derive_seed(spec.seed, agent::kReplay));
    Rng env_rng(derive_seed(spec.seed, agent::kEnv));
    const auto eseeds = eval_seeds(spec.seed, spec.eval_episodes);

    std::vector<detail::Recording> recordings;
    std::size_t episode = 0;
    auto start_episode = [&] {
        const std::uint64_t s = env_rng.next_u64();
        if (spec.mode == Mode::Source && episode % spec.traj_every == 0) recordings.push_back({s, {}, {}});
        return env->reset(s);
    };
    auto obs = start_episode();
    bool recording = spec.mode == Mode::Source;

    double sum_base = 0, sum_P = 0, sum_R = 0;
    std::size_t n_upd = 0, n_P = 0, n_R = 0;
    for (std::size_t t = 0; t < spec.total_steps; ++t) {
        const double eps = cfg.epsilon(t);
        const std::size_t a = ag.act(obs, eps);
        if (recording) {
            recordings.back().actions.push_back(a);
            recordings.back().obs.push_back(obs.values);
        }
        auto tr = env->step(a);
        const bool done = tr.done;
        obs = tr.next_obs;
        buffer.add(tr);
        if (done) {
            ++episode;
            obs = start_episode();
            recording = spec.mode == Mode::Source && (episode % spec.traj_every == 0);
        }

        if (buffer.size() >= cfg.batch_size) {
            const Batch b = buffer.sample(cfg.batch_size, replay_rng);
            // Auxiliary with lambda = 0 is plain Single; its model stays at init.
            if (model_opt && (spec.mode == Mode::Source || regularized)) update_model(*model, *model_opt, stable->network(), b);
            const auto m = update_agent(ag, b, regularized ? &*model : nullptr, use_P, use_R);
            if (stable) stable->refresh(ag.net().encoder, ag.updates());
            sum_base += m.loss_base;
            ++n_upd;
            if (!std::isnan(m.loss_P)) sum_P += m.loss_P, ++n_P;
            if (!std::isnan(m.loss_R)) sum_R += m.loss_R, ++n_R;
        }

        const std::size_t step = t + 1;
        if (step % spec.eval_every == 0 || step == spec.total_steps) {
            for (auto& check : frozen_checks) check();
            const auto rets = evaluate_greedy(ag.net(), *eval_env, eseeds);
            auto [mean, sd] = mean_std(rets);
            MetricsRow row;
            row.step = step;
            row.episode = episode;
            row.eval_return_mean = mean;
            row.eval_return_std = sd;
            if (n_upd) row.loss_base = sum_base / static_cast<double>(n_upd);
            if (n_P) row.loss_P = sum_P / static_cast<double>(n_P);
            if (n_R) row.loss_R = sum_R / static_cast<double>(n_R);
            row.epsilon = eps;
            if (spec.record_wallclock)
                row.wallclock_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            res.rows.push_back(row);
            sum_base = sum_P = sum_R = 0;
            n_upd = n_P = n_R = 0;
        }
    }
    // The episode in progress at the end is incomplete.
    if (recording && !recordings.empty()) recordings.pop_back();
    res.auc = harness::auc(res.rows);
    res.episodes = episode;
    res.net = ag.net();
    res.model = model;
    if (stable) res.stable_encoder = stable->network();

    if (!spec.out_dir.empty()) {
        const std::filesystem::path out(spec.out_dir);
        std::filesystem::create_directories(out);
        auto note = [&](const std::filesystem::path& p) { res.files.push_back(p.string()); };
        harness::write_metrics((out / "metrics.csv").string(), res.rows);
        note(out / "metrics.csv");
        agent::save_policy(ag.net(), (out / "policy.ckpt.json").string());
        note(out / "policy.ckpt.json");
        if (spec.mode == Mode::Source || spec.mode == Mode::Auxiliary) {
            ckpt::save_latent(*model, (out / "latent.ckpt.json").string());
            note(out / "latent.ckpt.json");
            ckpt::save_network(stable->network(), "stable_encoder", d, A, (out / "stable_encoder.ckpt.json").string());
            note(out / "stable_encoder.ckpt.json");
        }
        if (spec.mode == Mode::Source) {
            const auto tdir = out / "trajectories";
            std::filesystem::remove_all(tdir);
            for (const auto& r : recordings) {
                if (r.actions.empty()) continue;
                nn::Shape sh{r.obs.size()};
                for (auto s : obs_spec.shape()) sh.push_back(s);
                Tensor x(sh);
                for (std::size_t i = 0; i < r.obs.size(); ++i)
                    std::copy(r.obs[i].begin(), r.obs[i].end(), x.data.begin() + static_cast<std::ptrdiff_t>(i * r.obs[i].size()));
                const Tensor z = ag.net().encoder.predict(x);
                Trajectory tj{r.reset_seed, r.actions, {}};
                for (std::size_t i = 0; i < r.obs.size(); ++i)
                    tj.reps.emplace_back(z.data.begin() + static_cast<std::ptrdiff_t>(i * d),
                                         z.data.begin() + static_cast<std::ptrdiff_t>((i + 1) * d));
                write_trajectory(tdir, tj);
            }
            note(tdir);
        }
    }
    return res;
}

}  // namespace obstransfer::transfer
