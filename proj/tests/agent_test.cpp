#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <map>

#include "obstransfer/agent/dqn.hpp"
#include "obstransfer/envs/gridmaze.hpp"

using namespace obstransfer;
using namespace obstransfer::agent;

namespace {

envs::ObservationSpec vec_spec(std::size_t dim) { return {envs::VectorSpec{dim}}; }

// Q head of a 1-d encoder whose output is exactly `q` (zero weights, given bias).
EncoderQNet constant_q_net(std::vector<double> q)
{
    Rng rng(1);
    Network enc(make_encoder_spec(vec_spec(2), 4), rng);
    const std::size_t A = q.size();
    NetworkSpec hs = make_head_spec(4, A, 8);
    std::vector<Tensor> p{Tensor({4, 8}), Tensor({8}), Tensor({8, A}), Tensor({A}, q)};
    return EncoderQNet(std::move(enc), Network(hs, std::move(p)));
}

envs::Observation vobs(std::vector<double> v) { return {vec_spec(v.size()), std::move(v)}; }

envs::Transition make_tr(std::vector<double> o, std::size_t a, double r, std::vector<double> o2, bool done)
{
    return {vobs(std::move(o)), a, r, vobs(std::move(o2)), done};
}

// Upper 0.999 quantile of chi-square with k degrees of freedom
// (Wilson-Hilferty).
double chi2_crit(double k)
{
    const double z = 3.0902;
    const double t = 1.0 - 2.0 / (9.0 * k) + z * std::sqrt(2.0 / (9.0 * k));
    return k * t * t * t;
}

}  // namespace

TEST(AgentConfig, Validation)
{
    AgentConfig c;
    EXPECT_NO_THROW(c.validate());
    for (auto mutate : std::vector<std::function<void(AgentConfig&)>>{
             [](AgentConfig& x) { x.gamma = 1.0; }, [](AgentConfig& x) { x.gamma = 0.0; },
             [](AgentConfig& x) { x.lambda = -1.0; }, [](AgentConfig& x) { x.encoding_dim = 0; },
             [](AgentConfig& x) { x.batch_size = 0; }, [](AgentConfig& x) { x.replay_capacity = 4; },
             [](AgentConfig& x) { x.target_update_period = 0; }, [](AgentConfig& x) { x.stable_period = 0; }}) {
        AgentConfig bad;
        mutate(bad);
        EXPECT_THROW(bad.validate(), std::invalid_argument);
    }
}

TEST(AgentConfig, EpsilonScheduleDecaysGeometrically)
{
    AgentConfig c;
    EXPECT_DOUBLE_EQ(c.epsilon(0), 1.0);
    EXPECT_NEAR(c.epsilon(2500), std::sqrt(0.05), 1e-12);
    EXPECT_DOUBLE_EQ(c.epsilon(5000), 0.05);
    EXPECT_DOUBLE_EQ(c.epsilon(100000), 0.05);
    for (std::size_t t = 1; t < 5000; ++t) ASSERT_LT(c.epsilon(t), c.epsilon(t - 1));
}

TEST(Act, FullExplorationIsUniform)
{
    auto net = constant_q_net({0.0, 5.0, 0.0, 0.0});
    Rng rng(7);
    std::vector<double> counts(4, 0.0);
    const int n = 10000;
    for (int i = 0; i < n; ++i) counts[act(net, vobs({0.1, 0.2}), 1.0, rng)] += 1;
    double chi2 = 0.0;
    for (double c : counts) chi2 += (c - n / 4.0) * (c - n / 4.0) / (n / 4.0);
    EXPECT_LT(chi2, chi2_crit(3));
}

TEST(Act, GreedyPicksArgmaxAndBreaksTiesLow)
{
    Rng rng(3);
    EXPECT_EQ(act(constant_q_net({0.1, 0.9}), vobs({0.3, 0.3}), 0.0, rng), 1u);
    EXPECT_EQ(act(constant_q_net({0.5, 0.5}), vobs({0.3, 0.3}), 0.0, rng), 0u);
    EXPECT_EQ(act(constant_q_net({0.2, 0.7, 0.7}), vobs({0.3, 0.3}), 0.0, rng), 1u);
    EXPECT_THROW(act(constant_q_net({0.5, 0.5}), vobs({0.3, 0.3}), 1.5, rng), std::invalid_argument);
}

TEST(TdLoss, TerminalExamples)
{
    ReplayBuffer buf(4, vec_spec(2));
    buf.add(make_tr({0.1, 0.2}, 0, 1.0, {0.3, 0.4}, true));
    const std::vector<std::size_t> idx{0};
    const Batch b = buf.gather(idx);
    for (auto [q, expect] : {std::pair{1.0, 0.0}, {0.0, 1.0}}) {
        auto net = constant_q_net({q, 3.0});
        Tape tape;
        auto td = td_loss(tape, net, b, 0.99);
        EXPECT_DOUBLE_EQ(tape.value(td.loss)[0], expect);
    }
}

TEST(TdLoss, NonTerminalUsesTargetMax)
{
    ReplayBuffer buf(4, vec_spec(2));
    buf.add(make_tr({0.1, 0.2}, 1, 0.5, {0.3, 0.4}, false));
    const std::vector<std::size_t> idx{0};
    const Batch b = buf.gather(idx);
    auto net = constant_q_net({2.0, 1.0});
    // y = 0.5 + 0.9 * 2 = 2.3, Q(o,1) = 1
    Tape tape;
    auto td = td_loss(tape, net, b, 0.9);
    EXPECT_NEAR(tape.value(td.loss)[0], 1.3 * 1.3, 1e-12);
    Batch empty;
    Tape t2;
    EXPECT_THROW(td_loss(t2, net, empty, 0.9), std::invalid_argument);
}

TEST(TdLoss, NoGradientIntoTargetNetwork)
{
    Rng rng(11);
    EncoderQNet net(Network(make_encoder_spec(vec_spec(3), 4), rng), Network(make_head_spec(4, 2, 8), rng));
    ReplayBuffer buf(8, vec_spec(3));
    for (int i = 0; i < 6; ++i)
        buf.add(make_tr({rng.uniform(), rng.uniform(), rng.uniform()}, i % 2, rng.uniform(), {rng.uniform(), rng.uniform(), rng.uniform()}, false));
    const std::vector<std::size_t> idx{0, 1, 2, 3, 4, 5};
    const Batch b = buf.gather(idx);

    auto loss_of = [&](EncoderQNet& n) {
        Tape tape;
        return tape.value(td_loss(tape, n, b, 0.99).loss)[0];
    };
    // Live gradient as recorded by the tape: only live params appear.
    {
        Tape tape;
        auto td = td_loss(tape, net, b, 0.99);
        tape.backward(td.loss);
        for (const auto& p : net.target_encoder.params()) EXPECT_FALSE(p.grad.has_value());
        for (const auto& p : net.target_head.params()) EXPECT_FALSE(p.grad.has_value());
        for (auto* p : net.encoder.param_ptrs()) p->grad.reset();
        for (auto* p : net.head.param_ptrs()) p->grad.reset();
    }
    // Finite differences on the target weights move the loss (the target is
    // used) but the tape assigns them nothing: the bootstrap path is a constant.
    const double base = loss_of(net);
    double sensitivity = 0.0;
    auto& tw = const_cast<Tensor&>(net.target_head.params()[2]);
    for (std::size_t i = 0; i < 4; ++i) {
        const double old = tw.data[i];
        tw.data[i] = old + 1e-5;
        sensitivity = std::max(sensitivity, std::abs(loss_of(net) - base));
        tw.data[i] = old;
    }
    EXPECT_GT(sensitivity, 0.0);
}

TEST(Replay, RingOverwritesOldest)
{
    ReplayBuffer buf(3, vec_spec(1));
    for (int i = 0; i < 5; ++i) buf.add(make_tr({double(i)}, 0, double(i), {double(i)}, false));
    EXPECT_EQ(buf.size(), 3u);
    const std::vector<std::size_t> idx{0, 1, 2};
    const Batch b = buf.gather(idx);
    EXPECT_EQ(b.rewards[0], 3.0);
    EXPECT_EQ(b.rewards[1], 4.0);
    EXPECT_EQ(b.rewards[2], 2.0);
}

TEST(Replay, UnderfullSamplingIsAnError)
{
    ReplayBuffer buf(10, vec_spec(1));
    Rng rng(1);
    buf.add(make_tr({0.0}, 0, 0.0, {0.0}, false));
    EXPECT_THROW(buf.sample(2, rng), StateError);
    EXPECT_NO_THROW(buf.sample(1, rng));
    EXPECT_THROW(buf.add(make_tr({0.0, 1.0}, 0, 0.0, {0.0, 1.0}, false)), ShapeError);
}

TEST(Replay, SamplingIsUniformOverSlots)
{
    const std::size_t C = 20;
    ReplayBuffer buf(C, vec_spec(1));
    for (std::size_t i = 0; i < C; ++i) buf.add(make_tr({double(i)}, 0, double(i), {0.0}, false));
    Rng rng(99);
    std::vector<double> counts(C, 0.0);
    const int draws = 2000;
    for (int i = 0; i < draws; ++i) {
        const Batch b = buf.sample(10, rng);
        for (std::size_t k = 0; k < b.size(); ++k) counts[static_cast<std::size_t>(b.rewards[k])] += 1;
    }
    const double e = draws * 10.0 / C;
    double chi2 = 0.0;
    for (double c : counts) chi2 += (c - e) * (c - e) / e;
    EXPECT_LT(chi2, chi2_crit(C - 1));
}

TEST(Encoder, SpecsMatchFaces)
{
    auto v = make_encoder_spec(vec_spec(4), 16);
    EXPECT_EQ(v.output_shape(), (Shape{16}));
    auto maze = make_encoder_spec({envs::ImageSpec{8, 8, 3, false}}, 16);
    EXPECT_EQ(std::get<nn::Conv2d>(maze.layers[0]).kernel, 3u);
    EXPECT_EQ(std::get<nn::Dense>(maze.layers[4]).in, 128u);
    auto cart = make_encoder_spec({envs::ImageSpec{40, 90, 1, true}}, 16);
    EXPECT_EQ(std::get<nn::Conv2d>(cart.layers[0]).kernel, 5u);
    EXPECT_EQ(std::get<nn::Dense>(cart.layers[4]).in, 32u * 2 * 8);
    EXPECT_THROW(make_encoder_spec({envs::ImageSpec{5, 5, 3, false}}, 16), ShapeError);
    EXPECT_EQ(make_head_spec(16, 4).output_shape(), (Shape{4}));
}

TEST(TrainStep, OverfitsOneTransition)
{
    AgentConfig cfg;
    cfg.batch_size = 1;
    cfg.replay_capacity = 1;
    DqnAgent ag(vec_spec(2), 2, cfg, 5);
    ReplayBuffer buf(1, vec_spec(2));
    buf.add(make_tr({0.2, -0.4}, 1, 0.7, {0.5, 0.1}, true));
    Rng rng(2);
    std::vector<double> losses;
    for (int i = 0; i < 500; ++i) losses.push_back(ag.train_step_base(buf.sample(1, rng)).loss_base);
    EXPECT_LT(losses.back(), 1e-3);
    // Trend: each block of 50 averages below the previous one until converged.
    double prev = 1e300;
    for (int blk = 0; blk < 10; ++blk) {
        double m = 0.0;
        for (int i = 0; i < 50; ++i) m += losses[blk * 50 + i] / 50.0;
        if (prev > 1e-6) {
            EXPECT_LE(m, prev);
        }
        prev = m;
    }
}

TEST(TrainStep, TargetRefreshOnPeriodMultiples)
{
    AgentConfig cfg;
    cfg.batch_size = 1;
    cfg.target_update_period = 4;
    DqnAgent ag(vec_spec(2), 2, cfg, 8);
    ReplayBuffer buf(4, vec_spec(2));
    buf.add(make_tr({0.2, -0.4}, 1, 0.7, {0.5, 0.1}, false));
    Rng rng(2);
    for (std::size_t k = 1; k <= 12; ++k) {
        ag.train_step_base(buf.sample(1, rng));
        const bool synced = nn::bitwise_equal(ag.net().head.params(), ag.net().target_head.params()) &&
                            nn::bitwise_equal(ag.net().encoder.params(), ag.net().target_encoder.params());
        EXPECT_EQ(synced, k % 4 == 0) << "update " << k;
    }
}

TEST(TrainStep, FrozenHeadNeverMoves)
{
    AgentConfig cfg;
    cfg.batch_size = 2;
    DqnAgent ag(vec_spec(2), 2, cfg, 8, /*freeze_head=*/true);
    const auto head0 = ag.net().head.params();
    const auto enc0 = ag.net().encoder.params();
    ReplayBuffer buf(4, vec_spec(2));
    buf.add(make_tr({0.2, -0.4}, 1, 0.7, {0.5, 0.1}, false));
    buf.add(make_tr({0.1, 0.4}, 0, -0.2, {0.5, 0.3}, true));
    Rng rng(2);
    for (int k = 0; k < 20; ++k) ag.train_step_base(buf.sample(2, rng));
    EXPECT_TRUE(nn::bitwise_equal(head0, ag.net().head.params()));
    EXPECT_FALSE(nn::bitwise_equal(enc0, ag.net().encoder.params()));
}

TEST(TrainStep, GridMazeSmokeRunStaysFinite)
{
    envs::GridMazeConfig ec;
    ec.map = envs::parse_maze(envs::default_maze_text());
    envs::GridMaze env(ec);
    AgentConfig cfg;
    DqnAgent ag(env.observation_spec(), env.num_actions(), cfg, 13);
    ReplayBuffer buf(cfg.replay_capacity, env.observation_spec());
    Rng replay_rng(derive_seed(13, kReplay));
    std::uint64_t episode = 0;
    auto obs = env.reset(derive_seed(13, kEnv) + episode);
    for (std::size_t t = 0; t < 10000; ++t) {
        const std::size_t a = ag.act(obs, cfg.epsilon(t));
        auto tr = env.step(a);
        buf.add(tr);
        obs = tr.next_obs;
        if (tr.done) obs = env.reset(derive_seed(13, kEnv) + ++episode);
        if (buf.size() >= cfg.batch_size) {
            const auto m = ag.train_step_base(buf.sample(cfg.batch_size, replay_rng));
            ASSERT_TRUE(std::isfinite(m.loss_base)) << "step " << t;
            if (t % 500 == 0) {
                const Tensor z = ag.net().encoder.predict(buf.sample(cfg.batch_size, replay_rng).obs);
                ASSERT_LT(max_unit_norm_error(z), 1e-12);
            }
        }
    }
    for (const auto& p : ag.net().encoder.params()) EXPECT_TRUE(p.all_finite());
}

TEST(Policy, CheckpointRoundTripIsBitExact)
{
    DqnAgent ag(vec_spec(4), 3, AgentConfig{}, 21);
    const auto path = std::filesystem::temp_directory_path() / "obstransfer_policy_rt.ckpt.json";
    save_policy(ag.net(), path.string());
    const auto back = load_policy(path.string());
    EXPECT_TRUE(nn::bitwise_equal(ag.net().encoder.params(), back.encoder.params()));
    EXPECT_TRUE(nn::bitwise_equal(ag.net().head.params(), back.head.params()));
    EXPECT_EQ(back.encoder.spec(), ag.net().encoder.spec());
    std::filesystem::remove(path);
}

TEST(Agent, SameSeedSameTrajectory)
{
    auto run = [] {
        AgentConfig cfg;
        cfg.batch_size = 4;
        DqnAgent ag(vec_spec(2), 3, cfg, 77);
        ReplayBuffer buf(16, vec_spec(2));
        Rng r(4);
        for (int i = 0; i < 16; ++i)
            buf.add(make_tr({r.uniform(), r.uniform()}, i % 3, r.uniform(), {r.uniform(), r.uniform()}, i % 5 == 0));
        Rng s(derive_seed(77, kReplay));
        for (int k = 0; k < 30; ++k) ag.train_step_base(buf.sample(4, s));
        return ag.net().encoder.params();
    };
    EXPECT_TRUE(nn::bitwise_equal(run(), run()));
}
