#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <unistd.h>

#include "obstransfer/transfer/runner.hpp"

using namespace obstransfer;
using namespace obstransfer::transfer;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name)
{
    const auto p = fs::temp_directory_path() / ("obstransfer_transfer_" + std::to_string(::getpid())) / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

RunSpec small(Mode mode, const std::string& face = "vector", std::uint64_t seed = 3)
{
    RunSpec s;
    s.env.face = face;
    s.mode = mode;
    s.total_steps = 300;
    s.eval_every = 100;
    s.eval_episodes = 3;
    s.seed = seed;
    s.traj_every = 2;
    s.align_epochs = 5;
    s.align_batch = 16;
    return s;
}

// Source checkpoints shared by the target-mode tests.
const fs::path& source_dir()
{
    static const fs::path dir = [] {
        auto d = scratch("source");
        RunSpec s = small(Mode::Source);
        s.out_dir = d.string();
        run(s);
        return d;
    }();
    return dir;
}

RunSpec target(Mode mode, const std::string& face = "pixel")
{
    RunSpec s = small(mode, face);
    s.in_ckpt = source_dir().string();
    return s;
}

}  // namespace

TEST(RunSpec, CheckpointRequirements)
{
    RunSpec s = small(Mode::Transfer);
    EXPECT_THROW(s.validate(), std::invalid_argument);
    s.in_ckpt = "somewhere";
    EXPECT_NO_THROW(s.validate());
    for (Mode m : {Mode::Single, Mode::Auxiliary, Mode::Source}) {
        RunSpec t = small(m);
        t.in_ckpt = "somewhere";
        EXPECT_THROW(t.validate(), std::invalid_argument) << mode_name(m);
    }
    for (Mode m : {Mode::FineTune, Mode::TimeAligned, Mode::POnly, Mode::ROnly}) {
        EXPECT_THROW(small(m).validate(), std::invalid_argument) << mode_name(m);
        EXPECT_EQ(parse_mode(mode_name(m)), m);
    }
    EXPECT_THROW(parse_mode("transfr"), std::invalid_argument);
}

TEST(Source, EmitsCheckpointsAndTrajectories)
{
    const auto& d = source_dir();
    for (const char* f : {"metrics.csv", "policy.ckpt.json", "latent.ckpt.json", "stable_encoder.ckpt.json"})
        EXPECT_TRUE(fs::exists(d / f)) << f;
    const auto trajs = read_trajectory_dir(d / "trajectories");
    EXPECT_FALSE(trajs.empty());
    const auto rows = harness::read_metrics((d / "metrics.csv").string());
    ASSERT_EQ(rows.size(), 3u);
    EXPECT_TRUE(rows.back().loss_P && rows.back().loss_R);
}

TEST(Source, LambdaZeroIsBitwiseSingle)
{
    RunSpec a = small(Mode::Source), b = small(Mode::Single);
    a.agent.lambda = b.agent.lambda = 0.0;
    const auto ra = run(a), rb = run(b);
    ASSERT_EQ(ra.rows.size(), rb.rows.size());
    for (std::size_t i = 0; i < ra.rows.size(); ++i) {
        EXPECT_EQ(ra.rows[i].eval_return_mean, rb.rows[i].eval_return_mean);
        EXPECT_EQ(ra.rows[i].loss_base, rb.rows[i].loss_base);
        EXPECT_FALSE(ra.rows[i].loss_P.has_value());
    }
    EXPECT_EQ(weights_hash(ra.net.encoder.params()), weights_hash(rb.net.encoder.params()));
    EXPECT_EQ(weights_hash(ra.net.head.params()), weights_hash(rb.net.head.params()));
    // The model is still fitted to the stable encoder, it just does not feed back.
    ASSERT_TRUE(ra.model);
}

TEST(Transfer, LatentModelStaysFrozen)
{
    const auto loaded = ckpt::load_latent((source_dir() / "latent.ckpt.json").string(), 16, 4);
    const auto r = run(target(Mode::Transfer));
    ASSERT_TRUE(r.model);
    const auto a = loaded.snapshot(), b = r.model->snapshot();
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i].data, b[i].data);
    EXPECT_TRUE(r.rows.back().loss_P && r.rows.back().loss_R);
}

TEST(Transfer, DimensionMismatchFailsAtStartup)
{
    auto d = scratch("src_d8");
    RunSpec s = small(Mode::Source);
    s.agent.encoding_dim = 8;
    s.total_steps = 40;
    s.eval_every = 40;
    s.out_dir = d.string();
    run(s);
    RunSpec t = small(Mode::Transfer, "pixel");
    t.in_ckpt = d.string();
    try {
        run(t);
        FAIL() << "expected a checkpoint error";
    } catch (const ckpt::CheckpointError& e) {
        EXPECT_NE(std::string(e.what()).find("encoding_dim 8"), std::string::npos) << e.what();
    }
}

TEST(Transfer, LambdaZeroIsBitwiseSingle)
{
    RunSpec t = target(Mode::Transfer), s = small(Mode::Single, "pixel");
    t.agent.lambda = s.agent.lambda = 0.0;
    t.total_steps = s.total_steps = 150;
    const auto rt = run(t), rs = run(s);
    EXPECT_EQ(weights_hash(rt.net.encoder.params()), weights_hash(rs.net.encoder.params()));
    EXPECT_EQ(weights_hash(rt.net.head.params()), weights_hash(rs.net.head.params()));
    EXPECT_FALSE(rt.rows.back().loss_P.has_value());
}

TEST(Auxiliary, ModelIsFreshAndTrained)
{
    const auto src = ckpt::load_latent((source_dir() / "latent.ckpt.json").string(), 16, 4);
    RunSpec zero = small(Mode::Auxiliary, "pixel");
    zero.total_steps = 40;  // fewer steps than the batch size: no update happens
    zero.eval_every = 40;
    const auto init = run(zero);
    EXPECT_NE(weights_hash(init.model->snapshot()), weights_hash(src.snapshot()));

    const auto r = run(small(Mode::Auxiliary, "pixel"));
    EXPECT_NE(weights_hash(r.model->snapshot()), weights_hash(init.model->snapshot()));
    EXPECT_TRUE(r.rows.back().loss_P && r.rows.back().loss_R);
}

TEST(Auxiliary, LambdaZeroIsSingle)
{
    RunSpec a = small(Mode::Auxiliary, "pixel"), s = small(Mode::Single, "pixel");
    a.agent.lambda = s.agent.lambda = 0.0;
    a.total_steps = s.total_steps = 150;
    const auto ra = run(a), rs = run(s);
    EXPECT_EQ(weights_hash(ra.net.encoder.params()), weights_hash(rs.net.encoder.params()));
    EXPECT_EQ(weights_hash(ra.net.head.params()), weights_hash(rs.net.head.params()));
}

TEST(FineTune, HeadFrozenEncoderMoves)
{
    const auto src = agent::load_policy((source_dir() / "policy.ckpt.json").string());
    const auto r = run(target(Mode::FineTune));
    EXPECT_EQ(weights_hash(r.net.head.params()), weights_hash(src.head.params()));
    RunSpec fresh = small(Mode::Single, "pixel");
    fresh.total_steps = 1;
    fresh.eval_every = 1;
    fresh.eval_episodes = 1;
    const auto init = run(fresh);  // same seed, so the same initial encoder
    EXPECT_NE(weights_hash(r.net.encoder.params()), weights_hash(init.net.encoder.params()));
    EXPECT_FALSE(r.rows.back().loss_P.has_value());
}

TEST(Ablation, POnlyAndROnlyDropTheOtherLoss)
{
    const auto p = run(target(Mode::POnly));
    EXPECT_TRUE(p.rows.back().loss_P.has_value());
    EXPECT_FALSE(p.rows.back().loss_R.has_value());
    const auto r = run(target(Mode::ROnly));
    EXPECT_FALSE(r.rows.back().loss_P.has_value());
    EXPECT_TRUE(r.rows.back().loss_R.has_value());
}

TEST(Ablation, POnlyGradientIgnoresRewardModel)
{
    // Scrambling R_hat must not change a P-only run at all.
    auto d = scratch("scrambled");
    for (const char* f : {"latent.ckpt.json", "policy.ckpt.json"}) fs::copy_file(source_dir() / f, d / f);
    auto m = ckpt::load_latent((d / "latent.ckpt.json").string(), 16, 4);
    auto r_w = m.reward_weights();
    for (auto& t : r_w)
        for (auto& v : t.data) v = -3.0 * v + 0.25;
    dynamics::LatentModel scrambled(m.transition_weights(), m.transition_biases(), r_w, m.reward_biases(), m.use_bias());
    ckpt::save_latent(scrambled, (d / "latent.ckpt.json").string());

    RunSpec a = target(Mode::POnly), b = target(Mode::POnly);
    b.in_ckpt = d.string();
    a.total_steps = b.total_steps = 150;
    const auto ra = run(a), rb = run(b);
    EXPECT_EQ(weights_hash(ra.net.encoder.params()), weights_hash(rb.net.encoder.params()));
    EXPECT_EQ(harness::format_row(ra.rows.back()), harness::format_row(rb.rows.back()));
}

TEST(TimeAligned, StoresTenPercentAndAlignmentLossFalls)
{
    // Source with the default storage rate: every 10th episode.
    auto d = scratch("source_ta");
    RunSpec s = small(Mode::Source);
    s.traj_every = 10;
    s.total_steps = 3000;
    s.eval_every = 3000;
    s.out_dir = d.string();
    const auto src = run(s);
    const auto trajs = read_trajectory_dir(d / "trajectories");
    EXPECT_EQ(trajs.size(), (src.episodes + 9) / 10);

    RunSpec t = small(Mode::TimeAligned, "pixel");
    t.in_ckpt = d.string();
    t.align_epochs = 30;
    t.align_batch = 64;
    t.total_steps = 50;
    t.eval_every = 50;
    const auto r = run(t);
    ASSERT_EQ(r.align_losses.size(), 30u);
    EXPECT_LT(r.align_losses.back(), r.align_losses.front());
    // Trend: the mean of the last third is below the mean of the first third.
    double first = 0, last = 0;
    for (int i = 0; i < 10; ++i) first += r.align_losses[i], last += r.align_losses[20 + i];
    EXPECT_LT(last, first);
}

TEST(TimeAligned, NoTrajectoriesIsAnError)
{
    auto d = scratch("empty_traj");
    RunSpec t = small(Mode::TimeAligned, "pixel");
    t.in_ckpt = d.string();
    EXPECT_ANY_THROW(run(t));
}

TEST(Determinism, RepeatedRunsAreByteIdentical)
{
    for (Mode m : {Mode::Source, Mode::Transfer}) {
        std::string first;
        for (int k = 0; k < 2; ++k) {
            auto d = scratch(std::string("det_") + mode_name(m) + std::to_string(k));
            RunSpec s = m == Mode::Source ? small(m) : target(m);
            s.out_dir = d.string();
            run(s);
            const auto csv = slurp(d / "metrics.csv");
            ASSERT_FALSE(csv.empty());
            if (k == 0) first = csv;
            else EXPECT_EQ(csv, first) << mode_name(m);
        }
    }
}

TEST(Determinism, WallclockColumnIsOptIn)
{
    RunSpec s = small(Mode::Single);
    s.total_steps = 100;
    EXPECT_FALSE(run(s).rows.back().wallclock_s.has_value());
    s.record_wallclock = true;
    EXPECT_TRUE(run(s).rows.back().wallclock_s.has_value());
}

TEST(Source, HeldOutModelLossesAreSmall)
{
    // Full-length source run on the vector maze.
    RunSpec s = small(Mode::Source, "vector", 1);
    s.total_steps = 20000;
    s.eval_every = 20000;
    const auto r = run(s);
    auto env = make_env(s.env);
    const auto h = heldout_losses(r.net, *r.model, *env, 1000, 1, s.agent.epsilon_end);
    EXPECT_LT(h.loss_P, 0.05);
    EXPECT_LT(h.loss_R, 0.05);
}
