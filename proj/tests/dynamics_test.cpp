#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "obstransfer/dynamics/checkpoint.hpp"
#include "obstransfer/nn/gradcheck.hpp"

using namespace obstransfer;
using namespace obstransfer::dynamics;
using nn::Network;
using nn::NetworkSpec;

namespace {

LatentModel fixed_model(std::vector<double> pw, std::vector<double> pb, std::vector<double> rw, double rb)
{
    const std::size_t d = pb.size();
    return LatentModel({Tensor({d, d}, pw)}, {Tensor({d}, pb)}, {Tensor({1, d}, rw)}, {Tensor({1}, {rb})});
}

std::string temp_path(const std::string& name)
{
    return (std::filesystem::temp_directory_path() / ("obstransfer_" + name)).string();
}

NetworkSpec encoder_spec(std::size_t in, std::size_t d)
{
    return {{in}, {nn::Dense{in, 8, nn::Activation::ReLU}, nn::Dense{8, d, nn::Activation::Linear}, nn::UnitNormalize{}}};
}

}  // namespace

TEST(PredictNext, IdentityAndPermutation)
{
    std::vector<std::size_t> acts{0};
    auto id = fixed_model({1, 0, 0, 1}, {0, 0}, {0, 0}, 0);
    EXPECT_EQ(id.predict_next(Tensor({1, 2}, {0.3, -0.7}), acts).data, (std::vector<double>{0.3, -0.7}));
    auto swap = fixed_model({0, 1, 1, 0}, {0, 0}, {0, 0}, 0);
    EXPECT_EQ(swap.predict_next(Tensor({1, 2}, {1, 2}), acts).data, (std::vector<double>{2, 1}));
}

TEST(PredictNext, BatchEqualsStackedRows)
{
    Rng rng(3);
    LatentModel m(5, 3, rng);
    const Tensor z = nn::random_tensor({7, 5}, rng);
    std::vector<std::size_t> acts{0, 2, 1, 1, 0, 2, 2};
    const Tensor batch = m.predict_next(z, acts);
    const Tensor rbatch = m.predict_reward(z, acts);
    for (std::size_t i = 0; i < 7; ++i) {
        // Loop oracle straight from the stored weights.
        const auto& w = m.transition_weights()[acts[i]];
        const auto& b = m.transition_biases()[acts[i]];
        for (std::size_t r = 0; r < 5; ++r) {
            double s = b[r];
            for (std::size_t c = 0; c < 5; ++c) s += w[r * 5 + c] * z[i * 5 + c];
            EXPECT_NEAR(batch[i * 5 + r], s, 1e-14);
        }
        const Tensor row = m.predict_next(Tensor({1, 5}, std::vector<double>(z.data.begin() + i * 5, z.data.begin() + i * 5 + 5)),
                                          std::vector<std::size_t>{acts[i]});
        for (std::size_t r = 0; r < 5; ++r) EXPECT_EQ(row[r], batch[i * 5 + r]);
        double rs = m.reward_biases()[acts[i]][0];
        for (std::size_t c = 0; c < 5; ++c) rs += m.reward_weights()[acts[i]][c] * z[i * 5 + c];
        EXPECT_NEAR(rbatch[i], rs, 1e-14);
    }
}

TEST(PredictNext, DimMismatch)
{
    Rng rng(1);
    LatentModel m(4, 2, rng);
    EXPECT_THROW(m.predict_next(Tensor({1, 3}, 0.0), std::vector<std::size_t>{0}), ShapeError);
    EXPECT_THROW(m.predict_reward(Tensor({2, 4}, 0.0), std::vector<std::size_t>{0}), ShapeError);
    EXPECT_THROW(m.predict_next(Tensor({1, 4}, 0.0), std::vector<std::size_t>{2}), std::out_of_range);
}

TEST(PredictReward, Examples)
{
    std::vector<std::size_t> acts{0, 0};
    auto constant = fixed_model({0, 0, 0, 0}, {0, 0}, {0, 0}, 0.7);
    EXPECT_EQ(constant.predict_reward(Tensor({2, 2}, {0.1, 0.2, -3, 4}), acts).data, (std::vector<double>{0.7, 0.7}));
    auto diff = fixed_model({0, 0, 0, 0}, {0, 0}, {1, -1}, 0);
    EXPECT_NEAR(diff.predict_reward(Tensor({1, 2}, {0.6, 0.8}), std::vector<std::size_t>{0})[0], -0.2, 1e-15);
}

TEST(Losses, Examples)
{
    nn::Tape t;
    auto c = [&](nn::Shape s, std::vector<double> v) { return t.constant(Tensor(std::move(s), std::move(v))); };
    EXPECT_EQ(t.value(loss_P(c({2, 2}, {1, 2, 3, 4}), c({2, 2}, {1, 2, 3, 4})))[0], 0.0);
    EXPECT_EQ(t.value(loss_P(c({1, 2}, {1, 0}), c({1, 2}, {0, 0})))[0], 1.0);
    EXPECT_EQ(t.value(loss_R(c({2}, {1, 0}), c({2}, {0, 0})))[0], 0.5);
    EXPECT_EQ(t.value(loss_R(c({2}, {0.3, 0.1}), c({2}, {0.3, 0.1})))[0], 0.0);
    EXPECT_THROW(loss_P(c({0, 2}, {}), c({0, 2}, {})), ShapeError);
}

TEST(Losses, LossREqualsMse)
{
    Rng rng(4);
    for (int i = 0; i < 10; ++i) {
        nn::Tape t;
        const Tensor a = nn::random_tensor({6}, rng), b = nn::random_tensor({6}, rng);
        double oracle = 0;
        for (std::size_t k = 0; k < 6; ++k) oracle += (a[k] - b[k]) * (a[k] - b[k]) / 6.0;
        EXPECT_NEAR(t.value(loss_R(t.constant(a), t.constant(b)))[0], oracle, 1e-15);
    }
}

TEST(Losses, NextObservationBranchCarriesNoGradient)
{
    // loss_P(P(phi(o)), phi(o')) with phi shared: the total encoder gradient
    // must equal the gradient through the phi(o) branch alone, which we get by
    // feeding phi(o') as a precomputed constant.
    Rng rng(12);
    for (int draw = 0; draw < 5; ++draw) {
        Network enc(encoder_spec(3, 4), rng);
        LatentModel m(4, 2, rng);
        const Tensor o = nn::random_tensor({5, 3}, rng), o2 = nn::random_tensor({5, 3}, rng);
        std::vector<std::size_t> acts{0, 1, 1, 0, 1};

        auto grads = [&](bool shared) {
            Network e = enc;
            LatentModel lm = m;
            nn::Tape t;
            Var z = e.forward(t, t.constant(o));
            Var target = shared ? e.forward(t, t.constant(o2)) : t.constant(e.predict(o2));
            t.backward(loss_P(lm.next(t, z, acts, false), target));
            std::vector<double> g;
            for (auto& p : e.params()) g.insert(g.end(), p.grad->begin(), p.grad->end());
            return g;
        };
        const auto a = grads(true), b = grads(false);
        ASSERT_EQ(a.size(), b.size());
        for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]) << i << " " << a[i] - b[i];
    }
}

TEST(Losses, GradientsMatchFiniteDifferences)
{
    Rng rng(21);
    for (int draw = 0; draw < 20; ++draw) {
        const std::size_t d = 3;
        std::vector<std::size_t> acts{0, 1, 1, 0};
        // The target is a constant: finite differences cannot see stop_gradient.
        const Tensor target = nn::random_tensor({4, d}, rng);
        std::vector<Tensor> leaves{nn::random_tensor({4, d}, rng)};
        for (int a = 0; a < 2; ++a) {
            leaves.push_back(nn::random_tensor({d, d}, rng));
            leaves.push_back(nn::random_tensor({d}, rng));
        }
        auto rP = nn::gradient_check(leaves, [&](nn::Tape& t, std::span<const Var> v) {
            std::vector<Var> w{v[1], v[3]}, b{v[2], v[4]};
            return loss_P(nn::action_affine(v[0], w, b, acts), t.constant(Tensor(target.shape, target.data)));
        });
        EXPECT_LT(rP.max_rel_error, 1e-5);

        std::vector<Tensor> rl{nn::random_tensor({4, d}, rng), nn::random_tensor({4}, rng), nn::random_tensor({1, d}, rng),
                               nn::random_tensor({1}, rng), nn::random_tensor({1, d}, rng), nn::random_tensor({1}, rng)};
        auto rR = nn::gradient_check(rl, [&](nn::Tape&, std::span<const Var> v) {
            std::vector<Var> w{v[2], v[4]}, b{v[3], v[5]};
            return loss_R(nn::reshape(nn::action_affine(v[0], w, b, acts), {4}), v[1]);
        });
        EXPECT_LT(rR.max_rel_error, 1e-5);
    }
}

TEST(LatentModel, BiasCanBeDisabled)
{
    Rng rng(2);
    LatentModel m(3, 2, rng, false);
    EXPECT_EQ(m.param_ptrs().size(), 4u);
    nn::Tape t;
    Var z = t.constant(nn::random_tensor({2, 3}, rng));
    std::vector<std::size_t> acts{0, 1};
    t.backward(nn::add(nn::sum(m.next(t, z, acts)), nn::sum(m.reward(t, z, acts))));
    for (const auto& b : m.transition_biases()) EXPECT_FALSE(b.grad.has_value());
    EXPECT_THROW(LatentModel({Tensor({1, 1}, {1.0})}, {Tensor({1}, {0.5})}, {Tensor({1, 1}, {1.0})}, {Tensor({1}, {0.0})},
                             false),
                 std::invalid_argument);
}

TEST(StableEncoder, RefreshOnMultiplesOfPeriod)
{
    Rng rng(5);
    Network live(encoder_spec(3, 2), rng);
    StableEncoder stable(live, 10);
    live.params()[0].data[0] += 1.0;
    EXPECT_FALSE(stable.refresh(live, 11));
    EXPECT_FALSE(nn::bitwise_equal(stable.network().params(), live.params()));
    EXPECT_TRUE(stable.refresh(live, 10));
    EXPECT_TRUE(nn::bitwise_equal(stable.network().params(), live.params()));
    live.params()[0].data[0] += 1.0;  // deep copy: stable unaffected
    EXPECT_FALSE(nn::bitwise_equal(stable.network().params(), live.params()));
    EXPECT_THROW(StableEncoder(live, 0), std::invalid_argument);
}

TEST(StableEncoder, StalenessInvariant)
{
    // At every t the stable weights equal the live weights as of m * floor(t / m).
    Rng rng(6);
    Network live(encoder_spec(2, 2), rng);
    StableEncoder stable(live, 4);
    std::vector<std::vector<Tensor>> history;
    for (std::size_t t = 0; t < 30; ++t) {
        live.params()[1].data[0] = static_cast<double>(t);
        history.push_back(live.params());
        stable.refresh(live, t);
        EXPECT_TRUE(nn::bitwise_equal(stable.network().params(), history[4 * (t / 4)])) << t;
    }
}

TEST(Checkpoint, Base64RoundTrip)
{
    for (std::string s : {"", "f", "fo", "foo", "foob", "fooba", "foobar"}) {
        EXPECT_EQ(ckpt::detail::base64_decode(ckpt::detail::base64_encode(s)), s);
    }
    EXPECT_EQ(ckpt::detail::base64_encode("foobar"), "Zm9vYmFy");
    EXPECT_EQ(ckpt::detail::base64_encode("fo"), "Zm8=");
    EXPECT_THROW(ckpt::detail::base64_decode("Zm9"), ckpt::CheckpointError);
    EXPECT_THROW(ckpt::detail::base64_decode("Zm!="), ckpt::CheckpointError);
}

TEST(Checkpoint, LatentRoundTripIsBitExact)
{
    Rng rng(8);
    LatentModel m(16, 2, rng);
    // Awkward values survive too.
    const_cast<Tensor&>(m.transition_weights()[0]).data[3] = 0.1 + 0.2;
    const_cast<Tensor&>(m.reward_biases()[1]).data[0] = -0.0;
    const auto path = temp_path("latent.ckpt.json");
    ckpt::save_latent(m, path);
    const auto back = ckpt::load_latent(path, 16, 2);
    EXPECT_TRUE(nn::bitwise_equal(back.snapshot(), m.snapshot()));
    EXPECT_THROW(ckpt::load_latent(path, 8, 2), ckpt::CheckpointError);
    EXPECT_THROW(ckpt::load_latent(path, 16, 4), ckpt::CheckpointError);

    // 2 * (16*16 + 16) transition floats, 2 * (16 + 1) reward floats.
    const auto j = ckpt::read_file(path);
    std::size_t pf = 0, rf = 0;
    for (const char* k : {"transition_weights", "transition_biases"})
        for (const auto& a : j[k]) pf += ckpt::tensor_from_json(a).size();
    for (const char* k : {"reward_weights", "reward_biases"})
        for (const auto& a : j[k]) rf += ckpt::tensor_from_json(a).size();
    EXPECT_EQ(pf, 2u * (16 * 16 + 16));
    EXPECT_EQ(rf, 2u * (16 + 1));
    EXPECT_EQ(j["version"], 1);
    EXPECT_EQ(j["encoding_dim"], 16);
    EXPECT_EQ(j["num_actions"], 2);
    std::filesystem::remove(path);
}

TEST(Checkpoint, NetworkRoundTripIsBitExact)
{
    Rng rng(9);
    NetworkSpec spec{{3, 8, 8},
                     {nn::Conv2d{3, 4, 3, 1, nn::Activation::ReLU}, nn::Flatten{}, nn::Dense{144, 5, nn::Activation::Tanh},
                      nn::UnitNormalize{}}};
    Network net(spec, rng);
    const auto path = temp_path("net.ckpt.json");
    ckpt::save_network(net, "encoder", 5, 4, path);
    const auto back = ckpt::load_network(path, "encoder");
    EXPECT_EQ(back.spec(), spec);
    EXPECT_TRUE(nn::bitwise_equal(back.params(), net.params()));
    EXPECT_THROW(ckpt::load_network(path, "latent_model"), ckpt::CheckpointError);
    std::filesystem::remove(path);
}

TEST(Checkpoint, CorruptAndVersionErrors)
{
    Rng rng(10);
    LatentModel m(2, 1, rng);
    auto j = ckpt::latent_to_json(m);

    auto bad_version = j;
    bad_version["version"] = 2;
    EXPECT_THROW(ckpt::latent_from_json(bad_version), ckpt::CheckpointError);

    auto truncated = j;
    truncated["transition_weights"][0]["data"] = "AAAAAAAAAAA=";
    EXPECT_THROW(ckpt::latent_from_json(truncated), ckpt::CheckpointError);

    auto missing = j;
    missing.erase("reward_biases");
    EXPECT_THROW(ckpt::latent_from_json(missing), ckpt::CheckpointError);

    const auto path = temp_path("garbage.ckpt.json");
    {
        std::ofstream f(path);
        f << "{ not json";
    }
    EXPECT_THROW(ckpt::read_file(path), ckpt::CheckpointError);
    std::filesystem::remove(path);
    EXPECT_THROW(ckpt::read_file("/nonexistent/x.ckpt.json"), ckpt::CheckpointError);
}
