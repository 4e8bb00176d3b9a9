#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "obstransfer/envs/broken_sensor.hpp"
#include "obstransfer/envs/cartpole.hpp"
#include "obstransfer/envs/gridmaze.hpp"
#include "obstransfer/envs/validator.hpp"

using namespace obstransfer;
using namespace obstransfer::envs;

namespace {

GridMaze maze(Face face)
{
    GridMazeConfig cfg;
    cfg.face = face;
    return GridMaze(cfg);
}

double channel_sum(const Observation& o, std::size_t c, std::size_t plane)
{
    double s = 0;
    for (std::size_t i = 0; i < plane; ++i) s += o.values[c * plane + i];
    return s;
}

std::unique_ptr<Environment> broken_cartpole()
{
    return std::make_unique<BrokenSensor>(std::make_unique<CartPole>(), std::set<std::size_t>{1, 3}, 2);
}

}  // namespace

TEST(MazeMap, DefaultIsEightByEightAndConnected)
{
    const auto m = default_maze();
    EXPECT_EQ(m.width, 8u);
    EXPECT_EQ(m.height, 8u);
    const auto cells = m.open_cells();
    for (const auto& c : cells) EXPECT_GE(shortest_path(m, cells[0], c), 0);
}

TEST(MazeMap, LoaderRejectsRaggedAndUnknownCells)
{
    EXPECT_THROW(parse_maze("...\n..\n"), std::invalid_argument);
    EXPECT_THROW(parse_maze("..x\n...\n"), std::invalid_argument);
    EXPECT_THROW(parse_maze(""), std::invalid_argument);
    EXPECT_THROW(parse_maze("#.#\n###\n"), std::invalid_argument);
    auto m = parse_maze("#..\r\n...\n\n");
    EXPECT_EQ(m.width, 3u);
    EXPECT_EQ(m.height, 2u);
    EXPECT_TRUE(m.walls[0]);
}

TEST(MazeMap, LoadsFromFile)
{
    const auto path = std::filesystem::temp_directory_path() / "obstransfer_maze_test.txt";
    {
        std::ofstream f(path);
        f << default_maze_text();
    }
    EXPECT_EQ(load_maze(path.string()), default_maze());
    std::filesystem::remove(path);
    EXPECT_THROW(load_maze("/nonexistent/maze.txt"), std::invalid_argument);
}

TEST(GridMaze, ResetPlacesAgentAndGoalOnDistinctOpenCells)
{
    auto env = maze(Face::Vector);
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        env.reset(seed);
        const auto s = env.state();
        EXPECT_TRUE(env.map().open(s.agent));
        EXPECT_TRUE(env.map().open(s.goal));
        EXPECT_NE(s.agent, s.goal);
        auto again = maze(Face::Vector);
        again.reset(seed);
        EXPECT_EQ(again.state(), s);
    }
}

TEST(GridMaze, FixedGoalMode)
{
    GridMazeConfig cfg;
    cfg.fixed_goal = Cell{7, 7};
    GridMaze env(cfg);
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        env.reset(seed);
        EXPECT_EQ(env.state().goal, (Cell{7, 7}));
        EXPECT_NE(env.state().agent, (Cell{7, 7}));
    }
    cfg.fixed_goal = Cell{1, 1};  // wall
    EXPECT_THROW(GridMaze{cfg}, std::invalid_argument);
}

TEST(GridMaze, StepRules)
{
    auto env = maze(Face::Vector);
    env.set_state({{2, 3}, {7, 0}, 0});
    auto t = env.step(0);
    EXPECT_EQ(env.state().agent, (Cell{2, 2}));
    EXPECT_EQ(t.reward, -0.01);
    EXPECT_FALSE(t.done);
    // (1,2) is a wall.
    t = env.step(2);
    EXPECT_EQ(env.state().agent, (Cell{2, 2}));
    EXPECT_EQ(t.reward, -0.01);
    // Off-grid move also leaves the agent in place.
    env.set_state({{0, 0}, {7, 0}, 0});
    env.step(0);
    EXPECT_EQ(env.state().agent, (Cell{0, 0}));

    env.set_state({{6, 0}, {7, 0}, 0});
    t = env.step(3);
    EXPECT_EQ(t.reward, 1.0);
    EXPECT_TRUE(t.done);
    EXPECT_THROW(env.step(0), StateError);
}

TEST(GridMaze, HorizonEndsEpisode)
{
    auto env = maze(Face::Vector);
    env.set_state({{0, 0}, {7, 7}, 98});
    EXPECT_FALSE(env.step(0).done);
    EXPECT_TRUE(env.step(0).done);
    EXPECT_EQ(env.state().steps_taken, 100);
}

TEST(GridMaze, PixelChannels)
{
    auto env = maze(Face::Pixel);
    const std::size_t plane = 64;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const auto o = env.reset(seed);
        ASSERT_EQ(o.values.size(), 3 * plane);
        EXPECT_EQ(channel_sum(o, 0, plane), 1.0);
        EXPECT_EQ(channel_sum(o, 1, plane), 1.0);
        for (std::size_t i = 0; i < plane; ++i) EXPECT_EQ(o.values[2 * plane + i], env.map().walls[i] ? 1.0 : 0.0);
        for (double v : o.values) EXPECT_TRUE(v >= 0.0 && v <= 1.0);
    }
}

TEST(ObservationMap, DecodesPixelToVector)
{
    auto env = maze(Face::Pixel);
    const auto img = env.render_pixel({{2, 2}, {5, 7}, 0});
    const auto v = env.to_source_observation(img);
    EXPECT_EQ(v.values, (std::vector<double>{2.0 / 8, 2.0 / 8, 5.0 / 8, 7.0 / 8}));
}

TEST(ObservationMap, RoundTripOnRandomStates)
{
    auto env = maze(Face::Pixel);
    Rng rng(17);
    const auto cells = env.map().open_cells();
    for (int i = 0; i < 1000; ++i) {
        GridMazeState s{cells[rng.index(cells.size())], cells[rng.index(cells.size())], 0};
        EXPECT_EQ(env.to_source_observation(env.render_pixel(s)), env.vector_obs(s));
    }
}

TEST(ObservationMap, RejectsUndecodableImages)
{
    auto env = maze(Face::Pixel);
    auto img = env.render_pixel({{2, 2}, {5, 7}, 0});
    img.values[0] = 1.0;  // second agent pixel
    EXPECT_THROW(env.to_source_observation(img), std::invalid_argument);
    auto empty = env.render_pixel({{2, 2}, {5, 7}, 0});
    std::fill(empty.values.begin() + 64, empty.values.begin() + 128, 0.0);
    EXPECT_THROW(env.to_source_observation(empty), std::invalid_argument);
    CartPole pix({Face::Pixel});
    pix.reset(1);
    EXPECT_THROW(pix.to_source_observation(pix.current()), std::invalid_argument);
}

TEST(GridMazeOracle, BfsMatchesValueIteration)
{
    // Undiscounted shortest-path values by Bellman-Ford style relaxation.
    const auto m = default_maze();
    const auto cells = m.open_cells();
    for (const auto& goal : {cells.front(), cells[cells.size() / 2], cells.back()}) {
        std::vector<int> dist(64, 1000);
        dist[static_cast<std::size_t>(goal.y * 8 + goal.x)] = 0;
        for (int it = 0; it < 64; ++it)
            for (const auto& c : cells)
                for (std::size_t a = 0; a < 4; ++a) {
                    const Cell n = GridMaze::moved(c, a);
                    if (!m.open(n)) continue;
                    auto& d = dist[static_cast<std::size_t>(c.y * 8 + c.x)];
                    d = std::min(d, dist[static_cast<std::size_t>(n.y * 8 + n.x)] + 1);
                }
        for (const auto& c : cells) EXPECT_EQ(shortest_path(m, c, goal), dist[static_cast<std::size_t>(c.y * 8 + c.x)]);
    }
}

TEST(GridMazeOracle, OptimalReturnIsAchievedByGreedyPathFollowing)
{
    GridMazeConfig cfg;
    GridMaze env(cfg);
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        env.reset(seed);
        const double expect = optimal_return(cfg, env.state());
        double ret = 0;
        while (!env.done()) {
            // Move to any neighbour one step closer to the goal.
            const auto s = env.state();
            const int d = shortest_path(env.map(), s.agent, s.goal);
            std::size_t best = 0;
            for (std::size_t a = 0; a < 4; ++a) {
                const Cell n = GridMaze::moved(s.agent, a);
                if (env.map().open(n) && shortest_path(env.map(), n, s.goal) == d - 1) best = a;
            }
            ret += env.step(best).reward;
        }
        EXPECT_NEAR(ret, expect, 1e-12);
    }
}

TEST(CartPole, ResetDrawsSmallState)
{
    CartPole env;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
        env.reset(seed);
        const auto s = env.state();
        for (double v : {s.x, s.x_dot, s.theta, s.theta_dot}) {
            EXPECT_GE(v, -0.05);
            EXPECT_LT(v, 0.05);
        }
        EXPECT_EQ(s.steps_taken, 0);
    }
    // Stream layout: four uniforms in state order.
    Rng rng(9);
    env.reset(9);
    EXPECT_EQ(env.state().x, rng.uniform(-0.05, 0.05));
    EXPECT_EQ(env.state().x_dot, rng.uniform(-0.05, 0.05));
}

TEST(CartPole, GoldenEulerStep)
{
    // Hand-integrated: theta = 0 so sin = 0, cos = 1.
    const double temp = 10.0 / 1.1;
    const double theta_acc = (0.0 - temp) / (0.5 * (4.0 / 3.0 - 0.1 / 1.1));
    const double x_acc = temp - 0.05 * theta_acc / 1.1;
    CartPole env;
    env.set_state({0, 0, 0, 0, 0});
    env.step(1);
    EXPECT_NEAR(env.state().x_dot, 0.02 * x_acc, 1e-12);
    EXPECT_NEAR(env.state().theta_dot, 0.02 * theta_acc, 1e-12);
    EXPECT_NEAR(env.state().x_dot, 0.19512, 5e-6);
    EXPECT_NEAR(env.state().theta_dot, -0.29268, 5e-6);
}

TEST(CartPole, TerminationAndReward)
{
    CartPole env;
    env.set_state({2.39, 1.0, 0, 0, 0});
    auto t = env.step(1);
    EXPECT_TRUE(t.done);
    EXPECT_EQ(t.reward, 1.0);
    EXPECT_THROW(env.step(0), StateError);

    env.set_state({0, 0, 0, 0, 199});
    EXPECT_TRUE(env.step(0).done);
}

TEST(CartPole, PixelDifferenceFrames)
{
    CartPole env({Face::Pixel});
    const auto first = env.reset(4);
    const auto frame0 = CartPole::render_frame(env.state());
    EXPECT_EQ(first.values, frame0);  // previous frame is zero
    double lit = 0;
    for (double v : frame0) lit += v;
    EXPECT_GT(lit, 50.0);

    const auto t = env.step(1);
    const auto frame1 = CartPole::render_frame(env.state());
    for (std::size_t i = 0; i < frame1.size(); ++i) {
        EXPECT_EQ(t.next_obs.values[i], frame1[i] - frame0[i]);
        EXPECT_TRUE(t.next_obs.values[i] >= -1.0 && t.next_obs.values[i] <= 1.0);
    }
    // Identical physical states render identically, so their difference is zero.
    const auto again = CartPole::render_frame(env.state());
    for (std::size_t i = 0; i < again.size(); ++i) EXPECT_EQ(again[i] - frame1[i], 0.0);
}

TEST(CartPole, FrameIsCenteredOnCart)
{
    // Upright pole at different cart positions renders the same centered image.
    const auto a = CartPole::render_frame({0.0, 0, 0, 0, 0});
    const auto b = CartPole::render_frame({0.5, 0, 0, 0, 0});
    EXPECT_EQ(a, b);
    // A tilted pole does not.
    EXPECT_NE(a, CartPole::render_frame({0.0, 0, 0.15, 0, 0}));
    // Near the track limit the view runs past the edge and blanks out.
    EXPECT_NE(a, CartPole::render_frame({2.0, 0, 0, 0, 0}));
}

TEST(BrokenSensor, Dimensions)
{
    EXPECT_EQ(broken_cartpole()->observation_spec().size(), 4u);
    BrokenSensor g(std::make_unique<GridMaze>(), {}, 3);
    EXPECT_EQ(g.observation_spec().size(), 12u);
    EXPECT_THROW(BrokenSensor(std::make_unique<CartPole>(), {1}, 1), std::invalid_argument);
    EXPECT_THROW(BrokenSensor(std::make_unique<CartPole>(), {0}, 2), std::invalid_argument);  // position
    EXPECT_THROW(BrokenSensor(std::make_unique<CartPole>(), {0, 1}, 2), std::invalid_argument);
    EXPECT_THROW(BrokenSensor(std::make_unique<GridMaze>(maze(Face::Pixel)), {}, 2), std::invalid_argument);
}

TEST(BrokenSensor, StackNewestFirstWithZeroHistory)
{
    BrokenSensor env(std::make_unique<CartPole>(), {1, 3}, 3);
    const auto o = env.reset(5);
    const auto& s = dynamic_cast<const CartPole&>(env.base()).state();
    EXPECT_EQ(o.values, (std::vector<double>{s.x, s.theta, 0, 0, 0, 0}));
    const double x0 = s.x, th0 = s.theta;
    const auto t = env.step(0);
    const auto& s1 = dynamic_cast<const CartPole&>(env.base()).state();
    EXPECT_EQ(t.next_obs.values, (std::vector<double>{s1.x, s1.theta, x0, th0, 0, 0}));
    EXPECT_EQ(t.obs, o);
}

TEST(BrokenSensor, StackedPositionsDetermineVelocityExactly)
{
    auto env = broken_cartpole();
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
        env->reset(seed);
        while (!env->done()) {
            const auto t = env->step(seed % 2);
            const auto& v = t.next_obs.values;
            const auto& s = dynamic_cast<const BrokenSensor&>(*env).base().current().values;
            EXPECT_EQ((v[0] - v[2]) / 0.02, s[1]);
            EXPECT_EQ((v[1] - v[3]) / 0.02, s[3]);
        }
    }
}

TEST(Validator, GridMazePixelPasses)
{
    const auto rep = validate_observation_map(maze(Face::Pixel), 1000, 1);
    EXPECT_TRUE(rep.passed()) << rep.first_failure;
    EXPECT_EQ(rep.pairs, 1000u);
}

TEST(Validator, BrokenSensorCartPolePasses)
{
    const auto rep = validate_observation_map(*broken_cartpole(), 1000, 2);
    EXPECT_TRUE(rep.passed()) << rep.first_failure;
}

namespace {
// f that swaps agent and goal: commutes at reset but not after a move.
class SwappedMap final : public Environment {
public:
    SwappedMap() : inner_(maze(Face::Pixel)) {}
    Observation reset(std::uint64_t s) override { return inner_.reset(s); }
    Transition step(std::size_t a) override { return inner_.step(a); }
    ObservationSpec observation_spec() const override { return inner_.observation_spec(); }
    std::size_t num_actions() const override { return 4; }
    bool done() const override { return inner_.done(); }
    const Observation& current() const override { return inner_.current(); }
    std::unique_ptr<Environment> clone() const override { return std::make_unique<SwappedMap>(*this); }
    std::string name() const override { return "swapped"; }
    Observation to_source_observation(const Observation& o) const override
    {
        auto v = inner_.to_source_observation(o);
        std::swap(v.values[0], v.values[2]);
        std::swap(v.values[1], v.values[3]);
        return v;
    }
    std::unique_ptr<Environment> source_twin() const override { return inner_.source_twin(); }

private:
    GridMaze inner_;
};
}  // namespace

TEST(Validator, DetectsWrongMap)
{
    const auto rep = validate_observation_map(SwappedMap{}, 100, 3);
    EXPECT_FALSE(rep.passed());
    EXPECT_EQ(rep.failures, 100u);
}

TEST(Determinism, SameSeedSameActionsSameTrajectory)
{
    std::vector<std::unique_ptr<Environment>> protos;
    protos.push_back(std::make_unique<GridMaze>(maze(Face::Vector)));
    protos.push_back(std::make_unique<GridMaze>(maze(Face::Pixel)));
    protos.push_back(std::make_unique<CartPole>());
    protos.push_back(std::make_unique<CartPole>(CartPoleConfig{Face::Pixel}));
    protos.push_back(broken_cartpole());
    for (const auto& p : protos) {
        auto run = [&]() {
            auto env = p->clone();
            Rng acts(77);
            std::vector<Observation> traj{env->reset(123)};
            while (!env->done()) traj.push_back(env->step(acts.index(env->num_actions())).next_obs);
            return traj;
        };
        EXPECT_EQ(run(), run()) << p->name();
    }
}
