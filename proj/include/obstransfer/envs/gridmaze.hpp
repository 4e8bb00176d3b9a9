#pragma once

#include <deque>
#include <fstream>
#include <optional>
#include <sstream>

#include "obstransfer/common.hpp"
#include "obstransfer/envs/environment.hpp"
#include "obstransfer/random.hpp"

namespace obstransfer::envs {

struct Cell {
    int x = 0, y = 0;
    bool operator==(const Cell&) const = default;
};

// Wall grid, row-major, walls[y * width + x].
struct MazeMap {
    std::size_t width = 0, height = 0;
    std::vector<bool> walls;

    bool inside(Cell c) const
    {
        return c.x >= 0 && c.y >= 0 && static_cast<std::size_t>(c.x) < width && static_cast<std::size_t>(c.y) < height;
    }
    bool open(Cell c) const { return inside(c) && !walls[static_cast<std::size_t>(c.y) * width + static_cast<std::size_t>(c.x)]; }

    std::vector<Cell> open_cells() const
    {
        std::vector<Cell> out;
        for (std::size_t y = 0; y < height; ++y)
            for (std::size_t x = 0; x < width; ++x)
                if (!walls[y * width + x]) out.push_back({static_cast<int>(x), static_cast<int>(y)});
        return out;
    }

    bool operator==(const MazeMap&) const = default;
};

// '#' wall, '.' open, one row per line. Trailing blank lines and '\r' are ignored.
inline MazeMap parse_maze(const std::string& text)
{
    std::vector<std::string> rows;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        rows.push_back(line);
    }
    while (!rows.empty() && rows.back().empty()) rows.pop_back();
    if (rows.empty()) throw std::invalid_argument("maze map is empty");

    MazeMap m;
    m.height = rows.size();
    m.width = rows[0].size();
    if (m.width == 0) throw std::invalid_argument("maze map line 1 is empty");
    for (std::size_t y = 0; y < rows.size(); ++y) {
        if (rows[y].size() != m.width)
            throw std::invalid_argument("maze map is not rectangular: line " + std::to_string(y + 1) + " has " +
                                        std::to_string(rows[y].size()) + " cells, expected " +
                                        std::to_string(m.width));
        for (std::size_t x = 0; x < m.width; ++x) {
            const char c = rows[y][x];
            if (c != '#' && c != '.')
                throw std::invalid_argument("maze map line " + std::to_string(y + 1) + ": unexpected character '" +
                                            std::string(1, c) + "'");
            m.walls.push_back(c == '#');
        }
    }
    if (m.open_cells().size() < 2) throw std::invalid_argument("maze map needs at least two open cells");
    return m;
}

inline MazeMap load_maze(const std::string& path)
{
    std::ifstream f(path);
    if (!f) throw std::invalid_argument("cannot open maze map '" + path + "'");
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_maze(ss.str());
}

inline const char* default_maze_text()
{
    return "........\n"
           ".##..#..\n"
           ".#...#..\n"
           "...#....\n"
           ".#.#.##.\n"
           ".#......\n"
           "...##.#.\n"
           "#.......\n";
}

inline MazeMap default_maze() { return parse_maze(default_maze_text()); }

struct GridMazeState {
    Cell agent, goal;
    int steps_taken = 0;
    bool operator==(const GridMazeState&) const = default;
};

struct GridMazeConfig {
    MazeMap map = default_maze();
    Face face = Face::Vector;
    int horizon = 100;
    double step_reward = -0.01;
    double goal_reward = 1.0;
    std::optional<Cell> fixed_goal;  // resampled every episode when empty
};

// Actions: 0 up (y-1), 1 down (y+1), 2 left (x-1), 3 right (x+1).
class GridMaze final : public Environment {
public:
    static constexpr std::size_t kActions = 4;

    explicit GridMaze(GridMazeConfig cfg = {}) : cfg_(std::move(cfg))
    {
        if (cfg_.horizon < 1) throw std::invalid_argument("gridmaze horizon must be >= 1");
        if (cfg_.map.open_cells().size() < 2) throw std::invalid_argument("gridmaze map needs two open cells");
        if (cfg_.fixed_goal && !cfg_.map.open(*cfg_.fixed_goal))
            throw std::invalid_argument("gridmaze fixed goal is not an open cell");
    }

    const GridMazeConfig& config() const noexcept { return cfg_; }
    const MazeMap& map() const noexcept { return cfg_.map; }
    const GridMazeState& state() const noexcept { return state_; }

    Observation reset(std::uint64_t seed) override
    {
        Rng rng(seed);
        const auto cells = cfg_.map.open_cells();
        GridMazeState s;
        if (cfg_.fixed_goal) {
            s.goal = *cfg_.fixed_goal;
            do s.agent = cells[rng.index(cells.size())];
            while (s.agent == s.goal);
        } else {
            s.agent = cells[rng.index(cells.size())];
            do s.goal = cells[rng.index(cells.size())];
            while (s.goal == s.agent);
        }
        set_state(s);
        return obs_;
    }

    // Starts an episode from an explicit state.
    void set_state(const GridMazeState& s)
    {
        if (!cfg_.map.open(s.agent) || !cfg_.map.open(s.goal))
            throw std::invalid_argument("gridmaze state: agent and goal must be on open cells");
        if (s.steps_taken < 0) throw std::invalid_argument("gridmaze state: negative steps_taken");
        state_ = s;
        done_ = false;
        obs_ = observe(state_);
    }

    static Cell moved(Cell c, std::size_t action)
    {
        switch (action) {
        case 0: return {c.x, c.y - 1};
        case 1: return {c.x, c.y + 1};
        case 2: return {c.x - 1, c.y};
        default: return {c.x + 1, c.y};
        }
    }

    Transition step(std::size_t action) override
    {
        if (done_) throw StateError("gridmaze: step after episode end");
        if (action >= kActions) throw std::invalid_argument("gridmaze: action out of range");
        Transition t;
        t.obs = obs_;
        t.action = action;
        const Cell next = moved(state_.agent, action);
        if (cfg_.map.open(next)) state_.agent = next;
        ++state_.steps_taken;
        if (state_.agent == state_.goal) {
            t.reward = cfg_.goal_reward;
            done_ = true;
        } else {
            t.reward = cfg_.step_reward;
            done_ = state_.steps_taken >= cfg_.horizon;
        }
        obs_ = observe(state_);
        t.next_obs = obs_;
        t.done = done_;
        return t;
    }

    ObservationSpec observation_spec() const override
    {
        if (cfg_.face == Face::Vector) return {VectorSpec{4}};
        return {ImageSpec{cfg_.map.height, cfg_.map.width, 3, false}};
    }
    std::size_t num_actions() const override { return kActions; }
    bool done() const override { return done_; }
    const Observation& current() const override { return obs_; }
    std::unique_ptr<Environment> clone() const override { return std::make_unique<GridMaze>(*this); }
    std::string name() const override { return cfg_.face == Face::Vector ? "gridmaze-vec" : "gridmaze-pixel"; }

    std::unique_ptr<Environment> source_twin() const override
    {
        auto twin = std::make_unique<GridMaze>(*this);
        twin->cfg_.face = Face::Vector;
        twin->obs_ = twin->observe(state_);
        return twin;
    }

    Observation vector_obs(const GridMazeState& s) const
    {
        const double w = static_cast<double>(cfg_.map.width), h = static_cast<double>(cfg_.map.height);
        return {{VectorSpec{4}}, {s.agent.x / w, s.agent.y / h, s.goal.x / w, s.goal.y / h}};
    }

    // Channels: agent, goal, walls.
    Observation render_pixel(const GridMazeState& s) const
    {
        const std::size_t W = cfg_.map.width, H = cfg_.map.height, plane = W * H;
        Observation o{{ImageSpec{H, W, 3, false}}, std::vector<double>(3 * plane, 0.0)};
        o.values[static_cast<std::size_t>(s.agent.y) * W + static_cast<std::size_t>(s.agent.x)] = 1.0;
        o.values[plane + static_cast<std::size_t>(s.goal.y) * W + static_cast<std::size_t>(s.goal.x)] = 1.0;
        for (std::size_t i = 0; i < plane; ++i) o.values[2 * plane + i] = cfg_.map.walls[i] ? 1.0 : 0.0;
        return o;
    }

    Observation observe(const GridMazeState& s) const
    {
        return cfg_.face == Face::Vector ? vector_obs(s) : render_pixel(s);
    }

    Observation to_source_observation(const Observation& target) const override
    {
        if (target.spec == ObservationSpec{VectorSpec{4}}) return target;
        const std::size_t W = cfg_.map.width, H = cfg_.map.height, plane = W * H;
        if (!(target.spec == ObservationSpec{ImageSpec{H, W, 3, false}}) || target.values.size() != 3 * plane)
            throw std::invalid_argument("gridmaze: observation does not match this maze's pixel face");
        auto find_one = [&](std::size_t channel, const char* what) {
            std::optional<std::size_t> at;
            for (std::size_t i = 0; i < plane; ++i) {
                const double v = target.values[channel * plane + i];
                if (v == 0.0) continue;
                if (v != 1.0 || at) throw std::invalid_argument(std::string("gridmaze: undecodable ") + what + " channel");
                at = i;
            }
            if (!at) throw std::invalid_argument(std::string("gridmaze: empty ") + what + " channel");
            return Cell{static_cast<int>(*at % W), static_cast<int>(*at / W)};
        };
        GridMazeState s;
        s.agent = find_one(0, "agent");
        s.goal = find_one(1, "goal");
        return vector_obs(s);
    }

private:
    GridMazeConfig cfg_;
    GridMazeState state_;
    bool done_ = true;
    Observation obs_;
};

// Shortest-path length in moves, or -1 when unreachable.
inline int shortest_path(const MazeMap& map, Cell from, Cell to)
{
    if (!map.open(from) || !map.open(to)) return -1;
    std::vector<int> dist(map.width * map.height, -1);
    auto idx = [&](Cell c) { return static_cast<std::size_t>(c.y) * map.width + static_cast<std::size_t>(c.x); };
    std::deque<Cell> q{from};
    dist[idx(from)] = 0;
    while (!q.empty()) {
        const Cell c = q.front();
        q.pop_front();
        if (c == to) return dist[idx(c)];
        for (std::size_t a = 0; a < GridMaze::kActions; ++a) {
            const Cell n = GridMaze::moved(c, a);
            if (map.open(n) && dist[idx(n)] < 0) {
                dist[idx(n)] = dist[idx(c)] + 1;
                q.push_back(n);
            }
        }
    }
    return -1;
}

// Undiscounted return of an optimal policy from `s`.
inline double optimal_return(const GridMazeConfig& cfg, const GridMazeState& s)
{
    const int remaining = cfg.horizon - s.steps_taken;
    const int len = shortest_path(cfg.map, s.agent, s.goal);
    if (len < 0 || len > remaining) return cfg.step_reward * remaining;
    return cfg.step_reward * (len - 1) + cfg.goal_reward;
}

}  // namespace obstransfer::envs
