#pragma once

#include <memory>
#include <string>

#include "obstransfer/envs/broken_sensor.hpp"
#include "obstransfer/envs/cartpole.hpp"
#include "obstransfer/envs/gridmaze.hpp"

namespace obstransfer::transfer {

// env.name in {gridmaze, cartpole}; env.face in {vector, pixel, broken}.
// "broken" is CartPole with the velocity sensors removed and the last
// `stack` position readings stacked.
struct EnvSpec {
    std::string name = "gridmaze";
    std::string face = "vector";
    std::string map_path;  // empty: built-in map
    bool fixed_goal = false;
    std::size_t horizon = 0;  // 0: environment default
    std::size_t stack = 2;

    void validate() const
    {
        if (name != "gridmaze" && name != "cartpole")
            throw std::invalid_argument("env.name must be gridmaze or cartpole, got '" + name + "'");
        if (face != "vector" && face != "pixel" && face != "broken")
            throw std::invalid_argument("env.face must be vector, pixel or broken, got '" + face + "'");
        if (face == "broken" && name != "cartpole")
            throw std::invalid_argument("env.face=broken is only defined for cartpole");
        if (!map_path.empty() && name != "gridmaze")
            throw std::invalid_argument("env.map_path only applies to gridmaze");
        if (face == "broken" && stack < 2) throw std::invalid_argument("env.stack must be >= 2");
    }
};

inline std::unique_ptr<envs::Environment> make_env(const EnvSpec& spec)
{
    spec.validate();
    const envs::Face face = spec.face == "pixel" ? envs::Face::Pixel : envs::Face::Vector;
    if (spec.name == "gridmaze") {
        envs::GridMazeConfig c;
        if (!spec.map_path.empty()) c.map = envs::load_maze(spec.map_path);
        c.face = face;
        if (spec.horizon) c.horizon = static_cast<decltype(c.horizon)>(spec.horizon);
        if (spec.fixed_goal) {
            const auto cells = c.map.open_cells();
            c.fixed_goal = cells.back();
        }
        return std::make_unique<envs::GridMaze>(c);
    }
    envs::CartPoleConfig c;
    c.face = face;
    if (spec.horizon) c.horizon = static_cast<decltype(c.horizon)>(spec.horizon);
    auto base = std::make_unique<envs::CartPole>(c);
    if (spec.face != "broken") return base;
    std::set<std::size_t> drop;
    for (const auto& f : base->derived_features()) drop.insert(f.feature);
    return std::make_unique<envs::BrokenSensor>(std::move(base), drop, spec.stack);
}

}  // namespace obstransfer::transfer
