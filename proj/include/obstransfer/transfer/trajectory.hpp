#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "obstransfer/harness/metrics.hpp"

namespace obstransfer::transfer {

// One stored source episode. The reset seed is kept in the file name
// (traj_<seed>.csv) so the target env can replay the same start.
struct Trajectory {
    std::uint64_t reset_seed = 0;
    std::vector<std::size_t> actions;
    std::vector<std::vector<double>> reps;  // reps[t] = phi_S(o_t)
};

inline std::string trajectory_filename(std::uint64_t seed) { return "traj_" + std::to_string(seed) + ".csv"; }

inline void write_trajectory(const std::filesystem::path& dir, const Trajectory& t)
{
    if (t.actions.size() != t.reps.size()) throw ShapeError("trajectory: one rep per action required");
    std::filesystem::create_directories(dir);
    const auto path = dir / trajectory_filename(t.reset_seed);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write trajectory '" + path.string() + "'");
    for (std::size_t s = 0; s < t.actions.size(); ++s) {
        out << s << ',' << t.actions[s];
        for (double v : t.reps[s]) out << ',' << harness::format_number(v);
        out << '\n';
    }
}

inline Trajectory read_trajectory(const std::filesystem::path& path)
{
    const std::string stem = path.stem().string();
    if (stem.rfind("traj_", 0) != 0) throw std::runtime_error("trajectory file name must be traj_<seed>.csv: " + path.string());
    Trajectory t;
    try {
        t.reset_seed = std::stoull(stem.substr(5));
    } catch (const std::logic_error&) {
        throw std::runtime_error("trajectory file name must be traj_<seed>.csv: " + path.string());
    }
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read trajectory '" + path.string() + "'");
    std::string line;
    std::size_t lineno = 0, dim = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto f = harness::split_csv_line(line);
        const std::string where = path.string() + ":" + std::to_string(lineno);
        if (f.size() < 3) throw std::runtime_error(where + ": expected step,action,rep...");
        try {
            if (std::stoull(f[0]) != t.actions.size()) throw std::runtime_error(where + ": steps must count up from 0");
            t.actions.push_back(std::stoull(f[1]));
            std::vector<double> rep;
            for (std::size_t i = 2; i < f.size(); ++i) rep.push_back(std::stod(f[i]));
            if (dim == 0) dim = rep.size();
            if (rep.size() != dim) throw std::runtime_error(where + ": representation width changed");
            t.reps.push_back(std::move(rep));
        } catch (const std::logic_error&) {
            throw std::runtime_error(where + ": malformed number");
        }
    }
    return t;
}

inline std::vector<Trajectory> read_trajectory_dir(const std::filesystem::path& dir)
{
    if (!std::filesystem::is_directory(dir)) throw std::runtime_error("no trajectory directory at '" + dir.string() + "'");
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::vector<Trajectory> out;
    for (const auto& f : files) out.push_back(read_trajectory(f));
    if (out.empty()) throw std::runtime_error("no stored trajectories in '" + dir.string() + "'");
    return out;
}

}  // namespace obstransfer::transfer
