#pragma once

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "obstransfer/transfer/runner.hpp"

namespace obstransfer::harness {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
    transfer::RunSpec run;  // run.seed is filled per seed by the suite
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    bool baseline_set = false;  // run.baseline appeared in the file
    std::string path;
    std::map<std::string, std::size_t> lines;  // key -> line number
};

namespace detail {

inline std::string trim(std::string_view s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

template <class T>
T parse_number(const std::string& v, const char* what)
{
    T out{};
    const char* end = v.data() + v.size();
    auto [p, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc() || p != end) throw std::invalid_argument(std::string("expected ") + what + ", got '" + v + "'");
    return out;
}

inline std::size_t parse_count(const std::string& v) { return parse_number<std::size_t>(v, "a non-negative integer"); }

inline double parse_real(const std::string& v)
{
    const double x = parse_number<double>(v, "a number");
    if (!std::isfinite(x)) throw std::invalid_argument("expected a finite number, got '" + v + "'");
    return x;
}

inline bool parse_bool(const std::string& v)
{
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw std::invalid_argument("expected true or false, got '" + v + "'");
}

// "1,2,3", "1 2 3" or "1..5".
inline std::vector<std::uint64_t> parse_seeds(const std::string& v)
{
    std::vector<std::uint64_t> out;
    if (const auto dots = v.find(".."); dots != std::string::npos) {
        const auto lo = parse_number<std::uint64_t>(trim(v.substr(0, dots)), "a seed");
        const auto hi = parse_number<std::uint64_t>(trim(v.substr(dots + 2)), "a seed");
        if (hi < lo) throw std::invalid_argument("empty seed range '" + v + "'");
        if (hi - lo >= 10000) throw std::invalid_argument("seed range '" + v + "' is too large");
        for (auto s = lo; s <= hi; ++s) out.push_back(s);
        return out;
    }
    std::string tok;
    std::istringstream is(v);
    while (std::getline(is, tok, ',')) {
        std::istringstream ws(tok);
        std::string w;
        while (ws >> w) out.push_back(parse_number<std::uint64_t>(w, "a seed"));
    }
    if (out.empty()) throw std::invalid_argument("run.seeds must list at least one seed");
    for (std::size_t i = 0; i < out.size(); ++i)
        for (std::size_t j = 0; j < i; ++j)
            if (out[i] == out[j]) throw std::invalid_argument("seed " + std::to_string(out[i]) + " is listed twice");
    return out;
}

using Setter = std::function<void(ExperimentConfig&, const std::string&)>;

inline const std::map<std::string, Setter>& setters()
{
    static const std::map<std::string, Setter> table = [] {
        std::map<std::string, Setter> t;
        auto str = [&](const char* k, std::string transfer::RunSpec::*f) {
            t[k] = [f](ExperimentConfig& c, const std::string& v) { c.run.*f = v; };
        };
        auto agent_real = [&](const char* k, double agent::AgentConfig::*f) {
            t[k] = [f](ExperimentConfig& c, const std::string& v) { c.run.agent.*f = parse_real(v); };
        };
        auto agent_count = [&](const char* k, std::size_t agent::AgentConfig::*f) {
            t[k] = [f](ExperimentConfig& c, const std::string& v) { c.run.agent.*f = parse_count(v); };
        };
        auto run_count = [&](const char* k, std::size_t transfer::RunSpec::*f) {
            t[k] = [f](ExperimentConfig& c, const std::string& v) { c.run.*f = parse_count(v); };
        };

        t["env.name"] = [](ExperimentConfig& c, const std::string& v) { c.run.env.name = v; };
        t["env.face"] = [](ExperimentConfig& c, const std::string& v) { c.run.env.face = v; };
        t["env.map_path"] = [](ExperimentConfig& c, const std::string& v) { c.run.env.map_path = v; };
        t["env.fixed_goal"] = [](ExperimentConfig& c, const std::string& v) { c.run.env.fixed_goal = parse_bool(v); };
        t["env.horizon"] = [](ExperimentConfig& c, const std::string& v) { c.run.env.horizon = parse_count(v); };
        t["env.stack"] = [](ExperimentConfig& c, const std::string& v) { c.run.env.stack = parse_count(v); };

        agent_real("agent.gamma", &agent::AgentConfig::gamma);
        agent_real("agent.lr", &agent::AgentConfig::lr);
        agent_real("agent.epsilon_start", &agent::AgentConfig::epsilon_start);
        agent_real("agent.epsilon_end", &agent::AgentConfig::epsilon_end);
        agent_real("agent.lambda", &agent::AgentConfig::lambda);
        agent_count("agent.batch_size", &agent::AgentConfig::batch_size);
        agent_count("agent.replay_capacity", &agent::AgentConfig::replay_capacity);
        agent_count("agent.target_update_period", &agent::AgentConfig::target_update_period);
        agent_count("agent.epsilon_decay_steps", &agent::AgentConfig::epsilon_decay_steps);
        agent_count("agent.encoding_dim", &agent::AgentConfig::encoding_dim);
        agent_count("agent.hidden", &agent::AgentConfig::hidden);
        agent_count("agent.stable_period", &agent::AgentConfig::stable_period);

        t["run.baseline"] = [](ExperimentConfig& c, const std::string& v) {
            c.run.mode = transfer::parse_mode(v);
            c.baseline_set = true;
        };
        run_count("run.total_steps", &transfer::RunSpec::total_steps);
        run_count("run.eval_every", &transfer::RunSpec::eval_every);
        run_count("run.eval_episodes", &transfer::RunSpec::eval_episodes);
        run_count("run.traj_every", &transfer::RunSpec::traj_every);
        run_count("run.align_epochs", &transfer::RunSpec::align_epochs);
        run_count("run.align_batch", &transfer::RunSpec::align_batch);
        t["run.seeds"] = [](ExperimentConfig& c, const std::string& v) { c.seeds = parse_seeds(v); };
        t["run.record_wallclock"] = [](ExperimentConfig& c, const std::string& v) {
            c.run.record_wallclock = parse_bool(v);
        };
        str("io.in_ckpt", &transfer::RunSpec::in_ckpt);
        str("io.out_dir", &transfer::RunSpec::out_dir);
        return t;
    }();
    return table;
}

}  // namespace detail

inline std::vector<std::string> config_keys()
{
    std::vector<std::string> out;
    for (const auto& [k, _] : detail::setters()) out.push_back(k);
    return out;
}

// Errors raised after parsing (cross-field validation) are located at the
// line of the first key the message names, when there is one.
inline ConfigError located(const ExperimentConfig& c, const std::string& msg)
{
    std::string best;
    std::size_t pos = std::string::npos;
    for (const auto& [k, line] : c.lines) {
        const auto p = msg.find(k);
        if (p < pos) pos = p, best = k;
    }
    if (!best.empty()) return ConfigError(c.path + ":" + std::to_string(c.lines.at(best)) + ": " + msg);
    return ConfigError(c.path + ": " + msg);
}

inline void validate_config(const ExperimentConfig& c)
{
    if (!c.lines.count("env.name")) throw ConfigError(c.path + ": missing required key env.name");
    if (c.seeds.empty()) throw ConfigError(c.path + ": run.seeds must list at least one seed");
    try {
        c.run.validate();
    } catch (const std::invalid_argument& e) {
        throw located(c, e.what());
    }
}

// Parses `key = value` lines; '#' starts a comment. Cross-field validation
// is left to validate_config so the CLI can apply overrides first.
inline ExperimentConfig parse_config_text(const std::string& text, const std::string& path = "<config>")
{
    ExperimentConfig c;
    c.path = path;
    std::istringstream is(text);
    std::string raw;
    std::size_t lineno = 0;
    const auto& table = detail::setters();
    while (std::getline(is, raw)) {
        ++lineno;
        const auto hash = raw.find('#');
        const std::string line = detail::trim(std::string_view(raw).substr(0, hash));
        if (line.empty()) continue;
        const auto where = path + ":" + std::to_string(lineno) + ": ";
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value', got '" + line + "'");
        const std::string key = detail::trim(std::string_view(line).substr(0, eq));
        const std::string value = detail::trim(std::string_view(line).substr(eq + 1));
        if (key.empty()) throw ConfigError(where + "missing key before '='");
        const auto it = table.find(key);
        if (it == table.end()) throw ConfigError(where + "unknown key '" + key + "'");
        if (const auto prev = c.lines.find(key); prev != c.lines.end())
            throw ConfigError(where + "duplicate key '" + key + "' (lines " + std::to_string(prev->second) + " and " +
                              std::to_string(lineno) + ")");
        if (value.empty()) throw ConfigError(where + "key '" + key + "' has no value");
        try {
            it->second(c, value);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(where + key + ": " + e.what());
        }
        c.lines[key] = lineno;
    }
    return c;
}

// Parsed but not yet validated.
inline ExperimentConfig read_config(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError(path + ": cannot read config file");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str(), path);
}

inline ExperimentConfig parse_config(const std::string& path)
{
    auto c = read_config(path);
    validate_config(c);
    return c;
}

}  // namespace obstransfer::harness
