#pragma once

#include <atomic>
#include <cstdlib>
#include <cstring>
#include <exception>
#include <filesystem>
#include <thread>

#include "obstransfer/harness/config.hpp"
#include "obstransfer/harness/metrics.hpp"
#include "obstransfer/transfer/runner.hpp"

namespace obstransfer::harness {

// Per-eval-point statistics across seeds. Std is the population std, so a
// single seed reproduces its own curve with std 0.
struct Aggregate {
    std::vector<std::uint64_t> seeds;
    std::vector<std::size_t> steps;
    std::vector<double> mean, std;
    std::vector<std::vector<double>> returns;  // [seed][step]
    std::vector<double> auc;                   // per seed
    double auc_mean = 0.0, auc_std = 0.0;
};

inline Aggregate aggregate(const std::vector<std::uint64_t>& seeds, const std::vector<std::vector<MetricsRow>>& runs)
{
    if (seeds.empty() || seeds.size() != runs.size()) throw std::invalid_argument("aggregate: one run per seed required");
    Aggregate a;
    a.seeds = seeds;
    for (const auto& r : runs[0]) a.steps.push_back(r.step);
    for (std::size_t k = 0; k < runs.size(); ++k) {
        if (runs[k].size() != a.steps.size())
            throw StateError("aggregate: seed " + std::to_string(seeds[k]) + " has a different number of eval points");
        std::vector<double> ret;
        for (std::size_t i = 0; i < runs[k].size(); ++i) {
            if (runs[k][i].step != a.steps[i])
                throw StateError("aggregate: seed " + std::to_string(seeds[k]) + " evaluates at different steps");
            ret.push_back(runs[k][i].eval_return_mean);
        }
        a.returns.push_back(std::move(ret));
        a.auc.push_back(auc(runs[k]));
    }
    for (std::size_t i = 0; i < a.steps.size(); ++i) {
        std::vector<double> col;
        for (const auto& r : a.returns) col.push_back(r[i]);
        auto [m, s] = transfer::mean_std(col);
        a.mean.push_back(m);
        a.std.push_back(s);
    }
    std::tie(a.auc_mean, a.auc_std) = transfer::mean_std(a.auc);
    return a;
}

// step,mean,std,seed_<k>...; the last row holds the AUC of each seed.
inline void write_aggregate(const std::string& path, const Aggregate& a)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write aggregate file '" + path + "'");
    out << "step,mean,std";
    for (auto s : a.seeds) out << ",seed_" << s;
    out << '\n';
    for (std::size_t i = 0; i < a.steps.size(); ++i) {
        out << a.steps[i] << ',' << format_number(a.mean[i]) << ',' << format_number(a.std[i]);
        for (const auto& r : a.returns) out << ',' << format_number(r[i]);
        out << '\n';
    }
    out << "auc," << format_number(a.auc_mean) << ',' << format_number(a.auc_std);
    for (double v : a.auc) out << ',' << format_number(v);
    out << '\n';
    if (!out) throw std::runtime_error("error writing aggregate file '" + path + "'");
}

// OBSTRANSFER_THREADS caps the number of concurrent runs; unset means one
// per hardware thread.
inline std::size_t suite_threads(std::size_t runs)
{
    std::size_t n = std::max(1u, std::thread::hardware_concurrency());
    if (const char* env = std::getenv("OBSTRANSFER_THREADS"); env && *env) {
        std::size_t cap = 0;
        const char* end = env + std::strlen(env);
        auto [p, ec] = std::from_chars(env, end, cap);
        if (ec != std::errc() || p != end || cap < 1)
            throw ConfigError(std::string("OBSTRANSFER_THREADS must be a positive integer, got '") + env + "'");
        n = cap;
    }
    return std::max<std::size_t>(1, std::min(n, runs));
}

struct SeedStatus {
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
};

struct SuiteError : std::runtime_error {
    std::vector<SeedStatus> status;
    SuiteError(const std::string& msg, std::vector<SeedStatus> st) : std::runtime_error(msg), status(std::move(st)) {}
};

struct SuiteResult {
    std::vector<transfer::RunResult> runs;  // in seed order
    Aggregate agg;
    std::string aggregate_path;  // empty when nothing was written
};

// The spec for one seed: outputs go to <out>/seed_<k>; an input directory
// that has a seed_<k> subdirectory (a source suite) is narrowed to it.
inline transfer::RunSpec spec_for_seed(const ExperimentConfig& c, std::uint64_t seed)
{
    namespace fs = std::filesystem;
    transfer::RunSpec s = c.run;
    s.seed = seed;
    const std::string sub = "seed_" + std::to_string(seed);
    if (!s.out_dir.empty()) s.out_dir = (fs::path(s.out_dir) / sub).string();
    if (!s.in_ckpt.empty() && fs::is_directory(fs::path(s.in_ckpt) / sub)) s.in_ckpt = (fs::path(s.in_ckpt) / sub).string();
    return s;
}

// One run per seed, in parallel across seeds; every run is single-threaded
// and owns its RNG streams, so results do not depend on the thread count.
inline SuiteResult run_suite(const ExperimentConfig& c)
{
    const std::size_t n = c.seeds.size();
    std::vector<std::optional<transfer::RunResult>> results(n);
    std::vector<SeedStatus> status(n);
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) {
            status[i].seed = c.seeds[i];
            try {
                results[i] = transfer::run(spec_for_seed(c, c.seeds[i]));
                status[i].ok = true;
            } catch (const std::exception& e) {
                status[i].error = e.what();
            }
        }
    };
    const std::size_t threads = suite_threads(n);
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }

    std::string report;
    bool failed = false;
    for (const auto& s : status) {
        report += "  seed " + std::to_string(s.seed) + ": " + (s.ok ? "ok" : "FAILED: " + s.error) + "\n";
        failed |= !s.ok;
    }
    if (failed) throw SuiteError("suite aborted, per-seed status:\n" + report, status);

    SuiteResult out;
    std::vector<std::vector<MetricsRow>> rows;
    for (auto& r : results) {
        rows.push_back(r->rows);
        out.runs.push_back(std::move(*r));
    }
    out.agg = aggregate(c.seeds, rows);
    if (!c.run.out_dir.empty()) {
        std::filesystem::create_directories(c.run.out_dir);
        out.aggregate_path = (std::filesystem::path(c.run.out_dir) / "aggregate.csv").string();
        write_aggregate(out.aggregate_path, out.agg);
    }
    return out;
}

}  // namespace obstransfer::harness
