// obstransfer command-line entry point.
//
// Exit codes: 0 ok, 1 usage or config error, 2 runtime failure, 3 a check
// (theory, gradient or environment validation) failed.

#include <chrono>
#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "obstransfer/envs/validator.hpp"
#include "obstransfer/harness/allocator.hpp"
#include "obstransfer/harness/config.hpp"
#include "obstransfer/harness/gradcheck_suite.hpp"
#include "obstransfer/harness/suite.hpp"
#include "obstransfer/theory/suite.hpp"

namespace {

using namespace obstransfer;

enum Exit { kOk = 0, kConfig = 1, kRuntime = 2, kCheckFailed = 3 };

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
};

void add_common(CLI::App* sub, Common& c, bool config_required)
{
    auto* opt = sub->add_option("--config", c.config, "config file (key = value)");
    if (config_required) opt->required();
    sub->add_option("--seed", c.seed, "run this single seed instead of run.seeds");
    sub->add_option("--out", c.out, "output directory (overrides io.out_dir)");
}

int train(const std::string& cmd, const Common& common)
{
    harness::ExperimentConfig cfg = harness::read_config(common.config);
    using transfer::Mode;
    if (cmd == "train-source") {
        if (cfg.baseline_set && cfg.run.mode != Mode::Source)
            throw harness::located(cfg, std::string("train-source needs run.baseline=source, got run.baseline=") +
                                            transfer::mode_name(cfg.run.mode));
        cfg.run.mode = Mode::Source;
    } else {
        if (cfg.baseline_set && cfg.run.mode == Mode::Source)
            throw harness::located(cfg, cmd + " does not run run.baseline=source; use train-source");
        if (!cfg.baseline_set) cfg.run.mode = cmd == "train-target" ? Mode::Transfer : Mode::Single;
    }
    if (common.seed) cfg.seeds = {*common.seed};
    if (!common.out.empty()) cfg.run.out_dir = common.out;
    harness::validate_config(cfg);
    harness::suite_threads(cfg.seeds.size());  // reject a bad OBSTRANSFER_THREADS before running

    const auto t0 = std::chrono::steady_clock::now();
    const auto res = harness::run_suite(cfg);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("%s  env=%s/%s  baseline=%s  steps=%zu\n", cmd.c_str(), cfg.run.env.name.c_str(),
                cfg.run.env.face.c_str(), transfer::mode_name(cfg.run.mode), cfg.run.total_steps);
    for (std::size_t i = 0; i < res.runs.size(); ++i) {
        const auto& r = res.runs[i];
        std::printf("  seed %-6llu final_return %10.4f  auc %12.4f  episodes %zu\n",
                    static_cast<unsigned long long>(cfg.seeds[i]), r.rows.back().eval_return_mean, r.auc, r.episodes);
    }
    std::printf("  mean auc %.4f (std %.4f) over %zu seed(s), %.1f s\n", res.agg.auc_mean, res.agg.auc_std,
                res.runs.size(), secs);
    if (!res.aggregate_path.empty()) std::printf("  wrote %s\n", res.aggregate_path.c_str());
    return kOk;
}

theory::SuiteResult single_case(const std::string& name, bool holds, double observed, double bound,
                                 const std::string& note = "")
{
    return {name, {theory::CaseResult{0, 0, holds, observed, bound, note}}};
}

int theory_check(std::optional<std::size_t> random, std::uint64_t seed, const std::string& mdp_path,
                 const std::string& phi_path, std::size_t K)
{
    using namespace theory;
    std::vector<SuiteResult> suites;
    if (random) {
        if (!mdp_path.empty() || !phi_path.empty())
            throw harness::ConfigError("theory-check: use either --random or --mdp/--phi, not both");
        const std::size_t n = *random;
        suites = {suite_api_bound(n, seed),        suite_model_error_bound(n, seed), suite_sufficiency_without_linearity(n, seed),
                  suite_linear_sufficiency(n, seed), suite_transfer(n, seed),          suite_avi(n, seed)};
    } else {
        if (mdp_path.empty() || phi_path.empty())
            throw harness::ConfigError("theory-check: need --random N, or both --mdp and --phi");
        TabularMDP m;
        RepMap rep;
        try {
            m = read_mdp(mdp_path);
            rep = make_repmap(read_phi(phi_path));
        } catch (const std::invalid_argument& e) {
            throw harness::ConfigError(e.what());
        }
        if (rep.num_states() != m.S)
            throw harness::ConfigError("theory-check: representation has " + std::to_string(rep.num_states()) +
                                       " rows but the MDP has " + std::to_string(m.S) + " states");
        const auto api = check_api_bound(m, rep, K);
        suites.push_back(single_case("api-bound", api.holds, api.observed_gap, api.bound,
                                     "eps=" + std::to_string(api.epsilon)));
        const LatentModel lm = fit_latent(m, rep);
        const auto mb = check_model_error_bound(m, rep, lm, K);
        if (mb.asserted)
            suites.push_back(single_case("model-error-bound", mb.holds, mb.observed_gap, mb.bound));
        else
            std::printf("model-error-bound: skipped, the MDP is stochastic (observed %.4g, bound %.4g)\n",
                        mb.observed_gap, mb.bound);
        if ((m.R.array() >= 0.0).all()) {
            const auto avi = check_avi(m, rep, lm);
            suites.push_back(single_case("avi-bound", avi.holds(), avi.final_gap, avi.final_bound,
                                         avi.steps_hold ? "" : "per-step bound violated"));
        } else {
            std::printf("avi-bound: skipped, rewards are not all nonnegative\n");
        }
        std::printf("S=%zu A=%zu gamma=%g classes=%zu d=%zu\n", m.S, m.A, m.gamma, rep.num_classes(), rep.dim());
    }
    print_summary(std::cout, suites);
    bool ok = true;
    for (const auto& s : suites) ok &= s.all_hold();
    for (const auto& s : suites)
        for (const auto& c : s.cases)
            if (!c.holds)
                std::fprintf(stderr, "FAILED %s case %zu (seed %llu): observed %.6g bound %.6g %s\n", s.name.c_str(),
                             c.index, static_cast<unsigned long long>(c.seed), c.observed, c.bound, c.note.c_str());
    return ok ? kOk : kCheckFailed;
}

int gradcheck(std::uint64_t seed)
{
    const auto t0 = std::chrono::steady_clock::now();
    const auto items = harness::run_gradcheck_suite(seed);
    harness::print_gradcheck(std::cout, items);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool ok = harness::all_passed(items);
    std::printf("%s (tolerance %.0e, %.2f s)\n", ok ? "all gradient checks passed" : "gradient check FAILED",
                harness::kGradTolerance, secs);
    return ok ? kOk : kCheckFailed;
}

int validate_env(const Common& common, std::size_t pairs)
{
    std::vector<transfer::EnvSpec> envs;
    if (!common.config.empty()) {
        const auto cfg = harness::read_config(common.config);
        try {
            cfg.run.env.validate();
        } catch (const std::invalid_argument& e) {
            throw harness::located(cfg, e.what());
        }
        envs.push_back(cfg.run.env);
    } else {
        transfer::EnvSpec vec, pix, broken;
        pix.face = "pixel";
        broken.name = "cartpole";
        broken.face = "broken";
        envs = {vec, pix, broken};
    }
    const std::uint64_t seed = common.seed.value_or(1);
    bool ok = true;
    for (const auto& spec : envs) {
        const auto env = transfer::make_env(spec);
        const auto rep = envs::validate_observation_map(*env, pairs, seed);
        std::printf("%-10s %-7s %zu/%zu pairs commute%s%s\n", spec.name.c_str(), spec.face.c_str(),
                    rep.pairs - rep.failures, rep.pairs, rep.passed() ? "" : "  FAILED: ", rep.first_failure.c_str());
        ok &= rep.passed();
    }
    return ok ? kOk : kCheckFailed;
}

}  // namespace

int main(int argc, char** argv)
{
    obstransfer::harness::keep_large_blocks_on_heap();

    CLI::App app{"obstransfer: latent-model transfer across observation spaces"};
    app.require_subcommand(1);
    app.fallthrough(false);

    Common common;
    auto* src = app.add_subcommand("train-source", "train on the source task and save the latent model");
    auto* tgt = app.add_subcommand("train-target", "train on the target task (default run.baseline=transfer)");
    auto* base = app.add_subcommand("baseline", "run a comparison learner (default run.baseline=single)");
    for (auto* s : {src, tgt, base}) add_common(s, common, true);

    auto* theory_cmd = app.add_subcommand("theory-check", "verify the tabular bounds on random or given instances");
    std::optional<std::size_t> random;
    std::uint64_t theory_seed = 1;
    std::string mdp_path, phi_path;
    std::size_t api_iters = 100;
    theory_cmd->add_option("--random", random, "number of random instances per check")->check(CLI::PositiveNumber);
    theory_cmd->add_option("--seed", theory_seed, "seed for the random instances");
    theory_cmd->add_option("--mdp", mdp_path, "MDP file: 'S A gamma' then lines 's a r p_0 ... p_{S-1}'");
    theory_cmd->add_option("--phi", phi_path, "representation file: S lines of d numbers");
    theory_cmd->add_option("--api-iters", api_iters, "API iterations")->check(CLI::PositiveNumber);

    auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check of every layer and loss");
    std::uint64_t grad_seed = 1;
    grad_cmd->add_option("--seed", grad_seed, "seed for the random draws");

    auto* venv = app.add_subcommand("validate-env", "check that the target-to-source map commutes with the dynamics");
    Common venv_common;
    std::size_t pairs = 1000;
    venv->add_option("--config", venv_common.config, "config file; only env.* keys are used (default: all targets)");
    venv->add_option("--seed", venv_common.seed, "seed for the sampled pairs");
    venv->add_option("--pairs", pairs, "number of (state, action) pairs")->check(CLI::PositiveNumber);

    if (argc > 1 && argv[1][0] != '-' && !app.get_subcommand_no_throw(argv[1])) {
        std::cerr << "error: unknown subcommand '" << argv[1] << "'\n\n" << app.help();
        return kConfig;
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return kConfig;
    }

    try {
        if (src->parsed()) return train("train-source", common);
        if (tgt->parsed()) return train("train-target", common);
        if (base->parsed()) return train("baseline", common);
        if (theory_cmd->parsed()) return theory_check(random, theory_seed, mdp_path, phi_path, api_iters);
        if (grad_cmd->parsed()) return gradcheck(grad_seed);
        if (venv->parsed()) return validate_env(venv_common, pairs);
    } catch (const harness::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kConfig;
    } catch (const harness::SuiteError& e) {
        std::cerr << e.what();
        return kRuntime;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kRuntime;
    }
    std::cerr << app.help();
    return kConfig;
}
