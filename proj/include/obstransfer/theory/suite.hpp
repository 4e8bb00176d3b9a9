#pragma once

#include <functional>
#include <iomanip>
#include <ostream>

#include "obstransfer/theory/checks.hpp"

namespace obstransfer::theory {

// ---- instance builders ----

struct Instance {
    TabularMDP mdp;
    MatrixXd Phi;
    std::vector<std::size_t> cls;  // generating partition, when there is one
};

// Random MDP sizes used by the randomized suites: S in [2, 8], A in [1, 3],
// gamma in {0.5, 0.9}, and a 2-4 class representation with d = C.
struct Shape {
    std::size_t S, A, C;
    double gamma;
};

inline Shape random_shape(Rng& rng, std::size_t min_classes = 2)
{
    Shape s;
    s.S = 2 + rng.index(7);
    s.A = 1 + rng.index(3);
    s.gamma = rng.bernoulli(0.5) ? 0.5 : 0.9;
    const std::size_t hi = std::min<std::size_t>(4, s.S);
    s.C = min_classes + rng.index(hi - min_classes + 1);
    return s;
}

inline MatrixXd random_class_rep(std::size_t S, std::size_t C, Rng& rng)
{
    return class_features(random_partition(S, C, rng), C, C, rng);
}

// Deterministic MDP that is an exact lift of a C-state abstract MDP: every
// state of class c moves under a to some state of class next(c, a) and earns
// r(c, a). Classes below `closed` only move among themselves. With linearly
// independent class vectors an exact linear latent model exists.
inline Instance lifted_instance(std::size_t S, std::size_t C, std::size_t A, double gamma, Rng& rng,
                                std::size_t closed = 0)
{
    if (closed == 0 || closed > C) closed = C;
    const auto cls = random_partition(S, C, rng);
    std::vector<std::vector<std::size_t>> members(C);
    for (std::size_t s = 0; s < S; ++s) members[cls[s]].push_back(s);
    std::vector<std::vector<std::size_t>> next(C, std::vector<std::size_t>(A));
    MatrixXd r(C, A);
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t a = 0; a < A; ++a) {
            next[c][a] = rng.index(c < closed ? closed : C);
            r(c, a) = rng.uniform();
        }
    Instance in{TabularMDP(S, A, gamma), class_features(cls, C, C, rng), cls};
    for (std::size_t s = 0; s < S; ++s)
        for (std::size_t a = 0; a < A; ++a) {
            const auto& m = members[next[cls[s]][a]];
            in.mdp.P[a](s, m[rng.index(m.size())]) = 1.0;
            in.mdp.R(s, a) = r(cls[s], a);
        }
    return in;
}

// Stochastic MDP lumpable w.r.t. a C-block partition: the probability of
// landing in each block and the reward depend only on the block of s. Phi is
// the block indicator mixed by a well-conditioned C x C matrix.
inline Instance lumpable_instance(std::size_t S, std::size_t C, std::size_t A, double gamma, Rng& rng)
{
    const auto cls = random_partition(S, C, rng);
    std::vector<std::vector<std::size_t>> members(C);
    for (std::size_t s = 0; s < S; ++s) members[cls[s]].push_back(s);
    Instance in{TabularMDP(S, A, gamma), MatrixXd(), {}};
    for (std::size_t a = 0; a < A; ++a)
        for (std::size_t c = 0; c < C; ++c) {
            VectorXd q(C);
            for (std::size_t b = 0; b < C; ++b) q[b] = rng.exponential();
            q /= q.sum();
            const double r = rng.uniform();
            for (auto s : members[c]) {
                in.mdp.R(s, a) = r;
                for (std::size_t b = 0; b < C; ++b) {
                    double tot = 0.0;
                    std::vector<double> w(members[b].size());
                    for (auto& x : w) tot += x = rng.exponential();
                    for (std::size_t i = 0; i < w.size(); ++i) in.mdp.P[a](s, members[b][i]) = q[b] * w[i] / tot;
                }
                long j;
                in.mdp.P[a].row(s).maxCoeff(&j);
                in.mdp.P[a](s, j) += 1.0 - in.mdp.P[a].row(s).sum();
            }
        }
    // Random rotation with scales in [0.5, 2]. A raw Gaussian mix is
    // occasionally so ill-conditioned that the 1e-8 identities fail on
    // rounding alone.
    MatrixXd g(C, C);
    for (long i = 0; i < g.size(); ++i) g.data()[i] = rng.normal();
    const MatrixXd rot = Eigen::HouseholderQR<MatrixXd>(g).householderQ();
    VectorXd scale(C);
    for (std::size_t i = 0; i < C; ++i) scale[i] = rng.uniform(0.5, 2.0);
    const MatrixXd mix = rot * scale.asDiagonal();
    in.Phi = MatrixXd::Zero(S, C);
    for (std::size_t s = 0; s < S; ++s) in.Phi.row(s) = mix.row(cls[s]);
    return in;
}

// Four states, two classes, d = 1. Action 0 stays inside the class, action 1
// swaps class. z = +1 / -1 so both moves are linear (P_hat = 1 and -1), and
// reward is +-1 under action 0. Exactly model-sufficient, yet the policy
// "stay in class 0, swap from class 1" has Q values that are not a multiple
// of Phi.
inline Instance nonlinear_witness_instance(double gamma = 0.9)
{
    Instance in{TabularMDP(4, 2, gamma), MatrixXd(4, 1), {}};
    in.Phi << 1, 1, -1, -1;
    const std::size_t stay[4] = {1, 0, 3, 2}, swap[4] = {2, 3, 0, 1};
    for (std::size_t s = 0; s < 4; ++s) {
        in.mdp.P[0](s, stay[s]) = 1.0;
        in.mdp.P[1](s, swap[s]) = 1.0;
        in.mdp.R(s, 0) = s < 2 ? 1.0 : -1.0;
        in.mdp.R(s, 1) = 0.0;
    }
    return in;
}

struct TransferInstance {
    TabularMDP source, target;
    MatrixXd phi_source;
    std::vector<std::size_t> f;
    bool surjective = true;
};

// Source: a lifted instance whose first classes form a closed set; f maps the
// target onto that closed set, several target states per source state. When
// some classes are left open the map is not surjective.
inline TransferInstance transfer_instance(Rng& rng)
{
    const std::size_t S = 3 + rng.index(4), A = 1 + rng.index(3);
    const std::size_t C = 2 + rng.index(std::min<std::size_t>(3, S - 1));
    const std::size_t closed = 1 + rng.index(C);
    const double gamma = rng.bernoulli(0.5) ? 0.5 : 0.9;
    const Instance src = lifted_instance(S, C, A, gamma, rng, closed);
    std::vector<std::size_t> image;
    for (std::size_t s = 0; s < S; ++s)
        if (src.cls[s] < closed) image.push_back(s);
    TransferInstance t;
    t.source = src.mdp;
    t.phi_source = src.Phi;
    t.surjective = image.size() == S;
    for (auto s : image) t.f.push_back(s);
    const std::size_t extra = 1 + rng.index(image.size() + 1);
    for (std::size_t i = 0; i < extra; ++i) t.f.push_back(image[rng.index(image.size())]);
    for (std::size_t i = t.f.size(); i > 1; --i) std::swap(t.f[i - 1], t.f[rng.index(i)]);
    t.target = induce_target(t.source, t.f, &rng);
    return t;
}

// ---- randomized suites ----

struct CaseResult {
    std::size_t index = 0;
    std::uint64_t seed = 0;
    bool holds = false;
    double observed = 0.0, bound = 0.0;
    std::string note;
};

struct SuiteResult {
    std::string name;
    std::vector<CaseResult> cases;

    std::size_t passed() const
    {
        return static_cast<std::size_t>(std::count_if(cases.begin(), cases.end(), [](const auto& c) { return c.holds; }));
    }
    bool all_hold() const { return passed() == cases.size(); }
};

template <class F>
SuiteResult run_cases(const std::string& name, std::size_t n, std::uint64_t seed, F&& one)
{
    SuiteResult out{name, {}};
    for (std::size_t i = 0; i < n; ++i) {
        const std::uint64_t s = derive_seed(seed, i);
        Rng rng(s);
        CaseResult c = one(rng);
        c.index = i;
        c.seed = s;
        out.cases.push_back(std::move(c));
    }
    return out;
}

inline SuiteResult suite_api_bound(std::size_t n, std::uint64_t seed)
{
    return run_cases("api-bound", n, seed, [](Rng& rng) {
        const Shape sh = random_shape(rng);
        const TabularMDP m = random_mdp(sh.S, sh.A, sh.gamma, rng);
        const auto r = check_api_bound(m, make_repmap(random_class_rep(sh.S, sh.C, rng)));
        return CaseResult{0, 0, r.holds, r.observed_gap, r.bound, "eps=" + std::to_string(r.epsilon)};
    });
}

inline SuiteResult suite_model_error_bound(std::size_t n, std::uint64_t seed)
{
    return run_cases("model-error-bound", n, seed, [](Rng& rng) {
        const Shape sh = random_shape(rng);
        const TabularMDP m = random_deterministic_mdp(sh.S, sh.A, sh.gamma, rng);
        const RepMap rep = make_repmap(random_class_rep(sh.S, sh.C, rng));
        const auto r = check_model_error_bound(m, rep, fit_latent(m, rep));
        return CaseResult{0, 0, r.holds, r.observed_gap, r.bound, "K=" + std::to_string(r.K_phi_V)};
    });
}

// Lifted exact instances; case 0 is the hand-built nonlinear witness. The
// suite additionally requires that at least one case shows a witness.
inline SuiteResult suite_sufficiency_without_linearity(std::size_t n, std::uint64_t seed)
{
    std::size_t k = 0;
    auto res = run_cases("sufficiency-without-linearity", n, seed, [&k](Rng& rng) {
        const Instance in = k++ == 0 ? nonlinear_witness_instance() : [&] {
            const Shape sh = random_shape(rng);
            return lifted_instance(sh.S, sh.C, sh.A, sh.gamma, rng);
        }();
        const RepMap rep = make_repmap(in.Phi);
        const auto r = check_exact_model_sufficiency(in.mdp, rep, fit_latent(in.mdp, rep));
        return CaseResult{0, 0, r.holds, r.epsilon, kBoundSlack, r.nonlinear_witness ? "witness" : ""};
    });
    const bool any_witness =
        std::any_of(res.cases.begin(), res.cases.end(), [](const auto& c) { return c.note == "witness"; });
    if (!any_witness)
        for (auto& c : res.cases) c.holds = false;
    return res;
}

inline SuiteResult suite_linear_sufficiency(std::size_t n, std::uint64_t seed)
{
    return run_cases("linear-sufficiency", n, seed, [](Rng& rng) {
        const Shape sh = random_shape(rng);
        const Instance in = lumpable_instance(sh.S, sh.C, sh.A, sh.gamma, rng);
        const auto r = check_linear_sufficiency(in.mdp, make_repmap(in.Phi));
        return CaseResult{0, 0, r.holds, r.max_value_error, 1e-8,
                          std::to_string(r.constrained) + "/" + std::to_string(r.policies) + " policies"};
    });
}

inline SuiteResult suite_transfer(std::size_t n, std::uint64_t seed)
{
    return run_cases("transfer", n, seed, [](Rng& rng) {
        const TransferInstance t = transfer_instance(rng);
        const LatentModel lm = fit_latent(t.source, make_repmap(t.phi_source));
        const auto r = check_transfer(t.source, t.f, t.phi_source, lm, t.target);
        const double err = std::max({r.target_eps.eps_P, r.target_eps.eps_R, r.target_epsilon, r.api_gap});
        return CaseResult{0, 0, r.holds, err, kExactTol, t.surjective ? "surjective" : "non-surjective"};
    });
}

inline SuiteResult suite_avi(std::size_t n, std::uint64_t seed)
{
    return run_cases("avi-bound", n, seed, [](Rng& rng) {
        const Shape sh = random_shape(rng);
        const TabularMDP m = random_mdp(sh.S, sh.A, sh.gamma, rng);
        const RepMap rep = make_repmap(random_class_rep(sh.S, sh.C, rng));
        const auto r = check_avi(m, rep, fit_latent(m, rep));
        std::string note = "step " + std::to_string(r.max_step_error) + " <= " + std::to_string(r.step_bound);
        return CaseResult{0, 0, r.holds(), r.final_gap, r.final_bound, note};
    });
}

inline void print_summary(std::ostream& os, const std::vector<SuiteResult>& suites)
{
    os << std::left << std::setw(32) << "check" << std::setw(10) << "passed" << std::setw(14) << "max observed"
       << "worst margin\n";
    for (const auto& s : suites) {
        double max_obs = 0.0, worst = std::numeric_limits<double>::infinity();
        for (const auto& c : s.cases) {
            max_obs = std::max(max_obs, c.observed);
            worst = std::min(worst, c.bound - c.observed);
        }
        std::ostringstream p;
        p << s.passed() << "/" << s.cases.size();
        os << std::setw(32) << s.name << std::setw(10) << p.str() << std::setw(14) << std::setprecision(4) << max_obs
           << worst << '\n';
    }
}

}  // namespace obstransfer::theory
