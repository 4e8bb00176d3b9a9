#pragma once

#include <optional>

#include "obstransfer/theory/sufficiency.hpp"

namespace obstransfer::theory {

inline constexpr double kBoundSlack = 1e-9;
inline constexpr double kExactTol = 1e-10;

// ---- API bound ----

struct ApiBoundReport {
    double epsilon = 0.0, bound = 0.0, observed_gap = 0.0;
    bool holds = false;
};

inline ApiBoundReport check_api_bound(const TabularMDP& m, const RepMap& rep, std::size_t K = 100)
{
    ApiBoundReport r;
    r.epsilon = epsilon_sufficiency(m, rep);
    const double g = m.gamma;
    r.bound = 2.0 * g * g * r.epsilon / ((1.0 - g) * (1.0 - g));
    r.observed_gap = api_run(m, rep, Policy(m.S, 0), K).limsup_gap;
    r.holds = r.observed_gap <= r.bound + kBoundSlack;
    return r;
}

// ---- latent MDP and K_{phi,V} ----

// Deterministic MDP on the class representatives z_c. The latent step
// P_hat_a z_c generally lands off the finite set of realised reps, so it is
// snapped to the nearest z_c' (ties to the lowest class index).
struct LatentMDP {
    std::vector<std::vector<std::size_t>> next;  // [c][a]
    MatrixXd R;                                  // C x A
    double gamma = 0.9;
};

inline std::size_t nearest_class(const RepMap& rep, const VectorXd& z)
{
    std::size_t best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < rep.num_classes(); ++c) {
        const double d = (rep.Z.row(static_cast<long>(c)).transpose() - z).squaredNorm();
        if (d < bd) {
            bd = d;
            best = c;
        }
    }
    return best;
}

inline LatentMDP latent_mdp(const RepMap& rep, const LatentModel& lm, double gamma)
{
    const std::size_t C = rep.num_classes(), A = lm.P_hat.size();
    LatentMDP L;
    L.gamma = gamma;
    L.next.assign(C, std::vector<std::size_t>(A));
    L.R.resize(C, A);
    for (std::size_t c = 0; c < C; ++c) {
        const VectorXd z = rep.Z.row(static_cast<long>(c)).transpose();
        for (std::size_t a = 0; a < A; ++a) {
            L.next[c][a] = nearest_class(rep, lm.P_hat[a] * z);
            L.R(c, a) = lm.R_hat[a].dot(z);
        }
    }
    return L;
}

inline VectorXd latent_values(const LatentMDP& L, const std::vector<std::size_t>& pi)
{
    const long C = L.R.rows();
    MatrixXd lhs = MatrixXd::Identity(C, C);
    VectorXd rhs(C);
    for (long c = 0; c < C; ++c) {
        lhs(c, static_cast<long>(L.next[c][pi[c]])) -= L.gamma;
        rhs[c] = L.R(c, pi[c]);
    }
    return lhs.partialPivLu().solve(rhs);
}

// Largest realised |V~(z1) - V~(z2)| / ||z1 - z2|| over deterministic latent
// policies and distinct class pairs.
inline double value_lipschitz(const RepMap& rep, const LatentModel& lm, double gamma)
{
    const LatentMDP L = latent_mdp(rep, lm, gamma);
    const std::size_t C = rep.num_classes();
    double K = 0.0;
    for (const auto& ep : enumerate_encoded_policies(rep, lm.P_hat.size())) {
        const VectorXd V = latent_values(L, ep.class_action);
        for (std::size_t i = 0; i < C; ++i)
            for (std::size_t j = i + 1; j < C; ++j) {
                const double dz = (rep.Z.row(static_cast<long>(i)) - rep.Z.row(static_cast<long>(j))).norm();
                if (dz > 0.0) K = std::max(K, std::abs(V[i] - V[j]) / dz);
            }
    }
    return K;
}

struct ModelBoundReport {
    ModelEps eps;
    double K_phi_V = 0.0, bound = 0.0, observed_gap = 0.0;
    bool holds = false;
    bool asserted = false;  // only deterministic instances are asserted
};

inline ModelBoundReport check_model_error_bound(const TabularMDP& m, const RepMap& rep, const LatentModel& lm, std::size_t K = 100)
{
    ModelBoundReport r;
    r.eps = model_sufficiency_eps(m, rep, lm);
    r.K_phi_V = value_lipschitz(rep, lm, m.gamma);
    const double g = m.gamma;
    r.bound = 2.0 * g * g / std::pow(1.0 - g, 3) * (r.eps.eps_R + g * r.eps.eps_P * r.K_phi_V);
    r.observed_gap = api_run(m, rep, Policy(m.S, 0), K).limsup_gap;
    r.holds = r.observed_gap <= r.bound + kBoundSlack;
    r.asserted = m.deterministic();
    return r;
}

// ---- sufficiency without linearity ----

struct ExactModelReport {
    double epsilon = 0.0;
    bool holds = false;
    bool nonlinear_witness = false;  // some Q_pi(., a) outside colspace(Phi)
    double witness_residual = 0.0;
};

inline double colspace_residual(const MatrixXd& Phi, const VectorXd& v)
{
    const VectorXd proj = Phi * (pinv(Phi) * v);
    return (v - proj).cwiseAbs().maxCoeff();
}

inline ExactModelReport check_exact_model_sufficiency(const TabularMDP& m, const RepMap& rep, const LatentModel& exact)
{
    if (!m.deterministic()) throw std::invalid_argument("check_exact_model_sufficiency: MDP must be deterministic");
    const ModelEps e = model_sufficiency_eps(m, rep, exact);
    if (e.eps_P > kExactTol || e.eps_R > kExactTol)
        throw std::invalid_argument("check_exact_model_sufficiency: latent model is not an exact fit");
    ExactModelReport r;
    for (const auto& ep : enumerate_encoded_policies(rep, m.A)) {
        const MatrixXd Q = policy_eval(m, ep.expand(rep));
        r.epsilon = std::max(r.epsilon, approx_operator(rep, Q).err);
        for (std::size_t a = 0; a < m.A; ++a)
            r.witness_residual = std::max(r.witness_residual, colspace_residual(rep.Phi, Q.col(a)));
    }
    r.holds = r.epsilon <= kBoundSlack;
    r.nonlinear_witness = r.witness_residual > 1e-8;
    return r;
}

// ---- linear sufficiency from policy-based models ----

struct LinearSufficiencyReport {
    std::size_t policies = 0, constrained = 0;
    double max_residual_constrained = 0.0;
    double max_value_error = 0.0;
    // First encoded policy (class -> action) whose constraints fail, with the
    // residual that failed.
    std::optional<std::vector<std::size_t>> violated_policy;
    double violated_residual = 0.0;
    bool holds = false;
};

inline std::size_t numeric_rank(const MatrixXd& M)
{
    Eigen::JacobiSVD<MatrixXd> svd(M);
    const VectorXd& sv = svd.singularValues();
    std::size_t r = 0;
    for (long i = 0; i < sv.size(); ++i)
        if (sv[i] > 1e-10 * sv[0]) ++r;
    return r;
}

inline LinearSufficiencyReport check_linear_sufficiency(const TabularMDP& m, const RepMap& rep)
{
    const MatrixXd& Phi = rep.Phi;
    if (numeric_rank(Phi) != static_cast<std::size_t>(Phi.cols()))
        throw std::invalid_argument("check_linear_sufficiency: Phi must have full column rank");
    const MatrixXd Pp = pinv(Phi);
    // Policy-independent parts first; they are shared by every policy.
    std::vector<MatrixXd> Pa;
    std::vector<VectorXd> Ra;
    double res_a = 0.0;
    for (std::size_t a = 0; a < m.A; ++a) {
        Pa.push_back(Pp * m.P[a] * Phi);
        Ra.push_back(Pp * m.R.col(static_cast<long>(a)));
        res_a = std::max({res_a, sup_norm(Phi * Pa[a] - m.P[a] * Phi), sup_norm(Phi * Ra[a] - m.R.col(static_cast<long>(a)))});
    }
    LinearSufficiencyReport r;
    const long d = Phi.cols();
    for (const auto& ep : enumerate_encoded_policies(rep, m.A)) {
        ++r.policies;
        const Policy pi = ep.expand(rep);
        const MatrixXd Ppi = m.P_pi(pi);
        const VectorXd Rpi = m.R_pi(pi);
        const MatrixXd Ph = Pp * Ppi * Phi;
        const VectorXd Rh = Pp * Rpi;
        const double res = std::max({res_a, sup_norm(Phi * Ph - Ppi * Phi), sup_norm(Phi * Rh - Rpi)});
        if (res >= 1e-9) {
            if (!r.violated_policy) {
                r.violated_policy = ep.class_action;
                r.violated_residual = res;
            }
            continue;
        }
        ++r.constrained;
        r.max_residual_constrained = std::max(r.max_residual_constrained, res);
        const VectorXd w = pinv(MatrixXd::Identity(d, d) - m.gamma * Ph) * Rh;
        const MatrixXd Q = policy_eval(m, pi);
        double err = sup_norm(state_values(Q, pi) - Phi * w);
        for (std::size_t a = 0; a < m.A; ++a)
            err = std::max(err, sup_norm(Q.col(static_cast<long>(a)) - Phi * (Ra[a] + m.gamma * Pa[a] * w)));
        r.max_value_error = std::max(r.max_value_error, err);
    }
    r.holds = r.constrained == r.policies && r.max_value_error <= 1e-8;
    return r;
}

// ---- transfer through an inter-task map f: target -> source ----

// Target MDP induced by f. For each (t, a) the next target state is a
// preimage of P_S(f(t), a): chosen at random when rng is given, else the
// lowest-index preimage. Requires a deterministic source whose transitions
// stay inside the image of f.
inline TabularMDP induce_target(const TabularMDP& src, const std::vector<std::size_t>& f, Rng* rng = nullptr)
{
    if (!src.deterministic()) throw std::invalid_argument("induce_target: source must be deterministic");
    std::vector<std::vector<std::size_t>> pre(src.S);
    for (std::size_t t = 0; t < f.size(); ++t) {
        if (f[t] >= src.S) throw std::invalid_argument("induce_target: f maps outside the source states");
        pre[f[t]].push_back(t);
    }
    TabularMDP tgt(f.size(), src.A, src.gamma);
    for (std::size_t t = 0; t < f.size(); ++t)
        for (std::size_t a = 0; a < src.A; ++a) {
            long s2;
            src.P[a].row(static_cast<long>(f[t])).maxCoeff(&s2);
            const auto& cand = pre[static_cast<std::size_t>(s2)];
            if (cand.empty())
                throw std::invalid_argument("induce_target: source transition leaves the image of f (s=" +
                                            std::to_string(f[t]) + ", a=" + std::to_string(a) + ")");
            tgt.P[a](t, cand[rng ? rng->index(cand.size()) : 0]) = 1.0;
            tgt.R(t, a) = src.R(f[t], a);
        }
    return tgt;
}

struct TransferReport {
    ModelEps source_eps, target_eps;
    double target_epsilon = 0.0;
    double api_gap = 0.0;
    bool holds = false;
};

inline TransferReport check_transfer(const TabularMDP& src, const std::vector<std::size_t>& f, const MatrixXd& phi_src,
                                      const LatentModel& lm, const TabularMDP& tgt)
{
    if (!src.deterministic()) throw std::invalid_argument("check_transfer: source must be deterministic");
    if (tgt.S != f.size() || tgt.A != src.A) throw ShapeError("check_transfer: target size disagrees with f");
    // Commutation: f(P_T(t, a)) = P_S(f(t), a), R_T = R_S o f.
    for (std::size_t t = 0; t < f.size(); ++t)
        for (std::size_t a = 0; a < src.A; ++a) {
            long ts, ss;
            if (tgt.P[a].row(static_cast<long>(t)).maxCoeff(&ts) != 1.0)
                throw std::invalid_argument("check_transfer: target must be deterministic");
            src.P[a].row(static_cast<long>(f[t])).maxCoeff(&ss);
            if (f[static_cast<std::size_t>(ts)] != static_cast<std::size_t>(ss) || tgt.R(t, a) != src.R(f[t], a))
                throw std::invalid_argument("check_transfer: f does not commute with the dynamics at t=" +
                                            std::to_string(t) + ", a=" + std::to_string(a));
        }
    TransferReport r;
    const RepMap rep_s = make_repmap(phi_src);
    r.source_eps = model_sufficiency_eps(src, rep_s, lm);
    if (r.source_eps.eps_P > kExactTol || r.source_eps.eps_R > kExactTol)
        throw std::invalid_argument("check_transfer: source representation is not exactly model-sufficient");

    MatrixXd phi_t(f.size(), phi_src.cols());
    for (std::size_t t = 0; t < f.size(); ++t) phi_t.row(static_cast<long>(t)) = phi_src.row(static_cast<long>(f[t]));
    const RepMap rep_t = make_repmap(phi_t);
    r.target_eps = model_sufficiency_eps(tgt, rep_t, lm);
    r.target_epsilon = epsilon_sufficiency(tgt, rep_t);
    r.api_gap = api_run(tgt, rep_t, Policy(tgt.S, 0)).limsup_gap;
    r.holds = r.target_eps.eps_P <= kExactTol && r.target_eps.eps_R <= kExactTol && r.target_epsilon <= kBoundSlack &&
              r.api_gap <= kBoundSlack;
    return r;
}

// ---- approximate value iteration ----

struct AviReport {
    ModelEps eps;
    double K_phi_h = 0.0;
    double step_bound = 0.0, final_bound = 0.0;
    double max_step_error = 0.0, final_gap = 0.0;
    std::size_t iterations = 0;
    std::vector<double> step_errors;
    bool steps_hold = false, final_holds = false;
    bool holds() const { return steps_hold && final_holds; }
};

inline AviReport check_avi(const TabularMDP& m, const RepMap& rep, const LatentModel& lm, double h0 = 1.0,
                           std::size_t max_iter = 5000)
{
    if ((m.R.array() < 0.0).any()) throw std::invalid_argument("check_avi: rewards must be nonnegative");
    if (!(h0 > 0.0)) throw std::invalid_argument("check_avi: initial constant must be positive");
    AviReport r;
    r.eps = model_sufficiency_eps(m, rep, lm);
    const std::size_t C = rep.num_classes();
    MatrixXd Q = MatrixXd::Constant(m.S, m.A, h0);
    auto lipschitz = [&](const MatrixXd& h) {
        for (std::size_t i = 0; i < C; ++i)
            for (std::size_t j = i + 1; j < C; ++j) {
                const double dz = (rep.Z.row(static_cast<long>(i)) - rep.Z.row(static_cast<long>(j))).norm();
                if (dz > 0.0)
                    r.K_phi_h = std::max(
                        r.K_phi_h,
                        (h.row(static_cast<long>(i)) - h.row(static_cast<long>(j))).cwiseAbs().maxCoeff() / dz);
            }
    };
    for (r.iterations = 0; r.iterations < max_iter; ++r.iterations) {
        const Approx ap = approx_operator(rep, bellman_optimal(m, Q));
        r.step_errors.push_back(ap.err);
        lipschitz(ap.h);
        const double diff = sup_norm(ap.Q_hat - Q);
        Q = ap.Q_hat;
        if (diff <= 1e-13) break;
    }
    const double g = m.gamma;
    r.step_bound = r.eps.eps_R + g * r.eps.eps_P * r.K_phi_h;
    r.final_bound = 2.0 * r.step_bound / ((1.0 - g) * (1.0 - g));
    r.max_step_error = *std::max_element(r.step_errors.begin(), r.step_errors.end());
    const Policy pi = greedy(Q);
    const Solution opt = policy_iteration(m);
    r.final_gap = sup_norm(state_values(opt.Q, opt.pi) - state_values(policy_eval(m, pi), pi));
    r.steps_hold = r.max_step_error <= r.step_bound + kBoundSlack;
    r.final_holds = r.final_gap <= r.final_bound + kBoundSlack;
    return r;
}

}  // namespace obstransfer::theory
