#pragma once

#include <algorithm>

#include "obstransfer/theory/dp.hpp"

namespace obstransfer::theory {

struct Approx {
    MatrixXd h;      // num_classes x A
    MatrixXd Q_hat;  // S x A, h broadcast over classes
    double err = 0.0;
};

// Best class-constant fit in sup norm: the midpoint of each class's range.
inline Approx approx_operator(const RepMap& rep, const MatrixXd& Q)
{
    if (static_cast<std::size_t>(Q.rows()) != rep.num_states()) throw ShapeError("approx_operator: Q rows != states");
    const long C = static_cast<long>(rep.num_classes()), A = Q.cols();
    MatrixXd lo = MatrixXd::Constant(C, A, std::numeric_limits<double>::infinity());
    MatrixXd hi = -lo;
    for (long s = 0; s < Q.rows(); ++s) {
        const long c = static_cast<long>(rep.cls[s]);
        lo.row(c) = lo.row(c).cwiseMin(Q.row(s));
        hi.row(c) = hi.row(c).cwiseMax(Q.row(s));
    }
    Approx out;
    out.h = 0.5 * (lo + hi);
    out.Q_hat.resize(Q.rows(), A);
    for (long s = 0; s < Q.rows(); ++s) out.Q_hat.row(s) = out.h.row(static_cast<long>(rep.cls[s]));
    out.err = sup_norm(out.Q_hat - Q);
    return out;
}

struct EncodedPolicy {
    std::vector<std::size_t> class_action;

    Policy expand(const RepMap& rep) const
    {
        Policy pi(rep.num_states());
        for (std::size_t s = 0; s < pi.size(); ++s) pi[s] = class_action[rep.cls[s]];
        return pi;
    }
};

inline bool is_encoded(const RepMap& rep, const Policy& pi)
{
    if (pi.size() != rep.num_states()) return false;
    for (std::size_t s = 0; s < pi.size(); ++s)
        if (pi[s] != pi[rep.leader[rep.cls[s]]]) return false;
    return true;
}

inline constexpr std::size_t kEnumerationCap = 100000;

struct EnumerationCapError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

inline std::size_t count_encoded_policies(std::size_t C, std::size_t A, std::size_t cap = kEnumerationCap)
{
    std::size_t n = 1;
    for (std::size_t i = 0; i < C; ++i) {
        if (n > cap / std::max<std::size_t>(A, 1))
            throw EnumerationCapError("encoded policy set exceeds the enumeration cap of " + std::to_string(cap));
        n *= A;
    }
    if (n > cap) throw EnumerationCapError("encoded policy set exceeds the enumeration cap of " + std::to_string(cap));
    return n;
}

// All deterministic class -> action maps, in odometer order with class 0
// varying fastest.
inline std::vector<EncodedPolicy> enumerate_encoded_policies(const RepMap& rep, std::size_t A,
                                                             std::size_t cap = kEnumerationCap)
{
    const std::size_t C = rep.num_classes();
    const std::size_t n = count_encoded_policies(C, A, cap);
    std::vector<EncodedPolicy> out;
    out.reserve(n);
    EncodedPolicy cur{std::vector<std::size_t>(C, 0)};
    for (std::size_t i = 0; i < n; ++i) {
        out.push_back(cur);
        for (std::size_t c = 0; c < C; ++c) {
            if (++cur.class_action[c] < A) break;
            cur.class_action[c] = 0;
        }
    }
    return out;
}

// max over encoded policies of ||H_phi Q_pi - Q_pi||_inf
inline double epsilon_sufficiency(const TabularMDP& m, const RepMap& rep, std::size_t cap = kEnumerationCap)
{
    double eps = 0.0;
    for (const auto& ep : enumerate_encoded_policies(rep, m.A, cap))
        eps = std::max(eps, approx_operator(rep, policy_eval(m, ep.expand(rep))).err);
    return eps;
}

struct ApiResult {
    std::vector<Policy> policies;  // pi_0 .. pi_K
    std::vector<double> gaps;      // ||Q* - Q_{pi_k}||_inf
    double limsup_gap = 0.0;       // max over k in [K/2, K]
};

// Approximate policy iteration: Q_k = H_phi Q_{pi_k}, pi_{k+1} = greedy(Q_k).
// API can cycle, so the limsup is taken as the max over the second half.
inline ApiResult api_run(const TabularMDP& m, const RepMap& rep, const Policy& pi0, std::size_t K = 100,
                         const MatrixXd* Q_star = nullptr)
{
    if (!is_encoded(rep, pi0)) throw std::invalid_argument("api_run: pi0 is not an encoded policy");
    const MatrixXd Qs = Q_star ? *Q_star : policy_iteration(m).Q;
    ApiResult r;
    Policy pi = pi0;
    for (std::size_t k = 0; k <= K; ++k) {
        if (!is_encoded(rep, pi)) throw StateError("api_run: iterate " + std::to_string(k) + " left the encoded policy set");
        const MatrixXd Q = policy_eval(m, pi);
        r.policies.push_back(pi);
        r.gaps.push_back(sup_norm(Qs - Q));
        if (k >= K / 2) r.limsup_gap = std::max(r.limsup_gap, r.gaps.back());
        pi = greedy(approx_operator(rep, Q).Q_hat);
    }
    return r;
}

struct ModelEps {
    double eps_P = 0.0, eps_R = 0.0;
};

// eps_P = max ||sum_s' P(s'|s,a) Phi[s'] - P_hat_a Phi[s]||_2,
// eps_R = max |R(s, a) - R_hat_a . Phi[s]|
inline ModelEps model_sufficiency_eps(const TabularMDP& m, const RepMap& rep, const LatentModel& lm)
{
    const long d = rep.Phi.cols();
    if (lm.P_hat.size() != m.A || lm.R_hat.size() != m.A) throw ShapeError("latent model has wrong action count");
    ModelEps e;
    for (std::size_t a = 0; a < m.A; ++a) {
        if (lm.P_hat[a].rows() != d || lm.P_hat[a].cols() != d || lm.R_hat[a].size() != d)
            throw ShapeError("latent model dims disagree with representation");
        const MatrixXd expected = m.P[a] * rep.Phi;                      // S x d
        const MatrixXd predicted = rep.Phi * lm.P_hat[a].transpose();    // S x d
        const VectorXd rhat = rep.Phi * lm.R_hat[a];
        e.eps_P = std::max(e.eps_P, (expected - predicted).rowwise().norm().maxCoeff());
        e.eps_R = std::max(e.eps_R, (m.R.col(a) - rhat).cwiseAbs().maxCoeff());
    }
    return e;
}

}  // namespace obstransfer::theory
