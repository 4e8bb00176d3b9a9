#pragma once

#include "obstransfer/theory/mdp.hpp"

namespace obstransfer::theory {

// Exact Q_pi: solve (I - gamma P_pi) V = R_pi, then Q = R + gamma P V.
inline MatrixXd policy_eval(const TabularMDP& m, const Policy& pi)
{
    if (pi.size() != m.S) throw ShapeError("policy_eval: policy has wrong length");
    for (auto a : pi)
        if (a >= m.A) throw std::invalid_argument("policy_eval: action out of range");
    const MatrixXd lhs = MatrixXd::Identity(m.S, m.S) - m.gamma * m.P_pi(pi);
    const VectorXd V = lhs.partialPivLu().solve(m.R_pi(pi));
    MatrixXd Q(m.S, m.A);
    for (std::size_t a = 0; a < m.A; ++a) Q.col(a) = m.R.col(a) + m.gamma * m.P[a] * V;
    return Q;
}

inline VectorXd state_values(const MatrixXd& Q, const Policy& pi)
{
    VectorXd V(Q.rows());
    for (long s = 0; s < Q.rows(); ++s) V[s] = Q(s, pi[s]);
    return V;
}

// Greedy with ties to the lowest action index, same rule as the DQN agent.
inline Policy greedy(const MatrixXd& Q)
{
    Policy pi(Q.rows(), 0);
    for (long s = 0; s < Q.rows(); ++s)
        for (long a = 1; a < Q.cols(); ++a)
            if (Q(s, a) > Q(s, pi[s])) pi[s] = a;
    return pi;
}

// (T* Q)(s, a) = R(s, a) + gamma sum_s' P(s'|s, a) max_a' Q(s', a')
inline MatrixXd bellman_optimal(const TabularMDP& m, const MatrixXd& Q)
{
    const VectorXd v = Q.rowwise().maxCoeff();
    MatrixXd out(m.S, m.A);
    for (std::size_t a = 0; a < m.A; ++a) out.col(a) = m.R.col(a) + m.gamma * m.P[a] * v;
    return out;
}

struct Solution {
    Policy pi;
    MatrixXd Q;
};

// Howard policy iteration from the all-zeros policy. A state switches action
// only on a strict improvement beyond 1e-12 so float noise cannot cycle; the
// returned policy is the tie-broken greedy policy of the final Q.
inline Solution policy_iteration(const TabularMDP& m)
{
    Policy pi(m.S, 0);
    MatrixXd Q = policy_eval(m, pi);
    for (int it = 0; it < 10000; ++it) {
        bool changed = false;
        for (std::size_t s = 0; s < m.S; ++s) {
            std::size_t best = pi[s];
            for (std::size_t a = 0; a < m.A; ++a)
                if (Q(s, a) > Q(s, best) + 1e-12) best = a;
            changed |= best != pi[s];
            pi[s] = best;
        }
        if (!changed) break;
        Q = policy_eval(m, pi);
    }
    pi = greedy(Q);
    return {pi, policy_eval(m, pi)};
}

// Iterates T* until successive iterates differ by at most tol in sup norm.
inline MatrixXd value_iteration(const TabularMDP& m, double tol = 1e-13)
{
    MatrixXd Q = MatrixXd::Zero(m.S, m.A);
    for (int it = 0; it < 1000000; ++it) {
        MatrixXd next = bellman_optimal(m, Q);
        const double diff = (next - Q).cwiseAbs().maxCoeff();
        Q = std::move(next);
        if (diff <= tol) return Q;
    }
    throw NumericError("value_iteration did not converge");
}

inline double sup_norm(const MatrixXd& M) { return M.size() ? M.cwiseAbs().maxCoeff() : 0.0; }

}  // namespace obstransfer::theory
