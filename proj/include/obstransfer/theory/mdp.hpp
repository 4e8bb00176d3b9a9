#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "obstransfer/common.hpp"
#include "obstransfer/random.hpp"

namespace obstransfer::theory {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Deterministic per-state action choice.
using Policy = std::vector<std::size_t>;

struct TabularMDP {
    std::size_t S = 0, A = 0;
    std::vector<MatrixXd> P;  // P[a](s, s')
    MatrixXd R;               // S x A
    double gamma = 0.9;

    TabularMDP() = default;
    TabularMDP(std::size_t s, std::size_t a, double g) : S(s), A(a), P(a, MatrixXd::Zero(s, s)), R(MatrixXd::Zero(s, a)), gamma(g) {}

    void validate() const
    {
        if (S == 0 || A == 0) throw std::invalid_argument("mdp: need at least one state and one action");
        if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("mdp: gamma must be in (0, 1)");
        if (P.size() != A || R.rows() != static_cast<long>(S) || R.cols() != static_cast<long>(A))
            throw ShapeError("mdp: P/R dimensions disagree with S, A");
        if (!R.allFinite()) throw std::invalid_argument("mdp: rewards must be finite");
        for (std::size_t a = 0; a < A; ++a) {
            if (P[a].rows() != static_cast<long>(S) || P[a].cols() != static_cast<long>(S))
                throw ShapeError("mdp: P[a] must be S x S");
            for (std::size_t s = 0; s < S; ++s) {
                const auto row = P[a].row(static_cast<long>(s));
                if ((row.array() < 0.0).any() || !row.allFinite())
                    throw std::invalid_argument("mdp: negative or non-finite probability at s=" + std::to_string(s) +
                                                " a=" + std::to_string(a));
                if (std::abs(row.sum() - 1.0) > 1e-12)
                    throw std::invalid_argument("mdp: P[" + std::to_string(s) + "," + std::to_string(a) +
                                                ",.] does not sum to 1");
            }
        }
    }

    bool deterministic() const
    {
        for (const auto& p : P)
            for (long s = 0; s < p.rows(); ++s)
                if (p.row(s).maxCoeff() != 1.0) return false;
        return true;
    }

    // P_pi and R_pi for a deterministic policy.
    MatrixXd P_pi(const Policy& pi) const
    {
        MatrixXd out(S, S);
        for (std::size_t s = 0; s < S; ++s) out.row(s) = P[pi[s]].row(s);
        return out;
    }

    VectorXd R_pi(const Policy& pi) const
    {
        VectorXd out(S);
        for (std::size_t s = 0; s < S; ++s) out[s] = R(s, pi[s]);
        return out;
    }
};

// Phi with its exact-equality partition. Rows are compared after rounding to
// 12 decimals so float noise from constructions does not split a class.
struct RepMap {
    MatrixXd Phi;                     // S x d
    std::vector<std::size_t> cls;     // state -> class, numbered by first appearance
    std::vector<std::size_t> leader;  // class -> first state in it
    MatrixXd Z;                       // num_classes x d, one row per class

    std::size_t num_states() const { return cls.size(); }
    std::size_t num_classes() const { return leader.size(); }
    std::size_t dim() const { return static_cast<std::size_t>(Phi.cols()); }
};

inline double round12(double v) { return std::round(v * 1e12) / 1e12; }

inline RepMap make_repmap(const MatrixXd& Phi)
{
    if (Phi.rows() == 0 || Phi.cols() == 0) throw ShapeError("repmap: empty Phi");
    if (!Phi.allFinite()) throw std::invalid_argument("repmap: Phi must be finite");
    RepMap r;
    r.Phi = Phi.unaryExpr([](double v) { return round12(v); });
    std::map<std::vector<double>, std::size_t> seen;
    for (long s = 0; s < r.Phi.rows(); ++s) {
        std::vector<double> key(static_cast<std::size_t>(r.Phi.cols()));
        for (long j = 0; j < r.Phi.cols(); ++j) key[static_cast<std::size_t>(j)] = r.Phi(s, j) + 0.0;  // folds -0 into 0
        auto [it, inserted] = seen.emplace(key, r.leader.size());
        if (inserted) r.leader.push_back(static_cast<std::size_t>(s));
        r.cls.push_back(it->second);
    }
    r.Z.resize(static_cast<long>(r.leader.size()), r.Phi.cols());
    for (std::size_t c = 0; c < r.leader.size(); ++c) r.Z.row(static_cast<long>(c)) = r.Phi.row(static_cast<long>(r.leader[c]));
    return r;
}

// Strictly linear latent model: next rep predicted as P_hat[a] * z, reward as
// R_hat[a] . z.
struct LatentModel {
    std::vector<MatrixXd> P_hat;  // d x d
    std::vector<VectorXd> R_hat;  // d
};

// Moore-Penrose pseudoinverse by SVD; singular values below 1e-10 * sigma_max
// are treated as zero.
inline MatrixXd pinv(const MatrixXd& M)
{
    Eigen::JacobiSVD<MatrixXd> svd(M, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const VectorXd& sv = svd.singularValues();
    const double cut = sv.size() ? 1e-10 * sv[0] : 0.0;
    VectorXd inv(sv.size());
    for (long i = 0; i < sv.size(); ++i) inv[i] = sv[i] > cut ? 1.0 / sv[i] : 0.0;
    return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

// Least-squares latent fit: P_hat[a]^T = Phi^+ P_a Phi, R_hat[a] = Phi^+ R_a.
inline LatentModel fit_latent(const TabularMDP& m, const RepMap& rep)
{
    const MatrixXd Pp = pinv(rep.Phi);
    LatentModel lm;
    for (std::size_t a = 0; a < m.A; ++a) {
        lm.P_hat.push_back((Pp * m.P[a] * rep.Phi).transpose());
        lm.R_hat.push_back(Pp * m.R.col(static_cast<long>(a)));
    }
    return lm;
}

// ---- random instances ----

// Dirichlet(1) transition rows, rewards U[0, 1].
inline TabularMDP random_mdp(std::size_t S, std::size_t A, double gamma, Rng& rng)
{
    TabularMDP m(S, A, gamma);
    for (std::size_t a = 0; a < A; ++a)
        for (std::size_t s = 0; s < S; ++s) {
            double tot = 0.0;
            for (std::size_t t = 0; t < S; ++t) tot += m.P[a](s, t) = rng.exponential();
            m.P[a].row(s) /= tot;
            // Division can leave the row sum a few ulps off 1; fold the
            // remainder into the largest entry.
            long j;
            m.P[a].row(s).maxCoeff(&j);
            m.P[a](s, j) += 1.0 - m.P[a].row(s).sum();
        }
    for (std::size_t s = 0; s < S; ++s)
        for (std::size_t a = 0; a < A; ++a) m.R(s, a) = rng.uniform();
    return m;
}

inline TabularMDP random_deterministic_mdp(std::size_t S, std::size_t A, double gamma, Rng& rng)
{
    TabularMDP m(S, A, gamma);
    for (std::size_t a = 0; a < A; ++a)
        for (std::size_t s = 0; s < S; ++s) m.P[a](s, rng.index(S)) = 1.0;
    for (std::size_t s = 0; s < S; ++s)
        for (std::size_t a = 0; a < A; ++a) m.R(s, a) = rng.uniform();
    return m;
}

// Random surjective state -> class assignment.
inline std::vector<std::size_t> random_partition(std::size_t S, std::size_t C, Rng& rng)
{
    if (C == 0 || C > S) throw std::invalid_argument("partition: need 1 <= C <= S");
    std::vector<std::size_t> perm(S);
    for (std::size_t i = 0; i < S; ++i) perm[i] = i;
    for (std::size_t i = S; i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
    std::vector<std::size_t> cls(S);
    for (std::size_t i = 0; i < S; ++i) cls[perm[i]] = i < C ? i : rng.index(C);
    return cls;
}

// Phi whose rows are Gaussian class vectors (d x C rank C with probability 1
// when d >= C).
inline MatrixXd class_features(const std::vector<std::size_t>& cls, std::size_t C, std::size_t d, Rng& rng)
{
    MatrixXd Zc(C, d);
    for (std::size_t c = 0; c < C; ++c)
        for (std::size_t j = 0; j < d; ++j) Zc(c, j) = rng.normal();
    MatrixXd Phi(cls.size(), d);
    for (std::size_t s = 0; s < cls.size(); ++s) Phi.row(s) = Zc.row(cls[s]);
    return Phi;
}

// ---- file IO ----

inline TabularMDP read_mdp(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read MDP file '" + path + "'");
    std::string line;
    std::size_t lineno = 0;
    auto next = [&](std::istringstream& is) {
        while (std::getline(in, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            is = std::istringstream(line);
            return true;
        }
        return false;
    };
    auto fail = [&](const std::string& what) {
        return std::invalid_argument(path + ":" + std::to_string(lineno) + ": " + what);
    };
    std::istringstream is;
    if (!next(is)) throw std::invalid_argument(path + ": missing 'S A gamma' header");
    long S = 0, A = 0;
    double gamma = 0.0;
    if (!(is >> S >> A >> gamma) || S <= 0 || A <= 0) throw fail("header must be 'S A gamma'");
    TabularMDP m(static_cast<std::size_t>(S), static_cast<std::size_t>(A), gamma);
    std::vector<char> got(static_cast<std::size_t>(S * A), 0);
    for (long n = 0; n < S * A; ++n) {
        if (!next(is)) throw std::invalid_argument(path + ": expected " + std::to_string(S * A) + " transition lines");
        long s = -1, a = -1;
        double r = 0.0;
        if (!(is >> s >> a >> r) || s < 0 || s >= S || a < 0 || a >= A) throw fail("expected 's a r p_0 ... p_{S-1}'");
        auto& g = got[static_cast<std::size_t>(s * A + a)];
        if (g) throw fail("duplicate line for s=" + std::to_string(s) + " a=" + std::to_string(a));
        g = 1;
        m.R(s, a) = r;
        for (long t = 0; t < S; ++t)
            if (!(is >> m.P[a](s, t))) throw fail("expected " + std::to_string(S) + " probabilities");
        std::string extra;
        if (is >> extra) throw fail("trailing field '" + extra + "'");
    }
    if (next(is)) throw fail("unexpected extra line");
    m.validate();
    return m;
}

inline void write_mdp(const std::string& path, const TabularMDP& m)
{
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write MDP file '" + path + "'");
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", m.gamma);
    out << m.S << ' ' << m.A << ' ' << buf << '\n';
    for (std::size_t s = 0; s < m.S; ++s)
        for (std::size_t a = 0; a < m.A; ++a) {
            std::snprintf(buf, sizeof buf, "%.17g", m.R(s, a));
            out << s << ' ' << a << ' ' << buf;
            for (std::size_t t = 0; t < m.S; ++t) {
                std::snprintf(buf, sizeof buf, "%.17g", m.P[a](s, t));
                out << ' ' << buf;
            }
            out << '\n';
        }
}

inline MatrixXd read_phi(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read representation file '" + path + "'");
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::istringstream is(line);
        std::vector<double> row;
        double v;
        while (is >> v) row.push_back(v);
        if (!is.eof()) throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": malformed number");
        if (row.empty()) continue;
        if (!rows.empty() && row.size() != rows[0].size())
            throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": row width differs from line 1");
        rows.push_back(std::move(row));
    }
    if (rows.empty()) throw std::invalid_argument(path + ": no rows");
    MatrixXd Phi(rows.size(), rows[0].size());
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j) Phi(i, j) = rows[i][j];
    return Phi;
}

}  // namespace obstransfer::theory
