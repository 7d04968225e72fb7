#pragma once

// Sparse convex QP modelling and a primal-dual interior-point solver.
//
//   minimize    1/2 x'Px + q'x + c
//   subject to  Ax  = b
//               Gx <= h
//
// The Newton system is reduced to the quasi-definite form
//   [P + G'WG + dp I   A'    ] [dx]   [r1]
//   [A                 -dd I ] [dy] = [r2]
// and factored with a sparse LDL' (AMD ordering), followed by iterative
// refinement against the unregularized matrix.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "core.hpp"

namespace ddpc::qp {

using Var = int;
inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// Sparse affine expression sum_i c_i x_i + c0 over model variables.
class LinExpr {
public:
    LinExpr() = default;
    LinExpr(double constant) : constant_(constant) {} // NOLINT: implicit by design of the algebra

    static LinExpr variable(Var v, double coef = 1.0)
    {
        LinExpr e;
        e.add_term(v, coef);
        return e;
    }

    void add_term(Var v, double coef)
    {
        if (coef == 0.0) return;
        terms_.emplace_back(v, coef);
        normalized_ = false;
    }
    void add_constant(double c) { constant_ += c; }
    double constant() const { return constant_; }

    /// Terms sorted by variable with duplicates merged.
    const std::vector<std::pair<Var, double>>& terms() const
    {
        normalize();
        return terms_;
    }
    bool is_constant() const { return terms().empty(); }

    double evaluate(const Eigen::VectorXd& x) const
    {
        double v = constant_;
        for (const auto& [i, c] : terms_) v += c * x[i];
        return v;
    }

    LinExpr& operator+=(const LinExpr& o)
    {
        terms_.insert(terms_.end(), o.terms_.begin(), o.terms_.end());
        constant_ += o.constant_;
        normalized_ = normalized_ && o.terms_.empty();
        return *this;
    }
    LinExpr& operator-=(const LinExpr& o)
    {
        terms_.reserve(terms_.size() + o.terms_.size());
        for (const auto& [i, c] : o.terms_) terms_.emplace_back(i, -c);
        constant_ -= o.constant_;
        normalized_ = normalized_ && o.terms_.empty();
        return *this;
    }
    LinExpr& operator*=(double s)
    {
        if (s == 0.0) {
            terms_.clear();
            constant_ = 0.0;
            normalized_ = true;
            return *this;
        }
        for (auto& t : terms_) t.second *= s;
        constant_ *= s;
        return *this;
    }
    /// this += s * o, without a temporary.
    void add_scaled(const LinExpr& o, double s)
    {
        if (s == 0.0) return;
        for (const auto& [i, c] : o.terms_) terms_.emplace_back(i, s * c);
        constant_ += s * o.constant_;
        if (!o.terms_.empty()) normalized_ = false;
    }

private:
    void normalize() const
    {
        if (normalized_) return;
        std::sort(terms_.begin(), terms_.end(), [](auto& a, auto& b) { return a.first < b.first; });
        std::size_t out = 0;
        for (std::size_t k = 0; k < terms_.size();) {
            Var v = terms_[k].first;
            double c = 0.0;
            for (; k < terms_.size() && terms_[k].first == v; ++k) c += terms_[k].second;
            if (c != 0.0) terms_[out++] = {v, c};
        }
        terms_.resize(out);
        normalized_ = true;
    }

    mutable std::vector<std::pair<Var, double>> terms_;
    double constant_ = 0.0;
    mutable bool normalized_ = true;
};

inline LinExpr operator+(LinExpr a, const LinExpr& b) { return a += b; }
inline LinExpr operator-(LinExpr a, const LinExpr& b) { return a -= b; }
inline LinExpr operator*(double s, LinExpr a) { return a *= s; }
inline LinExpr operator*(LinExpr a, double s) { return a *= s; }
inline LinExpr operator-(LinExpr a) { return a *= -1.0; }

enum class Status { optimal, inaccurate, infeasible, max_iterations, numerical_error };

inline const char* to_string(Status s)
{
    switch (s) {
    case Status::optimal: return "optimal";
    case Status::inaccurate: return "inaccurate";
    case Status::infeasible: return "infeasible";
    case Status::max_iterations: return "max_iterations";
    case Status::numerical_error: return "numerical_error";
    }
    return "?";
}

struct Settings {
    int max_iterations = 100;
    double tol_feas = 1e-9;
    double tol_gap = 1e-7;
    double regularization = 1e-8;
    int refinement_steps = 10;
};

struct Solution {
    Status status = Status::numerical_error;
    Eigen::VectorXd x;
    double objective = 0.0;
    int iterations = 0;
    double primal_residual = kInf;
    double dual_residual = kInf;
    double gap = kInf;
    std::string message;

    bool ok() const { return status == Status::optimal || status == Status::inaccurate; }
    double value(const LinExpr& e) const { return e.evaluate(x); }
    double value(Var v) const { return x[v]; }
};

/// Incrementally built QP. Variable bounds are turned into inequality rows.
class Model {
public:
    Var add_variable(double lb = -kInf, double ub = kInf)
    {
        const Var v = n_++;
        if (std::isfinite(ub)) add_row(ineq_, LinExpr::variable(v), ub);
        if (std::isfinite(lb)) add_row(ineq_, LinExpr::variable(v, -1.0), -lb);
        return v;
    }

    std::vector<Var> add_variables(int count, double lb = -kInf, double ub = kInf)
    {
        std::vector<Var> vs(static_cast<std::size_t>(count));
        for (auto& v : vs) v = add_variable(lb, ub);
        return vs;
    }

    /// e == rhs
    void add_eq(const LinExpr& e, double rhs = 0.0) { add_row(eq_, e, rhs); }
    /// e <= rhs
    void add_leq(const LinExpr& e, double rhs = 0.0) { add_row(ineq_, e, rhs); }
    /// e >= rhs
    void add_geq(const LinExpr& e, double rhs = 0.0) { add_row(ineq_, -e, -rhs); }
    void add_range(const LinExpr& e, double lo, double hi)
    {
        if (std::isfinite(hi)) add_leq(e, hi);
        if (std::isfinite(lo)) add_geq(e, lo);
    }

    void add_linear_cost(const LinExpr& e)
    {
        for (const auto& [i, c] : e.terms()) lin_.emplace_back(i, c);
        offset_ += e.constant();
    }

    /// weight * e^2
    void add_squared_cost(const LinExpr& e, double weight)
    {
        if (weight == 0.0) return;
        const auto& t = e.terms();
        const double c = e.constant();
        for (const auto& [i, ci] : t) {
            for (const auto& [j, cj] : t) quad_.emplace_back(i, j, 2.0 * weight * ci * cj);
            lin_.emplace_back(i, 2.0 * weight * c * ci);
        }
        offset_ += weight * c * c;
    }

    /// Records a contradiction found while building (e.g. 0 == 1).
    void mark_infeasible(std::string reason)
    {
        if (infeasible_reason_.empty()) infeasible_reason_ = std::move(reason);
    }

    int num_variables() const { return n_; }
    std::size_t num_equalities() const { return eq_.rows.size(); }
    std::size_t num_inequalities() const { return ineq_.rows.size(); }

    friend Solution solve(const Model& model, const Settings& settings);

private:
    struct Rows {
        std::vector<Eigen::Triplet<double>> entries;
        std::vector<double> rhs;
        std::vector<int> rows;
    };

    void add_row(Rows& r, const LinExpr& e, double rhs)
    {
        const auto& t = e.terms();
        const double b = rhs - e.constant();
        if (t.empty()) {
            const bool is_eq = &r == &eq_;
            const double tol = 1e-12 * std::max(1.0, std::abs(rhs));
            if ((is_eq && std::abs(b) > tol) || (!is_eq && b < -tol))
                mark_infeasible("constant constraint violated by " + std::to_string(std::abs(b)));
            return;
        }
        const int row = static_cast<int>(r.rhs.size());
        for (const auto& [i, c] : t) r.entries.emplace_back(row, i, c);
        r.rhs.push_back(b);
        r.rows.push_back(row);
    }

    int n_ = 0;
    Rows eq_, ineq_;
    std::vector<Eigen::Triplet<double>> quad_;
    std::vector<std::pair<Var, double>> lin_;
    double offset_ = 0.0;
    std::string infeasible_reason_;
};

namespace detail {

using SpMat = Eigen::SparseMatrix<double, Eigen::ColMajor, int>;

inline double inf_norm(const Eigen::VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

/// Largest step in (0, 1] keeping v + a*dv > 0.
inline double max_step(const Eigen::VectorXd& v, const Eigen::VectorXd& dv)
{
    double a = 1.0;
    for (Eigen::Index i = 0; i < v.size(); ++i)
        if (dv[i] < 0.0) a = std::min(a, -v[i] / dv[i]);
    return a;
}

inline void scale_rows(SpMat& M, Eigen::VectorXd& rhs)
{
    Eigen::VectorXd norms = Eigen::VectorXd::Zero(M.rows());
    for (int k = 0; k < M.outerSize(); ++k)
        for (SpMat::InnerIterator it(M, k); it; ++it)
            norms[it.row()] = std::max(norms[it.row()], std::abs(it.value()));
    for (Eigen::Index i = 0; i < norms.size(); ++i) norms[i] = norms[i] > 0 ? 1.0 / norms[i] : 1.0;
    M = norms.asDiagonal() * M;
    rhs = norms.asDiagonal() * rhs;
}

} // namespace detail

inline Solution solve(const Model& model, const Settings& settings = {})
{
    using detail::SpMat;
    const auto t0 = std::chrono::steady_clock::now();
    Solution sol;
    const int n = model.n_;
    sol.x = Eigen::VectorXd::Zero(n);
    if (!model.infeasible_reason_.empty()) {
        sol.status = Status::infeasible;
        sol.message = model.infeasible_reason_;
        return sol;
    }

    SpMat P(n, n);
    P.setFromTriplets(model.quad_.begin(), model.quad_.end());
    Eigen::VectorXd q = Eigen::VectorXd::Zero(n);
    for (const auto& [i, c] : model.lin_) q[i] += c;

    const int m = static_cast<int>(model.eq_.rhs.size());
    const int p = static_cast<int>(model.ineq_.rhs.size());
    SpMat A(m, n), G(p, n);
    A.setFromTriplets(model.eq_.entries.begin(), model.eq_.entries.end());
    G.setFromTriplets(model.ineq_.entries.begin(), model.ineq_.entries.end());
    Eigen::VectorXd b = Eigen::Map<const Eigen::VectorXd>(model.eq_.rhs.data(), m);
    Eigen::VectorXd h = Eigen::Map<const Eigen::VectorXd>(model.ineq_.rhs.data(), p);
    detail::scale_rows(A, b);
    detail::scale_rows(G, h);

    const double reg = settings.regularization;
    const SpMat At = A.transpose();
    const SpMat Gt = G.transpose();

    // Augmented quasi-definite KKT matrix over (x, y, z):
    //   [P  A'  G'; A  0  0; G  0  -S/Z]
    // Inequality rows stay separate, so dense rows cause no fill. The pattern
    // is fixed; only the (z, z) diagonal changes between iterations.
    const int dim = n + m + p;
    SpMat K_exact(dim, dim);
    {
        std::vector<Eigen::Triplet<double>> t;
        t.reserve(static_cast<std::size_t>(P.nonZeros() + 2 * A.nonZeros() + 2 * G.nonZeros() + dim));
        for (int k = 0; k < n; ++k)
            for (SpMat::InnerIterator it(P, k); it; ++it) t.emplace_back(it.row(), it.col(), it.value());
        for (int k = 0; k < n; ++k) {
            for (SpMat::InnerIterator it(A, k); it; ++it) {
                t.emplace_back(n + it.row(), k, it.value());
                t.emplace_back(k, n + it.row(), it.value());
            }
            for (SpMat::InnerIterator it(G, k); it; ++it) {
                t.emplace_back(n + m + it.row(), k, it.value());
                t.emplace_back(k, n + m + it.row(), it.value());
            }
        }
        for (int i = 0; i < dim; ++i) t.emplace_back(i, i, 0.0);
        K_exact.setFromTriplets(t.begin(), t.end());
        K_exact.makeCompressed();
    }
    std::vector<int> diag_pos(static_cast<std::size_t>(dim));
    for (int k = 0; k < dim; ++k)
        for (int q_ = K_exact.outerIndexPtr()[k]; q_ < K_exact.outerIndexPtr()[k + 1]; ++q_)
            if (K_exact.innerIndexPtr()[q_] == k) diag_pos[static_cast<std::size_t>(k)] = q_;
    SpMat K = K_exact;

    Eigen::SimplicialLDLT<SpMat, Eigen::Lower, Eigen::AMDOrdering<int>> ldlt;
    ldlt.analyzePattern(K);

    // Factors with (z, z) block -d (d > 0 elementwise).
    auto factor = [&](const Eigen::VectorXd& d) {
        for (int i = 0; i < p; ++i) K_exact.valuePtr()[diag_pos[static_cast<std::size_t>(n + m + i)]] = -d[i];
        std::copy(K_exact.valuePtr(), K_exact.valuePtr() + K_exact.nonZeros(), K.valuePtr());
        // The factored copy keeps the scaling within a bounded range; refinement
        // against the exact matrix recovers the true direction.
        for (int i = 0; i < p; ++i)
            K.valuePtr()[diag_pos[static_cast<std::size_t>(n + m + i)]] = -std::clamp(d[i], 1e-12, 1e12);
        for (int i = 0; i < dim; ++i) K.valuePtr()[diag_pos[static_cast<std::size_t>(i)]] += i < n ? reg : -reg;
        ldlt.factorize(K);
        return ldlt.info() == Eigen::Success;
    };
    auto kkt_solve = [&](const Eigen::VectorXd& rhs) {
        Eigen::VectorXd sol_v = ldlt.solve(rhs);
        const double target = 1e-12 * (1.0 + detail::inf_norm(rhs));
        for (int r = 0; r < settings.refinement_steps; ++r) {
            Eigen::VectorXd res = rhs - K_exact.selfadjointView<Eigen::Lower>() * sol_v;
            if (detail::inf_norm(res) <= target) break;
            sol_v += ldlt.solve(res);
        }
        return sol_v;
    };

    // Starting point: separate primal and dual least-squares fits, shifted
    // into the positive orthant.
    Eigen::VectorXd x(n), y = Eigen::VectorXd::Zero(m), s(p), z(p);
    {
        if (!factor(Eigen::VectorXd::Ones(p))) {
            sol.message = "initial factorization failed";
            return sol;
        }
        log().debug("qp kkt dim {} nnz {} L nnz {}", dim, K.nonZeros(), ldlt.matrixL().nestedExpression().nonZeros());
        Eigen::VectorXd rhs(dim);
        rhs << Eigen::VectorXd::Zero(n), b, h;
        const Eigen::VectorXd primal = kkt_solve(rhs);
        x = primal.head(n);
        s = h - G * x;
        rhs << -q, Eigen::VectorXd::Zero(m + p);
        const Eigen::VectorXd dual = kkt_solve(rhs);
        y = dual.segment(n, m);
        z = dual.tail(p);
        if (p > 0) {
            // Mehrotra's shift: make both positive, then balance the products.
            s.array() += std::max(-1.5 * s.minCoeff(), 0.0);
            z.array() += std::max(-1.5 * z.minCoeff(), 0.0);
            const double sz = s.dot(z);
            const double ds = sz > 0 ? 0.5 * sz / z.sum() : 1.0;
            const double dz = sz > 0 ? 0.5 * sz / s.sum() : 1.0;
            s.array() += ds;
            z.array() += dz;
        }
    }

    const double norm_q = detail::inf_norm(q);
    const double norm_b = detail::inf_norm(b);
    const double norm_h = detail::inf_norm(h);

    Eigen::VectorXd r_d, r_p, r_g;
    auto residuals = [&] {
        r_d = P * x + q + At * y + Gt * z;
        r_p = A * x - b;
        r_g = G * x + s - h;
    };

    int it = 0;
    double pres = 0, dres = 0, mu = 0;
    bool converged = false;
    bool factor_failed = false;
    double best_merit = kInf, best_pres = kInf, best_dres = kInf, best_mu = kInf;
    Eigen::VectorXd best_x = x;
    int best_it = 0;
    for (; it < settings.max_iterations; ++it) {
        residuals();
        pres = std::max(detail::inf_norm(r_p), detail::inf_norm(r_g));
        dres = detail::inf_norm(r_d);
        mu = p > 0 ? s.dot(z) / p : 0.0;
        const double pobj = 0.5 * x.dot(P * x) + q.dot(x);
        const double pscale = 1.0 + std::max({norm_b, norm_h, detail::inf_norm(x)});
        const double dscale = 1.0 + std::max(norm_q, detail::inf_norm(z));
        if (pres <= settings.tol_feas * pscale && dres <= settings.tol_feas * dscale &&
            mu * std::max(p, 1) <= settings.tol_gap * (1.0 + std::abs(pobj))) {
            converged = true;
            break;
        }
        const double merit = std::max({pres / pscale, dres / dscale, mu * std::max(p, 1) / (1.0 + std::abs(pobj))});
        if (!std::isfinite(merit)) break;
        if (merit < 0.9 * best_merit) best_it = it;
        if (merit < best_merit) {
            best_merit = merit;
            best_x = x;
            best_pres = pres;
            best_dres = dres;
            best_mu = mu;
        } else if (best_merit < 1e-7 && merit > 1e3 * best_merit) {
            break;
        }
        if (best_merit < 1e-6 && it - best_it >= 3) break;
        log().trace("qp it {} pres {:.3e} dres {:.3e} mu {:.3e} obj {:.6e}", it, pres, dres, mu, pobj);
        if (p > 0 && detail::inf_norm(z) > 1e14 && pres > 1e-6 * pscale) break;

        if (!factor(s.cwiseQuotient(z))) {
            factor_failed = true;
            break;
        }

        auto direction = [&](const Eigen::VectorXd& r_c, Eigen::VectorXd& dx, Eigen::VectorXd& dy,
                             Eigen::VectorXd& dz, Eigen::VectorXd& ds) {
            Eigen::VectorXd rhs(dim);
            if (p > 0)
                rhs << -r_d, -r_p, -r_g + r_c.cwiseQuotient(z);
            else
                rhs << -r_d, -r_p;
            const Eigen::VectorXd d = kkt_solve(rhs);
            dx = d.head(n);
            dy = d.segment(n, m);
            dz = d.tail(p);
            // Slack step from the linearized inequality rows keeps the primal
            // residual consistent even when z is tiny.
            ds = p > 0 ? Eigen::VectorXd(-r_g - G * dx) : Eigen::VectorXd();
        };

        Eigen::VectorXd dx, dy, dz, ds;
        if (p == 0) {
            direction(Eigen::VectorXd(), dx, dy, dz, ds);
            x += dx;
            y += dy;
            continue;
        }
        // Predictor.
        Eigen::VectorXd r_c = s.cwiseProduct(z);
        direction(r_c, dx, dy, dz, ds);
        const double a_aff = std::min(detail::max_step(s, ds), detail::max_step(z, dz));
        const double mu_aff = (s + a_aff * ds).dot(z + a_aff * dz) / p;
        const double sigma = std::pow(std::clamp(mu_aff / mu, 0.0, 1.0), 3);
        // Corrector.
        r_c = s.cwiseProduct(z) + ds.cwiseProduct(dz) - Eigen::VectorXd::Constant(p, sigma * mu);
        direction(r_c, dx, dy, dz, ds);
        const double a = std::min(1.0, 0.99 * std::min(detail::max_step(s, ds), detail::max_step(z, dz)));
        x += a * dx;
        y += a * dy;
        z += a * dz;
        s += a * ds;
    }

    if (!converged && best_merit < kInf) {
        // Late iterations can lose accuracy; fall back to the best iterate seen.
        x = best_x;
        pres = best_pres;
        dres = best_dres;
        mu = best_mu;
    }
    sol.x = x;
    sol.iterations = it;
    sol.primal_residual = pres;
    sol.dual_residual = dres;
    sol.gap = mu;
    sol.objective = 0.5 * x.dot(P * x) + q.dot(x) + model.offset_;
    if (converged) {
        sol.status = Status::optimal;
    } else if (pres <= 1e-6 * (1.0 + std::max(norm_b, norm_h)) && dres <= 1e-6 * (1.0 + norm_q)) {
        sol.status = Status::inaccurate;
        sol.message = "tolerances not fully reached";
    } else if (pres > 1e-6 * (1.0 + std::max(norm_b, norm_h))) {
        sol.status = Status::infeasible;
        sol.message = "primal residual did not vanish";
    } else if (factor_failed) {
        sol.status = Status::numerical_error;
        sol.message = "KKT factorization failed";
    } else {
        sol.status = Status::max_iterations;
    }
    log().debug("qp {} after {} iterations, {:.1f} ms", to_string(sol.status), it,
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    return sol;
}

} // namespace ddpc::qp
