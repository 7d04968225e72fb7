#pragma once

// Affine disturbance-feedback policies and robust counterparts of linear
// constraints over box uncertainty.
//
// Quantities are affine in the disturbance deviations delta from the
// forecast: q(delta) = nominal + sum_k coef_k delta_k, where nominal and every
// coef_k are themselves affine in the decision variables of a qp::Model.

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "core.hpp"
#include "qp.hpp"

namespace ddpc::robust {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using qp::LinExpr;

/// Coordinates of the disturbance deviation over an N-step horizon: the
/// n_w weather channels of every step first, then one AGC value per step.
struct DisturbanceBasis {
    int N = 0;
    int n_w = 0;

    int size() const { return N * n_w + N; }
    int w(int step, int channel) const { return step * n_w + channel; }
    int alpha(int step) const { return N * n_w + step; }
    int step_of(int coord) const { return coord < N * n_w ? coord / n_w : coord - N * n_w; }
    bool is_alpha(int coord) const { return coord >= N * n_w; }
};

/// Axis-aligned box: |delta_k - center_k| <= half_width_k.
struct BoxSet {
    VectorXd center;
    VectorXd half_width;

    void validate() const
    {
        if (center.size() != half_width.size()) throw UsageError("box center and radii differ in size");
        if ((half_width.array() < 0.0).any()) throw UsageError("negative radius");
    }
};

/// Deviation box over a basis with per-channel weather radii and one AGC radius.
inline BoxSet make_box(const DisturbanceBasis& basis, const VectorXd& w_radius, double alpha_radius)
{
    if (w_radius.size() != basis.n_w) throw UsageError("weather radius needs one entry per channel");
    BoxSet box{VectorXd::Zero(basis.size()), VectorXd::Zero(basis.size())};
    for (int s = 0; s < basis.N; ++s) {
        for (int c = 0; c < basis.n_w; ++c) box.half_width[basis.w(s, c)] = w_radius[c];
        box.half_width[basis.alpha(s)] = alpha_radius;
    }
    box.validate();
    return box;
}

struct AffineExpression {
    LinExpr nominal;
    std::vector<LinExpr> coef;

    AffineExpression() = default;
    explicit AffineExpression(int dim, LinExpr nom = {}) : nominal(std::move(nom)), coef(static_cast<std::size_t>(dim)) {}

    int dim() const { return static_cast<int>(coef.size()); }

    /// Value at decision vector x and disturbance deviation delta.
    double evaluate(const VectorXd& x, const VectorXd& delta) const
    {
        double v = nominal.evaluate(x);
        for (int k = 0; k < dim(); ++k) v += coef[static_cast<std::size_t>(k)].evaluate(x) * delta[k];
        return v;
    }

    AffineExpression& operator+=(const AffineExpression& o)
    {
        check_dim(o);
        nominal += o.nominal;
        for (std::size_t k = 0; k < coef.size(); ++k) coef[k] += o.coef[k];
        return *this;
    }
    AffineExpression& operator-=(const AffineExpression& o)
    {
        check_dim(o);
        nominal -= o.nominal;
        for (std::size_t k = 0; k < coef.size(); ++k) coef[k] -= o.coef[k];
        return *this;
    }
    void add_scaled(const AffineExpression& o, double s)
    {
        check_dim(o);
        nominal.add_scaled(o.nominal, s);
        for (std::size_t k = 0; k < coef.size(); ++k) coef[k].add_scaled(o.coef[k], s);
    }

private:
    void check_dim(const AffineExpression& o) const
    {
        if (o.dim() != dim()) throw UsageError("affine expressions over different disturbance bases");
    }
};

inline AffineExpression operator+(AffineExpression a, const AffineExpression& b) { return a += b; }
inline AffineExpression operator-(AffineExpression a, const AffineExpression& b) { return a -= b; }

/// The disturbance itself as expressions: w_pred entries (step-major) and
/// alpha_pred entries, each equal to its forecast plus its own deviation.
inline std::vector<AffineExpression> weather_expressions(const DisturbanceBasis& basis, const VectorXd& w_forecast)
{
    if (w_forecast.size() != basis.N * basis.n_w) throw UsageError("weather forecast has wrong length");
    std::vector<AffineExpression> out;
    for (int s = 0; s < basis.N; ++s)
        for (int c = 0; c < basis.n_w; ++c) {
            AffineExpression e(basis.size(), w_forecast[basis.w(s, c)]);
            e.coef[static_cast<std::size_t>(basis.w(s, c))] = 1.0;
            out.push_back(std::move(e));
        }
    return out;
}

inline std::vector<AffineExpression> alpha_expressions(const DisturbanceBasis& basis, const VectorXd& alpha_forecast)
{
    if (alpha_forecast.size() != basis.N) throw UsageError("AGC forecast has wrong length");
    std::vector<AffineExpression> out;
    for (int s = 0; s < basis.N; ++s) {
        AffineExpression e(basis.size(), alpha_forecast[s]);
        e.coef[static_cast<std::size_t>(basis.alpha(s))] = 1.0;
        out.push_back(std::move(e));
    }
    return out;
}

/// Numeric affine policy in deviation form:
///   decision = M_w * delta_w + M_a * delta_alpha + v,
/// one row per (step, channel). `lag_w` / `lag_a` give the causality offset:
/// row of step i may react to disturbance steps <= i - lag.
struct AffinePolicy {
    MatrixXd M_w;
    MatrixXd M_a;
    VectorXd v;
    int channels = 1;
    int lag_w = 1;
    int lag_a = 1;

    VectorXd apply(const VectorXd& delta_w, const VectorXd& delta_a) const { return M_w * delta_w + M_a * delta_a + v; }

    /// Largest gain magnitude outside the allowed causal pattern.
    double causality_violation(const DisturbanceBasis& basis) const
    {
        double worst = 0.0;
        for (Index r = 0; r < v.size(); ++r) {
            const int step = static_cast<int>(r) / channels;
            for (int s = 0; s < basis.N; ++s) {
                for (int c = 0; c < basis.n_w; ++c)
                    if (s > step - lag_w) worst = std::max(worst, std::abs(M_w(r, basis.w(s, c))));
                if (s > step - lag_a) worst = std::max(worst, std::abs(M_a(r, s)));
            }
        }
        return worst;
    }
};

/// Structure of a policy to be optimized.
struct PolicyStructure {
    int channels = 1;
    int lag_w = 1;
    int lag_a = 1;
    /// Leading steps whose rows carry no disturbance gains.
    int frozen_steps = 0;
    /// Fixed nominal values of the leading rows (e.g. committed transactions).
    std::vector<double> pinned_nominal;
    double nominal_lb = -qp::kInf;
    double nominal_ub = qp::kInf;
};

/// Policy whose gains and nominal values are decision variables of a model.
class PolicyVariables {
public:
    PolicyVariables() = default;
    PolicyVariables(qp::Model& model, const DisturbanceBasis& basis, const PolicyStructure& st)
        : basis_(basis), st_(st)
    {
        const int rows = basis.N * st.channels;
        nominal_.resize(static_cast<std::size_t>(rows));
        gains_.assign(static_cast<std::size_t>(rows), std::vector<int>(static_cast<std::size_t>(basis.size()), -1));
        for (int r = 0; r < rows; ++r) {
            const int step = r / st.channels;
            if (static_cast<std::size_t>(r) < st.pinned_nominal.size())
                nominal_[static_cast<std::size_t>(r)] = st.pinned_nominal[static_cast<std::size_t>(r)];
            else
                nominal_[static_cast<std::size_t>(r)] = LinExpr::variable(model.add_variable(st.nominal_lb, st.nominal_ub));
            if (step < st.frozen_steps) continue;
            for (int k = 0; k < basis.size(); ++k) {
                const int lag = basis.is_alpha(k) ? st.lag_a : st.lag_w;
                if (basis.step_of(k) <= step - lag)
                    gains_[static_cast<std::size_t>(r)][static_cast<std::size_t>(k)] = model.add_variable();
            }
        }
    }

    int rows() const { return static_cast<int>(nominal_.size()); }
    const LinExpr& nominal(int r) const { return nominal_[static_cast<std::size_t>(r)]; }

    AffineExpression row(int r) const
    {
        AffineExpression e(basis_.size(), nominal(r));
        const auto& g = gains_[static_cast<std::size_t>(r)];
        for (int k = 0; k < basis_.size(); ++k)
            if (g[static_cast<std::size_t>(k)] >= 0) e.coef[static_cast<std::size_t>(k)] = LinExpr::variable(g[static_cast<std::size_t>(k)]);
        return e;
    }

    std::vector<AffineExpression> rows_as_expressions() const
    {
        std::vector<AffineExpression> out;
        out.reserve(nominal_.size());
        for (int r = 0; r < rows(); ++r) out.push_back(row(r));
        return out;
    }

    AffinePolicy extract(const VectorXd& x) const
    {
        AffinePolicy p;
        const int rows_n = rows();
        const int nw = basis_.N * basis_.n_w;
        p.M_w = MatrixXd::Zero(rows_n, nw);
        p.M_a = MatrixXd::Zero(rows_n, basis_.N);
        p.v.resize(rows_n);
        p.channels = st_.channels;
        p.lag_w = st_.lag_w;
        p.lag_a = st_.lag_a;
        for (int r = 0; r < rows_n; ++r) {
            p.v[r] = nominal(r).evaluate(x);
            const auto& g = gains_[static_cast<std::size_t>(r)];
            for (int k = 0; k < basis_.size(); ++k) {
                const int var = g[static_cast<std::size_t>(k)];
                if (var < 0) continue;
                if (basis_.is_alpha(k))
                    p.M_a(r, k - nw) = x[var];
                else
                    p.M_w(r, k) = x[var];
            }
        }
        return p;
    }

private:
    DisturbanceBasis basis_;
    PolicyStructure st_;
    std::vector<LinExpr> nominal_;
    std::vector<std::vector<int>> gains_;
};

/// Constant expressions of a numeric policy.
inline std::vector<AffineExpression> to_expressions(const AffinePolicy& p, const DisturbanceBasis& basis)
{
    std::vector<AffineExpression> out;
    const int nw = basis.N * basis.n_w;
    for (Index r = 0; r < p.v.size(); ++r) {
        AffineExpression e(basis.size(), p.v[r]);
        for (int k = 0; k < nw; ++k) e.coef[static_cast<std::size_t>(k)] = p.M_w(r, k);
        for (int s = 0; s < basis.N; ++s) e.coef[static_cast<std::size_t>(nw + s)] = p.M_a(r, s);
        out.push_back(std::move(e));
    }
    return out;
}

/// out = map * inputs (row-wise linear combination of expressions).
inline std::vector<AffineExpression> linear_combination(const MatrixXd& map, const std::vector<AffineExpression>& inputs)
{
    if (map.cols() != static_cast<Index>(inputs.size())) throw UsageError("linear map does not match its inputs");
    const int d = inputs.empty() ? 0 : inputs.front().dim();
    std::vector<AffineExpression> out;
    out.reserve(static_cast<std::size_t>(map.rows()));
    for (Index r = 0; r < map.rows(); ++r) {
        AffineExpression e(d);
        for (Index j = 0; j < map.cols(); ++j)
            if (map(r, j) != 0.0) e.add_scaled(inputs[static_cast<std::size_t>(j)], map(r, j));
        out.push_back(std::move(e));
    }
    return out;
}

/// Affine representation of `linear_map * policy + offset`, exact.
inline std::vector<AffineExpression> compose_affine(const std::vector<AffineExpression>& policy,
                                                    const MatrixXd& linear_map,
                                                    const std::vector<AffineExpression>& offset)
{
    auto out = linear_combination(linear_map, policy);
    if (offset.size() != out.size()) throw UsageError("offset map does not match the linear map");
    for (std::size_t r = 0; r < out.size(); ++r) out[r] += offset[r];
    return out;
}

/// Worst-case bounds of an affine expression over a box:
///   upper = nominal + sum_k r_k t_k,  lower = nominal - sum_k r_k t_k,
/// with t_k >= |coef_k| imposed through two inequalities per coordinate.
/// Coordinates whose coefficient is a constant need no auxiliary variable.
struct WorstCase {
    LinExpr upper;
    LinExpr lower;
};

inline WorstCase worst_case(qp::Model& model, const AffineExpression& expr, const BoxSet& box)
{
    box.validate();
    if (box.half_width.size() != expr.dim()) throw UsageError("box and expression differ in dimension");
    LinExpr spread;
    for (int k = 0; k < expr.dim(); ++k) {
        const double r = box.half_width[k];
        const LinExpr& c = expr.coef[static_cast<std::size_t>(k)];
        if (r == 0.0) continue;
        if (c.is_constant()) {
            spread.add_constant(r * std::abs(c.constant()));
            continue;
        }
        const LinExpr t = LinExpr::variable(model.add_variable());
        model.add_leq(c - t, 0.0);
        model.add_leq(-c - t, 0.0);
        spread.add_scaled(t, r);
    }
    return {expr.nominal + spread, expr.nominal - spread};
}

/// expr(delta) <= bound + slack for every delta in the box.
inline void robustify_leq(qp::Model& model, const AffineExpression& expr, double bound, const BoxSet& box,
                          const LinExpr& slack = {})
{
    const auto wc = worst_case(model, expr, box);
    model.add_leq(wc.upper - slack, bound);
}

/// lo - slack_lo <= expr(delta) <= hi + slack_hi for every delta in the box.
inline void robustify_range(qp::Model& model, const AffineExpression& expr, double lo, double hi, const BoxSet& box,
                            const LinExpr& slack_lo = {}, const LinExpr& slack_hi = {})
{
    const auto wc = worst_case(model, expr, box);
    model.add_leq(wc.upper - slack_hi, hi);
    model.add_geq(wc.lower + slack_lo, lo);
}

/// lhs(delta) == rhs(delta) for every delta: nominal parts and every
/// disturbance coefficient are matched.
inline void enforce_equality_for_all(qp::Model& model, const AffineExpression& lhs, const AffineExpression& rhs)
{
    if (lhs.dim() != rhs.dim()) throw UsageError("equality sides use different disturbance bases");
    model.add_eq(lhs.nominal - rhs.nominal, 0.0);
    for (int k = 0; k < lhs.dim(); ++k)
        model.add_eq(lhs.coef[static_cast<std::size_t>(k)] - rhs.coef[static_cast<std::size_t>(k)], 0.0);
}

} // namespace ddpc::robust
