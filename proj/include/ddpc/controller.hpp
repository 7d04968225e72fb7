#pragma once

// Predictive building controller: generic bi-level DeePC, the robust
// intraday problem with affine disturbance feedback, and the fast ESS
// tracking law.

#include <algorithm>
#include <array>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "core.hpp"
#include "ddp.hpp"
#include "params.hpp"
#include "planner.hpp"
#include "qp.hpp"
#include "robust.hpp"

namespace ddpc {

// ---------------------------------------------------------------------------
// Bi-level DeePC

/// J = sum W_u (u - u_ref)^2 + W_y (y - y_ref)^2 + c_u' u. Empty references
/// mean zero.
struct DeepcObjective {
    double W_u = 1.0;
    double W_y = 0.0;
    VectorXd u_ref;
    VectorXd y_ref;
    VectorXd c_u;
};

struct BoxBounds {
    double lo = -qp::kInf;
    double hi = qp::kInf;
};

struct DeepcResult {
    VectorXd u_pred;
    VectorXd y_pred;
    qp::Status status = qp::Status::numerical_error;
    double max_slack = 0.0;
};

/// Upper-level problem over u_pred with y_pred given by the linear predictor.
/// Output bounds are softened with penalty `rho_slack`.
inline DeepcResult solve_bilevel_deepc(const DdpPredictor& pred, const DeepcObjective& J, const BoxBounds& U,
                                       const BoxBounds& Y, const InitWindows& init, const VectorXd& w_pred,
                                       double rho_slack = 1e4)
{
    const int nu = pred.N() * pred.dims.n_u;
    const int ny = pred.N() * pred.dims.n_y;
    const VectorXd y_free = predict(pred, init, VectorXd::Zero(nu), w_pred);
    auto ref = [](const VectorXd& v, int n) { return v.size() ? v : VectorXd(VectorXd::Zero(n)); };
    const VectorXd u_ref = ref(J.u_ref, nu), y_ref = ref(J.y_ref, ny), c_u = ref(J.c_u, nu);
    if (u_ref.size() != nu || y_ref.size() != ny || c_u.size() != nu) throw UsageError("objective dimension mismatch");

    qp::Model m;
    using qp::LinExpr;
    const auto u = m.add_variables(nu, U.lo, U.hi);
    std::vector<LinExpr> slacks;
    for (int k = 0; k < nu; ++k) {
        const LinExpr uk = LinExpr::variable(u[static_cast<std::size_t>(k)]);
        m.add_squared_cost(uk - u_ref[k], J.W_u);
        if (c_u[k] != 0.0) m.add_linear_cost(c_u[k] * uk);
    }
    std::vector<LinExpr> y(static_cast<std::size_t>(ny));
    for (int r = 0; r < ny; ++r) {
        LinExpr& e = y[static_cast<std::size_t>(r)];
        e.add_constant(y_free[r]);
        for (int k = 0; k < nu; ++k) e.add_term(u[static_cast<std::size_t>(k)], pred.P_u_pred(r, k));
        m.add_squared_cost(e - y_ref[r], J.W_y);
        if (std::isfinite(Y.hi)) {
            const LinExpr s = LinExpr::variable(m.add_variable(0.0));
            m.add_leq(e - s, Y.hi);
            m.add_linear_cost(rho_slack * s);
            slacks.push_back(s);
        }
        if (std::isfinite(Y.lo)) {
            const LinExpr s = LinExpr::variable(m.add_variable(0.0));
            m.add_geq(e + s, Y.lo);
            m.add_linear_cost(rho_slack * s);
            slacks.push_back(s);
        }
    }
    const auto sol = qp::solve(m);
    DeepcResult r;
    r.status = sol.status;
    if (!sol.ok()) throw SolverError(std::string("bi-level DeePC: ") + qp::to_string(sol.status));
    r.u_pred.resize(nu);
    for (int k = 0; k < nu; ++k) r.u_pred[k] = sol.value(u[static_cast<std::size_t>(k)]);
    r.y_pred = y_free + pred.P_u_pred * r.u_pred;
    for (const auto& s : slacks) r.max_slack = std::max(r.max_slack, sol.value(s));
    return r;
}

// ---------------------------------------------------------------------------
// Robust intraday controller

struct ControllerConfig {
    int N = 12;
    double W_u = 1.0;
    double W_P = 1.0;
    double W_SoC = 10.0;
    VectorXd w_radius = (VectorXd(2) << 0.2, 0.05).finished();
    double alpha_radius = 0.2;
    BuildingBounds building;
    EssParams ess;
    double rho_slack = 1e4;
    /// Small quadratic weight on policy gains; keeps the gains unique.
    double gain_weight = 1e-6;
    /// When false the ESS provides the service alone (no building channel).
    bool include_building = true;

    void validate() const
    {
        if (N < 1) throw UsageError("controller horizon must be positive");
        if (W_u < 0 || W_P < 0 || W_SoC < 0) throw UsageError("controller weights must be nonnegative");
        if ((w_radius.array() < 0).any() || alpha_radius < 0) throw UsageError("negative radius");
        building.validate();
        ess.validate();
    }
};

/// Transactions already submitted for the current and the next two steps.
struct CommitmentWindow {
    std::array<double, 3> committed{0.0, 0.0, 0.0};
};

struct IntradayInputs {
    const DdpPredictor* pred = nullptr;
    InitWindows init;
    VectorXd w_forecast;
    VectorXd alpha_forecast;
    double soc = 0.0;
    /// Day-ahead baseline over the horizon.
    VectorXd baseline;
    double gamma = 0.0;
    CommitmentWindow commitments;
    /// Mode-dependent upper input bound; NaN selects the configured one.
    double u_max = std::numeric_limits<double>::quiet_NaN();
};

struct IntradayResult {
    bool ok = false;
    qp::Status status = qp::Status::numerical_error;
    double u_now = 0.0;
    double p_int_commit = 0.0;
    robust::AffinePolicy u_policy;
    robust::AffinePolicy pe_policy;
    robust::AffinePolicy pint_policy;
    VectorXd y_nominal;
    VectorXd soc_nominal;
    double max_slack = 0.0;
    std::string message;
};

/// Symbolic pieces of the intraday problem; exposed for property tests.
struct IntradayProblem {
    qp::Model model;
    robust::DisturbanceBasis basis;
    robust::BoxSet box;
    std::optional<robust::PolicyVariables> u;
    robust::PolicyVariables pe;
    robust::PolicyVariables pint;
    std::vector<robust::AffineExpression> y;
    std::vector<robust::AffineExpression> soc;
    std::vector<robust::AffineExpression> total_power;
    std::vector<robust::AffineExpression> required_power;
    std::vector<qp::LinExpr> slacks;
    double u_max = 0.0;
};

namespace detail {

inline robust::PolicyVariables make_policy(qp::Model& m, const robust::DisturbanceBasis& b, int lag_a, int frozen,
                                           std::vector<double> pinned)
{
    robust::PolicyStructure st;
    st.lag_w = 1;
    st.lag_a = lag_a;
    st.frozen_steps = frozen;
    st.pinned_nominal = std::move(pinned);
    return robust::PolicyVariables(m, b, st);
}

} // namespace detail

/// Builds the robust intraday program: causal affine policies for the input,
/// the ESS power and the intraday transaction; box-robust bounds; tracking
/// equality for every disturbance.
inline IntradayProblem build_intraday(const ControllerConfig& cfg, const IntradayInputs& in)
{
    cfg.validate();
    const int N = cfg.N;
    const int n_w = static_cast<int>(cfg.w_radius.size());
    if (cfg.include_building) {
        if (in.pred == nullptr) throw UsageError("intraday controller needs a predictor");
        if (in.pred->N() != N || in.pred->dims.n_u != 1 || in.pred->dims.n_y != 1 || in.pred->dims.n_w != n_w)
            throw UsageError("predictor does not match the controller configuration");
    }
    if (in.w_forecast.size() != N * n_w || in.alpha_forecast.size() != N || in.baseline.size() != N)
        throw UsageError("forecast or baseline has wrong length");

    robust::DisturbanceBasis basis{N, n_w};
    IntradayProblem P;
    P.basis = basis;
    P.box = robust::make_box(basis, cfg.w_radius, cfg.alpha_radius);
    using qp::LinExpr;
    using robust::AffineExpression;
    auto& m = P.model;
    P.u_max = std::isnan(in.u_max) ? cfg.building.u_max : in.u_max;

    if (cfg.include_building) P.u = detail::make_policy(m, basis, 1, 0, {});
    // The ESS reacts to the AGC of its own step (it tracks in real time).
    P.pe = detail::make_policy(m, basis, 0, 0, {});
    const auto& c = in.commitments.committed;
    P.pint = detail::make_policy(m, basis, 1, std::min(4, N), std::vector<double>(c.begin(), c.begin() + std::min(3, N)));

    auto soft_range = [&](const AffineExpression& e, double lo, double hi) {
        const LinExpr s_lo = LinExpr::variable(m.add_variable(0.0));
        const LinExpr s_hi = LinExpr::variable(m.add_variable(0.0));
        robust::robustify_range(m, e, lo, hi, P.box, s_lo, s_hi);
        m.add_linear_cost(cfg.rho_slack * (s_lo + s_hi));
        P.slacks.push_back(s_lo);
        P.slacks.push_back(s_hi);
    };

    const auto weather = robust::weather_expressions(basis, in.w_forecast);
    const auto agc = robust::alpha_expressions(basis, in.alpha_forecast);

    std::vector<AffineExpression> u_rows, pe_rows = P.pe.rows_as_expressions(), pint_rows = P.pint.rows_as_expressions();
    if (P.u) {
        u_rows = P.u->rows_as_expressions();
        const VectorXd y_free = in.pred->P_y_init * in.init.y_init + in.pred->P_u_init * in.init.u_init +
                                in.pred->P_w_init * in.init.w_init;
        auto offset = robust::linear_combination(in.pred->P_w_pred, weather);
        for (int r = 0; r < N; ++r) offset[static_cast<std::size_t>(r)].nominal.add_constant(y_free[r]);
        P.y = robust::compose_affine(u_rows, in.pred->P_u_pred, offset);
        for (const auto& y : P.y) soft_range(y, cfg.building.y_min, cfg.building.y_max);
        for (const auto& u : u_rows) robust::robustify_range(m, u, cfg.building.u_min, P.u_max, P.box);
    }
    for (const auto& p : pe_rows) robust::robustify_range(m, p, cfg.ess.p_min, cfg.ess.p_max, P.box);

    AffineExpression soc(basis.size(), in.soc);
    for (int i = 0; i < N; ++i) {
        soc.add_scaled(pe_rows[static_cast<std::size_t>(i)], kStepHours);
        P.soc.push_back(soc);
        soft_range(soc, cfg.ess.soc_min, cfg.ess.soc_max);
    }

    for (int i = 0; i < N; ++i) {
        const auto ii = static_cast<std::size_t>(i);
        AffineExpression total = pe_rows[ii];
        if (P.u) total += u_rows[ii];
        AffineExpression required = pint_rows[ii];
        required.nominal.add_constant(in.baseline[i]);
        required.add_scaled(agc[ii], in.gamma);
        robust::enforce_equality_for_all(m, total, required);
        P.total_power.push_back(std::move(total));
        P.required_power.push_back(std::move(required));
    }

    for (int i = 0; i < N; ++i) {
        if (P.u) m.add_squared_cost(P.u->nominal(i), cfg.W_u);
        m.add_squared_cost(P.pint.nominal(i), cfg.W_P);
        m.add_squared_cost(P.soc[static_cast<std::size_t>(i)].nominal - cfg.ess.soc_ref(), cfg.W_SoC);
    }
    if (cfg.gain_weight > 0.0) {
        auto regularize = [&](const robust::PolicyVariables& pv) {
            for (int r = 0; r < pv.rows(); ++r)
                for (const auto& g : pv.row(r).coef)
                    if (!g.is_constant()) m.add_squared_cost(g, cfg.gain_weight);
        };
        if (P.u) regularize(*P.u);
        regularize(P.pe);
        regularize(P.pint);
    }
    return P;
}

inline IntradayResult solve_intraday(const ControllerConfig& cfg, const IntradayInputs& in)
{
    auto P = build_intraday(cfg, in);
    const auto sol = qp::solve(P.model);
    IntradayResult r;
    r.status = sol.status;
    if (!sol.ok()) {
        r.message = std::string("intraday controller: ") + qp::to_string(sol.status);
        return r;
    }
    r.ok = true;
    if (P.u) {
        r.u_policy = P.u->extract(sol.x);
        r.u_now = r.u_policy.v[0];
    }
    r.pe_policy = P.pe.extract(sol.x);
    r.pint_policy = P.pint.extract(sol.x);
    r.p_int_commit = cfg.N > 3 ? r.pint_policy.v[3] : 0.0;
    r.y_nominal.resize(static_cast<Index>(P.y.size()));
    for (std::size_t i = 0; i < P.y.size(); ++i) r.y_nominal[static_cast<Index>(i)] = P.y[i].nominal.evaluate(sol.x);
    r.soc_nominal.resize(static_cast<Index>(P.soc.size()));
    for (std::size_t i = 0; i < P.soc.size(); ++i) r.soc_nominal[static_cast<Index>(i)] = P.soc[i].nominal.evaluate(sol.x);
    for (const auto& s : P.slacks) r.max_slack = std::max(r.max_slack, sol.value(s));
    return r;
}

// ---------------------------------------------------------------------------
// ESS tracking

struct EssCommand {
    double p_e = 0.0;
    /// Requested minus delivered ESS power, nonzero only when clipped.
    double track_error = 0.0;
};

/// Largest charge / discharge power the battery can absorb over `dt_h` hours.
inline std::pair<double, double> ess_power_window(const EssParams& ess, double soc, double dt_h)
{
    const double up = std::max(0.0, (ess.soc_max - soc) / (ess.efficiency * dt_h));
    const double down = std::max(0.0, (soc - ess.soc_min) * ess.efficiency / dt_h);
    return {std::max(ess.p_min, -down), std::min(ess.p_max, up)};
}

inline EssCommand ess_track(double p_bar, double p_int, double gamma, double alpha, double p_h, const EssParams& ess,
                            double soc, double dt_h = kFineStepHours)
{
    const double demand = p_bar + p_int + gamma * alpha - p_h;
    const auto [lo, hi] = ess_power_window(ess, soc, dt_h);
    const double p = std::clamp(demand, lo, hi);
    return {p, demand - p};
}

// ---------------------------------------------------------------------------
// AGC forecast

/// Mean of the last four 15-minute AGC averages, decaying geometrically over
/// the horizon and clipped to [-1, 1].
inline VectorXd forecast_agc(const std::vector<double>& history, int N, double decay = 0.7)
{
    double mean = 0.0;
    const std::size_t n = std::min<std::size_t>(4, history.size());
    for (std::size_t k = 0; k < n; ++k) mean += history[history.size() - 1 - k];
    if (n) mean /= static_cast<double>(n);
    VectorXd f(N);
    double scale = decay;
    for (int i = 0; i < N; ++i, scale *= decay) f[i] = std::clamp(mean * scale, -1.0, 1.0);
    return f;
}

// ---------------------------------------------------------------------------
// 15-minute cycle

struct ControllerState {
    std::map<Mode, DdpModel> models;
    DdpHyper hyper;
    /// Modes whose Hankel data is refreshed at midnight.
    std::vector<Mode> adaptive_modes{Mode::cooling};
    CommitmentWindow commitments;
    double last_u = 2.4;
    std::optional<VectorXd> last_w_forecast;
};

struct ControllerCycleInputs {
    int step_of_day = 0;
    Mode mode = Mode::cooling;
    InitWindows init;
    /// Empty on a forecast outage.
    std::optional<VectorXd> w_forecast;
    VectorXd alpha_forecast;
    double soc = 0.0;
    const SfcPlan* plan = nullptr;
    std::vector<OperationalSegment> new_segments;
    double u_max = std::numeric_limits<double>::quiet_NaN();
};

struct ControllerCycleOutput {
    double u = 0.0;
    /// Transaction in force for the current step.
    double p_int_now = 0.0;
    double p_int_commit = 0.0;
    bool solver_fallback = false;
    bool forecast_fallback = false;
    std::vector<std::pair<Mode, UpdateResult>> updates;
    IntradayResult result;
};

/// One controller step. The plan is repeated cyclically beyond the end of the
/// day because the next day's plan is not yet known.
inline ControllerCycleOutput run_controller_cycle(ControllerState& st, const ControllerConfig& cfg,
                                                  const ControllerCycleInputs& in)
{
    ControllerCycleOutput out;
    if (in.plan == nullptr) throw UsageError("controller needs a day-ahead plan");
    if (cfg.include_building && in.step_of_day == 0 && !in.new_segments.empty()) {
        for (Mode mode : st.adaptive_modes) {
            auto it = st.models.find(mode);
            if (it == st.models.end()) continue;
            auto up = adaptive_update(it->second, in.new_segments, st.hyper);
            if (up.accepted) it->second = up.model;
            out.updates.emplace_back(mode, std::move(up));
        }
    }

    VectorXd w_fc;
    if (in.w_forecast) {
        w_fc = *in.w_forecast;
        st.last_w_forecast = w_fc;
    } else {
        out.forecast_fallback = true;
        const int n_w = static_cast<int>(cfg.w_radius.size());
        if (st.last_w_forecast) {
            // Previous forecast shifted by one step, last value held.
            const VectorXd& prev = *st.last_w_forecast;
            w_fc = prev;
            w_fc.head(prev.size() - n_w) = prev.tail(prev.size() - n_w);
        } else {
            w_fc = in.init.w_init.tail(n_w).replicate(cfg.N, 1);
        }
        st.last_w_forecast = w_fc;
        log().warn("weather forecast unavailable; using persistence");
    }

    IntradayInputs ii;
    ii.init = in.init;
    ii.w_forecast = w_fc;
    ii.alpha_forecast = in.alpha_forecast;
    ii.soc = in.soc;
    ii.gamma = in.plan->gamma;
    ii.commitments = st.commitments;
    ii.u_max = in.u_max;
    const Index days = in.plan->baseline.size();
    ii.baseline.resize(cfg.N);
    for (int i = 0; i < cfg.N; ++i) ii.baseline[i] = in.plan->baseline[(in.step_of_day + i) % days];

    const DdpModel* model = nullptr;
    if (cfg.include_building) {
        auto it = st.models.find(in.mode);
        if (it != st.models.end()) model = &it->second;
    }
    if (cfg.include_building && model == nullptr) {
        out.result.message = "no predictor for mode " + std::string(to_string(in.mode));
    } else {
        ii.pred = model ? &model->predictor : nullptr;
        out.result = solve_intraday(cfg, ii);
    }

    out.p_int_now = st.commitments.committed[0];
    if (out.result.ok) {
        out.u = cfg.include_building ? out.result.u_now : st.last_u;
        out.p_int_commit = out.result.p_int_commit;
    } else {
        out.solver_fallback = true;
        out.u = st.last_u;
        out.p_int_commit = 0.0;
        log().warn("step {}: {}; holding previous setpoint", in.step_of_day, out.result.message);
    }
    st.last_u = out.u;
    auto& c = st.commitments.committed;
    c = {c[1], c[2], out.p_int_commit};
    return out;
}

} // namespace ddpc
