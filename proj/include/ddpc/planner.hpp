#pragma once

// Day-ahead flexibility planner: scenario program over historical AGC days
// that maximizes the flexibility bid gamma and fixes the baseline.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "core.hpp"
#include "ddp.hpp"
#include "params.hpp"
#include "qp.hpp"

namespace ddpc {

/// AGC scenarios, one row per historical day.
struct ScenarioSet {
    MatrixXd alpha;
    std::string provenance;

    int size() const { return static_cast<int>(alpha.rows()); }
    int steps() const { return static_cast<int>(alpha.cols()); }
    VectorXd mean() const { return alpha.colwise().mean().transpose(); }

    void validate() const
    {
        if (alpha.rows() == 0) throw UsageError("no scenarios");
        if ((alpha.array().abs() > 1.0 + 1e-12).any()) throw DataError("AGC scenario values outside [-1, 1]");
    }
};

/// Intraday transactions expected for one scenario: the first three steps are
/// committed (zero), later ones cancel the accumulated deviation estimate in
/// which the last four AGC values are replaced by the scenario mean.
inline VectorXd predict_intraday(const VectorXd& alpha, const VectorXd& mean)
{
    if (alpha.size() != mean.size()) throw UsageError("scenario and mean differ in length");
    const Index n = alpha.size();
    VectorXd p = VectorXd::Zero(n);
    double known = 0.0; // sum of p(k) + alpha(k) over k <= i-4 (0-based: k <= i-4)
    for (Index i = 3; i < n; ++i) {
        if (i >= 4) known += p[i - 4] + alpha[i - 4];
        double recent = mean[i];
        for (Index k = i - 3; k < i; ++k) recent += p[k] + mean[k];
        p[i] = -(known + recent);
    }
    return p;
}

struct SfcPlan {
    double gamma = 0.0;
    VectorXd baseline;
};

struct PlannerConfig {
    BuildingBounds building;
    EssParams ess;
    bool include_building = true;
    bool include_ess = true;
    /// Penalty per unit of temperature or SoC bound violation.
    double rho_slack = 1e4;
    /// Weight of the squared distance to the previous baseline.
    double W_base = 0.0;
    std::optional<VectorXd> P_pre;
    /// Cost per kWh of baseline energy, in units of gamma (0: pure bid maximization).
    double energy_weight = 0.0;
    /// Keep baseline +/- gamma inside the combined power range.
    bool headroom = true;
};

struct PlanResult {
    SfcPlan plan;
    qp::Status status = qp::Status::numerical_error;
    int iterations = 0;
    double max_slack = 0.0;
};

/// Scenario program with explicit intraday predictions per scenario.
/// `pred` may be null when the building is excluded.
inline PlanResult solve_plan(const DdpPredictor* pred, const InitWindows& init, const VectorXd& w_forecast,
                             const ScenarioSet& scenarios, const std::vector<VectorXd>& p_int_hat, double soc_t,
                             const PlannerConfig& cfg)
{
    scenarios.validate();
    cfg.building.validate();
    cfg.ess.validate();
    if (!cfg.include_building && !cfg.include_ess) throw UsageError("planner needs the building or the ESS");
    if (cfg.include_building && pred == nullptr) throw UsageError("planner with building needs a predictor");
    const int N = scenarios.steps();
    const int S = scenarios.size();
    if (static_cast<int>(p_int_hat.size()) != S) throw UsageError("one intraday prediction per scenario required");
    if (cfg.P_pre && cfg.P_pre->size() != N) throw UsageError("previous baseline has wrong length");

    VectorXd y_free;
    if (cfg.include_building) {
        if (pred->N() != N) throw UsageError("predictor horizon differs from the scenario length");
        y_free = predict(*pred, init, VectorXd::Zero(N * pred->dims.n_u), w_forecast);
    }

    qp::Model m;
    using qp::LinExpr;
    const LinExpr gamma = LinExpr::variable(m.add_variable(0.0));
    std::vector<LinExpr> base(static_cast<std::size_t>(N));
    for (auto& b : base) b = LinExpr::variable(m.add_variable());
    m.add_linear_cost(-1.0 * gamma);
    if (cfg.energy_weight != 0.0)
        for (const auto& b : base) m.add_linear_cost(cfg.energy_weight * kStepHours * b);

    if (cfg.headroom) {
        const double lo = (cfg.include_building ? cfg.building.u_min : 0.0) + (cfg.include_ess ? cfg.ess.p_min : 0.0);
        const double hi = (cfg.include_building ? cfg.building.u_max : 0.0) + (cfg.include_ess ? cfg.ess.p_max : 0.0);
        for (const auto& b : base) {
            m.add_leq(b + gamma, hi);
            m.add_geq(b - gamma, lo);
        }
    }

    auto soft_range = [&](const LinExpr& e, double lo, double hi) {
        const LinExpr s_lo = LinExpr::variable(m.add_variable(0.0));
        const LinExpr s_hi = LinExpr::variable(m.add_variable(0.0));
        m.add_leq(e - s_hi, hi);
        m.add_geq(e + s_lo, lo);
        m.add_linear_cost(cfg.rho_slack * (s_lo + s_hi));
        return std::pair{s_lo, s_hi};
    };
    std::vector<LinExpr> slacks;

    for (int j = 0; j < S; ++j) {
        if (p_int_hat[static_cast<std::size_t>(j)].size() != N) throw UsageError("intraday prediction has wrong length");
        std::vector<LinExpr> power(static_cast<std::size_t>(N));
        if (cfg.include_building) {
            const auto u = m.add_variables(N, cfg.building.u_min, cfg.building.u_max);
            for (int i = 0; i < N; ++i) power[static_cast<std::size_t>(i)] += LinExpr::variable(u[static_cast<std::size_t>(i)]);
            // Outputs get their own variables so each dense prediction row
            // appears once in the KKT system.
            for (int r = 0; r < N; ++r) {
                const LinExpr y = LinExpr::variable(m.add_variable());
                LinExpr pred_y = y;
                for (int k = 0; k < N; ++k) pred_y.add_term(u[static_cast<std::size_t>(k)], -pred->P_u_pred(r, k));
                m.add_eq(pred_y, y_free[r]);
                auto [lo, hi] = soft_range(y, cfg.building.y_min, cfg.building.y_max);
                slacks.push_back(lo);
                slacks.push_back(hi);
            }
        }
        if (cfg.include_ess) {
            const auto pe = m.add_variables(N, cfg.ess.p_min, cfg.ess.p_max);
            LinExpr soc(soc_t);
            for (int i = 0; i < N; ++i) {
                const LinExpr p = LinExpr::variable(pe[static_cast<std::size_t>(i)]);
                power[static_cast<std::size_t>(i)] += p;
                const LinExpr next = LinExpr::variable(m.add_variable());
                m.add_eq(next - soc - kStepHours * p, 0.0);
                soc = next;
                auto [lo, hi] = soft_range(soc, cfg.ess.soc_min, cfg.ess.soc_max);
                slacks.push_back(lo);
                slacks.push_back(hi);
            }
        }
        for (int i = 0; i < N; ++i) {
            const auto ii = static_cast<std::size_t>(i);
            const double a = scenarios.alpha(j, i);
            m.add_eq(power[ii] - base[ii] - a * gamma, p_int_hat[static_cast<std::size_t>(j)][i]);
            if (cfg.W_base > 0.0 && cfg.P_pre)
                m.add_squared_cost(base[ii] + a * gamma - (*cfg.P_pre)[i] + p_int_hat[static_cast<std::size_t>(j)][i],
                                   cfg.W_base);
        }
    }

    const auto sol = qp::solve(m);
    PlanResult r;
    r.status = sol.status;
    r.iterations = sol.iterations;
    if (!sol.ok()) throw SolverError(std::string("day-ahead planner: ") + qp::to_string(sol.status));
    r.plan.gamma = std::max(0.0, sol.value(gamma));
    r.plan.baseline.resize(N);
    for (int i = 0; i < N; ++i) r.plan.baseline[i] = sol.value(base[static_cast<std::size_t>(i)]);
    for (const auto& s : slacks) r.max_slack = std::max(r.max_slack, sol.value(s));
    return r;
}

/// Full day-ahead plan: intraday predictions from the scenario mean, then the
/// scenario program.
inline PlanResult plan_day_ahead(const DdpPredictor* pred, const InitWindows& init, const VectorXd& w_forecast,
                                 const ScenarioSet& scenarios, double soc_t, const PlannerConfig& cfg)
{
    scenarios.validate();
    const VectorXd mean = scenarios.mean();
    std::vector<VectorXd> p_hat;
    p_hat.reserve(static_cast<std::size_t>(scenarios.size()));
    for (int j = 0; j < scenarios.size(); ++j) p_hat.push_back(predict_intraday(scenarios.alpha.row(j).transpose(), mean));
    return solve_plan(pred, init, w_forecast, scenarios, p_hat, soc_t, cfg);
}

/// Uniform draw of `count` distinct days from a scenario library.
inline ScenarioSet draw_scenarios(const ScenarioSet& library, int count, std::uint64_t seed)
{
    library.validate();
    if (count <= 0) throw UsageError("no scenarios");
    std::vector<int> idx(static_cast<std::size_t>(library.size()));
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
    std::mt19937_64 rng(seed);
    std::shuffle(idx.begin(), idx.end(), rng);
    idx.resize(static_cast<std::size_t>(std::min(count, library.size())));
    ScenarioSet out;
    out.alpha.resize(static_cast<Index>(idx.size()), library.steps());
    for (std::size_t k = 0; k < idx.size(); ++k) out.alpha.row(static_cast<Index>(k)) = library.alpha.row(idx[k]);
    out.provenance = library.provenance + "#seed=" + std::to_string(seed);
    return out;
}

/// Planner state carried from one day to the next.
struct PlannerState {
    std::optional<DdpModel> model;
    DdpHyper hyper;
    std::optional<SfcPlan> last_plan;
};

struct PlannerCycleInputs {
    std::vector<OperationalSegment> new_segments;
    InitWindows init;
    VectorXd w_forecast;
    const ScenarioSet* library = nullptr;
    int n_scen = 300;
    std::uint64_t scenario_seed = 0;
    double soc = 0.0;
};

struct PlannerCycleResult {
    PlanResult result;
    std::optional<UpdateResult> update;
};

/// Daily planner run: Hankel refresh, scenario draw, scenario program.
inline PlannerCycleResult run_planner_cycle(PlannerState& state, const PlannerCycleInputs& in, PlannerConfig cfg)
{
    PlannerCycleResult out;
    if (cfg.include_building) {
        if (!state.model) throw DataError("planner has no predictor");
        if (!in.new_segments.empty()) {
            out.update = adaptive_update(*state.model, in.new_segments, state.hyper);
            if (out.update->accepted)
                state.model = out.update->model;
            else
                log().info("planner keeps previous predictor");
        }
    }
    if (in.library == nullptr) throw UsageError("no scenarios");
    const auto scen = draw_scenarios(*in.library, in.n_scen, in.scenario_seed);
    if (cfg.W_base > 0.0 && !cfg.P_pre && state.last_plan) cfg.P_pre = state.last_plan->baseline;
    out.result = plan_day_ahead(cfg.include_building ? &state.model->predictor : nullptr, in.init, in.w_forecast, scen,
                                in.soc, cfg);
    state.last_plan = out.result.plan;
    return out;
}

/// Plan file: `gamma_kw,<value>` then `step,baseline_kw` rows.
inline void write_plan(const std::filesystem::path& path, const SfcPlan& plan)
{
    std::ofstream f(path);
    if (!f) throw DataError(path.string() + ": cannot write");
    f.precision(17);
    f << "gamma_kw," << plan.gamma << "\nstep,baseline_kw\n";
    for (Index i = 0; i < plan.baseline.size(); ++i) f << i << ',' << plan.baseline[i] << '\n';
}

inline SfcPlan read_plan(const std::filesystem::path& path)
{
    std::ifstream f(path);
    if (!f) throw DataError(path.string() + ": cannot open");
    SfcPlan plan;
    std::string line;
    if (!std::getline(f, line) || line.rfind("gamma_kw,", 0) != 0) throw DataError(path.string() + ": line 1: expected gamma_kw");
    plan.gamma = std::stod(line.substr(9));
    if (!std::getline(f, line) || line != "step,baseline_kw") throw DataError(path.string() + ": line 2: bad header");
    std::vector<double> vals;
    for (int ln = 3; std::getline(f, line); ++ln) {
        if (line.empty()) continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw DataError(path.string() + ": line " + std::to_string(ln) + ": malformed row");
        vals.push_back(std::stod(line.substr(comma + 1)));
    }
    plan.baseline = Eigen::Map<VectorXd>(vals.data(), static_cast<Index>(vals.size()));
    return plan;
}

} // namespace ddpc
