#pragma once

// Closed-loop runs of the three operating scenarios:
//   A  planner + robust building controller + ESS tracking
//   B  thermostat building, ESS provides the service alone
//   C  thermostat building, no market participation

#include <chrono>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "../controller.hpp"
#include "../ddp.hpp"
#include "../planner.hpp"
#include "comfort.hpp"
#include "ess.hpp"
#include "ledger.hpp"
#include "plant.hpp"
#include "signals.hpp"

namespace ddpc::sim {

enum class Scenario { A, B, C };

inline std::string_view to_string(Scenario s) { return s == Scenario::A ? "A" : s == Scenario::B ? "B" : "C"; }

inline Scenario scenario_from_string(std::string_view s)
{
    if (s == "A" || s == "a") return Scenario::A;
    if (s == "B" || s == "b") return Scenario::B;
    if (s == "C" || s == "c") return Scenario::C;
    throw UsageError("unknown scenario '" + std::string(s) + "'");
}

struct ExperimentConfig {
    Scenario scenario = Scenario::A;
    int days = 20;
    std::uint64_t seed = 1;

    RcParams rc;
    double drift_per_day = 0.0;
    double sigma_y = 0.05;
    double sigma_u = 0.05;
    double initial_temp = 24.0;

    EssParams ess;
    double initial_soc = 2.625;
    MarketParams market;
    WeatherParams weather;
    AgcParams agc;
    ComfortParams comfort;

    double thermostat_setpoint = 24.0;
    double thermostat_hysteresis = 0.5;
    bool scheduler_enabled = true;
    double scheduler_threshold = 15.0;
    int scheduler_delay_steps = 4;

    DdpHyper planner_hyper{960, 12, 96, 0.01, 4, 0.8};
    DdpHyper controller_hyper{480, 12, 12, 0.01, 4, 0.8};
    ControllerConfig controller;
    PlannerConfig planner;
    int n_scen = 20;
    int library_days = 365;
    /// Cost of baseline energy relative to the bid price; negative selects
    /// energy_price / c_bid.
    double planner_energy_weight = -1.0;

    int warmup_days_cooling = 11;
    int warmup_days_heating = 11;
    double heating_warmup_offset = -10.0;
    double warmup_excitation = 1.5; ///< half-width of the uniform input dither [kW]

    /// Output directory; empty disables file output.
    std::filesystem::path out_dir;
    /// Write every n-th fine step to the actuation log.
    int actuation_stride = 1;
    /// Stop after the first day-ahead plan.
    bool plan_only = false;
};

/// Rolling record of 15-minute samples, indexed globally from `first_index`.
struct History {
    long first_index = 0;
    std::vector<double> u, w1, w2, y;
    std::vector<Mode> mode;

    long end_index() const { return first_index + static_cast<long>(u.size()); }

    void push(double u_, const Vector2d& w, double y_, Mode m)
    {
        u.push_back(u_);
        w1.push_back(w[0]);
        w2.push_back(w[1]);
        y.push_back(y_);
        mode.push_back(m);
    }

    /// Mode-homogeneous segments covering samples [from, end_index()).
    std::vector<OperationalSegment> segments(long from) const
    {
        std::vector<OperationalSegment> out;
        std::size_t i = static_cast<std::size_t>(std::max(from, first_index) - first_index);
        while (i < u.size()) {
            std::size_t j = i;
            while (j < u.size() && mode[j] == mode[i]) ++j;
            const auto n = static_cast<Index>(j - i);
            OperationalSegment s;
            s.start_index = first_index + static_cast<long>(i);
            s.mode = mode[i];
            s.u = Eigen::Map<const Eigen::RowVectorXd>(&u[i], n);
            s.w.resize(2, n);
            s.w.row(0) = Eigen::Map<const Eigen::RowVectorXd>(&w1[i], n);
            s.w.row(1) = Eigen::Map<const Eigen::RowVectorXd>(&w2[i], n);
            s.y = Eigen::Map<const Eigen::RowVectorXd>(&y[i], n);
            out.push_back(std::move(s));
            i = j;
        }
        return out;
    }

    /// Init windows from the last `t_init` samples.
    InitWindows init_windows(int t_init) const
    {
        if (u.size() < static_cast<std::size_t>(t_init)) throw DataError("not enough history for the init windows");
        const std::size_t b = u.size() - static_cast<std::size_t>(t_init);
        InitWindows iw;
        iw.u_init.resize(t_init);
        iw.y_init.resize(t_init);
        iw.w_init.resize(2 * t_init);
        for (int k = 0; k < t_init; ++k) {
            iw.u_init[k] = u[b + k];
            iw.y_init[k] = y[b + k];
            iw.w_init[2 * k] = w1[b + k];
            iw.w_init[2 * k + 1] = w2[b + k];
        }
        return iw;
    }
};

struct ExperimentResult {
    Scenario scenario = Scenario::A;
    std::vector<DayLedger> days;
    std::vector<double> y;       ///< measured temperature per 15-minute step
    std::vector<Mode> modes;
    std::vector<SfcPlan> plans;  ///< day-ahead plan per day (market scenarios)
    double min_soc = 0.0;
    double max_soc = 0.0;
    /// Largest tracking error seen while the ESS command was not clipped.
    double max_unsaturated_track_error = 0.0;
    int updates_accepted = 0;
    int updates_rejected = 0;
    double wall_seconds = 0.0;

    double mean_total() const
    {
        CompensatedSum s;
        for (const auto& d : days) s.add(d.total);
        return days.empty() ? 0.0 : s.value() / static_cast<double>(days.size());
    }
    double mean_ppd() const
    {
        CompensatedSum s;
        for (const auto& d : days) s.add(d.mean_ppd);
        return days.empty() ? 0.0 : s.value() / static_cast<double>(days.size());
    }
};

/// Weather cache; forecasts spill into the next day.
class WeatherSource {
public:
    WeatherSource(std::uint64_t seed, WeatherParams p) : seed_(seed), p_(p) {}

    const WeatherDay& day(long d)
    {
        auto it = cache_.find(d);
        if (it == cache_.end()) it = cache_.emplace(d, gen_weather(seed_, d, p_)).first;
        return it->second;
    }
    Vector2d truth(long step) { return day(floor_div(step)).truth.col(mod(step)); }
    /// Step-major forecast of `n` steps starting at global step `from`.
    VectorXd forecast(long from, int n)
    {
        VectorXd f(2 * n);
        for (int k = 0; k < n; ++k) f.segment<2>(2 * k) = day(floor_div(from + k)).forecast.col(mod(from + k));
        return f;
    }
    void forget_before(long d) { cache_.erase(cache_.begin(), cache_.lower_bound(d)); }

private:
    static long floor_div(long s) { return s >= 0 ? s / kStepsPerDay : -((-s + kStepsPerDay - 1) / kStepsPerDay); }
    static Index mod(long s) { return static_cast<Index>(s - floor_div(s) * kStepsPerDay); }
    std::uint64_t seed_;
    WeatherParams p_;
    std::map<long, WeatherDay> cache_;
};

namespace detail {

inline std::uint64_t mix(std::uint64_t seed, long day)
{
    Fnv1a h;
    h.update_value(seed);
    h.update_value(day);
    return h.digest();
}

} // namespace detail

inline void write_plans(const std::filesystem::path& path, const std::vector<SfcPlan>& plans)
{
    std::ofstream f(path);
    if (!f) throw DataError("cannot write " + path.string());
    f << "day,step,gamma_kw,baseline_kw\n";
    for (std::size_t d = 0; d < plans.size(); ++d)
        for (Index k = 0; k < plans[d].baseline.size(); ++k)
            f << fmt::format("{},{},{:.9g},{:.9g}\n", d, k, plans[d].gamma, plans[d].baseline[k]);
}

/// Runs one scenario. Weather, AGC and plant noise depend only on the seed,
/// so runs of different scenarios see identical exogenous signals.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg)
{
    const auto t_start = std::chrono::steady_clock::now();
    if (cfg.days < 1) throw UsageError("days must be positive");
    if (cfg.actuation_stride < 1) throw UsageError("actuation_stride must be positive");
    cfg.ess.validate();

    ExperimentResult res;
    res.scenario = cfg.scenario;
    const bool market = cfg.scenario != Scenario::C;
    const bool building_ctrl = cfg.scenario == Scenario::A;

    PlantModel plant = make_plant(cfg.rc);
    plant.drift_per_day = cfg.drift_per_day;
    plant.sigma_y = cfg.sigma_y;
    plant.sigma_u = cfg.sigma_u;
    PlantState xs;
    xs.x.setConstant(cfg.initial_temp);
    WeatherSource weather(cfg.seed, cfg.weather);
    ModeScheduler scheduler{cfg.scheduler_enabled, cfg.scheduler_threshold, cfg.scheduler_delay_steps};
    Thermostat thermostat{cfg.thermostat_setpoint, cfg.thermostat_hysteresis};

    // Warm-up data: heating first, then cooling, so the plant enters the
    // experiment in cooling mode.
    const int warm = cfg.warmup_days_heating + cfg.warmup_days_cooling;
    History hist;
    hist.first_index = -static_cast<long>(warm) * kStepsPerDay;
    double y_meas = cfg.initial_temp;
    for (int d = -warm; d < 0; ++d) {
        const Mode mode = d < -cfg.warmup_days_cooling ? Mode::heating : Mode::cooling;
        const double offset = mode == Mode::heating ? cfg.heating_warmup_offset : 0.0;
        auto rng = stream_rng(cfg.seed, d, kWarmupStream);
        for (int k = 0; k < kStepsPerDay; ++k) {
            const long step = static_cast<long>(d) * kStepsPerDay + k;
            Vector2d w = weather.truth(step);
            w[0] += offset;
            const double u = excitation_input(plant, y_meas, mode, cfg.thermostat_setpoint,
                                                      cfg.warmup_excitation, rng);
            const auto st = step_plant(plant, xs, u, w, mode, static_cast<double>(d), rng);
            y_meas = st.y;
            hist.push(u, w, y_meas, mode);
        }
    }
    scheduler.mode = Mode::cooling;

    // Building predictors (scenario A only).
    ControllerState cstate;
    cstate.hyper = cfg.controller_hyper;
    std::map<Mode, PlannerState> pstates;
    if (building_ctrl) {
        const auto segs = hist.segments(hist.first_index);
        for (Mode m : {Mode::cooling, Mode::heating}) {
            cstate.models.emplace(m, build_model(segs, cfg.controller_hyper, m));
            PlannerState ps;
            ps.hyper = cfg.planner_hyper;
            ps.model = build_model(segs, cfg.planner_hyper, m);
            pstates.emplace(m, std::move(ps));
        }
    }
    PlannerState ess_planner;

    ControllerConfig ccfg = cfg.controller;
    ccfg.ess = cfg.ess;
    ccfg.include_building = building_ctrl;
    PlannerConfig pcfg = cfg.planner;
    pcfg.ess = cfg.ess;
    pcfg.building = ccfg.building;
    pcfg.include_building = building_ctrl;
    pcfg.include_ess = true;
    pcfg.energy_weight =
        cfg.planner_energy_weight >= 0 ? cfg.planner_energy_weight : cfg.market.energy_price / cfg.market.c_bid;

    const ScenarioSet library =
        market ? agc_library(cfg.seed, -100000, cfg.library_days, cfg.agc) : ScenarioSet{};

    std::optional<std::ofstream> act;
    if (!cfg.out_dir.empty()) {
        std::filesystem::create_directories(cfg.out_dir);
        act.emplace(cfg.out_dir / "actuation.csv");
        if (!*act) throw DataError("cannot write " + (cfg.out_dir / "actuation.csv").string());
        *act << "t,u_setpoint_kw,p_h_kw,p_e_kw,alpha,track_err_kw,soc_kwh,y_c,mode\n";
    }

    EssState ess{cfg.initial_soc};
    res.min_soc = res.max_soc = ess.soc;
    std::vector<double> agc_history;
    const auto warm_agc = gen_agc(cfg.seed, -1, cfg.agc);
    for (int k = kStepsPerDay - 4; k < kStepsPerDay; ++k) agc_history.push_back(warm_agc.average[k]);
    std::optional<SfcPlan> plan;
    const double amort = market ? cfg.market.amortization(cfg.ess.capacity) : 0.0;
    long last_update_index = hist.end_index();

    for (int day = 0; day < cfg.days; ++day) {
        DayLedger info;
        // Day-ahead planning at the day boundary.
        if (market) {
            PlannerCycleInputs pin;
            pin.init = hist.init_windows(cfg.planner_hyper.t_init);
            pin.w_forecast = weather.forecast(static_cast<long>(day) * kStepsPerDay, kStepsPerDay);
            pin.library = &library;
            pin.n_scen = cfg.n_scen;
            pin.scenario_seed = detail::mix(cfg.seed, day);
            pin.soc = ess.soc;
            PlannerState& ps = building_ctrl ? pstates.at(scheduler.mode) : ess_planner;
            if (building_ctrl && scheduler.mode == Mode::cooling) pin.new_segments = hist.segments(last_update_index);
            try {
                const auto pc = run_planner_cycle(ps, pin, pcfg);
                if (pc.update) pc.update->accepted ? ++res.updates_accepted : ++res.updates_rejected;
                plan = pc.result.plan;
                info.max_slack = std::max(info.max_slack, pc.result.max_slack);
            } catch (const Error& e) {
                log().warn("day {}: planner failed ({}); reusing previous plan", day, e.what());
                info.degraded = true;
                if (!plan) plan = SfcPlan{0.0, VectorXd::Constant(kStepsPerDay, building_ctrl ? 4.7 : 0.0)};
            }
            res.plans.push_back(*plan);
            if (cfg.plan_only) break;
        }

        std::vector<OperationalSegment> ctrl_segments;
        if (building_ctrl) ctrl_segments = hist.segments(last_update_index);
        last_update_index = hist.end_index();

        auto plant_rng = stream_rng(cfg.seed, day, kPlantStream);
        const AgcDay agc = gen_agc(cfg.seed, day, cfg.agc);
        DayAccumulator acc;
        std::vector<double> day_y;
        day_y.reserve(kStepsPerDay);

        for (int k = 0; k < kStepsPerDay; ++k) {
            const long step = static_cast<long>(day) * kStepsPerDay + k;
            const Vector2d w = weather.truth(step);
            const Mode mode = scheduler.update(w[0]);

            double u = 0.0;
            double p_int_now = 0.0;
            if (market) {
                ControllerCycleInputs ci;
                ci.step_of_day = k;
                ci.mode = mode;
                ci.init = hist.init_windows(cfg.controller_hyper.t_init);
                ci.w_forecast = weather.forecast(step, ccfg.N);
                ci.alpha_forecast = forecast_agc(agc_history, ccfg.N);
                ci.soc = ess.soc;
                ci.plan = &*plan;
                ci.u_max = plant.u_max(mode);
                if (k == 0) ci.new_segments = std::move(ctrl_segments);
                const auto out = run_controller_cycle(cstate, ccfg, ci);
                for (const auto& [m, up] : out.updates) up.accepted ? ++res.updates_accepted : ++res.updates_rejected;
                if (out.solver_fallback) ++info.solver_fallbacks;
                info.max_slack = std::max(info.max_slack, out.result.max_slack);
                p_int_now = out.p_int_now;
                u = building_ctrl ? out.u : thermostat(y_meas, mode, plant);
            } else {
                u = thermostat(y_meas, mode, plant);
            }
            u = std::clamp(u, plant.u_vent, plant.u_max(mode));

            const auto ps = step_plant(plant, xs, u, w, mode, static_cast<double>(day), plant_rng);

            CompensatedSum alpha_sum;
            for (int f = 0; f < kFineStepsPerStep; ++f) {
                const double a = agc.fine[static_cast<std::size_t>(k * kFineStepsPerStep + f)];
                double pe = 0.0, err = 0.0;
                if (market) {
                    const double p_h_seen = building_ctrl ? ps.p_h : 0.0;
                    const auto cmd = ess_track(plan->baseline[k], p_int_now, plan->gamma, a, p_h_seen, cfg.ess, ess.soc);
                    pe = step_ess(cfg.ess, ess, cmd.p_e).p_e;
                    err = cmd.p_e + cmd.track_error - pe;
                    if (std::abs(cmd.track_error) == 0.0)
                        res.max_unsaturated_track_error = std::max(res.max_unsaturated_track_error, std::abs(err));
                    acc.add_track_error(err, kFineStepHours);
                    res.min_soc = std::min(res.min_soc, ess.soc);
                    res.max_soc = std::max(res.max_soc, ess.soc);
                }
                acc.add_energy(ps.p_h + pe, kFineStepHours);
                alpha_sum.add(a);
                if (act && f % cfg.actuation_stride == 0) {
                    const long t = (step * kFineStepsPerStep + f) * 4;
                    *act << fmt::format("{},{:.6g},{:.6g},{:.6g},{:.6g},{:.6g},{:.9g},{:.6g},{}\n", t, u, ps.p_h, pe,
                                        a, err, ess.soc, y_meas, ddpc::to_string(mode));
                }
            }
            agc_history.push_back(alpha_sum.value() / kFineStepsPerStep);
            if (agc_history.size() > 8) agc_history.erase(agc_history.begin());

            y_meas = ps.y;
            hist.push(u, w, y_meas, mode);
            day_y.push_back(y_meas);
            res.y.push_back(y_meas);
            res.modes.push_back(mode);
        }

        DayLedger d = acc.close(day, cfg.market, market && plan ? plan->gamma : 0.0, amort);
        d.mean_ppd = comfort_metrics(day_y, cfg.comfort).mean_ppd;
        d.max_slack = info.max_slack;
        d.solver_fallbacks = info.solver_fallbacks;
        d.degraded = info.degraded;
        res.days.push_back(d);
        log().info("scenario {} day {}: total {:.3f} CHF, gamma {:.3f} kW, PPD {:.2f}%", to_string(cfg.scenario), day,
                   d.total, d.gamma, d.mean_ppd);
        weather.forget_before(day);
    }

    if (!cfg.out_dir.empty()) {
        write_ledger(cfg.out_dir / "ledger.csv", res.days);
        write_plans(cfg.out_dir / "plans.csv", res.plans);
    }
    res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return res;
}

} // namespace ddpc::sim
