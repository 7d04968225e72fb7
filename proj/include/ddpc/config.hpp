#pragma once

// Run configuration: one JSON document for every CLI workflow. Omitted keys
// keep their defaults; unknown keys are rejected.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "eval.hpp"
#include "sim/dataset.hpp"
#include "sim/experiment.hpp"

namespace ddpc {

using nlohmann::json;

/// Settings of the prediction studies (predict and sweep commands).
struct EvalConfig {
    DdpHyper hyper{480, 12, 12, 0.01, 4, 0.8};
    int build_days = 10;
    int validation_days = 10;
    int stride = 1;
    int update_period = kStepsPerDay;
    bool adaptive = false;
    /// Dataset used when no data file is given.
    sim::IdentificationConfig synthetic;
    SweepGrid sweep;
};

struct RunConfig {
    std::uint64_t seed = 1;
    std::string data_path;
    sim::ExperimentConfig experiment;
    EvalConfig eval;
};

namespace detail {

/// Reads fields that are present and records which keys were consumed.
class JsonReader {
public:
    explicit JsonReader(const json& j, std::string path) : j_(j), path_(std::move(path))
    {
        if (!j_.is_object()) throw UsageError("config: '" + path_ + "' must be an object");
    }

    template <class T>
    void field(const char* key, T& value)
    {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) return;
        try {
            read(*it, value);
        } catch (const json::exception& e) {
            throw UsageError("config: bad value for '" + path_ + key + "': " + e.what());
        }
    }

    template <class F>
    void section(const char* key, F&& body)
    {
        seen_.insert(key);
        auto it = j_.find(key);
        if (it == j_.end()) return;
        JsonReader sub(*it, path_ + key + ".");
        body(sub);
        sub.finish();
    }

    void finish() const
    {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!seen_.count(it.key())) throw UsageError("config: unknown key '" + path_ + it.key() + "'");
    }

private:
    template <class T>
    static void read(const json& j, T& v) { v = j.get<T>(); }
    static void read(const json& j, VectorXd& v)
    {
        const auto xs = j.get<std::vector<double>>();
        v = Eigen::Map<const VectorXd>(xs.data(), static_cast<Index>(xs.size()));
    }
    static void read(const json& j, Mode& m) { m = mode_from_string(j.get<std::string>()); }
    static void read(const json& j, sim::Scenario& s) { s = sim::scenario_from_string(j.get<std::string>()); }
    static void read(const json& j, std::filesystem::path& p) { p = j.get<std::string>(); }

    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

class JsonWriter {
public:
    explicit JsonWriter(json& j) : j_(j) { j_ = json::object(); }

    template <class T>
    void field(const char* key, const T& value) { j_[key] = write(value); }

    template <class F>
    void section(const char* key, F&& body)
    {
        JsonWriter sub(j_[key]);
        body(sub);
    }

private:
    template <class T>
    static json write(const T& v) { return v; }
    static json write(const VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }
    static json write(Mode m) { return std::string(to_string(m)); }
    static json write(sim::Scenario s) { return std::string(sim::to_string(s)); }
    static json write(const std::filesystem::path& p) { return p.string(); }

    json& j_;
};

template <class V, class H>
void visit_hyper(V& v, H& h)
{
    v.field("T", h.T);
    v.field("t_init", h.t_init);
    v.field("N", h.N);
    v.field("e_g", h.e_g);
    v.field("n_x", h.n_x);
    v.field("eta", h.eta);
}

template <class V, class E>
void visit_ess(V& v, E& e)
{
    v.field("capacity", e.capacity);
    v.field("soc_min", e.soc_min);
    v.field("soc_max", e.soc_max);
    v.field("p_min", e.p_min);
    v.field("p_max", e.p_max);
    v.field("efficiency", e.efficiency);
}

template <class V, class B>
void visit_bounds(V& v, B& b)
{
    v.field("y_min", b.y_min);
    v.field("y_max", b.y_max);
    v.field("u_min", b.u_min);
    v.field("u_max", b.u_max);
}

template <class V, class R>
void visit_rc(V& v, R& rc)
{
    v.field("c_air", rc.c_air);
    v.field("c_mass", rc.c_mass);
    v.field("c_envelope", rc.c_envelope);
    v.field("r_air_mass", rc.r_air_mass);
    v.field("r_air_out", rc.r_air_out);
    v.field("r_mass_envelope", rc.r_mass_envelope);
    v.field("r_envelope_out", rc.r_envelope_out);
    v.field("cop", rc.cop);
    v.field("u_vent", rc.u_vent);
    v.field("solar_aperture", rc.solar_aperture);
    v.field("solar_envelope", rc.solar_envelope);
    v.field("internal_gain", rc.internal_gain);
}

template <class V, class W>
void visit_weather(V& v, W& w)
{
    v.field("mean_temp", w.mean_temp);
    v.field("amplitude", w.amplitude);
    v.field("day_offset", w.day_offset);
    v.field("noise", w.noise);
    v.field("solar_peak", w.solar_peak);
    v.field("cloud_flicker", w.cloud_flicker);
    v.field("sunrise_h", w.sunrise_h);
    v.field("sunset_h", w.sunset_h);
    v.field("forecast_radius_temp", w.forecast_radius_temp);
    v.field("forecast_radius_solar", w.forecast_radius_solar);
}

/// Single description of the document layout, shared by reader and writer.
template <class V, class C>
void visit_config(V& v, C& c)
{
    auto& x = c.experiment;
    v.field("seed", c.seed);
    v.field("scenario", x.scenario);
    v.field("days", x.days);
    v.field("data", c.data_path);
    v.section("ddp", [&](auto& s) {
        s.section("planner", [&](auto& h) { visit_hyper(h, x.planner_hyper); });
        s.section("controller", [&](auto& h) { visit_hyper(h, x.controller_hyper); });
    });
    v.section("bounds", [&](auto& s) { visit_bounds(s, x.controller.building); });
    v.section("ess", [&](auto& s) {
        visit_ess(s, x.ess);
        s.field("initial_soc", x.initial_soc);
    });
    v.section("controller", [&](auto& s) {
        s.field("W_u", x.controller.W_u);
        s.field("W_P", x.controller.W_P);
        s.field("W_SoC", x.controller.W_SoC);
        s.field("w_radius", x.controller.w_radius);
        s.field("alpha_radius", x.controller.alpha_radius);
        s.field("rho_slack", x.controller.rho_slack);
    });
    v.section("planner", [&](auto& s) {
        s.field("n_scen", x.n_scen);
        s.field("library_days", x.library_days);
        s.field("energy_weight", x.planner_energy_weight);
        s.field("W_base", x.planner.W_base);
        s.field("rho_slack", x.planner.rho_slack);
        s.field("headroom", x.planner.headroom);
    });
    v.section("market", [&](auto& s) {
        s.field("c_bid", x.market.c_bid);
        s.field("energy_price", x.market.energy_price);
        s.field("penalty_rate", x.market.penalty_rate);
        s.field("battery_price", x.market.battery_price);
        s.field("battery_life_years", x.market.battery_life_years);
    });
    v.section("plant", [&](auto& s) {
        s.section("rc", [&](auto& r) { visit_rc(r, x.rc); });
        s.field("drift_per_day", x.drift_per_day);
        s.field("sigma_y", x.sigma_y);
        s.field("sigma_u", x.sigma_u);
        s.field("initial_temp", x.initial_temp);
    });
    v.section("weather", [&](auto& s) { visit_weather(s, x.weather); });
    v.section("agc", [&](auto& s) {
        s.field("time_constant_min", x.agc.time_constant_min);
        s.field("stationary_std", x.agc.stationary_std);
    });
    v.section("comfort", [&](auto& s) {
        s.field("air_velocity", x.comfort.air_velocity);
        s.field("humidity", x.comfort.humidity);
        s.field("met", x.comfort.met);
        s.field("clo", x.comfort.clo);
        s.field("work", x.comfort.work);
    });
    v.section("bms", [&](auto& s) {
        s.field("setpoint", x.thermostat_setpoint);
        s.field("hysteresis", x.thermostat_hysteresis);
        s.field("scheduler_enabled", x.scheduler_enabled);
        s.field("scheduler_threshold", x.scheduler_threshold);
        s.field("scheduler_delay_steps", x.scheduler_delay_steps);
    });
    v.section("warmup", [&](auto& s) {
        s.field("cooling_days", x.warmup_days_cooling);
        s.field("heating_days", x.warmup_days_heating);
        s.field("heating_offset", x.heating_warmup_offset);
        s.field("excitation", x.warmup_excitation);
    });
    v.section("output", [&](auto& s) { s.field("actuation_stride", x.actuation_stride); });

    auto& e = c.eval;
    v.section("eval", [&](auto& s) {
        s.section("hyper", [&](auto& h) { visit_hyper(h, e.hyper); });
        s.field("build_days", e.build_days);
        s.field("validation_days", e.validation_days);
        s.field("stride", e.stride);
        s.field("update_period", e.update_period);
        s.field("adaptive", e.adaptive);
        s.section("synthetic", [&](auto& d) {
            d.field("days", e.synthetic.days);
            d.field("mode", e.synthetic.mode);
            d.field("drift_per_day", e.synthetic.drift_per_day);
            d.field("sigma_y", e.synthetic.sigma_y);
            d.field("sigma_u", e.synthetic.sigma_u);
            d.field("setpoint", e.synthetic.setpoint);
            d.field("dither", e.synthetic.dither);
        });
        s.section("sweep", [&](auto& g) {
            g.field("e_g", e.sweep.e_g);
            g.field("T", e.sweep.T);
            g.field("t_init", e.sweep.t_init);
            g.field("N", e.sweep.N);
        });
    });
}

} // namespace detail

/// Copies shared settings into the nested structures after loading.
inline void finalize(RunConfig& c)
{
    auto& x = c.experiment;
    x.seed = c.seed;
    x.planner.building = x.controller.building;
    x.controller.N = x.controller_hyper.N;
    c.eval.synthetic.seed = c.seed;
    c.eval.synthetic.rc = x.rc;
    c.eval.synthetic.weather = x.weather;
}

inline void validate(const RunConfig& c)
{
    const auto& x = c.experiment;
    if (x.days < 1) throw UsageError("config: days must be positive");
    x.planner_hyper.validate();
    x.controller_hyper.validate();
    x.controller.validate();
    x.ess.validate();
    if (x.initial_soc < x.ess.soc_min || x.initial_soc > x.ess.soc_max)
        throw UsageError("config: initial_soc outside the SoC bounds");
    if (x.n_scen < 1) throw UsageError("config: planner.n_scen must be positive");
    if (x.library_days < x.n_scen) throw UsageError("config: planner.library_days must be at least n_scen");
    if (x.actuation_stride < 1) throw UsageError("config: output.actuation_stride must be positive");
    c.eval.hyper.validate();
    if (c.eval.build_days < 1 || c.eval.validation_days < 0 || c.eval.stride < 1 || c.eval.update_period < 1)
        throw UsageError("config: eval split and stride must be positive");
    c.eval.sweep.validate();
}

inline RunConfig config_from_json(const json& j)
{
    RunConfig c;
    detail::JsonReader r(j, "");
    detail::visit_config(r, c);
    r.finish();
    finalize(c);
    validate(c);
    return c;
}

inline RunConfig load_config(const std::filesystem::path& path)
{
    std::ifstream f(path);
    if (!f) throw DataError("cannot open config " + path.string());
    json j;
    try {
        j = json::parse(f);
    } catch (const json::parse_error& e) {
        throw UsageError("config " + path.string() + ": " + e.what());
    }
    return config_from_json(j);
}

/// Complete effective configuration, including every default.
inline json config_to_json(const RunConfig& c)
{
    json j;
    detail::JsonWriter w(j);
    detail::visit_config(w, c);
    return j;
}

} // namespace ddpc
