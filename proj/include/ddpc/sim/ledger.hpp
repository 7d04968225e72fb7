#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include <fmt/format.h>

#include "../core.hpp"

namespace ddpc::sim {

/// Neumaier compensated summation.
class CompensatedSum {
public:
    void add(double v)
    {
        const double t = sum_ + v;
        if (std::abs(sum_) >= std::abs(v))
            comp_ += (sum_ - t) + v;
        else
            comp_ += (v - t) + sum_;
        sum_ = t;
    }
    double value() const { return sum_ + comp_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

struct MarketParams {
    double c_bid = 0.8;              ///< CHF per kW of flexibility per day
    double energy_price = 0.2;       ///< CHF/kWh
    double penalty_rate = 1.0;       ///< CHF per kWh of tracking error
    double battery_price = 813.0;    ///< CHF/kWh of capacity
    double battery_life_years = 10.0;

    double amortization(double capacity_kwh) const
    {
        return battery_price * capacity_kwh / (battery_life_years * 365.0);
    }
};

struct DayLedger {
    int day = 0;
    double energy_kwh = 0.0;
    double energy_cost = 0.0;
    double reward = 0.0;
    double penalty = 0.0;
    double amortization = 0.0;
    double total = 0.0;
    double gamma = 0.0;
    double track_error_kwh = 0.0;
    double mean_ppd = 0.0;
    double max_slack = 0.0;
    int solver_fallbacks = 0;
    bool degraded = false;

    void close() { total = energy_cost - reward + penalty + amortization; }
};

/// Accumulates one day of fine-step energy and tracking error.
class DayAccumulator {
public:
    void add_energy(double kw, double dt_h) { energy_.add(kw * dt_h); }
    void add_track_error(double kw, double dt_h) { track_.add(std::abs(kw) * dt_h); }

    DayLedger close(int day, const MarketParams& m, double gamma, double amortization) const
    {
        DayLedger d;
        d.day = day;
        d.energy_kwh = energy_.value();
        d.track_error_kwh = track_.value();
        d.energy_cost = m.energy_price * d.energy_kwh;
        d.reward = m.c_bid * gamma;
        d.penalty = m.penalty_rate * d.track_error_kwh;
        d.amortization = amortization;
        d.gamma = gamma;
        d.close();
        return d;
    }

private:
    CompensatedSum energy_;
    CompensatedSum track_;
};

inline void write_ledger(const std::filesystem::path& path, const std::vector<DayLedger>& days)
{
    std::ofstream f(path);
    if (!f) throw DataError("cannot write " + path.string());
    f << "day,energy_kwh,energy_cost,reward,penalty,amortization,total,gamma_kw,track_error_kwh,mean_ppd,max_slack,"
         "solver_fallbacks,degraded\n";
    for (const auto& d : days)
        f << fmt::format("{},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g},{},{}\n", d.day,
                         d.energy_kwh, d.energy_cost, d.reward, d.penalty, d.amortization, d.total, d.gamma,
                         d.track_error_kwh, d.mean_ppd, d.max_slack, d.solver_fallbacks, d.degraded ? 1 : 0);
}

} // namespace ddpc::sim
