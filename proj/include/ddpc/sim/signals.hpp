#pragma once

// Synthetic exogenous signals: AGC regulation signal and weather with a
// bounded forecast error. Every day is generated from its own seed so any
// day can be regenerated in isolation.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <vector>

#include "../core.hpp"
#include "../planner.hpp"

namespace ddpc::sim {

using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Independent RNG stream for (seed, day, stream).
inline std::mt19937_64 stream_rng(std::uint64_t seed, long day, std::uint32_t stream)
{
    const auto d = static_cast<std::uint64_t>(day);
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(d), static_cast<std::uint32_t>(d >> 32), stream};
    return std::mt19937_64(seq);
}

enum Stream : std::uint32_t { kAgcStream = 1, kWeatherStream = 2, kForecastStream = 3, kPlantStream = 4, kWarmupStream = 5 };

struct AgcParams {
    double time_constant_min = 30.0; ///< mean-reversion time
    double stationary_std = 0.35;
};

struct AgcDay {
    std::vector<double> fine; ///< 4-second values, 96 * 225 entries
    VectorXd average;         ///< 15-minute block means
};

/// Ornstein-Uhlenbeck process at 4-second resolution, clipped to [-1, 1].
inline AgcDay gen_agc(std::uint64_t seed, long day, const AgcParams& p = {})
{
    auto rng = stream_rng(seed, day, kAgcStream);
    std::normal_distribution<double> n01(0.0, 1.0);
    const double dt_min = kFineStepHours * 60.0;
    const double phi = std::exp(-dt_min / p.time_constant_min);
    const double kick = p.stationary_std * std::sqrt(1.0 - phi * phi);
    AgcDay d;
    d.fine.resize(static_cast<std::size_t>(kStepsPerDay * kFineStepsPerStep));
    d.average.setZero(kStepsPerDay);
    double a = std::clamp(p.stationary_std * n01(rng), -1.0, 1.0);
    for (std::size_t k = 0; k < d.fine.size(); ++k) {
        a = std::clamp(phi * a + kick * n01(rng), -1.0, 1.0);
        d.fine[k] = a;
        d.average[static_cast<Eigen::Index>(k / kFineStepsPerStep)] += a;
    }
    d.average /= kFineStepsPerStep;
    return d;
}

/// Library of daily 15-minute AGC profiles for days first_day .. first_day+count-1.
inline ScenarioSet agc_library(std::uint64_t seed, long first_day, int count, const AgcParams& p = {})
{
    ScenarioSet s;
    s.alpha.resize(count, kStepsPerDay);
    for (int j = 0; j < count; ++j) s.alpha.row(j) = gen_agc(seed, first_day + j, p).average.transpose();
    s.provenance = "synthetic-agc:" + std::to_string(seed) + ":" + std::to_string(first_day) + "+" + std::to_string(count);
    return s;
}

struct WeatherParams {
    double mean_temp = 25.0;      ///< daily mean outdoor temperature [C]
    double amplitude = 4.0;       ///< half peak-to-peak daily swing [C]
    double day_offset = 1.5;      ///< uniform day-to-day shift of the mean [C]
    double noise = 0.3;           ///< AR(1) noise std [C]
    double solar_peak = 0.8;      ///< clear-sky peak irradiance [kW/m2]
    double cloud_flicker = 0.15;  ///< relative AR(1) fluctuation of irradiance
    double sunrise_h = 6.0;
    double sunset_h = 20.0;
    double forecast_radius_temp = 0.2;
    double forecast_radius_solar = 0.05;
};

struct WeatherDay {
    MatrixXd truth;    ///< 2 x 96: outdoor temperature, solar irradiance
    MatrixXd forecast; ///< 2 x 96, truth plus bounded error
};

inline WeatherDay gen_weather(std::uint64_t seed, long day, const WeatherParams& p = {})
{
    auto rng = stream_rng(seed, day, kWeatherStream);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::normal_distribution<double> n01(0.0, 1.0);
    const double offset = p.day_offset * (2.0 * u01(rng) - 1.0);
    const double cloud = 0.5 + 0.5 * u01(rng);
    WeatherDay d;
    d.truth.resize(2, kStepsPerDay);
    double ar = 0.0;
    double flicker = 0.0;
    for (int k = 0; k < kStepsPerDay; ++k) {
        const double h = (k + 0.5) * kStepHours;
        ar = 0.9 * ar + std::sqrt(1.0 - 0.81) * p.noise * n01(rng);
        flicker = 0.7 * flicker + std::sqrt(1.0 - 0.49) * p.cloud_flicker * n01(rng);
        // Minimum around 05:00, maximum around 17:00.
        d.truth(0, k) = p.mean_temp + offset - p.amplitude * std::cos(2.0 * std::numbers::pi * (h - 5.0) / 24.0) + ar;
        double solar = 0.0;
        if (h > p.sunrise_h && h < p.sunset_h)
            solar = std::max(0.0, p.solar_peak * cloud * (1.0 + flicker) *
                                      std::sin(std::numbers::pi * (h - p.sunrise_h) / (p.sunset_h - p.sunrise_h)));
        d.truth(1, k) = solar;
    }
    auto frng = stream_rng(seed, day, kForecastStream);
    std::uniform_real_distribution<double> e(-1.0, 1.0);
    d.forecast = d.truth;
    for (int k = 0; k < kStepsPerDay; ++k) {
        d.forecast(0, k) += 0.9 * p.forecast_radius_temp * e(frng);
        // Night stays dark in the forecast as well.
        if (d.truth(1, k) > 0.0) d.forecast(1, k) = std::max(0.0, d.truth(1, k) + 0.9 * p.forecast_radius_solar * e(frng));
    }
    return d;
}

} // namespace ddpc::sim
