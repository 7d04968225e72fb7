#pragma once

// Open-loop identification runs of the synthetic plant, used for the
// prediction-quality studies and as CLI fixtures.

#include <cstdint>

#include "../data.hpp"
#include "plant.hpp"
#include "signals.hpp"

namespace ddpc::sim {

struct IdentificationConfig {
    std::uint64_t seed = 1;
    int days = 40;
    Mode mode = Mode::cooling;
    RcParams rc;
    double drift_per_day = 0.0;
    double sigma_y = 0.05;
    double sigma_u = 0.05;
    double setpoint = 24.0;
    double dither = 1.5; ///< half-width of the uniform input dither [kW]
    double initial_temp = 24.0;
    WeatherParams weather;
};

/// One continuous segment of `days` x 96 samples starting at index 0.
inline OperationalSegment make_identification_data(const IdentificationConfig& c)
{
    if (c.days < 1) throw UsageError("days must be positive");
    PlantModel plant = make_plant(c.rc);
    plant.drift_per_day = c.drift_per_day;
    plant.sigma_y = c.sigma_y;
    plant.sigma_u = c.sigma_u;
    PlantState xs;
    xs.x.setConstant(c.initial_temp);

    const Index n = static_cast<Index>(c.days) * kStepsPerDay;
    OperationalSegment s;
    s.mode = c.mode;
    s.u.resize(1, n);
    s.w.resize(2, n);
    s.y.resize(1, n);
    double y = c.initial_temp;
    for (int d = 0; d < c.days; ++d) {
        const auto wd = gen_weather(c.seed, d, c.weather);
        auto rng = stream_rng(c.seed, d, kPlantStream);
        for (int k = 0; k < kStepsPerDay; ++k) {
            const Index i = static_cast<Index>(d) * kStepsPerDay + k;
            const Vector2d w = wd.truth.col(k);
            const double u = excitation_input(plant, y, c.mode, c.setpoint, c.dither, rng);
            const double day = d + static_cast<double>(k) / kStepsPerDay;
            y = step_plant(plant, xs, u, w, c.mode, day, rng).y;
            s.u(0, i) = u;
            s.w.col(i) = w;
            s.y(0, i) = y;
        }
    }
    return s;
}

} // namespace ddpc::sim
