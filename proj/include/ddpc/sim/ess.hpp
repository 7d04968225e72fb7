#pragma once

#include <algorithm>

#include "../controller.hpp"
#include "../params.hpp"

namespace ddpc::sim {

struct EssState {
    double soc = 2.625;
};

struct EssStep {
    double p_e = 0.0; ///< delivered power [kW], positive when charging
};

/// Battery update over `dt_h` hours. Charging stores 0.95 of the energy drawn,
/// discharging removes 1/0.95 of the energy delivered. The command is limited
/// to the power bounds and to what keeps SoC inside its bounds.
inline EssStep step_ess(const EssParams& p, EssState& s, double p_cmd, double dt_h = kFineStepHours)
{
    const auto [lo, hi] = ess_power_window(p, s.soc, dt_h);
    const double pe = std::clamp(p_cmd, lo, hi);
    const double charge = std::max(pe, 0.0);
    const double discharge = std::max(-pe, 0.0);
    s.soc += p.efficiency * charge * dt_h - discharge * dt_h / p.efficiency;
    // Rounding in the window can leave the last few ulps outside the bounds.
    s.soc = std::clamp(s.soc, p.soc_min, p.soc_max);
    return {pe};
}

} // namespace ddpc::sim
