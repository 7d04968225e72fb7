#pragma once

// Physical limits shared by the planner, the controller and the simulator.

#include "core.hpp"

namespace ddpc {

struct BuildingBounds {
    double y_min = 22.0;
    double y_max = 26.0;
    double u_min = 2.4;
    double u_max = 8.4;

    void validate() const
    {
        if (!(y_min < y_max) || !(u_min < u_max)) throw UsageError("building bounds are not ordered");
    }
};

struct EssParams {
    double capacity = 5.0;
    double soc_min = 0.25;
    double soc_max = 5.0;
    double p_min = -5.0;
    double p_max = 5.0;
    double efficiency = 0.95;

    double soc_ref() const { return 0.5 * (soc_min + soc_max); }

    void validate() const
    {
        if (!(0.0 <= soc_min && soc_min < soc_max && soc_max <= capacity)) throw UsageError("SoC bounds are not ordered");
        if (!(p_min < p_max)) throw UsageError("ESS power bounds are not ordered");
        if (!(efficiency > 0.0 && efficiency <= 1.0)) throw UsageError("ESS efficiency must lie in (0, 1]");
    }
};

} // namespace ddpc
