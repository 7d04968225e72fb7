#pragma once

// Fanger thermal comfort. Mean radiant temperature equals air temperature.

#include <algorithm>
#include <cmath>
#include <vector>

namespace ddpc::sim {

struct ComfortParams {
    double air_velocity = 0.1; ///< m/s
    double humidity = 50.0;    ///< relative humidity [%]
    double met = 1.2;
    double clo = 0.5;
    double work = 0.0;         ///< external work [met]
};

/// Predicted mean vote. The clothing surface temperature is found by fixed
/// point iteration to 1e-6 (in units of 100 K).
inline double pmv(double ta, const ComfortParams& c = {})
{
    const double tr = ta;
    const double pa = c.humidity * 10.0 * std::exp(16.6536 - 4030.183 / (ta + 235.0));
    const double icl = 0.155 * c.clo;
    const double m = c.met * 58.15;
    const double mw = m - c.work * 58.15;
    const double fcl = icl <= 0.078 ? 1.0 + 1.29 * icl : 1.05 + 0.645 * icl;
    const double hcf = 12.1 * std::sqrt(c.air_velocity);
    const double taa = ta + 273.0;
    const double tra = tr + 273.0;
    const double tcla = taa + (35.5 - ta) / (3.5 * icl + 0.1);

    const double p1 = icl * fcl;
    const double p2 = p1 * 3.96;
    const double p3 = p1 * 100.0;
    const double p4 = p1 * taa;
    const double p5 = 308.7 - 0.028 * mw + p2 * std::pow(tra / 100.0, 4);

    double xn = tcla / 100.0;
    double xf = tcla / 50.0;
    double hc = hcf;
    for (int it = 0; it < 1000 && std::abs(xn - xf) > 1e-6; ++it) {
        xf = 0.5 * (xf + xn);
        const double hcn = 2.38 * std::pow(std::abs(100.0 * xf - taa), 0.25);
        hc = std::max(hcf, hcn);
        xn = (p5 + p4 * hc - p2 * std::pow(xf, 4)) / (100.0 + p3 * hc);
    }
    const double tcl = 100.0 * xn - 273.0;

    const double hl1 = 3.05e-3 * (5733.0 - 6.99 * mw - pa);
    const double hl2 = mw > 58.15 ? 0.42 * (mw - 58.15) : 0.0;
    const double hl3 = 1.7e-5 * m * (5867.0 - pa);
    const double hl4 = 0.0014 * m * (34.0 - ta);
    const double hl5 = 3.96 * fcl * (std::pow(xn, 4) - std::pow(tra / 100.0, 4));
    const double hl6 = fcl * hc * (tcl - ta);
    const double ts = 0.303 * std::exp(-0.036 * m) + 0.028;
    return ts * (mw - hl1 - hl2 - hl3 - hl4 - hl5 - hl6);
}

/// Predicted percentage dissatisfied [%].
inline double ppd(double pmv_value)
{
    const double p2 = pmv_value * pmv_value;
    return 100.0 - 95.0 * std::exp(-0.03353 * p2 * p2 - 0.2179 * p2);
}

struct ComfortSeries {
    std::vector<double> pmv;
    std::vector<double> ppd;
    double mean_ppd = 0.0;
};

inline ComfortSeries comfort_metrics(const std::vector<double>& y, const ComfortParams& c = {})
{
    ComfortSeries s;
    s.pmv.reserve(y.size());
    s.ppd.reserve(y.size());
    double sum = 0.0;
    for (double t : y) {
        s.pmv.push_back(pmv(t, c));
        s.ppd.push_back(ppd(s.pmv.back()));
        sum += s.ppd.back();
    }
    if (!y.empty()) s.mean_ppd = sum / static_cast<double>(y.size());
    return s;
}

} // namespace ddpc::sim
