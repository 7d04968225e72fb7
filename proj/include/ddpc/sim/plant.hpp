#pragma once

// Ground-truth building: a three-node thermal RC network sampled every
// 15 minutes, with a mode-dependent heat pump, a BMS thermostat and the
// outdoor-temperature mode scheduler.

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <random>

#include "../core.hpp"

namespace ddpc::sim {

using Eigen::Matrix3d;
using Eigen::Vector2d;
using Eigen::Vector3d;

/// Lumped parameters. Capacities in kWh/K, resistances in K/kW.
struct RcParams {
    double c_air = 2.0;
    double c_mass = 15.0;
    double c_envelope = 8.0;
    double r_air_mass = 0.05;
    double r_air_out = 0.8;
    double r_mass_envelope = 0.3;
    double r_envelope_out = 0.4;
    double cop = 3.0;           ///< thermal kW per electrical kW above ventilation
    double u_vent = 2.4;        ///< fan-only electrical power [kW]
    double solar_aperture = 8.0;///< m2 equivalent, air node
    double solar_envelope = 4.0;///< m2 equivalent, envelope node
    double internal_gain = 1.0; ///< kW into the air node
};

struct PlantModel {
    Matrix3d A;
    Vector3d b_hp;                 ///< response to one thermal kW from the HP
    Eigen::Matrix<double, 3, 2> B_w;
    Vector3d b_const;
    Eigen::RowVector3d C;
    double cop = 3.0;
    double u_vent = 2.4;
    double drift_per_day = 0.0;    ///< relative change of the HP gain per day
    double sigma_y = 0.05;         ///< output noise [C]
    double sigma_u = 0.05;         ///< actuation noise [kW]
    double u_max_heating = 8.4;
    double u_max_cooling = 7.0;

    double gain_factor(double day) const { return 1.0 + drift_per_day * day; }
    double sign(Mode m) const { return m == Mode::heating ? 1.0 : -1.0; }
    double u_max(Mode m) const { return m == Mode::heating ? u_max_heating : u_max_cooling; }

    /// Effective input matrix from electrical power for the given mode/day.
    Vector3d B_u(Mode m, double day) const { return sign(m) * cop * gain_factor(day) * b_hp; }

    /// Steady-state output change per electrical kW.
    double dc_gain(Mode m, double day) const
    {
        return C * (Matrix3d::Identity() - A).inverse() * B_u(m, day);
    }

    double spectral_radius() const { return A.eigenvalues().cwiseAbs().maxCoeff(); }
};

/// Zero-order-hold discretization of the RC network at the 15-minute period.
inline PlantModel make_plant(const RcParams& p)
{
    Eigen::Matrix<double, 3, 3> Ac;
    const double g_am = 1.0 / p.r_air_mass, g_ao = 1.0 / p.r_air_out;
    const double g_me = 1.0 / p.r_mass_envelope, g_eo = 1.0 / p.r_envelope_out;
    Ac << -(g_am + g_ao) / p.c_air, g_am / p.c_air, 0.0,
          g_am / p.c_mass, -(g_am + g_me) / p.c_mass, g_me / p.c_mass,
          0.0, g_me / p.c_envelope, -(g_me + g_eo) / p.c_envelope;
    // Columns: HP heat, outdoor temperature, solar, internal gain.
    Eigen::Matrix<double, 3, 4> Bc;
    Bc << 1.0 / p.c_air, g_ao / p.c_air, p.solar_aperture / p.c_air, 1.0 / p.c_air,
          0.0, 0.0, 0.0, 0.0,
          0.0, g_eo / p.c_envelope, p.solar_envelope / p.c_envelope, 0.0;

    Eigen::Matrix<double, 7, 7> M = Eigen::Matrix<double, 7, 7>::Zero();
    M.topLeftCorner<3, 3>() = Ac * kStepHours;
    M.topRightCorner<3, 4>() = Bc * kStepHours;
    const Eigen::Matrix<double, 7, 7> E = M.exp();

    PlantModel m;
    m.A = E.topLeftCorner<3, 3>();
    const Eigen::Matrix<double, 3, 4> Bd = E.topRightCorner<3, 4>();
    m.b_hp = Bd.col(0);
    m.B_w = Bd.middleCols<2>(1);
    m.b_const = Bd.col(3) * p.internal_gain;
    m.C << 1.0, 0.0, 0.0;
    m.cop = p.cop;
    m.u_vent = p.u_vent;
    return m;
}

struct PlantState {
    Vector3d x = Vector3d::Constant(24.0);
};

struct PlantStep {
    double y = 0.0;   ///< measured indoor temperature at the end of the step
    double p_h = 0.0; ///< actual HP electrical power over the step
};

/// Advances one 15-minute step. The HP draws `u` plus actuation noise,
/// clamped to the mode's power range; only power above ventilation level
/// moves heat.
template <class Rng>
PlantStep step_plant(const PlantModel& m, PlantState& s, double u, const Vector2d& w, Mode mode, double day, Rng& rng)
{
    std::normal_distribution<double> n01(0.0, 1.0);
    PlantStep out;
    const double noise_u = m.sigma_u > 0 ? m.sigma_u * n01(rng) : 0.0;
    out.p_h = std::clamp(u + noise_u, m.u_vent, m.u_max(mode));
    s.x = m.A * s.x + m.B_u(mode, day) * (out.p_h - m.u_vent) + m.B_w * w + m.b_const;
    const double noise_y = m.sigma_y > 0 ? m.sigma_y * n01(rng) : 0.0;
    out.y = m.C * s.x + noise_y;
    return out;
}

/// Bang-bang rule of the BMS: full power once the temperature leaves the
/// hysteresis band on the wrong side, ventilation only once it is back on
/// the other side, otherwise the previous decision is held.
struct Thermostat {
    double setpoint = 24.0;
    double hysteresis = 0.5;
    bool on = false;

    double operator()(double y, Mode mode, const PlantModel& plant)
    {
        const double err = mode == Mode::cooling ? y - setpoint : setpoint - y;
        if (err > hysteresis)
            on = true;
        else if (err < -hysteresis)
            on = false;
        return on ? plant.u_max(mode) : plant.u_vent;
    }
};

/// Dithered proportional controller used to collect informative data
/// before the experiment starts.
template <class Rng>
double excitation_input(const PlantModel& plant, double y, Mode mode, double setpoint, double dither, Rng& rng)
{
    std::uniform_real_distribution<double> u(-dither, dither);
    const double err = mode == Mode::cooling ? y - setpoint : setpoint - y;
    const double mid = 0.5 * (plant.u_vent + plant.u_max(mode));
    return std::clamp(mid + 3.0 * err + u(rng), plant.u_vent, plant.u_max(mode));
}

/// Outdoor-temperature mode scheduler with a minimum switching delay.
struct ModeScheduler {
    bool enabled = true;
    double threshold = 15.0; ///< cooling above, heating below [C]
    int delay_steps = 4;     ///< consecutive steps the condition must hold
    Mode mode = Mode::cooling;
    int pending = 0;

    Mode update(double outdoor)
    {
        if (!enabled) return mode;
        const Mode want = outdoor >= threshold ? Mode::cooling : Mode::heating;
        if (want == mode) {
            pending = 0;
        } else if (++pending >= delay_steps) {
            mode = want;
            pending = 0;
        }
        return mode;
    }
};

} // namespace ddpc::sim
