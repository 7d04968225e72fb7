#pragma once

// Shared fixtures for the unit and acceptance tests: a small noiseless LTI
// plant with an independent rollout, and desk-sized problem instances.

#include <cstdint>
#include <random>

#include <Eigen/Dense>

#include <ddpc/data.hpp>
#include <ddpc/ddp.hpp>

namespace ddpc::testing {

/// x+ = A x + B u + Bw w,  y = C x+ (measured at the end of the step).
struct Lti {
    Eigen::Matrix3d A;
    Eigen::Vector3d B;
    MatrixXd Bw;
    Eigen::RowVector3d C;
};

/// Stable, minimal order-3 plant. `input_sign` flips the input column.
inline Lti order3_plant(int n_w = 2, double input_sign = 1.0)
{
    Lti s;
    s.A << 0.90, 0.10, 0.00,
           0.00, 0.80, 0.10,
           0.05, 0.00, 0.70;
    s.B << 1.0, 0.5, 0.2;
    s.B *= input_sign;
    s.Bw.resize(3, n_w);
    for (int c = 0; c < n_w; ++c) s.Bw.col(c) << 0.3 - 0.1 * c, 0.2 + 0.2 * c, 0.1 + 0.1 * c;
    s.C << 1.0, 0.5, 0.3;
    return s;
}

/// Simulates from x0; y(k) is read after the update at step k.
inline OperationalSegment simulate(const Lti& s, const MatrixXd& u, const MatrixXd& w, Eigen::Vector3d x,
                                   Mode mode = Mode::cooling, long start = 0)
{
    OperationalSegment seg;
    seg.start_index = start;
    seg.u = u;
    seg.w = w;
    seg.y.resize(1, u.cols());
    seg.mode = mode;
    for (Index k = 0; k < u.cols(); ++k) {
        x = s.A * x + s.B * u(0, k) + s.Bw * w.col(k);
        seg.y(0, k) = s.C * x;
    }
    return seg;
}

/// Run of `length` samples with i.i.d. uniform disturbances in [-1, 1] and
/// inputs in [u_lo, u_hi].
inline OperationalSegment random_run(const Lti& s, Index length, std::uint64_t seed, Mode mode = Mode::cooling,
                                     long start = 0, double u_lo = -1.0, double u_hi = 1.0)
{
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> d(-1.0, 1.0);
    std::uniform_real_distribution<double> du(u_lo, u_hi);
    MatrixXd u(1, length), w(s.Bw.cols(), length);
    for (Index k = 0; k < length; ++k) {
        u(0, k) = du(rng);
        for (Index c = 0; c < w.rows(); ++c) w(c, k) = d(rng);
    }
    return simulate(s, u, w, Eigen::Vector3d(d(rng), d(rng), d(rng)), mode, start);
}

inline VectorXd flatten(const MatrixXd& m) { return Eigen::Map<const VectorXd>(m.data(), m.size()); }

/// Init windows and future signals of a segment at time t.
struct Window {
    InitWindows init;
    VectorXd u_pred, w_pred, y_true;
};

inline Window window_at(const OperationalSegment& s, Index t, int t_init, int N)
{
    Window win;
    win.init = make_init_windows(s.u, s.w, s.y, t, t_init);
    win.u_pred = flatten(s.u.middleCols(t, N));
    win.w_pred = flatten(s.w.middleCols(t, N));
    win.y_true = flatten(s.y.middleCols(t, N));
    return win;
}

} // namespace ddpc::testing
