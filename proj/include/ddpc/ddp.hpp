#pragma once

// Data-driven predictor built from Hankel matrices.
//
// The prediction of one mode solves
//   min_g  1/2 |H_y_init g - y_init|^2 + 1/2 e_g |g|^2
//   s.t.   [H_u_init; H_w_init; H_u_pred; H_w_pred] g = [u_init; w_init; u_pred; w_pred]
// and returns y_pred = H_y_pred g. Because the solution is linear in the data
// windows, the map collapses to five coefficient blocks.

#include <algorithm>
#include <limits>
#include <optional>
#include <string>
#include <vector>


#include <Eigen/Dense>

#include "core.hpp"
#include "data.hpp"

namespace ddpc {

/// Past measurements that pin the initial condition, stacked step-major.
struct InitWindows {
    VectorXd y_init;
    VectorXd u_init;
    VectorXd w_init;
};

/// Init windows from the `t_init` samples of (u, w, y) ending just before
/// column `end`; signals are channels x samples.
inline InitWindows make_init_windows(const MatrixXd& u, const MatrixXd& w, const MatrixXd& y, Index end, int t_init)
{
    if (end < t_init || end > u.cols() || u.cols() != w.cols() || u.cols() != y.cols())
        throw DataError("not enough history for the init windows");
    auto stack = [&](const MatrixXd& s) {
        const MatrixXd blk = s.middleCols(end - t_init, t_init);
        return VectorXd(Eigen::Map<const VectorXd>(blk.data(), blk.size()));
    };
    return {stack(y), stack(u), stack(w)};
}

/// y_pred = P_y_init y_init + P_u_init u_init + P_w_init w_init + P_u_pred u_pred + P_w_pred w_pred
struct DdpPredictor {
    MatrixXd P_y_init, P_u_init, P_w_init, P_u_pred, P_w_pred;
    DdpHyper hyper;
    Dims dims;
    Mode mode = Mode::cooling;
    std::string fingerprint;

    int N() const { return hyper.N; }
    int t_init() const { return hyper.t_init; }

    /// Output contribution of the initial windows alone.
    VectorXd free_response(const InitWindows& init) const
    {
        return P_y_init * init.y_init + P_u_init * init.u_init + P_w_init * init.w_init;
    }
};

namespace detail {

inline void check_len(const VectorXd& v, Index expected, const char* what)
{
    if (v.size() != expected)
        throw UsageError(std::string("dimension mismatch for ") + what + ": expected " + std::to_string(expected) +
                         ", got " + std::to_string(v.size()));
}

inline void check_windows(const Dims& d, int t_init, int N, const VectorXd& y_init, const VectorXd& u_init,
                          const VectorXd& w_init, const VectorXd& u_pred, const VectorXd& w_pred)
{
    check_len(y_init, t_init * d.n_y, "y_init");
    check_len(u_init, t_init * d.n_u, "u_init");
    check_len(w_init, t_init * d.n_w, "w_init");
    check_len(u_pred, N * d.n_u, "u_pred");
    check_len(w_pred, N * d.n_w, "w_pred");
}

inline MatrixXd constraint_matrix(const HankelSet& H)
{
    MatrixXd C(H.H_u_init.rows() + H.H_w_init.rows() + H.H_u_pred.rows() + H.H_w_pred.rows(), H.n_cols);
    C << H.H_u_init, H.H_w_init, H.H_u_pred, H.H_w_pred;
    return C;
}

} // namespace detail

inline VectorXd predict(const DdpPredictor& pred, const VectorXd& y_init, const VectorXd& u_init,
                        const VectorXd& w_init, const VectorXd& u_pred, const VectorXd& w_pred)
{
    detail::check_windows(pred.dims, pred.t_init(), pred.N(), y_init, u_init, w_init, u_pred, w_pred);
    return pred.P_y_init * y_init + pred.P_u_init * u_init + pred.P_w_init * w_init + pred.P_u_pred * u_pred +
           pred.P_w_pred * w_pred;
}

inline VectorXd predict(const DdpPredictor& pred, const InitWindows& init, const VectorXd& u_pred,
                        const VectorXd& w_pred)
{
    return predict(pred, init.y_init, init.u_init, init.w_init, u_pred, w_pred);
}

/// Solves the regularized prediction QP directly by the null-space method:
/// g = Q1 z1 + Q2 z2 with [Q1 Q2] R = QR of the constraint matrix transpose.
inline VectorXd solve_ddp_qp(const HankelSet& H, const DdpHyper& hyper, const VectorXd& y_init,
                             const VectorXd& u_init, const VectorXd& w_init, const VectorXd& u_pred,
                             const VectorXd& w_pred)
{
    detail::check_windows(H.dims, H.t_init, H.N, y_init, u_init, w_init, u_pred, w_pred);
    const MatrixXd C = detail::constraint_matrix(H);
    const Index m = C.rows(), n = C.cols();
    if (n < m) throw SolverError("prediction QP: fewer data columns than equality constraints");

    VectorXd b(m);
    b << u_init, w_init, u_pred, w_pred;

    Eigen::HouseholderQR<MatrixXd> qr(C.transpose());
    const MatrixXd R = qr.matrixQR().topRows(m).triangularView<Eigen::Upper>();
    const double rmax = R.diagonal().cwiseAbs().maxCoeff();
    if (R.diagonal().cwiseAbs().minCoeff() <= 1e-13 * rmax) throw SolverError("prediction QP: internal solver failure");
    const MatrixXd Q = qr.householderQ();
    const auto Q1 = Q.leftCols(m);
    const auto Q2 = Q.rightCols(n - m);

    const VectorXd z1 = R.transpose().triangularView<Eigen::Lower>().solve(b);
    VectorXd g = Q1 * z1;
    if (n > m) {
        const MatrixXd B = H.H_y_init * Q2;
        MatrixXd normal = B.transpose() * B;
        normal.diagonal().array() += hyper.e_g;
        const VectorXd z2 = normal.llt().solve(-B.transpose() * (H.H_y_init * g - y_init));
        g += Q2 * z2;
    }
    return H.H_y_pred * g;
}

/// Builds the linear predictor from the KKT conditions of the prediction QP
/// written in augmented form, with the fit residual r = H_y_init g - y_init
/// kept as the multiplier of the fit rows:
///   G = [e_g I, H_y_init', C'; H_y_init, -I, 0; C, 0, 0].
/// This avoids forming H_y_init' H_y_init, whose condition number is the
/// square of the data's. G is factored once by LU with partial pivoting.
inline DdpPredictor build_predictor(const HankelSet& H, const DdpHyper& hyper)
{
    hyper.validate();
    if (hyper.t_init != H.t_init || hyper.N != H.N) throw UsageError("hyperparameters do not match the Hankel set");
    const MatrixXd C = detail::constraint_matrix(H);
    const Index n = H.n_cols, n_fit = H.H_y_init.rows(), m = C.rows(), dim = n + n_fit + m;

    MatrixXd G = MatrixXd::Zero(dim, dim);
    G.topLeftCorner(n, n).diagonal().setConstant(hyper.e_g);
    G.block(n, 0, n_fit, n) = H.H_y_init;
    G.block(0, n, n, n_fit) = H.H_y_init.transpose();
    G.block(n, n, n_fit, n_fit).diagonal().setConstant(-1.0);
    G.block(n + n_fit, 0, m, n) = C;
    G.block(0, n + n_fit, n, m) = C.transpose();

    const Eigen::PartialPivLU<MatrixXd> lu(G);
    if (!(lu.rcond() > 1e-14)) throw DataError("degenerate Hankel data; refuse predictor");

    // y_pred = H_y_pred g, and g is the top block of G^{-1} [0; y_init; b].
    // Rows of H_y_pred G^{-1}[top block] come from G^{-1} [H_y_pred'; 0; 0] by symmetry.
    MatrixXd rhs = MatrixXd::Zero(dim, H.H_y_pred.rows());
    rhs.topRows(n) = H.H_y_pred.transpose();
    const MatrixXd Z = lu.solve(rhs);
    if (!Z.allFinite()) throw DataError("degenerate Hankel data; refuse predictor");
    const MatrixXd K = Z.transpose();

    DdpPredictor p;
    p.hyper = hyper;
    p.dims = H.dims;
    p.mode = H.mode;
    p.P_y_init = K.middleCols(n, n_fit);
    Index off = n + n_fit;
    auto take = [&](Index rows) {
        MatrixXd blk = K.middleCols(off, rows);
        off += rows;
        return blk;
    };
    p.P_u_init = take(H.H_u_init.rows());
    p.P_w_init = take(H.H_w_init.rows());
    p.P_u_pred = take(H.H_u_pred.rows());
    p.P_w_pred = take(H.H_w_pred.rows());

    Fnv1a fp;
    const std::string hf = H.fingerprint();
    fp.update(hf.data(), hf.size());
    fp.update_value(hyper.e_g);
    p.fingerprint = fp.hex();
    return p;
}

/// Sign test on the future-input columns: raising one future input must move
/// the summed predicted output the physical way (down when cooling).
struct ConsistencyReport {
    std::vector<int> gamma;
    bool pass = false;
    double fraction = 0.0;
};

inline ConsistencyReport check_consistency(const DdpPredictor& pred, Mode mode)
{
    ConsistencyReport r;
    const Index cols = pred.P_u_pred.cols();
    r.gamma.resize(static_cast<std::size_t>(cols));
    int hits = 0;
    for (Index i = 0; i < cols; ++i) {
        const double s = pred.P_u_pred.col(i).sum();
        const bool ok = mode == Mode::cooling ? s < 0.0 : s > 0.0;
        r.gamma[static_cast<std::size_t>(i)] = ok ? 1 : 0;
        hits += ok;
    }
    r.fraction = cols ? static_cast<double>(hits) / static_cast<double>(cols) : 0.0;
    r.pass = hits >= pred.hyper.eta * static_cast<double>(cols);
    return r;
}

/// Hankel data together with the predictor built from it.
struct DdpModel {
    HankelSet hankel;
    DdpPredictor predictor;
};

/// Builds a validated model; throws DataError when the data is not
/// persistently exciting or the predictor is degenerate.
inline DdpModel build_model(const std::vector<OperationalSegment>& segments, const DdpHyper& hyper, Mode mode)
{
    DdpModel m;
    m.hankel = stack_segments(segments, hyper, mode);
    const auto pe = check_pe(m.hankel, hyper.n_x);
    if (!pe.ok)
        throw DataError("data not persistently exciting (" + pe.reason + ", rank " + std::to_string(pe.rank) + "/" +
                        std::to_string(pe.required) + ")");
    m.predictor = build_predictor(m.hankel, hyper);
    return m;
}

enum class RejectReason { pe_fail, consistency_fail, degenerate };

inline const char* to_string(RejectReason r)
{
    switch (r) {
    case RejectReason::pe_fail: return "PE_fail";
    case RejectReason::consistency_fail: return "consistency_fail";
    case RejectReason::degenerate: return "degenerate";
    }
    return "?";
}

struct UpdateResult {
    DdpModel model;
    bool accepted = false;
    std::vector<RejectReason> reasons;
    PeReport pe;
    std::optional<ConsistencyReport> consistency;
};

/// Refreshes the Hankel data with `new_segments` under a fixed column budget
/// and accepts the candidate only if it passes the PE and consistency tests.
/// Samples that are not newer than the data already held are ignored.
inline UpdateResult adaptive_update(const DdpModel& current, const std::vector<OperationalSegment>& new_segments,
                                    const DdpHyper& hyper)
{
    const Mode mode = current.hankel.mode;
    std::vector<OperationalSegment> merged = current.hankel.sources;
    long newest = std::numeric_limits<long>::min();
    for (const auto& s : merged) newest = std::max(newest, s.end_index());

    std::vector<OperationalSegment> incoming;
    for (const auto& s : new_segments)
        if (s.mode == mode && s.end_index() > newest) incoming.push_back(s);
    std::stable_sort(incoming.begin(), incoming.end(),
                     [](const auto& a, const auto& b) { return a.start_index < b.start_index; });
    for (const auto& s : incoming) {
        const Index skip = s.start_index < newest ? static_cast<Index>(newest - s.start_index) : 0;
        if (skip >= s.length()) continue;
        auto fresh = skip ? s.slice(skip, s.length() - skip) : s;
        append_segment(merged, fresh);
        newest = std::max(newest, fresh.end_index());
    }

    UpdateResult r;
    r.model = current;
    HankelSet candidate;
    try {
        candidate = stack_segments(merged, hyper, mode);
    } catch (const DataError&) {
        r.reasons.push_back(RejectReason::pe_fail);
        return r;
    }
    r.pe = check_pe(candidate, hyper.n_x);
    if (!r.pe.ok) {
        r.reasons.push_back(RejectReason::pe_fail);
        log().info("hankel update rejected: PE ({}/{})", r.pe.rank, r.pe.required);
        return r;
    }
    DdpPredictor pred;
    try {
        pred = build_predictor(candidate, hyper);
    } catch (const DataError&) {
        r.reasons.push_back(RejectReason::degenerate);
        return r;
    }
    r.consistency = check_consistency(pred, mode);
    if (!r.consistency->pass) {
        r.reasons.push_back(RejectReason::consistency_fail);
        log().info("hankel update rejected: consistency fraction {:.2f}", r.consistency->fraction);
        return r;
    }
    r.model = DdpModel{std::move(candidate), std::move(pred)};
    r.accepted = true;
    return r;
}

} // namespace ddpc
