#pragma once

// Prediction quality: rolling multi-step MAE of fixed and adaptively
// refreshed predictors, and grid sweeps over the DDP hyperparameters.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <fmt/format.h>

#include "ddp.hpp"

namespace ddpc {

enum class PredictorSource { fixed, adaptive };

inline std::string_view to_string(PredictorSource s) { return s == PredictorSource::fixed ? "fixed" : "adaptive"; }

/// One continuous single-mode record partitioned into build, validation and
/// test ranges: [0, build_end), [build_end, validation_end), [validation_end, end).
struct DataSplit {
    OperationalSegment data;
    Index build_end = 0;
    Index validation_end = 0;

    Index end() const { return data.length(); }

    void validate() const
    {
        data.validate();
        if (build_end < 1 || validation_end < build_end || validation_end > end())
            throw DataError("invalid split boundaries");
    }
};

/// Build window of `build_days`, validation of `validation_days`, rest test.
inline DataSplit make_split(OperationalSegment data, int build_days, int validation_days)
{
    DataSplit s;
    s.build_end = static_cast<Index>(build_days) * kStepsPerDay;
    s.validation_end = s.build_end + static_cast<Index>(validation_days) * kStepsPerDay;
    s.data = std::move(data);
    s.validate();
    return s;
}

enum class EvalRange { validation, test };

struct MaeOptions {
    int stride = 1;                   ///< evaluate every stride-th start time
    int update_period = kStepsPerDay; ///< samples between adaptive refreshes
    bool keep_predictions = false;
};

struct UpdateLogEntry {
    Index at = 0;
    bool accepted = false;
    std::string reason;
};

struct MaeResult {
    double mae = 0.0;
    VectorXd step_mean; ///< mean absolute error per horizon step
    VectorXd step_std;
    Index windows = 0;
    std::vector<UpdateLogEntry> updates;
    /// Filled when requested: start index and prediction of every window.
    std::vector<Index> starts;
    MatrixXd predictions;
};

/// Aggregates a windows x N matrix of absolute errors.
inline MaeResult aggregate_errors(const MatrixXd& abs_err)
{
    MaeResult r;
    r.windows = abs_err.rows();
    if (r.windows == 0) throw DataError("no evaluation windows");
    r.step_mean = abs_err.colwise().mean().transpose();
    r.step_std = ((abs_err.rowwise() - r.step_mean.transpose()).array().square().colwise().sum() /
                  static_cast<double>(r.windows))
                     .sqrt()
                     .transpose();
    r.mae = r.step_mean.mean();
    return r;
}

/// Rolling evaluation: at every start time in the selected range, predict N
/// steps from the measured past and realized future inputs and disturbances.
/// The fixed predictor is built once from the build range; the adaptive one
/// is refreshed every `update_period` samples with all data seen so far.
inline MaeResult mae_eval(PredictorSource source, const DataSplit& split, EvalRange range, const DdpHyper& hyper,
                          const MaeOptions& opt = {})
{
    hyper.validate();
    split.validate();
    if (opt.stride < 1 || opt.update_period < 1) throw UsageError("stride and update period must be positive");
    if (split.build_end < hyper.T) throw DataError("build range shorter than T");
    const Index N = hyper.N;
    const Index first = range == EvalRange::validation ? split.build_end : split.validation_end;
    const Index last = range == EvalRange::validation ? split.validation_end : split.end();
    if (last - first < N) throw DataError("insufficient evaluation data for horizon " + std::to_string(N));

    const auto& d = split.data;
    DdpModel model = build_model({d.slice(0, split.build_end)}, hyper, d.mode);

    MaeResult out;
    const Index count = (last - N - first) / opt.stride + 1;
    MatrixXd err(count, N);
    if (opt.keep_predictions) {
        out.starts.reserve(static_cast<std::size_t>(count));
        out.predictions.resize(count, N);
    }
    Index refreshed = split.build_end;
    Index row = 0;
    for (Index t = first; t + N <= last; t += opt.stride) {
        if (source == PredictorSource::adaptive) {
            while (refreshed + opt.update_period <= t) {
                const Index next = refreshed + opt.update_period;
                auto up = adaptive_update(model, {d.slice(refreshed, next - refreshed)}, hyper);
                UpdateLogEntry e{next, up.accepted, {}};
                for (auto reason : up.reasons) e.reason += to_string(reason);
                out.updates.push_back(e);
                if (up.accepted) model = std::move(up.model);
                refreshed = next;
            }
        }
        const auto init = make_init_windows(d.u, d.w, d.y, t, hyper.t_init);
        const MatrixXd u_blk = d.u.middleCols(t, N), w_blk = d.w.middleCols(t, N);
        const VectorXd u_pred = Eigen::Map<const VectorXd>(u_blk.data(), u_blk.size());
        const VectorXd w_pred = Eigen::Map<const VectorXd>(w_blk.data(), w_blk.size());
        const VectorXd y_hat = predict(model.predictor, init, u_pred, w_pred);
        if (opt.keep_predictions) {
            out.starts.push_back(t);
            out.predictions.row(row) = y_hat.transpose();
        }
        err.row(row++) = (y_hat - d.y.middleCols(t, N).transpose()).cwiseAbs().transpose();
    }
    auto agg = aggregate_errors(err);
    agg.updates = std::move(out.updates);
    agg.starts = std::move(out.starts);
    agg.predictions = std::move(out.predictions);
    log().debug("mae {} N={} T={} e_g={} windows {}: {:.5f}", to_string(source), N, hyper.T, hyper.e_g, agg.windows,
                agg.mae);
    return agg;
}

struct SweepGrid {
    std::vector<double> e_g{1e-3, 1e-2, 1e-1, 1.0, 10.0};
    std::vector<int> T{480};
    std::vector<int> t_init{12};
    std::vector<int> N{12};

    void validate() const
    {
        auto check = [](const auto& v, const char* name) {
            if (v.empty()) throw UsageError(std::string("sweep grid: ") + name + " is empty");
            if (!std::is_sorted(v.begin(), v.end()) || std::adjacent_find(v.begin(), v.end()) != v.end())
                throw UsageError(std::string("sweep grid: ") + name + " must be strictly increasing");
        };
        check(e_g, "e_g");
        check(T, "T");
        check(t_init, "t_init");
        check(N, "N");
        if (e_g.front() <= 0.0) throw UsageError("sweep grid: e_g must be positive");
    }
};

struct SweepRow {
    double e_g = 0.0;
    int T = 0;
    int t_init = 0;
    int N = 0;
    double mae_validation = 0.0;
    double mae_test = 0.0;
};

/// Evaluates every grid point on the validation and test ranges.
inline std::vector<SweepRow> sensitivity_sweep(const SweepGrid& grid, const DataSplit& split, const DdpHyper& base,
                                               PredictorSource source = PredictorSource::fixed,
                                               const MaeOptions& opt = {})
{
    grid.validate();
    std::vector<SweepRow> rows;
    for (int N : grid.N)
        for (int T : grid.T)
            for (int ti : grid.t_init)
                for (double eg : grid.e_g) {
                    DdpHyper h = base;
                    h.N = N;
                    h.T = T;
                    h.t_init = ti;
                    h.e_g = eg;
                    SweepRow r{eg, T, ti, N};
                    r.mae_validation = mae_eval(source, split, EvalRange::validation, h, opt).mae;
                    r.mae_test = mae_eval(source, split, EvalRange::test, h, opt).mae;
                    rows.push_back(r);
                }
    return rows;
}

/// max/min validation MAE over the rows at (T, t_init, N) with e_g in [lo, hi].
inline double plateau_ratio(const std::vector<SweepRow>& rows, int T, int t_init, int N, double lo, double hi)
{
    double mn = std::numeric_limits<double>::infinity(), mx = 0.0;
    for (const auto& r : rows)
        if (r.T == T && r.t_init == t_init && r.N == N && r.e_g >= lo && r.e_g <= hi) {
            mn = std::min(mn, r.mae_validation);
            mx = std::max(mx, r.mae_validation);
        }
    if (!std::isfinite(mn)) throw DataError("no sweep rows in the plateau range");
    return mx / mn;
}

inline void write_sweep_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows)
{
    std::ofstream f(path);
    if (!f) throw DataError("cannot write " + path.string());
    f << "e_g,T,t_init,N,mae_validation,mae_test\n";
    for (const auto& r : rows)
        f << fmt::format("{:.17g},{},{},{},{:.17g},{:.17g}\n", r.e_g, r.T, r.t_init, r.N, r.mae_validation,
                         r.mae_test);
}

/// Heatmap matrix of validation MAE for one (t_init, N): rows follow T,
/// columns follow e_g. The first row and column carry the axis values.
inline void write_heatmap_csv(const std::filesystem::path& path, const std::vector<SweepRow>& rows,
                              const SweepGrid& grid, int t_init, int N)
{
    std::ofstream f(path);
    if (!f) throw DataError("cannot write " + path.string());
    f << "T\\e_g";
    for (double eg : grid.e_g) f << fmt::format(",{:.6g}", eg);
    f << '\n';
    for (int T : grid.T) {
        f << T;
        for (double eg : grid.e_g) {
            auto it = std::find_if(rows.begin(), rows.end(), [&](const SweepRow& r) {
                return r.T == T && r.t_init == t_init && r.N == N && r.e_g == eg;
            });
            if (it == rows.end())
                f << ",";
            else
                f << fmt::format(",{:.17g}", it->mae_validation);
        }
        f << '\n';
    }
}

} // namespace ddpc
