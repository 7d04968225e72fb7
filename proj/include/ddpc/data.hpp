#pragma once

// Operational time series, Hankel matrices and the persistent-excitation test.

#include <algorithm>
#include <cctype>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "core.hpp"

namespace ddpc {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Channel counts of input, disturbance and output.
struct Dims {
    int n_u = 1;
    int n_w = 2;
    int n_y = 1;
    friend bool operator==(const Dims&, const Dims&) = default;
};

/// A contiguous, single-mode stretch of 15-minute samples.
/// Signals are stored channel-major: one row per channel, one column per sample.
struct OperationalSegment {
    long start_index = 0;
    MatrixXd u; ///< HP electrical power [kW]
    MatrixXd w; ///< outdoor temperature [C], solar radiation [kW/m2]
    MatrixXd y; ///< indoor temperature [C]
    Mode mode = Mode::cooling;

    Index length() const { return u.cols(); }
    long end_index() const { return start_index + static_cast<long>(length()); }
    Dims dims() const { return {static_cast<int>(u.rows()), static_cast<int>(w.rows()), static_cast<int>(y.rows())}; }

    void validate() const
    {
        if (length() < 1) throw DataError("segment is empty");
        if (w.cols() != length() || y.cols() != length()) throw DataError("segment signals differ in length");
    }

    OperationalSegment slice(Index first, Index count) const
    {
        return {start_index + static_cast<long>(first), u.middleCols(first, count), w.middleCols(first, count),
                y.middleCols(first, count), mode};
    }
};

struct OperationalDataset {
    std::vector<OperationalSegment> segments;

    Index total_samples() const
    {
        Index n = 0;
        for (const auto& s : segments) n += s.length();
        return n;
    }
};

/// Appends `next` to `segments`, merging it into the last segment when it
/// continues that segment in time and mode.
inline void append_segment(std::vector<OperationalSegment>& segments, const OperationalSegment& next)
{
    if (next.length() == 0) return;
    if (!segments.empty()) {
        auto& last = segments.back();
        if (last.mode == next.mode && last.end_index() == next.start_index && last.dims() == next.dims()) {
            const Index n = last.length();
            auto grow = [&](MatrixXd& a, const MatrixXd& b) {
                MatrixXd c(a.rows(), n + b.cols());
                c << a, b;
                a = std::move(c);
            };
            grow(last.u, next.u);
            grow(last.w, next.w);
            grow(last.y, next.y);
            return;
        }
    }
    segments.push_back(next);
}

/// DDP hyperparameters. `T` is the data length per mode, so a Hankel set
/// holds T - L + 1 columns with L = t_init + N.
struct DdpHyper {
    int T = 480;
    int t_init = 12;
    int N = 12;
    double e_g = 0.01;
    int n_x = 4;
    double eta = 0.8;

    int L() const { return t_init + N; }
    Index n_cols() const { return T - L() + 1; }
    int L_pe() const { return L() + n_x; }

    void validate() const
    {
        if (t_init < 1 || N < 1) throw UsageError("t_init and N must be positive");
        if (T < L()) throw UsageError("T must be at least t_init + N");
        if (!(e_g > 0.0)) throw UsageError("e_g must be positive");
        if (n_x < 0) throw UsageError("n_x must be non-negative");
        if (eta < 0.0 || eta > 1.0) throw UsageError("eta must lie in [0, 1]");
    }
};

/// Block Hankel matrix of depth `depth` of a channel-major signal. Row
/// `k * channels + c` of column j holds channel c at sample j + k.
inline MatrixXd build_hankel(const MatrixXd& signal, int depth)
{
    const Index ch = signal.rows();
    const Index len = signal.cols();
    if (depth < 1 || len < depth) throw DataError("insufficient data for Hankel depth " + std::to_string(depth));
    const Index cols = len - depth + 1;
    MatrixXd H(depth * ch, cols);
    for (Index j = 0; j < cols; ++j)
        for (int k = 0; k < depth; ++k) H.block(k * ch, j, ch, 1) = signal.col(j + k);
    return H;
}

struct SegmentHankel {
    MatrixXd u, w, y;
};

inline SegmentHankel build_hankel(const OperationalSegment& segment, int depth)
{
    segment.validate();
    return {build_hankel(segment.u, depth), build_hankel(segment.w, depth), build_hankel(segment.y, depth)};
}

/// Initialisation / prediction split of the stacked Hankel matrices of one mode.
struct HankelSet {
    MatrixXd H_u_init, H_u_pred;
    MatrixXd H_w_init, H_w_pred;
    MatrixXd H_y_init, H_y_pred;
    Index n_cols = 0;
    int t_init = 0;
    int N = 0;
    Dims dims;
    Mode mode = Mode::cooling;
    /// The data slices the columns were drawn from, oldest first.
    std::vector<OperationalSegment> sources;

    int L() const { return t_init + N; }

    std::string fingerprint() const
    {
        Fnv1a h;
        h.update_value(t_init);
        h.update_value(N);
        h.update_value(n_cols);
        for (const MatrixXd* m : {&H_u_init, &H_u_pred, &H_w_init, &H_w_pred, &H_y_init, &H_y_pred})
            h.update(m->data(), static_cast<std::size_t>(m->size()) * sizeof(double));
        return h.hex();
    }
};

/// Stacks the Hankel columns of every segment of `mode` that is at least L
/// samples long, keeping only the newest T - L + 1 columns.
inline HankelSet stack_segments(const std::vector<OperationalSegment>& segments, const DdpHyper& hyper, Mode mode)
{
    hyper.validate();
    const int L = hyper.L();
    std::vector<OperationalSegment> usable;
    for (const auto& s : segments)
        if (s.mode == mode && s.length() >= L) usable.push_back(s);
    std::stable_sort(usable.begin(), usable.end(),
                     [](const auto& a, const auto& b) { return a.start_index < b.start_index; });

    Index available = 0;
    for (const auto& s : usable) available += s.length() - L + 1;
    if (available == 0) throw DataError(std::string("no data for mode ") + std::string(to_string(mode)));

    // Drop the oldest columns beyond the budget.
    Index excess = std::max<Index>(0, available - hyper.n_cols());
    std::vector<OperationalSegment> kept;
    for (const auto& s : usable) {
        const Index cols = s.length() - L + 1;
        if (excess >= cols) {
            excess -= cols;
            continue;
        }
        kept.push_back(excess > 0 ? s.slice(excess, s.length() - excess) : s);
        excess = 0;
    }

    HankelSet H;
    H.t_init = hyper.t_init;
    H.N = hyper.N;
    H.dims = kept.front().dims();
    H.mode = mode;
    for (const auto& s : kept) H.n_cols += s.length() - L + 1;

    const auto [n_u, n_w, n_y] = H.dims;
    MatrixXd Hu(L * n_u, H.n_cols), Hw(L * n_w, H.n_cols), Hy(L * n_y, H.n_cols);
    Index col = 0;
    for (const auto& s : kept) {
        if (s.dims() != H.dims) throw DataError("segments disagree on signal dimensions");
        const auto sh = build_hankel(s, L);
        const Index c = sh.u.cols();
        Hu.middleCols(col, c) = sh.u;
        Hw.middleCols(col, c) = sh.w;
        Hy.middleCols(col, c) = sh.y;
        col += c;
    }
    const int ti = hyper.t_init, N = hyper.N;
    H.H_u_init = Hu.topRows(ti * n_u);
    H.H_u_pred = Hu.bottomRows(N * n_u);
    H.H_w_init = Hw.topRows(ti * n_w);
    H.H_w_pred = Hw.bottomRows(N * n_w);
    H.H_y_init = Hy.topRows(ti * n_y);
    H.H_y_pred = Hy.bottomRows(N * n_y);
    H.sources = std::move(kept);
    return H;
}

struct PeReport {
    bool ok = false;
    Index rank = 0;
    Index required = 0;
    Index columns = 0;
    std::string reason;
};

/// Numerical rank: singular values above sigma_max * 1e-10 * max(rows, cols).
inline Index numerical_rank(const MatrixXd& M)
{
    if (M.size() == 0) return 0;
    Eigen::BDCSVD<MatrixXd> svd(M);
    const VectorXd& sv = svd.singularValues();
    if (sv.size() == 0 || sv[0] == 0.0) return 0;
    const double tol = sv[0] * 1e-10 * static_cast<double>(std::max(M.rows(), M.cols()));
    return (sv.array() > tol).count();
}

/// Persistent excitation of order `depth` for the inputs and disturbances of
/// the given segments: rank [H_depth(u); H_depth(w)] == depth * (n_u + n_w).
inline PeReport check_pe(const std::vector<OperationalSegment>& segments, int depth)
{
    PeReport r;
    if (segments.empty()) {
        r.reason = "not enough columns";
        return r;
    }
    const Dims d = segments.front().dims();
    r.required = static_cast<Index>(depth) * (d.n_u + d.n_w);
    for (const auto& s : segments)
        if (s.length() >= depth) r.columns += s.length() - depth + 1;
    if (r.columns < r.required) {
        r.reason = "not enough columns";
        return r;
    }
    MatrixXd M(r.required, r.columns);
    Index col = 0;
    for (const auto& s : segments) {
        if (s.length() < depth) continue;
        const Index c = s.length() - depth + 1;
        M.block(0, col, depth * d.n_u, c) = build_hankel(s.u, depth);
        M.block(depth * d.n_u, col, depth * d.n_w, c) = build_hankel(s.w, depth);
        col += c;
    }
    r.rank = numerical_rank(M);
    r.ok = r.rank == r.required;
    if (!r.ok) r.reason = "rank deficient";
    return r;
}

/// PE check of order t_init + N + n_x on the data behind a Hankel set.
inline PeReport check_pe(const HankelSet& H, int n_x)
{
    return check_pe(H.sources, H.L() + n_x);
}

namespace detail {

inline std::vector<std::string_view> split_csv(std::string_view line)
{
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(',', start);
        auto field = line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start);
        while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
        while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r'))
            field.remove_suffix(1);
        out.push_back(field);
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

inline bool parse_double(std::string_view s, double& v)
{
    if (s.empty()) return false;
    if (s.front() == '+') s.remove_prefix(1);
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    return ec == std::errc() && p == s.data() + s.size() && std::isfinite(v);
}

inline bool parse_int(std::string_view s, long long& v)
{
    if (s.empty()) return false;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    return ec == std::errc() && p == s.data() + s.size();
}

/// Minutes since the Unix epoch of an ISO-8601 timestamp
/// (YYYY-MM-DD[T ]HH:MM[:SS[.fff]][Z|+HH:MM|-HH:MM]).
inline bool parse_iso8601_minutes(std::string_view s, double& minutes)
{
    auto num = [&](std::size_t pos, std::size_t len, int& out) {
        if (pos + len > s.size()) return false;
        auto [p, ec] = std::from_chars(s.data() + pos, s.data() + pos + len, out);
        return ec == std::errc() && p == s.data() + pos + len;
    };
    int Y, M, D, h, m;
    if (s.size() < 16 || s[4] != '-' || s[7] != '-' || (s[10] != 'T' && s[10] != ' ') || s[13] != ':') return false;
    if (!num(0, 4, Y) || !num(5, 2, M) || !num(8, 2, D) || !num(11, 2, h) || !num(14, 2, m)) return false;
    double sec = 0.0;
    std::size_t pos = 16;
    if (pos < s.size() && s[pos] == ':') {
        std::size_t end = pos + 1;
        while (end < s.size() && (std::isdigit(static_cast<unsigned char>(s[end])) || s[end] == '.')) ++end;
        if (!parse_double(s.substr(pos + 1, end - pos - 1), sec)) return false;
        pos = end;
    }
    double offset_min = 0.0;
    if (pos < s.size()) {
        if (s[pos] == 'Z' && pos + 1 == s.size()) {
        } else if ((s[pos] == '+' || s[pos] == '-') && s.size() == pos + 6 && s[pos + 3] == ':') {
            int oh, om;
            if (!num(pos + 1, 2, oh) || !num(pos + 4, 2, om)) return false;
            offset_min = (s[pos] == '-' ? -1.0 : 1.0) * (oh * 60 + om);
        } else {
            return false;
        }
    }
    const std::chrono::year_month_day ymd{std::chrono::year{Y}, std::chrono::month{static_cast<unsigned>(M)},
                                          std::chrono::day{static_cast<unsigned>(D)}};
    if (!ymd.ok() || h > 23 || m > 59) return false;
    const auto days = std::chrono::sys_days{ymd}.time_since_epoch().count();
    minutes = static_cast<double>(days) * 1440.0 + h * 60.0 + m + sec / 60.0 - offset_min;
    return true;
}

} // namespace detail

/// Reads a CSV with header `t,u,w1,w2,y,mode`. `t` is either an integer
/// sample index on the 15-minute grid or an ISO-8601 timestamp. Rows are cut
/// into segments at every gap longer than 1.5 sampling periods and at every
/// mode change.
inline OperationalDataset read_dataset(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw DataError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw DataError(path + ": empty file");
    {
        const auto header = detail::split_csv(line);
        const std::vector<std::string_view> expected{"t", "u", "w1", "w2", "y", "mode"};
        if (header != expected) throw DataError(path + ": line 1: expected header t,u,w1,w2,y,mode");
    }

    struct Row {
        double index;
        double u, w1, w2, y;
        Mode mode;
    };
    std::vector<Row> rows;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "\r") continue;
        const auto f = detail::split_csv(line);
        auto fail = [&](const std::string& why) {
            throw DataError(path + ": line " + std::to_string(line_no) + ": " + why);
        };
        if (f.size() != 6) fail("expected 6 fields, got " + std::to_string(f.size()));
        Row r{};
        long long idx = 0;
        double minutes = 0.0;
        if (detail::parse_int(f[0], idx))
            r.index = static_cast<double>(idx);
        else if (detail::parse_iso8601_minutes(f[0], minutes))
            r.index = minutes / 15.0;
        else
            fail("bad timestamp '" + std::string(f[0]) + "'");
        if (!detail::parse_double(f[1], r.u) || !detail::parse_double(f[2], r.w1) ||
            !detail::parse_double(f[3], r.w2) || !detail::parse_double(f[4], r.y))
            fail("bad numeric field");
        if (f[5] == "H")
            r.mode = Mode::heating;
        else if (f[5] == "C")
            r.mode = Mode::cooling;
        else
            fail("mode must be H or C");
        if (!rows.empty() && r.index <= rows.back().index) fail("unsorted data");
        rows.push_back(r);
    }

    OperationalDataset ds;
    std::size_t first = 0;
    auto flush = [&](std::size_t end) {
        const Index n = static_cast<Index>(end - first);
        OperationalSegment s;
        s.start_index = std::lround(rows[first].index);
        s.mode = rows[first].mode;
        s.u.resize(1, n);
        s.w.resize(2, n);
        s.y.resize(1, n);
        for (Index k = 0; k < n; ++k) {
            const auto& r = rows[first + static_cast<std::size_t>(k)];
            s.u(0, k) = r.u;
            s.w(0, k) = r.w1;
            s.w(1, k) = r.w2;
            s.y(0, k) = r.y;
        }
        ds.segments.push_back(std::move(s));
        first = end;
    };
    for (std::size_t i = 1; i < rows.size(); ++i)
        if (rows[i].index - rows[i - 1].index > 1.5 || rows[i].mode != rows[i - 1].mode) flush(i);
    if (!rows.empty()) flush(rows.size());
    return ds;
}

/// Writes segments with integer sample indices (the format read_dataset accepts).
inline void write_dataset(const std::string& path, const OperationalDataset& ds)
{
    std::ofstream out(path);
    if (!out) throw DataError("cannot write " + path);
    out.precision(17);
    out << "t,u,w1,w2,y,mode\n";
    for (const auto& s : ds.segments)
        for (Index k = 0; k < s.length(); ++k)
            out << s.start_index + k << ',' << s.u(0, k) << ',' << s.w(0, k) << ',' << s.w(1, k) << ',' << s.y(0, k)
                << ',' << to_string(s.mode) << '\n';
}

} // namespace ddpc
