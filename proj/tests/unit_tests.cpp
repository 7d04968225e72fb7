#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include <ddpc/config.hpp>
#include <ddpc/controller.hpp>
#include <ddpc/eval.hpp>
#include <ddpc/planner.hpp>
#include <ddpc/qp.hpp>
#include <ddpc/robust.hpp>
#include <ddpc/sim/comfort.hpp>
#include <ddpc/sim/dataset.hpp>
#include <ddpc/sim/ess.hpp>
#include <ddpc/sim/experiment.hpp>
#include <ddpc/sim/ledger.hpp>
#include <ddpc/sim/plant.hpp>
#include <ddpc/sim/signals.hpp>

#include "support.hpp"

using namespace ddpc;
using ddpc::testing::flatten;
using ddpc::testing::order3_plant;
using ddpc::testing::random_run;
using ddpc::testing::window_at;

namespace fs = std::filesystem;

namespace {

MatrixXd row(std::initializer_list<double> v)
{
    MatrixXd m(1, static_cast<Index>(v.size()));
    Index i = 0;
    for (double x : v) m(0, i++) = x;
    return m;
}

OperationalSegment segment(Index length, long start, Mode mode = Mode::cooling, double base = 0.0)
{
    OperationalSegment s;
    s.start_index = start;
    s.mode = mode;
    s.u.resize(1, length);
    s.w.resize(2, length);
    s.y.resize(1, length);
    for (Index k = 0; k < length; ++k) {
        const double v = base + static_cast<double>(start + k);
        s.u(0, k) = v;
        s.w(0, k) = 2 * v;
        s.w(1, k) = 3 * v;
        s.y(0, k) = -v;
    }
    return s;
}

fs::path temp_dir(const std::string& name)
{
    const auto p = fs::temp_directory_path() / ("ddpc_unit_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

/// Noiseless model of the stable order-3 test plant.
struct NoiselessModel {
    DdpHyper hyper{240, 12, 12, 1e-8, 4, 0.8};
    ddpc::testing::Lti plant = order3_plant();
    OperationalSegment data = random_run(plant, 240, 101);
    DdpModel model = build_model({data}, hyper, Mode::cooling);
};

} // namespace

// ---------------------------------------------------------------------------
// data

TEST(Hankel, SmallExamples)
{
    const MatrixXd H = build_hankel(row({1, 2, 3, 4}), 2);
    MatrixXd expected(2, 3);
    expected << 1, 2, 3, 2, 3, 4;
    EXPECT_EQ(H, expected);
    EXPECT_EQ(build_hankel(row({5}), 1), row({5}));
}

TEST(Hankel, ColumnEnumeration)
{
    MatrixXd u(1, 10);
    for (int i = 0; i < 10; ++i) u(0, i) = i + 1;
    const MatrixXd H = build_hankel(u, 4);
    ASSERT_EQ(H.cols(), 7);
    for (Index j = 0; j < H.cols(); ++j)
        for (Index k = 0; k < 4; ++k) EXPECT_EQ(H(k, j), static_cast<double>(j + k + 1));
    EXPECT_EQ(H.col(2), (VectorXd(4) << 3, 4, 5, 6).finished());
}

TEST(Hankel, ShortSignalIsRejected)
{
    EXPECT_THROW(build_hankel(row({1, 2}), 3), DataError);
}

TEST(Hankel, ColumnCountAndOverlap)
{
    std::mt19937_64 rng(1);
    std::normal_distribution<double> n01;
    for (int T : {5, 17, 40})
        for (int L : {1, 3, 5}) {
            MatrixXd s(2, T);
            for (Index i = 0; i < s.size(); ++i) s.data()[i] = n01(rng);
            const MatrixXd H = build_hankel(s, L);
            ASSERT_EQ(H.cols(), T - L + 1);
            for (Index j = 0; j + 1 < H.cols(); ++j)
                EXPECT_EQ(H.col(j).tail(2 * (L - 1)), H.col(j + 1).head(2 * (L - 1)));
        }
}

TEST(Hankel, StackTwoMinimalSegments)
{
    DdpHyper h{40, 4, 6, 0.01, 0, 0.8};
    const auto H = stack_segments({segment(10, 0), segment(10, 100)}, h, Mode::cooling);
    EXPECT_EQ(H.n_cols, 2);
}

TEST(Hankel, ShortSegmentsDoNotContribute)
{
    DdpHyper h{100, 4, 6, 0.01, 0, 0.8};
    const auto H = stack_segments({segment(20, 0), segment(5, 50)}, h, Mode::cooling);
    EXPECT_EQ(H.n_cols, 11);
}

TEST(Hankel, OverflowKeepsNewestColumns)
{
    // Target 50 columns, 60 available over two segments.
    DdpHyper h{59, 4, 6, 0.01, 0, 0.8};
    ASSERT_EQ(h.n_cols(), 50);
    const auto H = stack_segments({segment(39, 0), segment(39, 1000)}, h, Mode::cooling);
    ASSERT_EQ(H.n_cols, 50);
    // Newest column starts at sample 1000 + 29, oldest kept at 10.
    EXPECT_EQ(H.H_u_init(0, H.n_cols - 1), 1029.0);
    EXPECT_EQ(H.H_u_init(0, 0), 10.0);
}

TEST(Hankel, ColumnsNeverCrossSegments)
{
    DdpHyper h{200, 3, 4, 0.01, 0, 0.8};
    std::vector<OperationalSegment> segs{segment(30, 0), segment(12, 40), segment(25, 70, Mode::heating),
                                         segment(20, 200)};
    const auto H = stack_segments(segs, h, Mode::cooling);
    // Values encode the sample index: every column must be consecutive.
    for (Index j = 0; j < H.n_cols; ++j) {
        VectorXd col(h.L());
        col << H.H_u_init.col(j), H.H_u_pred.col(j);
        for (Index k = 1; k < col.size(); ++k) EXPECT_EQ(col[k] - col[k - 1], 1.0);
        EXPECT_EQ(H.H_y_init(0, j), -col[0]);
        EXPECT_EQ(H.H_w_pred(1, j), 3 * col[h.t_init]);
    }
    EXPECT_EQ(H.n_cols, (30 - 6) + (12 - 6) + (20 - 6));
}

TEST(Hankel, NoDataForMode)
{
    DdpHyper h{40, 4, 6, 0.01, 0, 0.8};
    EXPECT_THROW(stack_segments({segment(20, 0, Mode::heating)}, h, Mode::cooling), DataError);
}

TEST(PersistentExcitation, ConstantSignalsFail)
{
    for (int depth : {2, 5, 10}) {
        OperationalSegment s;
        s.u = MatrixXd::Ones(1, 300);
        s.w = MatrixXd::Ones(2, 300);
        s.y = MatrixXd::Zero(1, 300);
        EXPECT_FALSE(check_pe({s}, depth).ok);
    }
}

TEST(PersistentExcitation, RandomSignalsPass)
{
    const auto r = check_pe({random_run(order3_plant(), 336, 4)}, 28);
    EXPECT_TRUE(r.ok);
    EXPECT_EQ(r.rank, 84);
}

TEST(PersistentExcitation, ZeroDisturbanceFails)
{
    auto s = random_run(order3_plant(), 336, 4);
    s.w.setZero();
    EXPECT_FALSE(check_pe({s}, 28).ok);
}

TEST(PersistentExcitation, NotEnoughColumns)
{
    const auto r = check_pe({random_run(order3_plant(), 40, 4)}, 28);
    EXPECT_FALSE(r.ok);
    EXPECT_EQ(r.reason, "not enough columns");
}

TEST(PersistentExcitation, MonotoneInData)
{
    const auto a = random_run(order3_plant(), 120, 8, Mode::cooling, 0);
    for (Index len = 30; len <= 120; len += 10) {
        const bool shorter = check_pe({a.slice(0, len)}, 8).ok;
        const bool longer = check_pe({a.slice(0, std::min<Index>(len + 10, 120))}, 8).ok;
        if (shorter) EXPECT_TRUE(longer) << len;
    }
}

TEST(Dataset, RoundTripAndSegmentation)
{
    const auto dir = temp_dir("dataset");
    OperationalDataset ds;
    ds.segments = {segment(96, 0), segment(10, 98), segment(20, 108, Mode::heating)};
    write_dataset((dir / "d.csv").string(), ds);
    const auto back = read_dataset((dir / "d.csv").string());
    ASSERT_EQ(back.segments.size(), 3u);
    EXPECT_EQ(back.segments[0].length(), 96);
    EXPECT_EQ(back.segments[1].start_index, 98);
    EXPECT_EQ(back.segments[2].mode, Mode::heating);
    EXPECT_EQ(back.segments[2].y, ds.segments[2].y);
}

TEST(Dataset, IsoTimestampsAndGaps)
{
    const auto dir = temp_dir("iso");
    std::ofstream f(dir / "d.csv");
    f << "t,u,w1,w2,y,mode\n";
    f << "2024-07-01T00:00:00Z,3,25,0,24,C\n";
    f << "2024-07-01T00:15:00Z,3,25,0,24,C\n";
    f << "2024-07-01T00:45:00Z,3,25,0,24,C\n";
    f << "2024-07-01T01:00:00Z,3,25,0,24,H\n";
    f.close();
    const auto ds = read_dataset((dir / "d.csv").string());
    ASSERT_EQ(ds.segments.size(), 3u);
    EXPECT_EQ(ds.segments[0].length(), 2);
    EXPECT_EQ(ds.segments[1].length(), 1);
    EXPECT_EQ(ds.segments[2].mode, Mode::heating);
}

TEST(Dataset, ErrorsNameTheLine)
{
    const auto dir = temp_dir("bad");
    {
        std::ofstream f(dir / "bad.csv");
        f << "t,u,w1,w2,y,mode\n0,1,2,3,4,C\n1,1,x,3,4,C\n";
    }
    try {
        read_dataset((dir / "bad.csv").string());
        FAIL() << "expected an error";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
    }
    {
        std::ofstream f(dir / "unsorted.csv");
        f << "t,u,w1,w2,y,mode\n5,1,2,3,4,C\n4,1,2,3,4,C\n";
    }
    try {
        read_dataset((dir / "unsorted.csv").string());
        FAIL() << "expected an error";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("unsorted data"), std::string::npos);
    }
    EXPECT_THROW(read_dataset((dir / "missing.csv").string()), DataError);
}

// ---------------------------------------------------------------------------
// ddp

TEST(Predictor, ExactOnNoiselessData)
{
    NoiselessModel m;
    const auto held_out = random_run(m.plant, 100, 7);
    for (Index t = 12; t + 12 <= held_out.length(); t += 5) {
        const auto win = window_at(held_out, t, 12, 12);
        const VectorXd y = predict(m.model.predictor, win.init, win.u_pred, win.w_pred);
        EXPECT_LE((y - win.y_true).cwiseAbs().maxCoeff(), 1e-5);
    }
}

TEST(Predictor, ReplaysRecordedWindow)
{
    NoiselessModel m;
    const auto win = window_at(m.data, 100, 12, 12);
    const VectorXd y = predict(m.model.predictor, win.init, win.u_pred, win.w_pred);
    EXPECT_LE((y - win.y_true).cwiseAbs().maxCoeff(), 1e-5);
    const VectorXd q = solve_ddp_qp(m.model.hankel, m.hyper, win.init.y_init, win.init.u_init, win.init.w_init,
                                    win.u_pred, win.w_pred);
    EXPECT_LE((q - win.y_true).cwiseAbs().maxCoeff(), 1e-5);
}

TEST(Predictor, ZeroColumnsDoNotChangeTheSolution)
{
    NoiselessModel m;
    DdpHyper h = m.hyper;
    h.e_g = 1e-2;
    auto H = stack_segments({m.data}, h, Mode::cooling);
    auto padded = H;
    const Index extra = 7;
    for (MatrixXd* blk : {&padded.H_u_init, &padded.H_u_pred, &padded.H_w_init, &padded.H_w_pred, &padded.H_y_init,
                          &padded.H_y_pred})
        blk->conservativeResizeLike(MatrixXd::Zero(blk->rows(), blk->cols() + extra));
    padded.n_cols += extra;
    const auto win = window_at(random_run(m.plant, 60, 3), 20, 12, 12);
    const VectorXd a = solve_ddp_qp(H, h, win.init.y_init, win.init.u_init, win.init.w_init, win.u_pred, win.w_pred);
    const VectorXd b =
        solve_ddp_qp(padded, h, win.init.y_init, win.init.u_init, win.init.w_init, win.u_pred, win.w_pred);
    EXPECT_LE((a - b).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Predictor, MatchesQuadraticProgram)
{
    sim::IdentificationConfig ic;
    ic.days = 6;
    const auto data = sim::make_identification_data(ic);
    DdpHyper h;
    const auto model = build_model({data}, h, Mode::cooling);
    for (Index t : {490, 520, 560}) {
        const auto win = window_at(data, t, h.t_init, h.N);
        const VectorXd a = predict(model.predictor, win.init, win.u_pred, win.w_pred);
        const VectorXd b = solve_ddp_qp(model.hankel, h, win.init.y_init, win.init.u_init, win.init.w_init,
                                        win.u_pred, win.w_pred);
        EXPECT_LE((a - b).cwiseAbs().maxCoeff(), 1e-6);
    }
}

TEST(Predictor, IsLinear)
{
    NoiselessModel m;
    const auto& p = m.model.predictor;
    const auto w1 = window_at(random_run(m.plant, 60, 1), 20, 12, 12);
    const auto w2 = window_at(random_run(m.plant, 60, 2), 30, 12, 12);
    const VectorXd zero = predict(p, VectorXd::Zero(12), VectorXd::Zero(12), VectorXd::Zero(24), VectorXd::Zero(12),
                                  VectorXd::Zero(24));
    EXPECT_EQ(zero.cwiseAbs().maxCoeff(), 0.0);
    auto run = [&](const ddpc::testing::Window& w, double s) {
        return predict(p, s * w.init.y_init, s * w.init.u_init, s * w.init.w_init, s * w.u_pred, s * w.w_pred);
    };
    const VectorXd sum = predict(p, w1.init.y_init + w2.init.y_init, w1.init.u_init + w2.init.u_init,
                                 w1.init.w_init + w2.init.w_init, w1.u_pred + w2.u_pred, w1.w_pred + w2.w_pred);
    EXPECT_LE((sum - run(w1, 1) - run(w2, 1)).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LE((run(w1, 2) - 2 * run(w1, 1)).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Predictor, BlockShapes)
{
    NoiselessModel m;
    const auto& p = m.model.predictor;
    EXPECT_EQ(p.P_y_init.cols(), 12);
    EXPECT_EQ(p.P_u_init.cols(), 12);
    EXPECT_EQ(p.P_w_init.cols(), 24);
    EXPECT_EQ(p.P_u_pred.cols(), 12);
    EXPECT_EQ(p.P_w_pred.cols(), 24);
    EXPECT_EQ(p.P_u_pred.rows(), 12);
}

TEST(Predictor, RejectsWrongDimensions)
{
    NoiselessModel m;
    EXPECT_THROW(predict(m.model.predictor, VectorXd::Zero(11), VectorXd::Zero(12), VectorXd::Zero(24),
                         VectorXd::Zero(12), VectorXd::Zero(24)),
                 Error);
}

TEST(Predictor, RefusesDegenerateData)
{
    DdpHyper h{120, 4, 4, 0.01, 0, 0.8};
    OperationalSegment s;
    s.u = MatrixXd::Ones(1, 120);
    s.w = MatrixXd::Ones(2, 120);
    s.y = MatrixXd::Ones(1, 120);
    const auto H = stack_segments({s}, h, Mode::cooling);
    try {
        build_predictor(H, h);
        FAIL() << "expected refusal";
    } catch (const DataError& e) {
        EXPECT_NE(std::string(e.what()).find("degenerate Hankel data"), std::string::npos);
    }
}

TEST(Consistency, CoolingPlantPasses)
{
    DdpHyper h{240, 12, 12, 1e-6, 4, 0.8};
    const auto m = build_model({random_run(order3_plant(2, -1.0), 240, 5)}, h, Mode::cooling);
    const auto r = check_consistency(m.predictor, Mode::cooling);
    EXPECT_TRUE(r.pass);
    EXPECT_EQ(r.fraction, 1.0);
    EXPECT_FALSE(check_consistency(m.predictor, Mode::heating).pass);
}

TEST(Consistency, ZeroCouplingFails)
{
    NoiselessModel m;
    auto p = m.model.predictor;
    p.P_u_pred.setZero();
    for (Mode mode : {Mode::cooling, Mode::heating}) {
        const auto r = check_consistency(p, mode);
        EXPECT_EQ(r.fraction, 0.0);
        EXPECT_FALSE(r.pass);
    }
    p.hyper.eta = 0.0;
    EXPECT_TRUE(check_consistency(p, Mode::cooling).pass);
}

TEST(Consistency, PassMatchesThreshold)
{
    NoiselessModel m;
    for (double eta : {0.0, 0.5, 0.8, 1.0}) {
        auto p = m.model.predictor;
        p.hyper.eta = eta;
        for (Mode mode : {Mode::cooling, Mode::heating}) {
            const auto r = check_consistency(p, mode);
            const int hits = std::accumulate(r.gamma.begin(), r.gamma.end(), 0);
            EXPECT_EQ(r.pass, hits >= eta * 12);
        }
    }
}

TEST(AdaptiveUpdate, SamePlantIsAccepted)
{
    const auto plant = order3_plant(2, -1.0);
    DdpHyper h{240, 12, 12, 1e-8, 4, 0.8};
    const auto data = random_run(plant, 400, 9);
    const auto model = build_model({data.slice(0, 240)}, h, Mode::cooling);
    const auto up = adaptive_update(model, {data.slice(240, 160)}, h);
    ASSERT_TRUE(up.accepted);
    EXPECT_EQ(up.model.hankel.n_cols, model.hankel.n_cols);
    const auto probe = window_at(random_run(plant, 60, 33), 30, 12, 12);
    const VectorXd a = predict(model.predictor, probe.init, probe.u_pred, probe.w_pred);
    const VectorXd b = predict(up.model.predictor, probe.init, probe.u_pred, probe.w_pred);
    EXPECT_LE((a - b).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_NE(up.model.predictor.fingerprint, model.predictor.fingerprint);
}

TEST(AdaptiveUpdate, ConstantDataFailsPe)
{
    const auto plant = order3_plant(2, -1.0);
    DdpHyper h{240, 12, 12, 1e-8, 4, 0.8};
    const auto model = build_model({random_run(plant, 240, 9)}, h, Mode::cooling);
    OperationalSegment flat;
    flat.start_index = 240;
    flat.u = MatrixXd::Ones(1, 230);
    flat.w = MatrixXd::Ones(2, 230);
    flat.y = MatrixXd::Ones(1, 230);
    const auto up = adaptive_update(model, {flat}, h);
    EXPECT_FALSE(up.accepted);
    ASSERT_FALSE(up.reasons.empty());
    EXPECT_EQ(up.reasons.front(), RejectReason::pe_fail);
    EXPECT_EQ(up.model.predictor.fingerprint, model.predictor.fingerprint);
}

TEST(AdaptiveUpdate, InvertedSignFailsConsistency)
{
    DdpHyper h{240, 12, 12, 1e-8, 4, 0.8};
    const auto model = build_model({random_run(order3_plant(2, -1.0), 240, 9)}, h, Mode::cooling);
    const auto heater = random_run(order3_plant(2, 1.0), 300, 10, Mode::cooling, 240);
    const auto up = adaptive_update(model, {heater}, h);
    EXPECT_FALSE(up.accepted);
    ASSERT_FALSE(up.reasons.empty());
    EXPECT_EQ(up.reasons.front(), RejectReason::consistency_fail);
    EXPECT_EQ(up.model.predictor.fingerprint, model.predictor.fingerprint);
}

TEST(AdaptiveUpdate, IgnoresOlderSamples)
{
    DdpHyper h{240, 12, 12, 1e-8, 4, 0.8};
    const auto data = random_run(order3_plant(2, -1.0), 300, 9);
    const auto model = build_model({data.slice(60, 240)}, h, Mode::cooling);
    const auto up = adaptive_update(model, {data.slice(0, 200)}, h);
    EXPECT_EQ(up.model.hankel.fingerprint(), model.hankel.fingerprint());
}

// ---------------------------------------------------------------------------
// qp

TEST(Qp, EqualityConstrainedLeastSquares)
{
    // min (x0 - 1)^2 + (x1 - 2)^2  s.t.  x0 + x1 = 1.
    qp::Model m;
    const auto x = m.add_variables(2);
    using qp::LinExpr;
    m.add_squared_cost(LinExpr::variable(x[0]) - LinExpr(1.0), 1.0);
    m.add_squared_cost(LinExpr::variable(x[1]) - LinExpr(2.0), 1.0);
    m.add_eq(LinExpr::variable(x[0]) + LinExpr::variable(x[1]), 1.0);
    const auto s = qp::solve(m);
    ASSERT_TRUE(s.ok());
    EXPECT_NEAR(s.value(x[0]), 0.0, 1e-7);
    EXPECT_NEAR(s.value(x[1]), 1.0, 1e-7);
}

TEST(Qp, LinearProgramWithBounds)
{
    // max x0 + 2 x1  s.t.  x0 + x1 <= 4, 0 <= x <= 3.
    qp::Model m;
    const auto x = m.add_variables(2, 0.0, 3.0);
    using qp::LinExpr;
    m.add_linear_cost(-1.0 * LinExpr::variable(x[0]) - 2.0 * LinExpr::variable(x[1]));
    m.add_leq(LinExpr::variable(x[0]) + LinExpr::variable(x[1]), 4.0);
    const auto s = qp::solve(m);
    ASSERT_TRUE(s.ok());
    EXPECT_NEAR(s.value(x[0]), 1.0, 1e-6);
    EXPECT_NEAR(s.value(x[1]), 3.0, 1e-6);
    EXPECT_NEAR(s.objective, -7.0, 1e-6);
}

TEST(Qp, DetectsInfeasibility)
{
    qp::Model m;
    const auto x = m.add_variable(0.0, 1.0);
    m.add_geq(qp::LinExpr::variable(x), 2.0);
    m.add_squared_cost(qp::LinExpr::variable(x), 1.0);
    EXPECT_FALSE(qp::solve(m).ok());

    qp::Model c;
    c.add_variable();
    c.add_eq(qp::LinExpr(1.0), 0.0);
    EXPECT_EQ(qp::solve(c).status, qp::Status::infeasible);
}

// ---------------------------------------------------------------------------
// robust

namespace {

robust::AffineExpression constant_expression(double nominal, const std::vector<double>& coef)
{
    robust::AffineExpression e(static_cast<int>(coef.size()), qp::LinExpr(nominal));
    for (std::size_t k = 0; k < coef.size(); ++k) e.coef[k] = qp::LinExpr(coef[k]);
    return e;
}

} // namespace

TEST(Robust, ZeroRadiiGiveNominalConstraint)
{
    qp::Model m;
    const auto x = m.add_variable();
    robust::AffineExpression e(2, qp::LinExpr::variable(x));
    e.coef[0] = qp::LinExpr::variable(x, 3.0);
    const robust::BoxSet box{VectorXd::Zero(2), VectorXd::Zero(2)};
    robust::robustify_leq(m, e, 1.0, box);
    m.add_linear_cost(-1.0 * qp::LinExpr::variable(x));
    const auto s = qp::solve(m);
    ASSERT_TRUE(s.ok());
    EXPECT_NEAR(s.value(x), 1.0, 1e-6);
    EXPECT_EQ(m.num_variables(), 1);
}

TEST(Robust, PureDisturbanceBoundIsInfeasible)
{
    qp::Model m;
    m.add_variable();
    const robust::BoxSet box{VectorXd::Zero(1), VectorXd::Constant(1, 0.2)};
    robust::robustify_leq(m, constant_expression(0.0, {1.0}), 0.0, box);
    EXPECT_EQ(qp::solve(m).status, qp::Status::infeasible);
}

TEST(Robust, NegativeRadiusIsRejected)
{
    qp::Model m;
    const robust::BoxSet box{VectorXd::Zero(1), VectorXd::Constant(1, -0.1)};
    EXPECT_THROW(robust::robustify_leq(m, constant_expression(0.0, {1.0}), 0.0, box), UsageError);
}

TEST(Robust, MatchesVertexEnumeration)
{
    // min |x - target|^2 with three uncertain constraints over an 8-dim box,
    // once through the worst-case reformulation and once with every vertex
    // written out explicitly.
    const int d = 8, n = 3;
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    for (int trial = 0; trial < 3; ++trial) {
        MatrixXd A0(3, n), A1(3 * d, n);
        VectorXd b(3), target(n), radius(d);
        for (Index i = 0; i < A0.size(); ++i) A0.data()[i] = U(rng);
        for (Index i = 0; i < A1.size(); ++i) A1.data()[i] = U(rng);
        for (Index i = 0; i < 3; ++i) b[i] = 0.5 + std::abs(U(rng));
        for (Index i = 0; i < n; ++i) target[i] = 3 * U(rng);
        for (Index i = 0; i < d; ++i) radius[i] = 0.1 + 0.2 * std::abs(U(rng));
        const robust::BoxSet box{VectorXd::Zero(d), radius};

        auto build = [&](qp::Model& m, std::vector<qp::Var>& x) {
            x = m.add_variables(n);
            for (int i = 0; i < n; ++i) m.add_squared_cost(qp::LinExpr::variable(x[i]) - qp::LinExpr(target[i]), 1.0);
        };
        auto expr = [&](const std::vector<qp::Var>& x, int c) {
            robust::AffineExpression e(d);
            for (int i = 0; i < n; ++i) e.nominal.add_term(x[i], A0(c, i));
            for (int k = 0; k < d; ++k)
                for (int i = 0; i < n; ++i) e.coef[k].add_term(x[i], A1(c * d + k, i));
            return e;
        };

        qp::Model robust_model, vertex_model;
        std::vector<qp::Var> xr, xv;
        build(robust_model, xr);
        build(vertex_model, xv);
        for (int c = 0; c < 3; ++c) {
            robust::robustify_leq(robust_model, expr(xr, c), b[c], box);
            const auto e = expr(xv, c);
            for (int mask = 0; mask < (1 << d); ++mask) {
                qp::LinExpr v = e.nominal;
                for (int k = 0; k < d; ++k) v.add_scaled(e.coef[k], ((mask >> k) & 1 ? 1.0 : -1.0) * radius[k]);
                vertex_model.add_leq(v, b[c]);
            }
        }
        const auto sr = qp::solve(robust_model), sv = qp::solve(vertex_model);
        ASSERT_TRUE(sr.ok());
        ASSERT_TRUE(sv.ok());
        EXPECT_NEAR(sr.objective, sv.objective, 1e-6);
    }
}

TEST(Robust, ComposedPredictionMatchesSampling)
{
    NoiselessModel m;
    const auto& p = m.model.predictor;
    const robust::DisturbanceBasis basis{12, 2};
    std::mt19937_64 rng(4);
    std::uniform_real_distribution<double> U(-1.0, 1.0);

    // A fixed causal policy written as constant expressions.
    robust::AffinePolicy pol;
    pol.M_w = MatrixXd::Zero(12, 24);
    pol.M_a = MatrixXd::Zero(12, 12);
    pol.v.resize(12);
    for (int r = 0; r < 12; ++r) {
        pol.v[r] = U(rng);
        for (int s = 0; s < r; ++s) {
            pol.M_w(r, basis.w(s, 0)) = U(rng);
            pol.M_w(r, basis.w(s, 1)) = U(rng);
            pol.M_a(r, s) = U(rng);
        }
    }
    EXPECT_EQ(pol.causality_violation(basis), 0.0);
    const auto u_expr = robust::to_expressions(pol, basis);
    const auto win = window_at(random_run(m.plant, 60, 2), 20, 12, 12);
    const VectorXd y_free = p.free_response(win.init);
    auto offset = robust::linear_combination(p.P_w_pred, robust::weather_expressions(basis, win.w_pred));
    for (int r = 0; r < 12; ++r) offset[r].nominal.add_constant(y_free[r]);
    const auto y_expr = robust::compose_affine(u_expr, p.P_u_pred, offset);

    for (int s = 0; s < 20; ++s) {
        VectorXd delta(basis.size());
        for (Index k = 0; k < delta.size(); ++k) delta[k] = U(rng);
        const VectorXd u = pol.apply(delta.head(24), delta.tail(12));
        const VectorXd y = predict(p, win.init, u, win.w_pred + delta.head(24));
        for (int r = 0; r < 12; ++r) EXPECT_NEAR(y_expr[r].evaluate(VectorXd(), delta), y[r], 1e-9);
    }
}

TEST(Robust, IdentityCompositionReturnsPolicy)
{
    const robust::DisturbanceBasis basis{3, 1};
    const auto pol = std::vector{constant_expression(1.0, {0, 0, 0, 0, 0, 0}), constant_expression(2.0, {0.5, 0, 0, 0.1, 0, 0}),
                                 constant_expression(3.0, {0.1, 0.2, 0, 0.3, 0.4, 0})};
    const auto out = robust::compose_affine(pol, MatrixXd::Identity(3, 3), std::vector<robust::AffineExpression>(3, robust::AffineExpression(6)));
    const VectorXd delta = (VectorXd(6) << 0.3, -0.2, 0.5, 1.0, -1.0, 0.4).finished();
    for (int r = 0; r < 3; ++r) EXPECT_DOUBLE_EQ(out[r].evaluate(VectorXd(), delta), pol[r].evaluate(VectorXd(), delta));
    EXPECT_EQ(basis.size(), 6);
}

TEST(Robust, EqualityForAllDisturbances)
{
    // Two policies must add up to a known affine target for every disturbance.
    const robust::DisturbanceBasis basis{3, 1};
    qp::Model m;
    robust::PolicyStructure st;
    st.lag_w = 1;
    st.lag_a = 0;
    robust::PolicyVariables a(m, basis, st), b(m, basis, st);
    const double gamma = 1.7;
    const auto agc = robust::alpha_expressions(basis, VectorXd::Constant(3, 0.2));
    for (int i = 0; i < 3; ++i) {
        robust::AffineExpression target(basis.size(), qp::LinExpr(4.0 + i));
        target.add_scaled(agc[i], gamma);
        robust::enforce_equality_for_all(m, a.row(i) + b.row(i), target);
        m.add_squared_cost(a.nominal(i), 1.0);
    }
    const auto s = qp::solve(m);
    ASSERT_TRUE(s.ok());
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    for (int k = 0; k < 10; ++k) {
        VectorXd delta(basis.size());
        for (Index j = 0; j < delta.size(); ++j) delta[j] = U(rng);
        for (int i = 0; i < 3; ++i)
            EXPECT_NEAR(a.row(i).evaluate(s.x, delta) + b.row(i).evaluate(s.x, delta),
                        4.0 + i + gamma * (0.2 + delta[basis.alpha(i)]), 1e-9);
    }
}

TEST(Robust, MismatchedWeatherCoefficientIsInfeasible)
{
    // A policy without weather gains cannot match a target that reacts to the
    // weather of the current step.
    const robust::DisturbanceBasis basis{2, 1};
    qp::Model m;
    robust::PolicyStructure st;
    robust::PolicyVariables a(m, basis, st);
    const auto weather = robust::weather_expressions(basis, VectorXd::Zero(2));
    robust::enforce_equality_for_all(m, a.row(0), weather[0]);
    EXPECT_FALSE(qp::solve(m).ok());
}

TEST(Robust, PolicyIsCausal)
{
    const robust::DisturbanceBasis basis{4, 2};
    qp::Model m;
    robust::PolicyStructure st;
    st.lag_w = 1;
    st.lag_a = 1;
    robust::PolicyVariables pv(m, basis, st);
    VectorXd x = VectorXd::Ones(m.num_variables());
    const auto pol = pv.extract(x);
    EXPECT_EQ(pol.causality_violation(basis), 0.0);
    // Disturbance sequences agreeing up to step k give equal decisions up to step k.
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> U(-1.0, 1.0);
    for (int k = 0; k < 4; ++k) {
        VectorXd d1(12), d2(12);
        for (int j = 0; j < 12; ++j) d1[j] = U(rng), d2[j] = U(rng);
        for (int s = 0; s < k; ++s) {
            d2.segment(basis.w(s, 0), 2) = d1.segment(basis.w(s, 0), 2);
            d2[basis.alpha(s)] = d1[basis.alpha(s)];
        }
        const VectorXd u1 = pol.apply(d1.head(8), d1.tail(4)), u2 = pol.apply(d2.head(8), d2.tail(4));
        for (int s = 0; s <= k && s < 4; ++s) EXPECT_NEAR(u1[s], u2[s], 1e-12);
    }
}

// ---------------------------------------------------------------------------
// planner

TEST(IntradayPrediction, ZeroScenario)
{
    const VectorXd z = VectorXd::Zero(96);
    EXPECT_EQ(predict_intraday(z, z), z);
}

TEST(IntradayPrediction, HandRolledRecursion)
{
    VectorXd a = VectorXd::Zero(96);
    a.head(4).setOnes();
    const VectorXd p = predict_intraday(a, VectorXd::Zero(96));
    // Steps counted from 1: P(4) = 0, P(5..8) = -1, P(9) = 0.
    EXPECT_EQ(p[3], 0.0);
    for (int i = 4; i < 8; ++i) EXPECT_EQ(p[i], -1.0) << i;
    EXPECT_EQ(p[8], 0.0);
    EXPECT_EQ(p.head(3), VectorXd::Zero(3));
}

TEST(IntradayPrediction, AccumulatedEstimateVanishes)
{
    const auto lib = sim::agc_library(3, 0, 10);
    const VectorXd mean = lib.mean();
    for (int j = 0; j < lib.size(); ++j) {
        const VectorXd a = lib.alpha.row(j).transpose();
        const VectorXd p = predict_intraday(a, mean);
        for (Index i = 3; i < 96; ++i) {
            double acc = 0;
            for (Index k = 0; k + 4 <= i; ++k) acc += p[k] + a[k];
            for (Index k = i - 3; k <= i; ++k) acc += p[k] + mean[k];
            EXPECT_LE(std::abs(acc), 1e-12);
        }
    }
}

namespace {

struct DeskPlanner {
    DdpHyper hyper{480, 12, 8, 0.01, 4, 0.8};
    OperationalSegment data;
    DdpModel model;
    InitWindows init;
    VectorXd w_fc;
    ScenarioSet scenarios;

    DeskPlanner()
    {
        sim::IdentificationConfig ic;
        ic.days = 6;
        data = sim::make_identification_data(ic);
        model = build_model({data.slice(0, 4 * kStepsPerDay)}, hyper, Mode::cooling);
        const Index t = 5 * kStepsPerDay;
        init = make_init_windows(data.u, data.w, data.y, t, hyper.t_init);
        w_fc = flatten(data.w.middleCols(t, hyper.N));
        scenarios.alpha = sim::agc_library(4, 0, 6).alpha.leftCols(hyper.N);
    }
};

} // namespace

TEST(Planner, EssOnlyWithoutAgcUsesFullPowerRange)
{
    // With alpha = 0 the ESS alone can shift +-5 kW around a zero baseline.
    DeskPlanner d;
    ScenarioSet s;
    s.alpha = MatrixXd::Zero(3, 8);
    PlannerConfig cfg;
    cfg.include_building = false;
    const auto r = plan_day_ahead(nullptr, d.init, d.w_fc, s, 2.625, cfg);
    EXPECT_NEAR(r.plan.gamma, 5.0, 1e-5);
    EXPECT_LE(r.plan.baseline.cwiseAbs().maxCoeff(), 1e-4);
}

TEST(Planner, GammaNonNegativeAndBaselineInRange)
{
    DeskPlanner d;
    PlannerConfig cfg;
    cfg.energy_weight = 0.25;
    const auto r = plan_day_ahead(&d.model.predictor, d.init, d.w_fc, d.scenarios, 2.625, cfg);
    EXPECT_GE(r.plan.gamma, 0.0);
    EXPECT_GE(r.plan.baseline.minCoeff(), cfg.building.u_min + cfg.ess.p_min - 1e-6);
    EXPECT_LE(r.plan.baseline.maxCoeff(), cfg.building.u_max + cfg.ess.p_max + 1e-6);
}

TEST(Planner, EssAddsFlexibility)
{
    DeskPlanner d;
    PlannerConfig with, without;
    without.include_ess = false;
    const double g1 = plan_day_ahead(&d.model.predictor, d.init, d.w_fc, d.scenarios, 2.625, with).plan.gamma;
    const double g0 = plan_day_ahead(&d.model.predictor, d.init, d.w_fc, d.scenarios, 2.625, without).plan.gamma;
    EXPECT_GE(g1, g0 - 1e-6);
}

TEST(Planner, EmptyScenarioSetIsAnError)
{
    DeskPlanner d;
    ScenarioSet empty;
    empty.alpha.resize(0, 8);
    try {
        plan_day_ahead(&d.model.predictor, d.init, d.w_fc, empty, 2.625, PlannerConfig{});
        FAIL();
    } catch (const UsageError& e) {
        EXPECT_STREQ(e.what(), "no scenarios");
    }
}

TEST(Planner, DeterministicCycle)
{
    DeskPlanner d;
    const auto lib = sim::agc_library(4, 0, 30);
    ScenarioSet short_lib;
    short_lib.alpha = lib.alpha.leftCols(8);
    PlannerState st1{d.model, d.hyper, {}}, st2{d.model, d.hyper, {}};
    PlannerCycleInputs in;
    in.init = d.init;
    in.w_forecast = d.w_fc;
    in.library = &short_lib;
    in.n_scen = 8;
    in.scenario_seed = 77;
    in.soc = 2.0;
    const auto a = run_planner_cycle(st1, in, PlannerConfig{});
    const auto b = run_planner_cycle(st2, in, PlannerConfig{});
    EXPECT_NEAR(a.result.plan.gamma, b.result.plan.gamma, 1e-12);
    EXPECT_LE((a.result.plan.baseline - b.result.plan.baseline).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Planner, KeepsPredictorWhenUpdateFails)
{
    DeskPlanner d;
    ScenarioSet lib;
    lib.alpha = d.scenarios.alpha;
    PlannerState st{d.model, d.hyper, {}};
    OperationalSegment flat;
    flat.start_index = 4 * kStepsPerDay;
    flat.u = MatrixXd::Constant(1, 500, 3.0);
    flat.w = MatrixXd::Constant(2, 500, 1.0);
    flat.y = MatrixXd::Constant(1, 500, 24.0);
    PlannerCycleInputs in;
    in.new_segments = {flat};
    in.init = d.init;
    in.w_forecast = d.w_fc;
    in.library = &lib;
    in.n_scen = 4;
    in.soc = 2.0;
    const auto out = run_planner_cycle(st, in, PlannerConfig{});
    ASSERT_TRUE(out.update.has_value());
    EXPECT_FALSE(out.update->accepted);
    EXPECT_EQ(st.model->predictor.fingerprint, d.model.predictor.fingerprint);
    EXPECT_GE(out.result.plan.gamma, 0.0);
}

TEST(Planner, PlanFileRoundTrip)
{
    const auto dir = temp_dir("plan");
    SfcPlan p{3.25, VectorXd::LinSpaced(96, 1.0, 9.0)};
    write_plan(dir / "plan.csv", p);
    const auto q = read_plan(dir / "plan.csv");
    EXPECT_EQ(q.gamma, p.gamma);
    EXPECT_EQ(q.baseline, p.baseline);
}

TEST(Planner, ScenarioDrawIsDeterministic)
{
    const auto lib = sim::agc_library(1, 0, 50);
    const auto a = draw_scenarios(lib, 10, 5), b = draw_scenarios(lib, 10, 5), c = draw_scenarios(lib, 10, 6);
    EXPECT_EQ(a.alpha, b.alpha);
    EXPECT_NE(a.alpha, c.alpha);
    EXPECT_EQ(a.size(), 10);
}

// ---------------------------------------------------------------------------
// controller

TEST(EssTracking, Arithmetic)
{
    EssParams ess;
    auto c = ess_track(5.0, 0.0, 2.0, 0.5, 4.0, ess, 2.0);
    EXPECT_DOUBLE_EQ(c.p_e, 2.0);
    EXPECT_DOUBLE_EQ(c.track_error, 0.0);
    c = ess_track(9.0, 0.0, 0.0, 0.0, 2.0, ess, 2.0);
    EXPECT_DOUBLE_EQ(c.p_e, 5.0);
    EXPECT_DOUBLE_EQ(c.track_error, 2.0);
    c = ess_track(6.0, 0.0, 3.0, 0.0, 6.0, ess, 2.0);
    EXPECT_DOUBLE_EQ(c.p_e, 0.0);
}

TEST(EssTracking, RespectsStateOfCharge)
{
    EssParams ess;
    const auto full = ess_track(8.0, 0.0, 0.0, 0.0, 4.0, ess, ess.soc_max);
    EXPECT_EQ(full.p_e, 0.0);
    EXPECT_DOUBLE_EQ(full.track_error, 4.0);
}

TEST(AgcForecast, DecaysAndClips)
{
    const VectorXd f = forecast_agc({0.1, 0.9, 0.9, 0.9, 0.9}, 12);
    EXPECT_NEAR(f[0], 0.9 * 0.7, 1e-12);
    for (int i = 1; i < 12; ++i) EXPECT_LT(std::abs(f[i]), std::abs(f[i - 1]));
    EXPECT_EQ(forecast_agc({}, 4), VectorXd::Zero(4));
    EXPECT_LE(forecast_agc({5.0}, 3, 1.0).maxCoeff(), 1.0);
}

TEST(BilevelDeepc, UnconstrainedInputEnergy)
{
    NoiselessModel m;
    InitWindows zero{VectorXd::Zero(12), VectorXd::Zero(12), VectorXd::Zero(24)};
    const auto r = solve_bilevel_deepc(m.model.predictor, DeepcObjective{}, BoxBounds{-10, 10}, BoxBounds{},
                                       zero, VectorXd::Zero(24));
    EXPECT_LE(r.u_pred.cwiseAbs().maxCoeff(), 1e-6);
}

TEST(BilevelDeepc, OneStepTargetInversion)
{
    DdpHyper h{240, 6, 1, 1e-8, 4, 0.8};
    const auto plant = order3_plant(2, -1.0);
    const auto data = random_run(plant, 240, 14);
    const auto model = build_model({data}, h, Mode::cooling);
    const auto win = window_at(random_run(plant, 40, 15), 20, 6, 1);
    const double free = predict(model.predictor, win.init, VectorXd::Zero(1), win.w_pred)[0];
    const double gain = model.predictor.P_u_pred(0, 0);
    const double target = free + 0.7 * gain;
    DeepcObjective J;
    J.W_u = 1e-9;
    const auto r = solve_bilevel_deepc(model.predictor, J, BoxBounds{-5, 5}, BoxBounds{target, target}, win.init,
                                       win.w_pred, 1e6);
    EXPECT_NEAR(r.u_pred[0], (target - free) / gain, 1e-4);
}

namespace {

struct DeskController {
    ddpc::testing::Lti plant = order3_plant(1, -1.0);
    DdpHyper hyper{160, 4, 4, 1e-4, 4, 0.8};
    OperationalSegment data = random_run(plant, 300, 21, Mode::cooling, 0, 2.4, 8.4);
    DdpModel model = build_model({data.slice(0, 160)}, hyper, Mode::cooling);
    ControllerConfig cfg;
    IntradayInputs in;

    DeskController()
    {
        cfg.N = 4;
        cfg.w_radius = VectorXd::Constant(1, 0.2);
        in.pred = &model.predictor;
        in.init = make_init_windows(data.u, data.w, data.y, 250, hyper.t_init);
        in.w_forecast = data.w.middleCols(250, 4).transpose();
        in.alpha_forecast = (VectorXd(4) << 0.3, -0.2, 0.1, 0.0).finished();
        in.soc = 2.0;
        in.baseline = VectorXd::Constant(4, 6.0);
        in.gamma = 2.0;
        in.commitments.committed = {0.2, -0.1, 0.3};
    }
};

} // namespace

TEST(Intraday, CommitmentsAndCausality)
{
    DeskController d;
    const auto r = solve_intraday(d.cfg, d.in);
    ASSERT_TRUE(r.ok) << r.message;
    for (int i = 0; i < 3; ++i) EXPECT_EQ(r.pint_policy.v[i], d.in.commitments.committed[static_cast<std::size_t>(i)]);
    EXPECT_EQ(r.pint_policy.M_w.topRows(4).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(r.pint_policy.M_a.topRows(4).cwiseAbs().maxCoeff(), 0.0);
    const robust::DisturbanceBasis basis{4, 1};
    EXPECT_EQ(r.u_policy.causality_violation(basis), 0.0);
    EXPECT_EQ(r.pe_policy.causality_violation(basis), 0.0);
    EXPECT_EQ(r.p_int_commit, r.pint_policy.v[3]);
}

TEST(Intraday, SocWeightPullsTowardReference)
{
    DeskController d;
    d.cfg.building.y_min = -1e3;
    d.cfg.building.y_max = 1e3;
    d.in.gamma = 0.0;
    d.in.soc = 1.0;
    auto spread = [&](double w) {
        auto cfg = d.cfg;
        cfg.W_SoC = w;
        const auto r = solve_intraday(cfg, d.in);
        EXPECT_TRUE(r.ok);
        return (r.soc_nominal.array() - cfg.ess.soc_ref()).square().sum();
    };
    EXPECT_LT(spread(100.0), spread(0.0));
}

TEST(Intraday, ReducesToCertaintyEquivalentProblem)
{
    // Zero radii, no AGC and no ESS coupling: the input plan is the bi-level
    // DeePC solution with the same objective.
    DeskController d;
    d.cfg.w_radius.setZero();
    d.cfg.alpha_radius = 0.0;
    d.cfg.W_P = 1e4;
    d.cfg.W_SoC = 0.0;
    d.cfg.gain_weight = 0.0;
    d.cfg.ess.p_min = -1e-9;
    d.cfg.ess.p_max = 1e-9;
    d.cfg.building.y_min = -1e3;
    d.cfg.building.y_max = 1e3;
    d.in.gamma = 0.0;
    d.in.alpha_forecast.setZero();
    d.in.commitments.committed = {0.0, 0.0, 0.0};
    d.in.baseline = (VectorXd(4) << 3.0, 4.0, 5.0, 6.0).finished();
    const auto r = solve_intraday(d.cfg, d.in);
    ASSERT_TRUE(r.ok);
    DeepcObjective J;
    J.W_u = d.cfg.W_u + d.cfg.W_P;
    J.u_ref = d.cfg.W_P / J.W_u * d.in.baseline;
    J.u_ref.head(3).setZero();
    // The first three transactions are pinned, so those inputs equal the baseline.
    const auto ce = solve_bilevel_deepc(d.model.predictor, J, BoxBounds{2.4, 8.4}, BoxBounds{}, d.in.init,
                                        d.in.w_forecast);
    EXPECT_NEAR(r.u_now, d.in.baseline[0], 1e-6);
    EXPECT_NEAR(r.u_policy.v[3], ce.u_pred[3], 1e-4);
}

TEST(ControllerCycle, ForecastOutageUsesPersistence)
{
    DeskController d;
    ControllerState st;
    st.models[Mode::cooling] = d.model;
    st.hyper = d.hyper;
    SfcPlan plan{1.0, VectorXd::Constant(96, 6.0)};
    ControllerCycleInputs in;
    in.init = d.in.init;
    in.alpha_forecast = VectorXd::Zero(4);
    in.soc = 2.0;
    in.plan = &plan;
    in.step_of_day = 5;
    in.w_forecast = d.in.w_forecast;
    const auto first = run_controller_cycle(st, d.cfg, in);
    EXPECT_FALSE(first.forecast_fallback);
    in.w_forecast.reset();
    const auto second = run_controller_cycle(st, d.cfg, in);
    EXPECT_TRUE(second.forecast_fallback);
    EXPECT_FALSE(second.solver_fallback);
    EXPECT_EQ(st.commitments.committed[2], second.p_int_commit);
}

TEST(ControllerCycle, MissingPredictorHoldsSetpoint)
{
    DeskController d;
    ControllerState st;
    st.models[Mode::cooling] = d.model;
    st.last_u = 4.2;
    SfcPlan plan{1.0, VectorXd::Constant(96, 6.0)};
    ControllerCycleInputs in;
    in.mode = Mode::heating;
    in.init = d.in.init;
    in.w_forecast = d.in.w_forecast;
    in.alpha_forecast = VectorXd::Zero(4);
    in.soc = 2.0;
    in.plan = &plan;
    const auto out = run_controller_cycle(st, d.cfg, in);
    EXPECT_TRUE(out.solver_fallback);
    EXPECT_EQ(out.u, 4.2);
}

// ---------------------------------------------------------------------------
// sim

TEST(Ess, EfficiencyCoefficients)
{
    EssParams p;
    sim::EssState s{1.0};
    for (int k = 0; k < 900; ++k) sim::step_ess(p, s, 1.0);
    EXPECT_NEAR(s.soc - 1.0, 0.95, 1e-12);
    s.soc = 3.0;
    for (int k = 0; k < 900; ++k) sim::step_ess(p, s, -0.95);
    EXPECT_NEAR(s.soc - 3.0, -1.0, 1e-12);
}

TEST(Ess, SaturatesAtBounds)
{
    EssParams p;
    sim::EssState s{p.soc_max};
    EXPECT_EQ(sim::step_ess(p, s, 3.0).p_e, 0.0);
    EXPECT_EQ(s.soc, p.soc_max);
    s.soc = p.soc_min;
    EXPECT_EQ(sim::step_ess(p, s, -3.0).p_e, 0.0);
    EXPECT_EQ(s.soc, p.soc_min);
    s.soc = p.soc_max - 1e-4;
    const auto step = sim::step_ess(p, s, 5.0);
    EXPECT_LT(step.p_e, 5.0);
    EXPECT_LE(s.soc, p.soc_max);
}

TEST(Plant, ZeroStateStaysAtZero)
{
    sim::RcParams rc;
    rc.internal_gain = 0.0;
    auto m = sim::make_plant(rc);
    m.sigma_u = m.sigma_y = 0.0;
    sim::PlantState s;
    s.x.setZero();
    std::mt19937_64 rng(1);
    for (int k = 0; k < 50; ++k)
        EXPECT_EQ(sim::step_plant(m, s, m.u_vent, Eigen::Vector2d::Zero(), Mode::cooling, 0.0, rng).y, 0.0);
}

TEST(Plant, StableWithNegativeCoolingGain)
{
    const auto m = sim::make_plant({});
    EXPECT_LT(m.spectral_radius(), 1.0);
    EXPECT_LT(m.dc_gain(Mode::cooling, 0.0), 0.0);
    EXPECT_GT(m.dc_gain(Mode::heating, 0.0), 0.0);
}

TEST(Plant, StepResponseMatchesDcGain)
{
    sim::RcParams rc;
    rc.internal_gain = 0.0;
    auto m = sim::make_plant(rc);
    m.sigma_u = m.sigma_y = 0.0;
    sim::PlantState s;
    s.x.setZero();
    std::mt19937_64 rng(1);
    double y = 0.0;
    for (int k = 0; k < 4000; ++k) y = sim::step_plant(m, s, m.u_vent + 1.0, Eigen::Vector2d::Zero(), Mode::cooling, 0.0, rng).y;
    EXPECT_NEAR(y, m.dc_gain(Mode::cooling, 0.0), 1e-6);
}

TEST(Plant, DriftScalesGain)
{
    auto m = sim::make_plant({});
    m.drift_per_day = 0.01;
    EXPECT_NEAR(m.dc_gain(Mode::cooling, 30.0) / m.dc_gain(Mode::cooling, 0.0), 1.3, 1e-12);
}

TEST(Plant, Thermostat)
{
    const auto m = sim::make_plant({});
    sim::Thermostat th;
    EXPECT_EQ(th(24.0, Mode::cooling, m), 2.4);
    EXPECT_EQ(th(26.0, Mode::cooling, m), 7.0);
    // Inside the band the previous decision is held.
    EXPECT_EQ(th(24.2, Mode::cooling, m), 7.0);
    EXPECT_EQ(th(23.4, Mode::cooling, m), 2.4);
    EXPECT_EQ(th(24.4, Mode::cooling, m), 2.4);
    EXPECT_EQ(th(23.0, Mode::heating, m), 8.4);
}

TEST(Signals, AgcBoundedZeroMeanDeterministic)
{
    double sum = 0.0;
    std::size_t n = 0;
    for (long day = 0; day < 30; ++day) {
        const auto d = sim::gen_agc(7, day);
        for (double a : d.fine) {
            ASSERT_LE(std::abs(a), 1.0);
            sum += a;
            ++n;
        }
    }
    EXPECT_LE(std::abs(sum / static_cast<double>(n)), 0.05);
    EXPECT_EQ(sim::gen_agc(7, 3).fine, sim::gen_agc(7, 3).fine);
    EXPECT_NE(sim::gen_agc(7, 3).fine, sim::gen_agc(8, 3).fine);
}

TEST(Signals, WeatherForecastInsideBox)
{
    sim::WeatherParams p;
    for (long day = 0; day < 10; ++day) {
        const auto d = sim::gen_weather(2, day, p);
        for (int k = 0; k < kStepsPerDay; ++k) {
            EXPECT_LE(std::abs(d.forecast(0, k) - d.truth(0, k)), p.forecast_radius_temp);
            EXPECT_LE(std::abs(d.forecast(1, k) - d.truth(1, k)), p.forecast_radius_solar);
            const double h = (k + 0.5) * kStepHours;
            if (h < p.sunrise_h || h > p.sunset_h) EXPECT_EQ(d.truth(1, k), 0.0);
        }
    }
    EXPECT_EQ(sim::gen_weather(2, 4).truth, sim::gen_weather(2, 4).truth);
}

TEST(Comfort, PpdShape)
{
    EXPECT_NEAR(sim::ppd(0.0), 5.0, 1e-12);
    for (double v : {0.3, 1.0, 2.5}) EXPECT_EQ(sim::ppd(v), sim::ppd(-v));
    double prev = sim::ppd(0.0);
    for (int k = 1; k <= 100; ++k) {
        const double v = 0.03 * k;
        EXPECT_GT(sim::ppd(v), prev);
        prev = sim::ppd(v);
    }
}

TEST(Comfort, PmvTracksTemperature)
{
    double prev = sim::pmv(18.0);
    for (double t = 19.0; t <= 30.0; t += 1.0) {
        EXPECT_GT(sim::pmv(t), prev);
        prev = sim::pmv(t);
    }
    const auto m = sim::comfort_metrics({24.0, 25.0});
    EXPECT_NEAR(m.mean_ppd, 0.5 * (m.ppd[0] + m.ppd[1]), 1e-12);
}

TEST(Ledger, TotalIsComponentSum)
{
    sim::DayAccumulator acc;
    for (int k = 0; k < 96 * 225; ++k) acc.add_energy(3.0 + 0.1 * std::sin(k), kFineStepHours);
    for (int k = 0; k < 100; ++k) acc.add_track_error(k % 2 ? 0.3 : -0.2, kFineStepHours);
    sim::MarketParams m;
    const auto d = acc.close(0, m, 2.5, m.amortization(5.0));
    EXPECT_NEAR(d.total, d.energy_cost - d.reward + d.penalty + d.amortization, 1e-9);
    EXPECT_NEAR(d.reward, 0.8 * 2.5, 1e-15);
    EXPECT_NEAR(d.amortization, 813.0 * 5.0 / 3650.0, 1e-12);
}

TEST(Experiment, ReferenceHasNoMarket)
{
    sim::ExperimentConfig cfg;
    cfg.scenario = sim::Scenario::C;
    cfg.days = 2;
    const auto r = sim::run_experiment(cfg);
    ASSERT_EQ(r.days.size(), 2u);
    for (const auto& d : r.days) {
        EXPECT_EQ(d.reward, 0.0);
        EXPECT_EQ(d.penalty, 0.0);
        EXPECT_EQ(d.amortization, 0.0);
    }
    const auto again = sim::run_experiment(cfg);
    EXPECT_EQ(r.y, again.y);
}

TEST(Experiment, EssOnlyScenarioLeavesBuildingToThermostat)
{
    sim::ExperimentConfig cfg;
    cfg.days = 1;
    cfg.scenario = sim::Scenario::B;
    const auto b = sim::run_experiment(cfg);
    cfg.scenario = sim::Scenario::C;
    const auto c = sim::run_experiment(cfg);
    EXPECT_EQ(b.y, c.y);
    EXPECT_GE(b.min_soc, cfg.ess.soc_min - 1e-12);
    EXPECT_LE(b.max_soc, cfg.ess.soc_max + 1e-12);
    EXPECT_LE(b.max_unsaturated_track_error, 1e-9);
}

TEST(Experiment, WritesOutputs)
{
    const auto dir = temp_dir("experiment");
    sim::ExperimentConfig cfg;
    cfg.scenario = sim::Scenario::C;
    cfg.days = 1;
    cfg.out_dir = dir;
    cfg.actuation_stride = 225;
    sim::run_experiment(cfg);
    EXPECT_TRUE(fs::exists(dir / "ledger.csv"));
    std::ifstream act(dir / "actuation.csv");
    std::string header;
    std::getline(act, header);
    EXPECT_EQ(header, "t,u_setpoint_kw,p_h_kw,p_e_kw,alpha,track_err_kw,soc_kwh,y_c,mode");
}

// ---------------------------------------------------------------------------
// eval

TEST(Eval, NoiselessStationaryPlantIsExact)
{
    const auto plant = order3_plant(2, -1.0);
    auto data = random_run(plant, 4 * kStepsPerDay, 41);
    const auto split = make_split(data, 2, 1);
    DdpHyper h{192, 12, 12, 1e-8, 4, 0.8};
    for (auto src : {PredictorSource::fixed, PredictorSource::adaptive}) {
        const auto r = mae_eval(src, split, EvalRange::test, h);
        EXPECT_LE(r.mae, 1e-5) << to_string(src);
        EXPECT_EQ(r.step_mean.size(), 12);
        EXPECT_EQ(r.step_std.size(), 12);
    }
}

TEST(Eval, AggregationIgnoresOrder)
{
    MatrixXd e(5, 3);
    e << 1, 2, 3, 4, 5, 6, 0.5, 0.25, 0.125, 7, 8, 9, 1, 1, 1;
    Eigen::PermutationMatrix<Eigen::Dynamic> perm(5);
    perm.indices() << 3, 0, 4, 2, 1;
    const auto a = aggregate_errors(e), b = aggregate_errors(perm * e);
    EXPECT_NEAR(a.mae, b.mae, 1e-15);
    EXPECT_LE((a.step_std - b.step_std).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_THROW(aggregate_errors(MatrixXd(0, 3)), DataError);
}

TEST(Eval, RejectsBadRequests)
{
    sim::IdentificationConfig ic;
    ic.days = 8;
    const auto split = make_split(sim::make_identification_data(ic), 5, 3);
    DdpHyper h;
    h.N = 0;
    EXPECT_THROW(mae_eval(PredictorSource::fixed, split, EvalRange::validation, h), UsageError);
    DdpHyper ok;
    EXPECT_THROW(mae_eval(PredictorSource::fixed, split, EvalRange::test, ok), DataError);
}

TEST(Eval, SweepShapeAndDeterminism)
{
    sim::IdentificationConfig ic;
    ic.days = 8;
    const auto split = make_split(sim::make_identification_data(ic), 5, 2);
    SweepGrid g;
    g.e_g = {0.01};
    MaeOptions opt;
    opt.stride = 8;
    const auto rows = sensitivity_sweep(g, split, DdpHyper{}, PredictorSource::fixed, opt);
    ASSERT_EQ(rows.size(), 1u);
    const auto again = sensitivity_sweep(g, split, DdpHyper{}, PredictorSource::fixed, opt);
    EXPECT_EQ(rows[0].mae_validation, again[0].mae_validation);
    EXPECT_EQ(rows[0].mae_test, again[0].mae_test);
    g.e_g.clear();
    EXPECT_THROW(sensitivity_sweep(g, split, DdpHyper{}), UsageError);
    g.e_g = {1.0, 0.1};
    EXPECT_THROW(g.validate(), UsageError);
}

TEST(Eval, LongerDataDoesNotHurt)
{
    sim::IdentificationConfig ic;
    ic.days = 24;
    const auto split = make_split(sim::make_identification_data(ic), 10, 10);
    SweepGrid g;
    g.e_g = {0.01};
    g.T = {480, 960};
    MaeOptions opt;
    opt.stride = 4;
    const auto rows = sensitivity_sweep(g, split, DdpHyper{}, PredictorSource::fixed, opt);
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_LE(rows[1].mae_validation, 1.1 * rows[0].mae_validation);
}

// ---------------------------------------------------------------------------
// config

TEST(Config, DefaultsRoundTrip)
{
    RunConfig c;
    finalize(c);
    const json j = config_to_json(c);
    const auto back = config_from_json(j);
    EXPECT_EQ(config_to_json(back), j);
    EXPECT_EQ(back.experiment.controller.N, 12);
    EXPECT_EQ(back.experiment.planner_hyper.N, 96);
    EXPECT_EQ(back.experiment.ess.capacity, 5.0);
}

TEST(Config, OmittedKeysKeepDefaults)
{
    const auto c = config_from_json(json::parse(R"({"seed": 9, "ess": {"initial_soc": 1.0}})"));
    EXPECT_EQ(c.seed, 9u);
    EXPECT_EQ(c.experiment.seed, 9u);
    EXPECT_EQ(c.experiment.initial_soc, 1.0);
    EXPECT_EQ(c.experiment.ess.soc_max, 5.0);
    EXPECT_EQ(c.experiment.controller.building.y_min, 22.0);
}

TEST(Config, UnknownKeysAreRejected)
{
    for (const char* doc : {R"({"sede": 1})", R"({"ess": {"capcity": 4}})", R"({"eval": {"sweep": {"eg": [1]}}})"}) {
        try {
            config_from_json(json::parse(doc));
            FAIL() << doc;
        } catch (const UsageError& e) {
            EXPECT_NE(std::string(e.what()).find("unknown key"), std::string::npos);
        }
    }
}

TEST(Config, InvalidValuesAreRejected)
{
    EXPECT_THROW(config_from_json(json::parse(R"({"days": "many"})")), UsageError);
    EXPECT_THROW(config_from_json(json::parse(R"({"days": 0})")), UsageError);
    EXPECT_THROW(config_from_json(json::parse(R"({"scenario": "D"})")), UsageError);
    EXPECT_THROW(config_from_json(json::parse(R"({"bounds": {"y_min": 27}})")), UsageError);
    EXPECT_THROW(config_from_json(json::parse(R"({"eval": {"sweep": {"e_g": []}}})")), UsageError);
    EXPECT_THROW(load_config("/nonexistent/config.json"), DataError);
}

TEST(Config, BundledDefaultMatchesBuiltIn)
{
    const auto c = load_config(fs::path(DDPC_SOURCE_DIR) / "configs" / "default.json");
    RunConfig d;
    finalize(d);
    EXPECT_EQ(config_to_json(c), config_to_json(d));
}
