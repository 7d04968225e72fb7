// Command-line front end: predict, sweep, plan, simulate, report.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>

#include <ddpc/config.hpp>

namespace fs = std::filesystem;
using namespace ddpc;

namespace {

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out; ///< empty: "out", or the run directory for report
};

RunConfig load(const Common& c)
{
    RunConfig cfg;
    if (!c.config.empty()) cfg = load_config(c.config);
    if (c.seed) cfg.seed = *c.seed;
    finalize(cfg);
    validate(cfg);
    return cfg;
}

fs::path prepare_out(const Common& c)
{
    fs::path out(c.out.empty() ? "out" : c.out);
    std::error_code ec;
    fs::create_directories(out, ec);
    if (ec) throw DataError("cannot create output directory " + out.string() + ": " + ec.message());
    return out;
}

std::ofstream open_out(const fs::path& p)
{
    std::ofstream f(p);
    if (!f) throw DataError("cannot write " + p.string());
    return f;
}

/// Continuous single-mode record for the prediction studies: the longest
/// segment of the data file, or the synthetic identification run.
OperationalSegment study_data(const RunConfig& cfg, const std::string& path)
{
    if (path.empty()) {
        log().info("no data file; generating {} synthetic days", cfg.eval.synthetic.days);
        return sim::make_identification_data(cfg.eval.synthetic);
    }
    if (!fs::exists(path)) throw DataError("data file not found: " + path);
    const auto ds = read_dataset(path);
    if (ds.segments.empty()) throw DataError(path + ": no samples");
    const auto it = std::max_element(ds.segments.begin(), ds.segments.end(),
                                     [](const auto& a, const auto& b) { return a.length() < b.length(); });
    log().info("{}: using segment at {} with {} samples", path, it->start_index, it->length());
    return *it;
}

int cmd_predict(const Common& common, const std::string& data_arg, bool adaptive)
{
    const auto cfg = load(common);
    const auto out = prepare_out(common);
    const std::string path = data_arg.empty() ? cfg.data_path : data_arg;
    const auto split = make_split(study_data(cfg, path), cfg.eval.build_days, cfg.eval.validation_days);
    const auto source = adaptive || cfg.eval.adaptive ? PredictorSource::adaptive : PredictorSource::fixed;
    MaeOptions opt{cfg.eval.stride, cfg.eval.update_period, true};
    const auto r = mae_eval(source, split, EvalRange::test, cfg.eval.hyper, opt);

    auto f = open_out(out / "predictions.csv");
    f << "t,start,step,y_pred,y_true,abs_err\n";
    const auto& d = split.data;
    for (std::size_t w = 0; w < r.starts.size(); ++w)
        for (Index k = 0; k < r.predictions.cols(); ++k) {
            const Index t = r.starts[w] + k;
            const double yp = r.predictions(static_cast<Index>(w), k), yt = d.y(0, t);
            f << fmt::format("{},{},{},{:.9g},{:.9g},{:.9g}\n", d.start_index + t, d.start_index + r.starts[w], k + 1,
                             yp, yt, std::abs(yp - yt));
        }
    auto prof = open_out(out / "mae_profile.csv");
    prof << "step,mean_abs_err,std_abs_err\n";
    for (Index k = 0; k < r.step_mean.size(); ++k)
        prof << fmt::format("{},{:.9g},{:.9g}\n", k + 1, r.step_mean[k], r.step_std[k]);
    if (source == PredictorSource::adaptive) {
        auto u = open_out(out / "updates.csv");
        u << "t,accepted,reason\n";
        for (const auto& e : r.updates) {
            u << fmt::format("{},{},{}\n", d.start_index + e.at, e.accepted ? 1 : 0, e.reason);
            std::cout << fmt::format("update at {}: {}{}\n", d.start_index + e.at, e.accepted ? "accepted" : "rejected",
                                     e.reason.empty() ? "" : " (" + e.reason + ")");
        }
    }
    std::cout << fmt::format("{} predictor, N={}, {} windows: MAE {:.6f}\n", to_string(source), cfg.eval.hyper.N,
                             r.windows, r.mae);
    return 0;
}

int cmd_sweep(const Common& common, bool assert_plateau)
{
    const auto cfg = load(common);
    const auto out = prepare_out(common);
    const auto split = make_split(study_data(cfg, cfg.data_path), cfg.eval.build_days, cfg.eval.validation_days);
    const auto& grid = cfg.eval.sweep;
    const auto rows = sensitivity_sweep(grid, split, cfg.eval.hyper, PredictorSource::fixed,
                                        {cfg.eval.stride, cfg.eval.update_period, false});
    write_sweep_csv(out / "sweep.csv", rows);
    for (int N : grid.N)
        for (int ti : grid.t_init)
            write_heatmap_csv(out / fmt::format("heatmap_tinit{}_N{}.csv", ti, N), rows, grid, ti, N);
    std::cout << fmt::format("{} grid points written to {}\n", rows.size(), (out / "sweep.csv").string());

    if (assert_plateau) {
        bool ok = true;
        for (int N : grid.N)
            for (int T : grid.T)
                for (int ti : grid.t_init) {
                    const double ratio = plateau_ratio(rows, T, ti, N, 1e-3, 10.0);
                    std::cout << fmt::format("plateau T={} t_init={} N={}: max/min MAE {:.4f}\n", T, ti, N, ratio);
                    ok = ok && ratio <= 1.2;
                }
        if (!ok) {
            std::cerr << "error: plateau assertion failed (ratio above 1.2)\n";
            return static_cast<int>(ErrorKind::data);
        }
    }
    return 0;
}

int cmd_plan(const Common& common)
{
    auto cfg = load(common);
    const auto out = prepare_out(common);
    auto x = cfg.experiment;
    if (x.scenario == sim::Scenario::C) throw UsageError("scenario C does not bid; choose A or B");
    x.plan_only = true;
    x.days = 1;
    const auto r = sim::run_experiment(x);
    if (r.plans.empty()) throw SolverError("no plan produced");
    write_plan(out / "plan.csv", r.plans.front());
    std::cout << fmt::format("scenario {}: gamma {:.4f} kW, plan written to {}\n", sim::to_string(x.scenario),
                             r.plans.front().gamma, (out / "plan.csv").string());
    return 0;
}

int cmd_simulate(const Common& common, const std::vector<std::string>& scenarios)
{
    const auto cfg = load(common);
    const auto out = prepare_out(common);
    std::vector<sim::Scenario> list;
    if (scenarios.empty())
        list.push_back(cfg.experiment.scenario);
    else
        for (const auto& s : scenarios) list.push_back(sim::scenario_from_string(s));

    json manifest;
    manifest["config"] = config_to_json(cfg);
    manifest["seed"] = cfg.seed;
    const std::string cfg_text = manifest["config"].dump();
    Fnv1a fp;
    fp.update(cfg_text.data(), cfg_text.size());
    manifest["fingerprint"] = fp.hex();
    manifest["runs"] = json::array();

    auto summary = open_out(out / "summary.csv");
    summary << "scenario,days,mean_total_chf,mean_ppd,min_soc_kwh,max_soc_kwh,updates_accepted,updates_rejected,"
               "wall_seconds\n";
    std::cout << "scenario  mean total [CHF/day]  mean PPD [%]  wall [s]\n";
    for (auto sc : list) {
        auto x = cfg.experiment;
        x.scenario = sc;
        x.out_dir = out / std::string(sim::to_string(sc));
        const auto r = sim::run_experiment(x);
        summary << fmt::format("{},{},{:.9g},{:.9g},{:.9g},{:.9g},{},{},{:.3f}\n", sim::to_string(sc), r.days.size(),
                               r.mean_total(), r.mean_ppd(), r.min_soc, r.max_soc, r.updates_accepted,
                               r.updates_rejected, r.wall_seconds);
        std::cout << fmt::format("{:<9} {:>20.4f}  {:>12.3f}  {:>8.1f}\n", sim::to_string(sc), r.mean_total(),
                                 r.mean_ppd(), r.wall_seconds);
        manifest["runs"].push_back({{"scenario", std::string(sim::to_string(sc))},
                                    {"dir", std::string(sim::to_string(sc))},
                                    {"mean_total_chf", r.mean_total()},
                                    {"mean_ppd", r.mean_ppd()}});
    }
    open_out(out / "manifest.json") << manifest.dump(2) << '\n';
    return 0;
}

struct LedgerRow {
    int day = 0;
    double energy_cost = 0, reward = 0, penalty = 0, amortization = 0, total = 0, gamma = 0, mean_ppd = 0;
};

std::vector<LedgerRow> read_ledger(const fs::path& path)
{
    std::ifstream f(path);
    if (!f) throw DataError("cannot open " + path.string());
    std::string line;
    std::getline(f, line);
    const auto header = ddpc::detail::split_csv(line);
    std::map<std::string, std::size_t> col;
    for (std::size_t i = 0; i < header.size(); ++i) col[std::string(header[i])] = i;
    for (const char* k : {"day", "energy_cost", "reward", "penalty", "amortization", "total", "gamma_kw", "mean_ppd"})
        if (!col.count(k)) throw DataError(path.string() + ": missing column " + k);
    std::vector<LedgerRow> rows;
    for (int ln = 2; std::getline(f, line); ++ln) {
        if (line.empty()) continue;
        const auto v = ddpc::detail::split_csv(line);
        auto num = [&](const char* k) {
            double x = 0;
            if (col[k] >= v.size() || !ddpc::detail::parse_double(v[col[k]], x))
                throw DataError(path.string() + ": line " + std::to_string(ln) + ": bad " + k);
            return x;
        };
        rows.push_back({static_cast<int>(num("day")), num("energy_cost"), num("reward"), num("penalty"),
                        num("amortization"), num("total"), num("gamma_kw"), num("mean_ppd")});
    }
    return rows;
}

int cmd_report(const Common& common, const std::string& run_dir)
{
    if (!fs::is_directory(run_dir)) throw DataError("run directory not found: " + run_dir);
    std::map<std::string, std::vector<LedgerRow>> runs;
    if (fs::exists(fs::path(run_dir) / "ledger.csv")) runs["run"] = read_ledger(fs::path(run_dir) / "ledger.csv");
    for (const auto& e : fs::directory_iterator(run_dir))
        if (e.is_directory() && fs::exists(e.path() / "ledger.csv"))
            runs[e.path().filename().string()] = read_ledger(e.path() / "ledger.csv");
    if (runs.empty()) throw DataError(run_dir + ": no ledger.csv found");

    const fs::path out = common.out.empty() ? fs::path(run_dir) : prepare_out(common);
    auto stack = open_out(out / "cost_stack.csv");
    stack << "run,day,energy_cost,bid_reward,penalty,amortization,total\n";
    auto scatter = open_out(out / "ppd_cost.csv");
    scatter << "run,day,mean_ppd,total\n";
    auto md = open_out(out / "report.md");
    md << "# Run report\n\n| run | days | mean energy cost | mean bid reward | mean penalty | mean amortization | "
          "mean total | mean PPD [%] |\n|---|---|---|---|---|---|---|---|\n";
    for (const auto& [name, rows] : runs) {
        LedgerRow m;
        for (const auto& r : rows) {
            stack << fmt::format("{},{},{:.9g},{:.9g},{:.9g},{:.9g},{:.9g}\n", name, r.day, r.energy_cost, -r.reward,
                                 r.penalty, r.amortization, r.total);
            scatter << fmt::format("{},{},{:.9g},{:.9g}\n", name, r.day, r.mean_ppd, r.total);
            m.energy_cost += r.energy_cost;
            m.reward += r.reward;
            m.penalty += r.penalty;
            m.amortization += r.amortization;
            m.total += r.total;
            m.mean_ppd += r.mean_ppd;
        }
        const double n = rows.empty() ? 1.0 : static_cast<double>(rows.size());
        md << fmt::format("| {} | {} | {:.3f} | {:.3f} | {:.3f} | {:.3f} | {:.3f} | {:.2f} |\n", name, rows.size(),
                          m.energy_cost / n, m.reward / n, m.penalty / n, m.amortization / n, m.total / n,
                          m.mean_ppd / n);
    }
    md << "\nAll costs in CHF per day. Plot data: `cost_stack.csv` (daily cost components, the bid reward "
          "entered as a negative cost) and `ppd_cost.csv` (daily mean PPD against total cost).\n";
    std::cout << fmt::format("report written to {}\n", (out / "report.md").string());
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Data-driven predictive control of a building with a battery in the secondary frequency market"};
    app.require_subcommand(1);
    Common common;
    app.add_option("--config", common.config, "JSON run configuration")->check(CLI::ExistingFile);
    app.add_option("--seed", common.seed, "root seed (overrides the config)");
    app.add_option("--out", common.out, "output directory");

    auto* predict = app.add_subcommand("predict", "rolling multi-step prediction on a data file");
    std::string data_path;
    bool adaptive = false;
    predict->add_option("data", data_path, "CSV with header t,u,w1,w2,y,mode (synthetic data when omitted)");
    predict->add_flag("--adaptive", adaptive, "refresh the Hankel data daily");

    auto* sweep = app.add_subcommand("sweep", "hyperparameter sensitivity sweep");
    bool assert_plateau = false;
    sweep->add_flag("--assert-plateau", assert_plateau, "fail unless max/min MAE over e_g in [1e-3, 10] is at most 1.2");

    auto* plan = app.add_subcommand("plan", "day-ahead plan for the first simulated day");

    auto* simulate = app.add_subcommand("simulate", "closed-loop simulation");
    std::vector<std::string> scenarios;
    simulate->add_option("--scenario", scenarios, "scenario(s) to run: A, B, C (default: from config)");

    auto* report = app.add_subcommand("report", "markdown report and plot data from a simulate run");
    std::string run_dir;
    report->add_option("run_dir", run_dir, "output directory of a simulate run")->required();

    for (auto* sub : {predict, sweep, plan, simulate, report}) {
        sub->add_option("--config", common.config, "JSON run configuration")->check(CLI::ExistingFile);
        sub->add_option("--seed", common.seed, "root seed (overrides the config)");
        sub->add_option("--out", common.out, "output directory");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : static_cast<int>(ErrorKind::usage);
    }

    try {
        if (*predict) return cmd_predict(common, data_path, adaptive);
        if (*sweep) return cmd_sweep(common, assert_plateau);
        if (*plan) return cmd_plan(common);
        if (*simulate) return cmd_simulate(common, scenarios);
        if (*report) return cmd_report(common, run_dir);
    } catch (const ddpc::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return static_cast<int>(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return static_cast<int>(ErrorKind::solver);
    }
    return static_cast<int>(ErrorKind::usage);
}
