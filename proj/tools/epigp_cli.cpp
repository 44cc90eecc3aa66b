#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "epigp/control.hpp"
#include "epigp/csv.hpp"
#include "epigp/data.hpp"
#include "epigp/dataset.hpp"
#include "epigp/errors.hpp"
#include "epigp/learn.hpp"
#include "manifest.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace epigp::cli {
namespace {

enum ExitCode { kOk = 0, kOther = 1, kInput = 2, kTraining = 3, kInfeasible = 4 };

std::vector<std::string> g_args;

std::ifstream open_input(const fs::path& file)
{
    std::ifstream in(file);
    if (!in) {
        throw InputError("cannot open " + file.string());
    }
    return in;
}

json read_json(const fs::path& file)
{
    auto in = open_input(file);
    try {
        return json::parse(in);
    }
    catch (const json::exception& e) {
        throw FormatError(file.string() + ": " + e.what());
    }
}

std::vector<RegionDataset> load_datasets(const fs::path& file)
{
    auto in = open_input(file);
    return read_datasets(in);
}

ParamSet load_params(const fs::path& file)
{
    try {
        ParamSet p = read_json(file).get<ParamSet>();
        p.validate();
        return p;
    }
    catch (const json::exception& e) {
        throw FormatError(file.string() + ": " + e.what());
    }
}

std::vector<std::string> split_list(const std::string& s)
{
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) {
            out.push_back(item);
        }
    }
    return out;
}

fs::path with_suffix(const fs::path& base, const std::string& suffix)
{
    fs::path p = base;
    p += suffix;
    return p;
}

// ---------------------------------------------------------------- ingest

struct IngestArgs {
    std::string mobility, deaths, population, regions, from, to, out, categories, rejects;
    int max_fill_days = 7;
};

int cmd_ingest(const IngestArgs& a)
{
    Manifest manifest("ingest", g_args);
    JoinRequest req;
    req.region_ids = split_list(a.regions);
    if (req.region_ids.empty()) {
        throw InputError("--regions is empty");
    }
    req.from = Date::parse(a.from);
    req.to = Date::parse(a.to);
    req.max_fill_days = a.max_fill_days;
    if (!a.categories.empty()) {
        req.categories = split_list(a.categories);
    }
    {
        auto in = open_input(a.population);
        req.population = read_population_csv(in);
    }
    auto mob = parse_mobility_csv(fs::path(a.mobility));
    auto dth = parse_deaths_csv(fs::path(a.deaths));
    auto data = join(mob.rows, dth.rows, req);

    std::ostringstream ds;
    write_datasets(ds, data);
    write_atomic(a.out, ds.str());

    fs::path rejects = a.rejects.empty() ? with_suffix(a.out, ".rejects.csv") : fs::path(a.rejects);
    std::ostringstream rj;
    rj << "source,line,reason,text\n";
    for (const auto& r : mob.rejects) {
        rj << "mobility," << r.line << ',' << csv::quote(r.reason) << ',' << csv::quote(r.text) << '\n';
    }
    for (const auto& r : dth.rejects) {
        rj << "deaths," << r.line << ',' << csv::quote(r.reason) << ',' << csv::quote(r.text) << '\n';
    }
    write_atomic(rejects, rj.str());

    manifest.set_config({{"regions", req.region_ids},
                         {"from", a.from},
                         {"to", a.to},
                         {"categories", req.categories},
                         {"max_fill_days", req.max_fill_days}});
    manifest.add_input(a.mobility);
    manifest.add_input(a.deaths);
    manifest.add_input(a.population);
    manifest.add_output(a.out);
    manifest.add_output(rejects);
    manifest.set_result("regions", data.size());
    manifest.set_result("rejected_rows", mob.rejects.size() + dth.rejects.size());
    manifest.write(with_suffix(a.out, ".manifest.json"));
    std::cerr << "ingested " << data.size() << " regions, " << (mob.rejects.size() + dth.rejects.size())
              << " rejected rows\n";
    return kOk;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
    std::string data, config, out, report;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> workers;
};

int cmd_train(const TrainArgs& a)
{
    Manifest manifest("train", g_args);
    auto data = load_datasets(a.data);
    TrainConfig cfg;
    if (!a.config.empty()) {
        try {
            cfg = read_json(a.config).get<TrainConfig>();
        }
        catch (const json::exception& e) {
            throw FormatError(a.config + ": " + e.what());
        }
        manifest.add_input(a.config);
    }
    if (a.seed) {
        cfg.seed = *a.seed;
    }
    if (a.workers) {
        cfg.workers = *a.workers;
    }
    TrainResult result = train(data, cfg);

    write_atomic(a.out, json(result.best).dump(2) + "\n");
    std::ostringstream rep;
    write_report_csv(rep, result);
    write_atomic(a.report, rep.str());

    json cfg_json = cfg;
    cfg_json.erase("workers"); // does not affect results
    manifest.set_config(cfg_json);
    manifest.set_seed(cfg.seed);
    manifest.add_input(a.data);
    manifest.add_output(a.out);
    manifest.add_output(a.report);
    json trials = json::array();
    for (const auto& t : result.trials) {
        trials.push_back({{"trial", t.trial},
                          {"failed", t.failed},
                          {"failure", t.failure},
                          {"train_loss", t.train_loss},
                          {"test_loss", t.test_loss}});
    }
    manifest.set_result("best_trial", result.best_trial);
    manifest.set_result("trials", trials);
    manifest.write(with_suffix(a.out, ".manifest.json"));
    const auto& best = result.trials[result.best_trial];
    std::cerr << "best trial " << result.best_trial << ": train " << csv::format_real(best.train_loss) << ", test "
              << csv::format_real(best.test_loss) << '\n';
    return kOk;
}

// ---------------------------------------------------------------- predict

struct PredictArgs {
    std::string params, data, out;
    std::size_t horizon = 0;
};

int cmd_predict(const PredictArgs& a)
{
    Manifest manifest("predict", g_args);
    ParamSet params = load_params(a.params);
    auto data = load_datasets(a.data);
    std::ostringstream out;
    out << "region,t,date,incident_deaths,cumulative_deaths\n";
    for (const auto& d : data) {
        Trajectory traj = predict(params, d, a.horizon);
        std::optional<Date> first;
        if (!d.dates.empty()) {
            first = Date::parse(d.dates.front());
        }
        for (std::size_t t = 0; t <= a.horizon; ++t) {
            const double cum = traj.states[t].D;
            const double inc = t == 0 ? 0.0 : cum - traj.states[t - 1].D;
            out << csv::quote(d.region_id) << ',' << t << ',';
            if (first) {
                out << (*first + static_cast<int>(t)).to_string();
            }
            out << ',' << csv::format_real(inc) << ',' << csv::format_real(cum) << '\n';
        }
    }
    write_atomic(a.out, out.str());
    manifest.set_config({{"horizon", a.horizon}});
    manifest.add_input(a.params);
    manifest.add_input(a.data);
    manifest.add_output(a.out);
    manifest.write(with_suffix(a.out, ".manifest.json"));
    return kOk;
}

// ---------------------------------------------------------------- control

struct ControlArgs {
    std::string mode; // min-cost | min-deaths
    std::string params, region, config, out, data;
    std::optional<double> budget;
    bool budget_from_min_cost = false;
    std::optional<std::size_t> start_day;
};

void write_cost_csv(std::ostream& out, const ControlSolution& sol)
{
    out << "t,cost\n";
    for (std::size_t t = 0; t < sol.per_day_cost.size(); ++t) {
        out << t << ',' << csv::format_real(sol.per_day_cost[t]) << '\n';
    }
}

json solution_json(const ControlSolution& sol)
{
    return {{"objective", sol.objective_value},
            {"J", sol.deaths_objective},
            {"total_cost", sol.total_cost},
            {"cumulative_deaths_T", sol.trajectory.states.back().D},
            {"peak_H", std::max_element(sol.trajectory.states.begin(), sol.trajectory.states.end(),
                                        [](const EpiState& x, const EpiState& y) { return x.H < y.H; })
                           ->H},
            {"iterations", sol.iterations},
            {"kkt_residual", sol.kkt_residual}};
}

int cmd_control(const ControlArgs& a)
{
    Manifest manifest("control " + a.mode, g_args);
    ParamSet params = load_params(a.params);
    const RegionParams& rp = params.region(a.region);
    json cfg_json = read_json(a.config);
    ControlConfig cfg;
    try {
        cfg = cfg_json.get<ControlConfig>();
    }
    catch (const json::exception& e) {
        throw FormatError(a.config + ": " + e.what());
    }
    const std::size_t K = rp.mobility_map.num_categories();
    if (cfg.c.empty()) {
        cfg.c.assign(K, 1.0);
    }
    cfg.global = params.global;
    cfg.mobility_map = rp.mobility_map;

    // Initial state: day `start` of the fitted model driven by observed mobility.
    std::optional<RegionDataset> region_data;
    std::size_t start = 0;
    if (!a.data.empty()) {
        for (auto& d : load_datasets(a.data)) {
            if (d.region_id == a.region) {
                region_data = std::move(d);
            }
        }
        if (!region_data) {
            throw InputError("region '" + a.region + "' not found in " + a.data);
        }
        const std::size_t days = region_data->days();
        start = a.start_day ? *a.start_day : (days > cfg.T ? days - 1 - cfg.T : 0);
        if (start >= days) {
            throw InputError("start day " + std::to_string(start) + " is beyond the data (" + std::to_string(days) +
                             " days)");
        }
        manifest.add_input(a.data);
    }
    else if (a.start_day && *a.start_day != 0) {
        throw InputError("--start-day needs --data");
    }
    cfg.init = rp.init;
    if (region_data && start > 0) {
        Trajectory hist = predict(params, *region_data, start);
        const EpiState& s = hist.states.back();
        cfg.init = {rp.init.S0, s.E, s.I, s.A, s.H, s.R, s.D};
    }
    if (cfg.u_lower.empty() || cfg.u_upper.empty()) {
        if (!region_data) {
            throw InputError("u_lower/u_upper missing from the config and no --data to derive them from");
        }
        const std::size_t hi = start > 0 ? start : region_data->days() - 1;
        std::vector<double> lo(K, std::numeric_limits<double>::infinity());
        std::vector<double> up(K, 0.0);
        for (std::size_t t = 0; t <= hi; ++t) {
            for (std::size_t k = 0; k < K; ++k) {
                lo[k] = std::min(lo[k], region_data->mobility[t][k]);
                up[k] = std::max(up[k], region_data->mobility[t][k]);
            }
        }
        if (cfg.u_lower.empty()) {
            cfg.u_lower = lo;
        }
        if (cfg.u_upper.empty()) {
            cfg.u_upper = up;
        }
    }

    json result;
    ControlSolution sol;
    if (a.mode == "min-cost") {
        MinimalBudget mb = minimal_budget(cfg);
        sol = std::move(mb.solution);
        result = solution_json(sol);
        result["B_star"] = mb.B_star;
    }
    else {
        if (a.budget_from_min_cost) {
            MinimalBudget mb = minimal_budget(cfg);
            cfg.budget = mb.B_star;
            result["B_star"] = mb.B_star;
        }
        else if (a.budget) {
            cfg.budget = *a.budget;
        }
        if (!cfg.budget) {
            throw InputError("min-deaths needs --budget, --budget-from-min-cost or a budget in the config");
        }
        sol = min_deaths(cfg);
        result.update(solution_json(sol));
        result["budget"] = *cfg.budget;
    }

    const fs::path prefix = a.out;
    const fs::path schedule = with_suffix(prefix, "_schedule.csv");
    const fs::path cost = with_suffix(prefix, "_cost.csv");
    const fs::path trajectory = with_suffix(prefix, "_trajectory.csv");
    std::ostringstream s1, s2, s3;
    write_schedule_csv(s1, sol, cfg);
    write_cost_csv(s2, sol);
    write_trajectory_csv(s3, sol.trajectory);
    write_atomic(schedule, s1.str());
    write_atomic(cost, s2.str());
    write_atomic(trajectory, s3.str());
    manifest.add_output(schedule);
    manifest.add_output(cost);
    manifest.add_output(trajectory);

    if (region_data) {
        // Same params and window, observed mobility (held at the last day past the data).
        std::vector<MobilityVector> observed;
        for (std::size_t t = 0; t < cfg.T; ++t) {
            observed.push_back(region_data->mobility[std::min(start + t, region_data->days() - 1)]);
        }
        Trajectory base = simulate(cfg, observed);
        const fs::path baseline = with_suffix(prefix, "_baseline.csv");
        std::ostringstream s4;
        write_trajectory_csv(s4, base);
        write_atomic(baseline, s4.str());
        manifest.add_output(baseline);
        result["baseline_J"] = discounted_deaths(base, cfg.gamma_D);
        result["baseline_cumulative_deaths_T"] = base.states.back().D;
    }

    json snapshot = cfg;
    snapshot["region"] = a.region;
    snapshot["start_day"] = start;
    snapshot["init"] = cfg.init;
    manifest.set_config(snapshot);
    manifest.add_input(a.params);
    manifest.add_input(a.config);
    manifest.set_result("solution", result);
    manifest.write(with_suffix(prefix, "_manifest.json"));
    std::cerr << a.mode << ": " << result.dump() << '\n';
    return kOk;
}

// ---------------------------------------------------------------- synth

struct SynthArgs {
    std::size_t regions = 3;
    std::size_t categories = 4;
    std::size_t days = 82;
    std::uint64_t seed = 1;
    double noise = 0.0;
    std::string out_dir;
};

int cmd_synth(const SynthArgs& a)
{
    Manifest manifest("synth", g_args);
    SynthSpec spec = default_synth_spec(a.regions, a.categories, a.days, a.seed);
    spec.noise = a.noise;
    SynthResult res = synth_gen(spec, a.seed);
    const fs::path dir = a.out_dir;
    fs::create_directories(dir);

    std::ostringstream mob, dth, pop, ds, truth;
    write_mobility_csv(mob, to_mobility_rows(res.datasets));
    write_deaths_csv(dth, to_deaths_rows(res.datasets));
    pop << "fips,population\n";
    for (const auto& d : res.datasets) {
        pop << d.region_id << ',' << csv::format_real(d.population) << '\n';
    }
    write_datasets(ds, res.datasets);
    truth << json(spec.true_params()).dump(2) << '\n';

    const std::vector<std::pair<fs::path, std::string>> outputs{{dir / "mobility.csv", mob.str()},
                                                                 {dir / "deaths.csv", dth.str()},
                                                                 {dir / "population.csv", pop.str()},
                                                                 {dir / "dataset.json", ds.str()},
                                                                 {dir / "truth.json", truth.str()}};
    for (const auto& [path, text] : outputs) {
        write_atomic(path, text);
        manifest.add_output(path);
    }
    manifest.set_config(
        {{"regions", a.regions}, {"categories", a.categories}, {"days", a.days}, {"noise", a.noise}});
    manifest.set_seed(a.seed);
    manifest.write(dir / "synth_manifest.json");
    return kOk;
}

template <class F>
int guarded(F&& f)
{
    try {
        return f();
    }
    catch (const InfeasibleError& e) {
        std::cerr << "infeasible: " << e.what() << " [constraint: " << e.constraint() << "]\n";
        return kInfeasible;
    }
    catch (const TrainingError& e) {
        std::cerr << "training failed: " << e.what() << '\n';
        return kTraining;
    }
    catch (const NonConvergenceError& e) {
        std::cerr << "solver did not converge: " << e.what() << '\n';
        return kOther;
    }
    catch (const Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kInput;
    }
    catch (const json::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kInput;
    }
    catch (const fs::filesystem_error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kInput;
    }
    catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << '\n';
        return kOther;
    }
}

} // namespace
} // namespace epigp::cli

int main(int argc, char** argv)
{
    using namespace epigp::cli;
    g_args.assign(argv + 1, argv + argc);

    CLI::App app{"Mobility-driven epidemic fitting and control via geometric programming"};
    app.require_subcommand(1);

    IngestArgs ingest;
    auto* ci = app.add_subcommand("ingest", "Join mobility and death CSVs into a dataset JSON");
    ci->add_option("--mobility", ingest.mobility, "Community mobility report CSV")->required();
    ci->add_option("--deaths", ingest.deaths, "County cumulative deaths CSV")->required();
    ci->add_option("--population", ingest.population, "fips,population CSV")->required();
    ci->add_option("--regions", ingest.regions, "Comma-separated region ids (FIPS)")->required();
    ci->add_option("--from", ingest.from, "First date, YYYY-MM-DD")->required();
    ci->add_option("--to", ingest.to, "Last date (inclusive), YYYY-MM-DD")->required();
    ci->add_option("--out", ingest.out, "Output dataset JSON")->required();
    ci->add_option("--categories", ingest.categories, "Comma-separated mobility categories");
    ci->add_option("--rejects", ingest.rejects, "Rejected-rows CSV (default: OUT.rejects.csv)");
    ci->add_option("--max-fill-days", ingest.max_fill_days, "Longest mobility gap filled forward");

    TrainArgs tr;
    auto* ct = app.add_subcommand("train", "Fit shared and per-region parameters");
    ct->add_option("--data", tr.data, "Dataset JSON")->required();
    ct->add_option("--config", tr.config, "Training config JSON");
    ct->add_option("--out", tr.out, "Output ParamSet JSON")->required();
    ct->add_option("--report", tr.report, "Per-trial loss report CSV")->required();
    ct->add_option("--seed", tr.seed, "Overrides rng_seed");
    ct->add_option("--workers", tr.workers, "Parallel trials (0: all cores)");

    PredictArgs pr;
    auto* cp = app.add_subcommand("predict", "Roll fitted models forward");
    cp->add_option("--params", pr.params, "ParamSet JSON")->required();
    cp->add_option("--data", pr.data, "Dataset JSON")->required();
    cp->add_option("--horizon", pr.horizon, "Days to predict")->required();
    cp->add_option("--out", pr.out, "Output CSV")->required();

    ControlArgs co;
    auto* cc = app.add_subcommand("control", "Optimal mobility restrictions for one region");
    cc->add_option("mode", co.mode, "min-cost or min-deaths")
        ->required()
        ->check(CLI::IsMember({"min-cost", "min-deaths"}));
    cc->add_option("--params", co.params, "ParamSet JSON")->required();
    cc->add_option("--region", co.region, "Region id")->required();
    cc->add_option("--config", co.config, "Control config JSON")->required();
    cc->add_option("--out", co.out, "Output prefix")->required();
    cc->add_option("--data", co.data, "Dataset JSON (initial state, default bounds, baseline)");
    cc->add_option("--start-day", co.start_day, "First controlled day index in the data");
    auto* budget = cc->add_option("--budget", co.budget, "Economic budget B");
    cc->add_flag("--budget-from-min-cost", co.budget_from_min_cost, "Solve min-cost first and use B = B*")
        ->excludes(budget);

    SynthArgs sy;
    auto* cs = app.add_subcommand("synth", "Generate synthetic regions with known parameters");
    cs->add_option("--regions", sy.regions, "Number of regions");
    cs->add_option("--categories", sy.categories, "Mobility categories (1-6)");
    cs->add_option("--days", sy.days, "Days per region, including day 0");
    cs->add_option("--seed", sy.seed, "RNG seed");
    cs->add_option("--noise", sy.noise, "Multiplicative noise on deaths");
    cs->add_option("--out-dir", sy.out_dir, "Output directory")->required();

    try {
        app.parse(argc, argv);
    }
    catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : kInput;
    }

    if (*ci) {
        return guarded([&] { return cmd_ingest(ingest); });
    }
    if (*ct) {
        return guarded([&] { return cmd_train(tr); });
    }
    if (*cp) {
        return guarded([&] { return cmd_predict(pr); });
    }
    if (*cc) {
        return guarded([&] { return cmd_control(co); });
    }
    return guarded([&] { return cmd_synth(sy); });
}
