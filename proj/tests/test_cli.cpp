#include <doctest.h>

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "epigp/dataset.hpp"
#include "support.hpp"

using nlohmann::json;
using testing::q;
using testing::run;
using testing::slurp;
using testing::spit;
using testing::TempDir;

namespace {

const std::filesystem::path kFix = EPIGP_FIXTURES;
const std::filesystem::path kSynth = kFix / "synth_k2";
const std::string kCli = EPIGP_CLI;

std::string ingest_cmd(const std::filesystem::path& out, const std::string& regions = "99001,99002,99003",
                       const std::string& from = "2020-07-01", const std::string& to = "2020-09-20")
{
    return kCli + " ingest --mobility " + q(kSynth / "mobility.csv") + " --deaths " + q(kSynth / "deaths.csv") +
           " --population " + q(kSynth / "population.csv") + " --regions " + regions + " --from " + from +
           " --to " + to + " --categories retail_and_recreation,workplaces --out " + q(out);
}

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& p)
{
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(slurp(p));
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            f.push_back(cell);
        }
        if (!line.empty() && line.back() == ',') {
            f.emplace_back();
        }
        rows.push_back(f);
    }
    return rows;
}

} // namespace

TEST_CASE("ingest writes dataset, rejects and manifest")
{
    TempDir dir("ingest");
    auto r = run(ingest_cmd(dir / "data.json"));
    REQUIRE_MESSAGE(r.exit_code == 0, r.output);
    std::ifstream in(dir / "data.json");
    auto ds = epigp::read_datasets(in);
    REQUIRE(ds.size() == 3);
    CHECK(ds[0].days() == 82);
    CHECK(std::filesystem::exists(dir / "data.json.rejects.csv"));
    json m = json::parse(slurp(dir / "data.json.manifest.json"));
    CHECK(m["command"] == "ingest");
    CHECK(m["inputs"].size() == 3);
    CHECK(m["outputs"].size() == 2);
    for (const auto& [path, entry] : m["inputs"].items()) {
        CHECK(entry["sha256"].get<std::string>().size() == 64);
    }
    CHECK(m.contains("version"));
    CHECK(m["wall_clock"].contains("elapsed_seconds"));
}

TEST_CASE("ingest failures exit with code 2")
{
    TempDir dir("ingest_bad");
    auto r = run(ingest_cmd(dir / "data.json", "99001,12345"));
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("12345") != std::string::npos);
    CHECK_FALSE(std::filesystem::exists(dir / "data.json"));

    r = run(ingest_cmd(dir / "data.json", "99001", "2020-09-20", "2020-07-01"));
    CHECK(r.exit_code == 2);
    r = run(kCli + " ingest --mobility " + q(kFix / "csv" / "empty.csv") + " --deaths " + q(kSynth / "deaths.csv") +
            " --population " + q(kSynth / "population.csv") + " --regions 99001 --from 2020-07-01 --to 2020-07-02" +
            " --out " + q(dir / "x.json"));
    CHECK(r.exit_code == 2);
    r = run(kCli + " ingest --deaths x");
    CHECK(r.exit_code == 2);
}

TEST_CASE("train with zero epochs writes the initialization; reruns are identical")
{
    TempDir dir("train");
    spit(dir / "cfg.json", R"({"epochs": 0, "trials": 2, "rng_seed": 4})");
    const std::string cmd = kCli + " train --data " + q(kSynth / "dataset.json") + " --config " + q(dir / "cfg.json");
    auto a = run(cmd + " --out " + q(dir / "a.json") + " --report " + q(dir / "a.csv"));
    REQUIRE_MESSAGE(a.exit_code == 0, a.output);
    auto report = read_csv(dir / "a.csv");
    CHECK(report.size() == 3); // header + epoch 0 for both trials
    CHECK(report[1][1] == "0");

    auto b = run(cmd + " --out " + q(dir / "b.json") + " --report " + q(dir / "b.csv") + " --workers 1");
    REQUIRE(b.exit_code == 0);
    CHECK(slurp(dir / "a.json") == slurp(dir / "b.json"));
    CHECK(slurp(dir / "a.csv") == slurp(dir / "b.csv"));

    auto c = run(cmd + " --out " + q(dir / "c.json") + " --report " + q(dir / "c.csv") + " --seed 5");
    REQUIRE(c.exit_code == 0);
    CHECK(slurp(dir / "a.json") != slurp(dir / "c.json"));
    json m = json::parse(slurp(dir / "c.json.manifest.json"));
    CHECK(m["seed"] == 5);
}

TEST_CASE("train failure exits with code 3")
{
    TempDir dir("train_fail");
    spit(dir / "cfg.json", R"({"epochs": 3, "trials": 2, "learning_rate": 1e12})");
    auto r = run(kCli + " train --data " + q(kSynth / "dataset.json") + " --config " + q(dir / "cfg.json") +
                 " --out " + q(dir / "p.json") + " --report " + q(dir / "r.csv"));
    CHECK(r.exit_code == 3);
}

TEST_CASE("predict")
{
    TempDir dir("predict");
    auto r = run(kCli + " predict --params " + q(kSynth / "truth.json") + " --data " + q(kSynth / "dataset.json") +
                 " --horizon 0 --out " + q(dir / "h0.csv"));
    REQUIRE_MESSAGE(r.exit_code == 0, r.output);
    auto rows = read_csv(dir / "h0.csv");
    CHECK(rows[0] == std::vector<std::string>{"region", "t", "date", "incident_deaths", "cumulative_deaths"});
    CHECK(rows.size() == 4); // one initial row per region

    r = run(kCli + " predict --params " + q(kSynth / "truth.json") + " --data " + q(kSynth / "dataset.json") +
            " --horizon 81 --out " + q(dir / "full.csv"));
    REQUIRE(r.exit_code == 0);
    std::ifstream in(kSynth / "dataset.json");
    auto ds = epigp::read_datasets(in);
    rows = read_csv(dir / "full.csv");
    REQUIRE(rows.size() == 1 + 3 * 82);
    double prev = 0.0;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const auto& row = rows[i];
        const std::size_t region = (i - 1) / 82, t = std::stoul(row[1]);
        const double inc = std::stod(row[3]), cum = std::stod(row[4]);
        CHECK(row[0] == ds[region].region_id);
        CHECK(row[2] == ds[region].dates[t]);
        // The fixture stores deaths exactly as generated.
        CHECK(testing::rel_err(cum, ds[region].deaths[t]) <= 1e-12);
        if (t == 0) {
            CHECK(inc == 0.0);
        }
        else {
            CHECK(std::abs(inc - (cum - prev)) <= 1e-9 * cum);
        }
        prev = cum;
    }

    spit(dir / "other.json", R"({"global": {"rho_EI": 0.2, "rho_EA": 0.2, "rho_IR": 0.1, "rho_IH": 0.05,
        "rho_AR": 0.1, "rho_HR": 0.1, "alpha_D": 0.2}, "regions": {}})");
    r = run(kCli + " predict --params " + q(dir / "other.json") + " --data " + q(kSynth / "dataset.json") +
            " --horizon 5 --out " + q(dir / "x.csv"));
    CHECK(r.exit_code == 2);
}

TEST_CASE("control: non-binding cap costs nothing")
{
    TempDir dir("control_free");
    auto r = run(kCli + " control min-cost --params " + q(kSynth / "truth.json") + " --region 99002 --config " +
                 q(kFix / "control_config.json") + " --data " + q(kSynth / "dataset.json") + " --out " +
                 q(dir / "mc"));
    REQUIRE_MESSAGE(r.exit_code == 0, r.output);
    json m = json::parse(slurp(dir / "mc_manifest.json"));
    CHECK(m["result"]["solution"]["B_star"].get<double>() <= 1e-6);
    const auto upper = m["config"]["u_upper"].get<std::vector<double>>();
    auto rows = read_csv(dir / "mc_schedule.csv");
    REQUIRE(rows.size() == 1 + 21 * 2);
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const std::size_t k = rows[i][1] == "retail_and_recreation" ? 0 : 1;
        CHECK(std::stod(rows[i][2]) == doctest::Approx(upper[k]).epsilon(1e-6));
    }
    for (const char* f : {"mc_cost.csv", "mc_trajectory.csv", "mc_baseline.csv"}) {
        CHECK(std::filesystem::exists(dir / f));
    }
}

TEST_CASE("control: min-deaths beats the observed-mobility baseline")
{
    TempDir dir("control_md");
    auto r = run(kCli + " control min-deaths --params " + q(kSynth / "truth.json") + " --region 99001 --config " +
                 q(kFix / "control_config.json") + " --data " + q(kSynth / "dataset.json") +
                 " --budget 50 --out " + q(dir / "md"));
    REQUIRE_MESSAGE(r.exit_code == 0, r.output);
    json s = json::parse(slurp(dir / "md_manifest.json"))["result"]["solution"];
    CHECK(s["cumulative_deaths_T"].get<double>() < s["baseline_cumulative_deaths_T"].get<double>());
    CHECK(s["J"].get<double>() < s["baseline_J"].get<double>());
    CHECK(s["kkt_residual"].get<double>() <= 1e-8);
    auto traj = read_csv(dir / "md_trajectory.csv");
    CHECK(traj[0] == std::vector<std::string>{"t", "E", "I", "A", "H", "R", "D", "beta"});
    CHECK(traj.size() == 23);
    auto cost = read_csv(dir / "md_cost.csv");
    CHECK(cost[0] == std::vector<std::string>{"t", "cost"});
}

TEST_CASE("control: budget from min-cost and infeasibility")
{
    TempDir dir("control_chain");
    spit(dir / "cap.json", R"({"T": 14, "week_length": 7, "tau_H": 1.0, "gamma_D": 0.99})");
    auto r = run(kCli + " control min-cost --params " + q(kSynth / "truth.json") + " --region 99001 --config " +
                 q(dir / "cap.json") + " --data " + q(kSynth / "dataset.json") + " --out " + q(dir / "x"));
    CHECK(r.exit_code == 4);
    CHECK(r.output.find("tau_H") != std::string::npos);

    // Cap halfway between the lockdown and free peaks of the first controlled window.
    r = run(kCli + " control min-cost --params " + q(kSynth / "truth.json") + " --region 99001 --config " +
            q(kFix / "control_config.json") + " --data " + q(kSynth / "dataset.json") + " --out " + q(dir / "free"));
    REQUIRE(r.exit_code == 0);
    double free_peak = json::parse(slurp(dir / "free_manifest.json"))["result"]["solution"]["peak_H"];
    spit(dir / "lock.json", R"({"T": 21, "tau_H": null, "budget": 1000})");
    r = run(kCli + " control min-deaths --params " + q(kSynth / "truth.json") + " --region 99001 --config " +
            q(dir / "lock.json") + " --data " + q(kSynth / "dataset.json") + " --out " + q(dir / "lock"));
    REQUIRE(r.exit_code == 0);
    double lock_peak = json::parse(slurp(dir / "lock_manifest.json"))["result"]["solution"]["peak_H"];
    REQUIRE(lock_peak < free_peak);
    json cap = {{"T", 21}, {"tau_H", 0.5 * (free_peak + lock_peak)}};
    spit(dir / "mid.json", cap.dump());
    r = run(kCli + " control min-deaths --budget-from-min-cost --params " + q(kSynth / "truth.json") +
            " --region 99001 --config " + q(dir / "mid.json") + " --data " + q(kSynth / "dataset.json") +
            " --out " + q(dir / "chain"));
    REQUIRE_MESSAGE(r.exit_code == 0, r.output);
    json s = json::parse(slurp(dir / "chain_manifest.json"))["result"]["solution"];
    CHECK(s["B_star"].get<double>() > 0.0);
    CHECK(s["budget"] == s["B_star"]);
    CHECK(s["peak_H"].get<double>() <= cap["tau_H"].get<double>() * (1 + 1e-6));
    CHECK(s["total_cost"].get<double>() <= s["B_star"].get<double>() * (1 + 1e-6));

    r = run(kCli + " control min-deaths --params " + q(kSynth / "truth.json") + " --region 99001 --config " +
            q(dir / "mid.json") + " --data " + q(kSynth / "dataset.json") + " --out " + q(dir / "nobudget"));
    CHECK(r.exit_code == 2);
    r = run(kCli + " control min-cost --params " + q(kSynth / "truth.json") + " --region 00000 --config " +
            q(dir / "mid.json") + " --data " + q(kSynth / "dataset.json") + " --out " + q(dir / "noregion"));
    CHECK(r.exit_code == 2);
}

TEST_CASE("synth is deterministic")
{
    TempDir dir("synth");
    const std::string cmd = kCli + " synth --regions 2 --categories 2 --days 30 --seed 3 --out-dir ";
    REQUIRE(run(cmd + q(dir / "a")).exit_code == 0);
    REQUIRE(run(cmd + q(dir / "b")).exit_code == 0);
    for (const char* f : {"mobility.csv", "deaths.csv", "population.csv", "dataset.json", "truth.json"}) {
        CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));
    }
}
