#include <doctest.h>

#include <sstream>

#include "epigp/control.hpp"
#include "epigp/errors.hpp"
#include "support.hpp"

using namespace epigp;
using testing::rel_err;

namespace {

double free_peak(const ControlConfig& c)
{
    return testing::peak_H(simulate(c, testing::block_schedule(c, c.u_upper[0], c.u_upper[0])));
}

double lockdown_peak(const ControlConfig& c)
{
    return testing::peak_H(simulate(c, testing::block_schedule(c, c.u_lower[0], c.u_lower[0])));
}

} // namespace

TEST_CASE("gamma_infinity")
{
    CHECK(gamma_infinity(0.5, 1) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(gamma_infinity(0.99, 21) == doctest::Approx(std::pow(0.99, 21) / 0.01).epsilon(1e-14));
    CHECK(std::abs(gamma_infinity(0.99, 21) - 80.97) <= 0.01);
    double prev = gamma_infinity(0.9, 1);
    for (std::size_t T = 2; T < 400; ++T) {
        double v = gamma_infinity(0.9, T);
        CHECK(v < prev);
        prev = v;
    }
    CHECK(prev < 1e-15);
    CHECK_THROWS_AS(gamma_infinity(1.0, 3), DomainError);
    CHECK_THROWS_AS(gamma_infinity(0.0, 3), DomainError);
}

TEST_CASE("cost_term")
{
    ControlConfig c;
    c.c = {1.0, 2.0};
    c.u_lower = {0.2, 0.4};
    c.u_upper = {1.0, 1.3};
    CHECK(cost_term({{1.0, 1.3}}, c) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(cost_term({{0.2, 0.4}}, c) == doctest::Approx(3.0).epsilon(1e-14));
    ControlConfig one;
    one.c = {1.0};
    one.u_lower = {0.2};
    one.u_upper = {1.0};
    CHECK(cost_term({{0.5}}, one) == doctest::Approx(0.25).epsilon(1e-15));
    CHECK_THROWS_AS(cost_term({{0.1}}, one), DomainError);
    CHECK_THROWS_AS(cost_term({{1.1}}, one), DomainError);

    std::vector<VarId> vars{VarId("ct_u")};
    CostPosynomial cp = cost_posynomial(one, vars);
    CHECK(rel_err(eval(cp.posy, {{vars[0], 0.5}}) - cp.offset, 0.25) <= 1e-14);
    CHECK(cp.offset == doctest::Approx(1.0 / 4.0));
}

TEST_CASE("min-deaths program has one variable per category-week")
{
    ControlConfig c = testing::toy_control();
    c.budget = 5.0;
    ControlProgram p = build_min_deaths(c);
    CHECK(p.gp.variables().size() == 2);
    REQUIRE(p.vars.size() == 2);
    CHECK(p.vars[0][0].name() == "u_retail_and_recreation_0");
    CHECK(p.vars[1][0].name() == "u_retail_and_recreation_1");

    ControlConfig partial = c;
    partial.T = 10; // last block is 3 days
    CHECK(partial.num_blocks() == 2);
    CHECK(build_min_deaths(partial).gp.variables().size() == 2);

    ControlConfig nobudget = testing::toy_control();
    CHECK_THROWS_AS(build_min_deaths(nobudget), ValidationError);
}

TEST_CASE("generous budget without a cap gives full restriction")
{
    ControlConfig c = testing::toy_control();
    c.budget = 1.01 * c.T * 1.0; // sum_t C(u_lower) = T * sum c_k
    ControlSolution s = min_deaths(c);
    for (const auto& u : s.u_star) {
        CHECK(u[0] == doctest::Approx(c.u_lower[0]).epsilon(1e-6));
    }
    auto grid = testing::grid_search(
        [&](double a, double b) { return discounted_deaths(simulate(c, testing::block_schedule(c, a, b)), c.gamma_D); },
        c.u_lower[0], c.u_upper[0], 50, 1);
    CHECK(grid.a == doctest::Approx(c.u_lower[0]));
    CHECK(grid.b == doctest::Approx(c.u_lower[0]));
    CHECK(rel_err(s.deaths_objective, grid.value) <= 1e-6);
    CHECK(rel_err(s.objective_value, s.deaths_objective) <= 1e-9);
}

TEST_CASE("no infection possible is degenerate")
{
    ControlConfig c = testing::toy_control();
    c.budget = 1.0;
    c.init = {1e6, 0, 0, 0, 0, 100, 10};
    CHECK_THROWS_AS(build_min_deaths(c), DegeneracyError);
}

TEST_CASE("non-binding cap: no restriction and zero budget")
{
    ControlConfig c = testing::toy_control();
    MinimalBudget mb = minimal_budget(c);
    CHECK(mb.B_star <= 1e-6);
    for (const auto& u : mb.solution.u_star) {
        CHECK(u[0] == doctest::Approx(c.u_upper[0]).epsilon(1e-6));
    }
    c.tau_H = 10 * free_peak(c);
    CHECK(minimal_budget(c).B_star <= 1e-6);
}

TEST_CASE("minimal budget matches the grid oracle and its bookkeeping")
{
    ControlConfig c = testing::toy_control();
    c.tau_H = 0.5 * (free_peak(c) + lockdown_peak(c));
    MinimalBudget mb = minimal_budget(c);
    auto grid = testing::grid_search(
        [&](double a, double b) {
            auto s = testing::block_schedule(c, a, b);
            if (testing::peak_H(simulate(c, s)) > c.tau_H) {
                return std::numeric_limits<double>::infinity();
            }
            return testing::schedule_cost(c, s);
        },
        c.u_lower[0], c.u_upper[0]);
    CHECK(rel_err(mb.B_star, grid.value) <= 0.01);
    CHECK(mb.B_star <= grid.value * (1 + 1e-6));

    ControlProgram prog = build_min_cost(c);
    SolveResult r = solve(prog.gp);
    CHECK(std::abs(mb.B_star - (r.objective + prog.cost_constant)) <= 1e-9 * std::max(1.0, mb.B_star));
    CHECK(rel_err(mb.B_star, testing::schedule_cost(c, mb.solution.u_star)) <= 1e-12);
    CHECK(testing::peak_H(mb.solution.trajectory) <= c.tau_H * (1 + 1e-6));
}

TEST_CASE("minimal budget falls as the cap loosens")
{
    ControlConfig c = testing::toy_control();
    const double lo = lockdown_peak(c), hi = free_peak(c);
    double prev = std::numeric_limits<double>::infinity();
    for (double f : {0.3, 0.5, 0.7}) {
        c.tau_H = lo + f * (hi - lo);
        double b = minimal_budget(c).B_star;
        CHECK(b <= prev * (1 + 1e-9));
        prev = b;
    }
}

TEST_CASE("unreachable cap is infeasible")
{
    ControlConfig c = testing::toy_control();
    c.tau_H = 0.9 * lockdown_peak(c);
    try {
        minimal_budget(c);
        FAIL("expected InfeasibleError");
    }
    catch (const InfeasibleError& e) {
        CHECK(e.constraint().find("tau_H") != std::string::npos);
    }
    c.tau_H = 0.5 * c.init.H0; // H(1) does not depend on the controls
    CHECK_THROWS_AS(build_min_cost(c), InfeasibleError);
}

TEST_CASE("budget too small for the cap is infeasible")
{
    ControlConfig c = testing::toy_control();
    c.tau_H = 0.5 * (free_peak(c) + lockdown_peak(c));
    const double Bstar = minimal_budget(c).B_star;
    c.budget = 0.5 * Bstar;
    CHECK_THROWS_AS(min_deaths(c), InfeasibleError);
}

TEST_CASE("two-stage workflow")
{
    ControlConfig c = testing::toy_control();
    c.tau_H = 0.5 * (free_peak(c) + lockdown_peak(c));
    MinimalBudget mb = minimal_budget(c);
    const double free_J = discounted_deaths(simulate(c, testing::block_schedule(c, 1.2, 1.2)), c.gamma_D);
    double prev = std::numeric_limits<double>::infinity();
    for (double f : {1.0, 1.5, 2.0}) {
        c.budget = f * mb.B_star;
        ControlSolution s = min_deaths(c);
        CHECK(s.kkt_residual <= 1e-8);
        CHECK(testing::peak_H(s.trajectory) <= c.tau_H * (1 + 1e-6));
        CHECK(s.total_cost <= *c.budget * (1 + 1e-6));
        CHECK(s.deaths_objective <= prev * (1 + 1e-9));
        CHECK(s.deaths_objective <= free_J);
        prev = s.deaths_objective;
    }
}

TEST_CASE("terminal weight reproduces the infinite discounted tail")
{
    Trajectory tr;
    const std::size_t T = 21;
    const double D = 37.5;
    tr.states.assign(T + 1, EpiState{0, 0, 0, 0, 0, D});
    tr.beta_series.assign(T, 0.0);
    const double g = 0.99;
    double direct = 0.0;
    for (std::size_t t = 1; t < 20000; ++t) {
        direct += std::pow(g, t) * D;
    }
    CHECK(rel_err(discounted_deaths(tr, g), direct) <= 1e-9);
}

TEST_CASE("control config JSON")
{
    ControlConfig c = nlohmann::json::parse(R"({"T": 21, "week_length": 7, "tau_H": 50, "budget": null,
        "gamma_D": 0.99, "c": [1, 2], "u_lower": [0.2, 0.3], "u_upper": [1, 1.1]})")
                          .get<ControlConfig>();
    CHECK(c.T == 21);
    CHECK(c.tau_H == 50);
    CHECK_FALSE(c.budget.has_value());
    CHECK(c.c == std::vector<double>{1, 2});
    ControlConfig inf = nlohmann::json::parse(R"({"tau_H": null, "budget": 3})").get<ControlConfig>();
    CHECK(std::isinf(inf.tau_H));
    CHECK(*inf.budget == 3.0);
    nlohmann::json round = c;
    CHECK(round["budget"].is_null());
    CHECK(round.get<ControlConfig>().u_upper == c.u_upper);
}

TEST_CASE("day weights scale the daily cost")
{
    ControlConfig c = testing::toy_control();
    c.tau_H = 0.5 * (free_peak(c) + lockdown_peak(c));
    MinimalBudget flat = minimal_budget(c);
    c.day_weights.assign(c.T, 2.0);
    MinimalBudget doubled = minimal_budget(c);
    CHECK(rel_err(doubled.B_star, 2 * flat.B_star) <= 1e-6);
    c.day_weights.assign(3, 1.0);
    CHECK_THROWS_AS(minimal_budget(c), ValidationError);
}

TEST_CASE("schedule CSV")
{
    ControlConfig c = testing::toy_control();
    c.tau_H = 0.5 * (free_peak(c) + lockdown_peak(c));
    MinimalBudget mb = minimal_budget(c);
    std::ostringstream out;
    write_schedule_csv(out, mb.solution, c);
    std::istringstream in(out.str());
    std::string line;
    std::getline(in, line);
    CHECK(line == "t,category,u_star,cost");
    std::size_t rows = 0;
    double total = 0.0;
    while (std::getline(in, line)) {
        ++rows;
        total += std::stod(line.substr(line.rfind(',') + 1));
    }
    CHECK(rows == c.T);
    CHECK(rel_err(total, mb.B_star) <= 1e-12);
}
