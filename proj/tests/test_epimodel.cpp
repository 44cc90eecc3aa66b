#include <doctest.h>

#include <sstream>

#include "epigp/errors.hpp"
#include "epigp/epimodel.hpp"
#include "epigp/mobility.hpp"
#include "support.hpp"

using namespace epigp;
using testing::rel_err;

namespace {
GlobalParams example_globals() { return {0.2, 0.3, 0.1, 0.05, 0.1, 0.1, 0.2}; }
} // namespace

TEST_CASE("step hand example")
{
    EpiState s{10, 5, 4, 2, 0, 0};
    EpiState n = step(s, example_globals(), 1000.0, 1e-4, 0.5);
    CHECK(std::abs(n.E - 5.7) <= 1e-12);
    CHECK(std::abs(n.I - 6.25) <= 1e-12);
    CHECK(std::abs(n.A - 6.6) <= 1e-12);
    CHECK(std::abs(n.H - 2.05) <= 1e-12);
    CHECK(std::abs(n.R - 1.06) <= 1e-12);
    CHECK(std::abs(n.D - 0.04) <= 1e-12);
}

TEST_CASE("step with no flows and the empty state")
{
    EpiState s{3, 4, 5, 6, 7, 8};
    EpiState n = step(s, GlobalParams{}, 500.0, 0.0, 0.3);
    CHECK(n.E == s.E);
    CHECK(n.I == s.I);
    CHECK(n.A == s.A);
    CHECK(n.H == s.H);
    CHECK(n.R == s.R);
    CHECK(n.D == s.D);

    EpiState empty{0, 0, 0, 0, 12, 3};
    EpiState e = step(empty, example_globals(), 1000.0, 0.2, 0.5);
    CHECK(e.E == 0.0);
    CHECK(e.I == 0.0);
    CHECK(e.A == 0.0);
    CHECK(e.H == 0.0);
    CHECK(e.R == 12.0);
    CHECK(e.D == 3.0);
}

TEST_CASE("step validates")
{
    GlobalParams bad = example_globals();
    bad.rho_EI = 0.8; // rho_EI + rho_EA >= 1
    CHECK_THROWS_AS(step({1, 1, 1, 1, 0, 0}, bad, 1000.0, 1e-4, 0.5), ValidationError);
    GlobalParams neg = example_globals();
    neg.alpha_D = -0.1;
    CHECK_THROWS_AS(step({1, 1, 1, 1, 0, 0}, neg, 1000.0, 1e-4, 0.5), ValidationError);
    CHECK_THROWS(step({1, 1, 1, 1, 0, 0}, example_globals(), 1000.0, -1.0, 0.5));
}

TEST_CASE("rollout")
{
    RegionInit init{1000, 10, 5, 4, 2, 0, 0};
    Trajectory t0 = rollout(init, example_globals(), 0.5, std::vector<double>{}, 0);
    REQUIRE(t0.states.size() == 1);
    CHECK(t0.states[0].E == 10.0);

    Trajectory t1 = rollout(init, example_globals(), 0.5, std::vector<double>{1e-4}, 1);
    REQUIRE(t1.states.size() == 2);
    CHECK(std::abs(t1.states[1].E - 5.7) <= 1e-12);
    CHECK(std::abs(t1.states[1].D - 0.04) <= 1e-12);

    CHECK_THROWS_AS(rollout(init, example_globals(), 0.5, std::vector<double>{1e-4}, 2), InputError);
}

TEST_CASE("rollout with zero beta matches the geometric closed form")
{
    const GlobalParams g = example_globals();
    RegionInit init{1000, 10, 5, 4, 2, 1, 0.5};
    const std::size_t T = 30;
    Trajectory tr = rollout(init, g, 0.5, std::vector<double>(T, 0.0), T);
    const double le = 1 - g.rho_EI - g.rho_EA, li = 1 - g.rho_IR - g.rho_IH;
    // Closed forms of the decoupled linear recursion.
    double sumH = 0.0;
    for (std::size_t t = 0; t <= T; ++t) {
        const double E = init.E0 * std::pow(le, t);
        CHECK(rel_err(tr.states[t].E, E) <= 1e-12);
        // I(t) = li^t I0 + rho_EI E0 (li^t - le^t)/(li - le)
        const double I = std::pow(li, t) * init.I0 + g.rho_EI * init.E0 * (std::pow(li, t) - std::pow(le, t)) / (li - le);
        CHECK(rel_err(tr.states[t].I, I) <= 1e-10);
        if (t < T) {
            sumH += tr.states[t].H;
        }
    }
    CHECK(rel_err(tr.states[T].D, init.D0 + g.alpha_D * g.rho_HR * sumH) <= 1e-12);
}

TEST_CASE("transition matrix layout")
{
    const GlobalParams g = example_globals();
    const double S0 = 1000.0, gA = 0.5, c = 2e-4;
    PosyMatrix m = transition_matrix(g, S0, gA, Posynomial::constant(c));
    Eigen::Matrix4d expect;
    expect << 1 - g.rho_EI - g.rho_EA, S0 * c, gA * S0 * c, 0,
              g.rho_EI, 1 - g.rho_IR - g.rho_IH, 0, 0,
              g.rho_EA, 0, 1 - g.rho_AR, 0,
              0, g.rho_IH, 0, 1 - g.rho_HR;
    Eigen::MatrixXd got = m.eval({});
    CHECK((got - expect).cwiseAbs().maxCoeff() <= 1e-15);

    VarId u("tm_u");
    m = transition_matrix(g, S0, gA, Posynomial(Monomial(c, {{u, 1.5}})));
    const std::pair<int, int> zeros[] = {{0, 3}, {1, 2}, {1, 3}, {2, 1}, {2, 3}, {3, 0}, {3, 2}};
    for (auto [r, col] : zeros) {
        CHECK_FALSE(m(r, col).has_value());
    }
    for (int i = 0; i < 4; ++i) {
        REQUIRE(m(i, i).has_value());
        CHECK(m(i, i)->is_constant());
    }
    CHECK(m(0, 1)->variables() == std::vector<VarId>{u});
    CHECK(m(0, 2)->variables() == std::vector<VarId>{u});

    PosyMatrix z = transition_matrix(GlobalParams{}, S0, gA, Posynomial(Monomial(c, {{u, 1.0}})));
    for (int i = 0; i < 4; ++i) {
        CHECK(z(i, i)->terms()[0].coeff() == 1.0);
    }
    CHECK_FALSE(z(1, 0).has_value());
    CHECK(z(0, 1).has_value());
}

TEST_CASE("symbolic H(1) is the constant one-step value")
{
    const GlobalParams g = example_globals();
    RegionInit init{1000, 10, 5, 4, 2, 0, 0};
    VarId u("sy_u");
    std::vector<Posynomial> betas{Posynomial(Monomial(1e-4, {{u, 1.0}}))};
    SymbolicStates s = symbolic_state_posynomials(init, g, 0.5, betas, 1);
    REQUIRE(s.H[1].has_value());
    REQUIRE(s.H[1]->is_constant());
    CHECK(std::abs(s.H[1]->terms()[0].coeff() - ((1 - g.rho_HR) * init.H0 + g.rho_IH * init.I0)) <= 1e-12);
}

TEST_CASE("symbolic states match rollout on random instances")
{
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    for (int inst = 0; inst < 20; ++inst) {
        const std::size_t K = 2, T = 6;
        GlobalParams g = testing::random_globals(rng);
        MobilityMapParams map;
        auto vars = testing::make_vars(K, "sr" + std::to_string(inst) + "_");
        for (std::size_t k = 0; k < K; ++k) {
            map.theta.push_back(1e-4 * (0.2 + u01(rng)));
            map.alpha.push_back(0.5 + u01(rng));
            map.categories.push_back("c");
        }
        map.b = 1e-6;
        map.gamma_A = u01(rng);
        RegionInit init{1000, 5 + 10 * u01(rng), 3 * u01(rng), 2 * u01(rng), u01(rng), 0, 1};
        std::vector<Posynomial> betas(T, beta_posynomial(map, vars));
        SymbolicStates s = symbolic_state_posynomials(init, g, map.gamma_A, betas, T);
        for (int point = 0; point < 100; ++point) {
            auto a = testing::random_assignment(rng, vars, 0.3, 1.5);
            MobilityVector m;
            for (auto v : vars) {
                m.levels.push_back(a[v]);
            }
            Trajectory tr = rollout(init, g, map.gamma_A, std::vector<double>(T, beta(m, map)), T);
            for (std::size_t t = 0; t <= T; ++t) {
                REQUIRE(s.H[t].has_value());
                REQUIRE(s.D[t].has_value());
                CHECK(rel_err(eval(*s.H[t], a), tr.states[t].H) <= 1e-9);
                CHECK(rel_err(eval(*s.D[t], a), tr.states[t].D) <= 1e-9);
            }
        }
    }
}

TEST_CASE("symbolic expansion errors")
{
    VarId u("se_u");
    std::vector<Posynomial> betas(3, Posynomial(Monomial(1e-4, {{u, 1.0}})));
    RegionInit dead{1000, 0, 0, 0, 0, 0, 5};
    CHECK_THROWS_AS(symbolic_state_posynomials(dead, example_globals(), 0.5, betas, 3), DegeneracyError);
    RegionInit ok{1000, 1, 0, 0, 0, 0, 0};
    CHECK_THROWS_AS(symbolic_state_posynomials(ok, example_globals(), 0.5, betas, 4), InputError);
    SymbolicStates s = symbolic_state_posynomials(ok, example_globals(), 0.5, betas, 3);
    CHECK_FALSE(s.H[0].has_value()); // H0 = 0 and nothing reaches H in one step
    CHECK_FALSE(s.H[1].has_value());
    CHECK(s.H[2].has_value());

    auto vars = testing::make_vars(6, "big");
    MobilityMapParams map;
    for (int k = 0; k < 6; ++k) {
        map.theta.push_back(1e-5);
        map.alpha.push_back(1.0 + 0.1 * k);
        map.categories.push_back("c");
    }
    map.b = 1e-7;
    std::vector<Posynomial> many(20, beta_posynomial(map, vars));
    CHECK_THROWS_AS(
        symbolic_state_posynomials(RegionInit{1000, 1, 1, 1, 1, 0, 0}, example_globals(), 0.5, many, 20, {10000}),
        SizeLimitError);
}

TEST_CASE("step invariants on random states")
{
    std::mt19937_64 rng(22);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    for (int i = 0; i < 10000; ++i) {
        GlobalParams g = testing::random_globals(rng);
        EpiState s{100 * u01(rng), 100 * u01(rng), 100 * u01(rng), 100 * u01(rng), 100 * u01(rng), 100 * u01(rng)};
        const double S0 = 1e3 + 1e5 * u01(rng), b = 1e-5 * u01(rng), gA = u01(rng);
        EpiState n = step(s, g, S0, b, gA);
        CHECK((n.E >= 0 && n.I >= 0 && n.A >= 0 && n.H >= 0 && n.R >= 0 && n.D >= 0));
        CHECK(n.D >= s.D);
        CHECK(n.R >= s.R);
        const double inflow = S0 * b * (gA * s.A + s.I);
        CHECK(std::abs((n.total() - s.total()) - inflow) <= 1e-12 * std::max(n.total(), 1.0));
    }
}

TEST_CASE("rollout is linear in the initial state")
{
    std::mt19937_64 rng(23);
    const GlobalParams g = testing::random_globals(rng);
    RegionInit init{5000, 10, 4, 3, 2, 7, 1};
    std::vector<double> betas(25, 3e-5);
    const double lambda = 3.7;
    RegionInit scaled{init.S0, lambda * init.E0, lambda * init.I0, lambda * init.A0, lambda * init.H0,
                      lambda * init.R0, lambda * init.D0};
    Trajectory a = rollout(init, g, 0.4, betas, 25), b = rollout(scaled, g, 0.4, betas, 25);
    for (std::size_t t = 0; t <= 25; ++t) {
        CHECK(rel_err(b.states[t].E, lambda * a.states[t].E) <= 1e-12);
        CHECK(rel_err(b.states[t].H, lambda * a.states[t].H) <= 1e-12);
        CHECK(rel_err(b.states[t].D - b.states[0].D, lambda * (a.states[t].D - a.states[0].D)) <= 1e-11);
        if (t > 0) {
            CHECK(a.states[t].D >= a.states[t - 1].D);
            CHECK(a.states[t].R >= a.states[t - 1].R);
        }
    }
}

TEST_CASE("trajectory CSV")
{
    Trajectory tr = rollout({1000, 10, 5, 4, 2, 0, 0}, example_globals(), 0.5, std::vector<double>{1e-4, 2e-4}, 2);
    std::ostringstream out;
    write_trajectory_csv(out, tr);
    std::istringstream in(out.str());
    std::string line;
    std::getline(in, line);
    CHECK(line == "t,E,I,A,H,R,D,beta");
    int rows = 0;
    std::string last;
    while (std::getline(in, line)) {
        ++rows;
        last = line;
    }
    CHECK(rows == 3);
    CHECK(last.back() == ',');
}

TEST_CASE("globals JSON round trip")
{
    GlobalParams g = example_globals();
    nlohmann::json j = g;
    GlobalParams back = j.get<GlobalParams>();
    CHECK(back.rho_EI == g.rho_EI);
    CHECK(back.alpha_D == g.alpha_D);
    RegionInit r{1000, 1, 2, 3, 4, 5, 6};
    RegionInit rb = nlohmann::json(r).get<RegionInit>();
    CHECK(rb.S0 == 1000);
    CHECK(rb.D0 == 6);
}
