#include "epigp/control.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "epigp/csv.hpp"
#include "epigp/errors.hpp"

namespace epigp {

namespace {

constexpr double kBoundSlack = 1e-9;

double denominator(const ControlConfig& cfg, std::size_t k)
{
    return 1.0 / cfg.u_lower[k] - 1.0 / cfg.u_upper[k];
}

std::string category_name(const ControlConfig& cfg, std::size_t k)
{
    if (k < cfg.mobility_map.categories.size() && !cfg.mobility_map.categories[k].empty()) {
        return cfg.mobility_map.categories[k];
    }
    return "m" + std::to_string(k);
}

std::vector<std::vector<VarId>> control_vars(const ControlConfig& cfg)
{
    std::vector<std::vector<VarId>> vars(cfg.num_blocks());
    for (std::size_t w = 0; w < vars.size(); ++w) {
        for (std::size_t k = 0; k < cfg.num_categories(); ++k) {
            vars[w].emplace_back("u_" + category_name(cfg, k) + "_" + std::to_string(w));
        }
    }
    return vars;
}

// Pure posynomial part of the total weighted cost over the horizon and its
// constant: total cost = posy - offset.
CostPosynomial total_cost_posynomial(const ControlConfig& cfg, const std::vector<std::vector<VarId>>& vars)
{
    std::vector<double> block_weight(vars.size(), 0.0);
    double weight_sum = 0.0;
    for (std::size_t t = 0; t < cfg.T; ++t) {
        block_weight[cfg.block_of(t)] += cfg.day_weight(t);
        weight_sum += cfg.day_weight(t);
    }
    std::vector<Monomial> terms;
    double offset = 0.0;
    for (std::size_t k = 0; k < cfg.num_categories(); ++k) {
        if (cfg.c[k] == 0.0) {
            continue;
        }
        const double coef = cfg.c[k] / denominator(cfg, k);
        offset += weight_sum * coef / cfg.u_upper[k];
        for (std::size_t w = 0; w < vars.size(); ++w) {
            terms.push_back(Monomial(block_weight[w] * coef, {{vars[w][k], -1.0}}));
        }
    }
    return {Posynomial(std::move(terms)), offset};
}

Posynomial required(const std::optional<Posynomial>& p, const char* what)
{
    if (!p) {
        throw DegeneracyError(std::string(what) + " is identically zero over the horizon");
    }
    return *p;
}

struct Expansion {
    std::vector<std::vector<VarId>> vars;
    SymbolicStates states;
};

Expansion expand(const ControlConfig& cfg, const SymbolicLimits& limits)
{
    Expansion e;
    e.vars = control_vars(cfg);
    std::vector<Posynomial> beta_posys;
    beta_posys.reserve(cfg.T);
    for (std::size_t t = 0; t < cfg.T; ++t) {
        beta_posys.push_back(beta_posynomial(cfg.mobility_map, e.vars[cfg.block_of(t)]));
    }
    e.states = symbolic_state_posynomials(cfg.init, cfg.global, cfg.mobility_map.gamma_A, beta_posys, cfg.T, limits);
    return e;
}

ControlProgram assemble(const ControlConfig& cfg, Posynomial objective, const Expansion& e)
{
    ControlProgram prog{GeometricProgram(std::move(objective)), e.vars, 0.0};
    for (const auto& block : e.vars) {
        for (std::size_t k = 0; k < block.size(); ++k) {
            prog.gp.add_variable(block[k].name(), cfg.u_lower[k], cfg.u_upper[k]);
        }
    }
    if (std::isfinite(cfg.tau_H)) {
        for (std::size_t t = 1; t <= cfg.T; ++t) {
            const auto& H = e.states.H[t];
            if (!H) {
                continue;
            }
            std::string label = "H(" + std::to_string(t) + ") <= tau_H";
            if (H->is_constant()) {
                double v = H->terms().front().coeff();
                if (v > cfg.tau_H) {
                    throw InfeasibleError("constraint '" + label + "' is violated by the uncontrollable value " +
                                              csv::format_real(v),
                                          label);
                }
                continue;
            }
            prog.gp.add_inequality(scale(*H, 1.0 / cfg.tau_H), std::move(label));
        }
    }
    return prog;
}

ControlSolution extract(const ControlConfig& cfg, const ControlProgram& prog, const SolveResult& r)
{
    ControlSolution sol;
    const std::size_t K = cfg.num_categories();
    for (std::size_t t = 0; t < cfg.T; ++t) {
        MobilityVector u;
        for (std::size_t k = 0; k < K; ++k) {
            double v = r.x.at(prog.vars[cfg.block_of(t)][k]);
            u.levels.push_back(std::clamp(v, cfg.u_lower[k], cfg.u_upper[k]));
        }
        sol.per_day_cost.push_back(cfg.day_weight(t) * cost_term(u, cfg));
        sol.u_star.push_back(std::move(u));
    }
    for (double v : sol.per_day_cost) {
        sol.total_cost += v;
    }
    sol.objective_value = r.objective;
    sol.trajectory = simulate(cfg, sol.u_star);
    sol.deaths_objective = discounted_deaths(sol.trajectory, cfg.gamma_D);
    sol.iterations = r.iterations;
    sol.kkt_residual = r.kkt_residual;
    return sol;
}

} // namespace

void ControlConfig::validate() const
{
    if (T == 0) {
        throw ValidationError("control horizon T must be positive");
    }
    if (week_length == 0) {
        throw ValidationError("week_length must be positive");
    }
    const std::size_t K = c.size();
    if (K == 0) {
        throw ValidationError("cost weights c must not be empty");
    }
    if (u_lower.size() != K || u_upper.size() != K) {
        throw ValidationError("u_lower, u_upper and c must have one entry per category");
    }
    double csum = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
        if (!(u_lower[k] > 0.0) || !(u_lower[k] < u_upper[k]) || !std::isfinite(u_upper[k])) {
            throw ValidationError("bounds must satisfy 0 < u_lower < u_upper for category " + std::to_string(k));
        }
        if (!(c[k] >= 0.0) || !std::isfinite(c[k])) {
            throw ValidationError("cost weights must be finite and nonnegative");
        }
        csum += c[k];
    }
    if (!(csum > 0.0)) {
        throw ValidationError("at least one cost weight must be positive");
    }
    if (!(gamma_D > 0.0 && gamma_D < 1.0)) {
        throw DomainError("gamma_D must lie in (0, 1)");
    }
    if (!(tau_H > 0.0)) {
        throw ValidationError("tau_H must be positive");
    }
    if (budget && !(*budget >= 0.0 && std::isfinite(*budget))) {
        throw ValidationError("budget must be finite and nonnegative");
    }
    if (!day_weights.empty()) {
        if (day_weights.size() != T) {
            throw ValidationError("day_weights must have T entries");
        }
        for (double w : day_weights) {
            if (!(w > 0.0) || !std::isfinite(w)) {
                throw ValidationError("day_weights must be positive");
            }
        }
    }
    global.validate();
    mobility_map.validate();
    init.validate();
    if (mobility_map.num_categories() != K) {
        throw ShapeError("mobility map has " + std::to_string(mobility_map.num_categories()) +
                         " categories, control config has " + std::to_string(K));
    }
}

void to_json(nlohmann::json& j, const ControlConfig& c)
{
    j = nlohmann::json{{"T", c.T},
                       {"week_length", c.week_length},
                       {"tau_H", std::isfinite(c.tau_H) ? nlohmann::json(c.tau_H) : nlohmann::json(nullptr)},
                       {"budget", c.budget ? nlohmann::json(*c.budget) : nlohmann::json(nullptr)},
                       {"gamma_D", c.gamma_D},
                       {"c", c.c},
                       {"u_lower", c.u_lower},
                       {"u_upper", c.u_upper}};
    if (!c.day_weights.empty()) {
        j["day_weights"] = c.day_weights;
    }
}

void from_json(const nlohmann::json& j, ControlConfig& c)
{
    const ControlConfig d;
    c.T = j.value("T", d.T);
    c.week_length = j.value("week_length", d.week_length);
    auto tau = j.find("tau_H");
    c.tau_H = (tau == j.end() || tau->is_null()) ? d.tau_H : tau->get<double>();
    auto budget = j.find("budget");
    c.budget = (budget == j.end() || budget->is_null()) ? std::nullopt : std::optional<double>(budget->get<double>());
    c.gamma_D = j.value("gamma_D", d.gamma_D);
    c.c = j.value("c", std::vector<double>{});
    c.u_lower = j.value("u_lower", std::vector<double>{});
    c.u_upper = j.value("u_upper", std::vector<double>{});
    c.day_weights = j.value("day_weights", std::vector<double>{});
}

double gamma_infinity(double gamma_D, std::size_t T)
{
    if (!(gamma_D > 0.0 && gamma_D < 1.0)) {
        throw DomainError("gamma_D must lie in (0, 1), got " + csv::format_real(gamma_D));
    }
    if (T < 1) {
        throw DomainError("gamma_infinity needs T >= 1");
    }
    return std::pow(gamma_D, static_cast<double>(T)) / (1.0 - gamma_D);
}

double cost_term(const MobilityVector& u, const ControlConfig& cfg)
{
    const std::size_t K = cfg.num_categories();
    if (u.size() != K) {
        throw ShapeError("control vector has " + std::to_string(u.size()) + " entries, expected " +
                         std::to_string(K));
    }
    double total = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
        const double lo = cfg.u_lower[k];
        const double hi = cfg.u_upper[k];
        if (!(u[k] >= lo * (1.0 - kBoundSlack) && u[k] <= hi * (1.0 + kBoundSlack))) {
            throw DomainError("control " + csv::format_real(u[k]) + " outside [" + csv::format_real(lo) + ", " +
                              csv::format_real(hi) + "] for category " + category_name(cfg, k));
        }
        total += cfg.c[k] * (1.0 / u[k] - 1.0 / hi) / denominator(cfg, k);
    }
    return total;
}

CostPosynomial cost_posynomial(const ControlConfig& cfg, std::span<const VarId> vars)
{
    const std::size_t K = cfg.num_categories();
    if (vars.size() != K) {
        throw ShapeError("cost_posynomial needs one variable per category");
    }
    std::vector<Monomial> terms;
    double offset = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
        if (cfg.c[k] == 0.0) {
            continue;
        }
        const double coef = cfg.c[k] / denominator(cfg, k);
        terms.push_back(Monomial(coef, {{vars[k], -1.0}}));
        offset += coef / cfg.u_upper[k];
    }
    return {Posynomial(std::move(terms)), offset};
}

double discounted_deaths(const Trajectory& traj, double gamma_D)
{
    const std::size_t T = traj.horizon();
    if (T < 1) {
        throw InputError("discounted deaths need a trajectory with T >= 1");
    }
    double J = 0.0;
    double g = 1.0;
    for (std::size_t t = 1; t < T; ++t) {
        g *= gamma_D;
        J += g * traj.states[t].D;
    }
    return J + gamma_infinity(gamma_D, T) * traj.states[T].D;
}

ControlProgram build_min_deaths(const ControlConfig& cfg, const SymbolicLimits& limits)
{
    cfg.validate();
    if (!cfg.budget) {
        throw ValidationError("min-deaths control needs a budget");
    }
    Expansion e = expand(cfg, limits);
    std::optional<Posynomial> J;
    double g = 1.0;
    for (std::size_t t = 1; t < cfg.T; ++t) {
        g *= cfg.gamma_D;
        if (e.states.D[t]) {
            J = add(J, std::optional<Posynomial>(scale(*e.states.D[t], g)));
        }
    }
    if (e.states.D[cfg.T]) {
        J = add(J, std::optional<Posynomial>(scale(*e.states.D[cfg.T], gamma_infinity(cfg.gamma_D, cfg.T))));
    }
    ControlProgram prog = assemble(cfg, required(J, "discounted deaths objective"), e);

    CostPosynomial cost = total_cost_posynomial(cfg, e.vars);
    const double rhs = *cfg.budget + cost.offset;
    prog.gp.add_inequality(scale(cost.posy, 1.0 / rhs), "budget");
    return prog;
}

ControlProgram build_min_cost(const ControlConfig& cfg, const SymbolicLimits& limits)
{
    cfg.validate();
    Expansion e = expand(cfg, limits);
    CostPosynomial cost = total_cost_posynomial(cfg, e.vars);
    ControlProgram prog = assemble(cfg, cost.posy, e);
    prog.cost_constant = -cost.offset;
    return prog;
}

Trajectory simulate(const ControlConfig& cfg, std::span<const MobilityVector> schedule)
{
    if (schedule.size() < cfg.T) {
        throw InputError("schedule covers " + std::to_string(schedule.size()) + " days, need " +
                         std::to_string(cfg.T));
    }
    std::vector<double> betas(cfg.T);
    for (std::size_t t = 0; t < cfg.T; ++t) {
        betas[t] = beta(schedule[t], cfg.mobility_map);
    }
    return rollout(cfg.init, cfg.global, cfg.mobility_map.gamma_A, betas, cfg.T);
}

ControlSolution min_deaths(const ControlConfig& cfg, const SolverOptions& options, const SymbolicLimits& limits)
{
    ControlProgram prog = build_min_deaths(cfg, limits);
    SolveResult r = solve(prog.gp, options);
    return extract(cfg, prog, r);
}

MinimalBudget minimal_budget(const ControlConfig& cfg, const SolverOptions& options, const SymbolicLimits& limits)
{
    ControlProgram prog = build_min_cost(cfg, limits);
    SolveResult r = solve(prog.gp, options);
    ControlSolution sol = extract(cfg, prog, r);
    // Tiny negatives come from the interior-point approach to u = upper.
    double B = std::max(0.0, sol.total_cost);
    return {B, std::move(sol)};
}

void write_schedule_csv(std::ostream& out, const ControlSolution& sol, const ControlConfig& cfg)
{
    out << "t,category,u_star,cost\n";
    for (std::size_t t = 0; t < sol.u_star.size(); ++t) {
        for (std::size_t k = 0; k < cfg.num_categories(); ++k) {
            const double u = sol.u_star[t][k];
            const double cost = cfg.day_weight(t) * cfg.c[k] * (1.0 / u - 1.0 / cfg.u_upper[k]) / denominator(cfg, k);
            out << t << ',' << csv::quote(category_name(cfg, k)) << ',' << csv::format_real(u) << ','
                << csv::format_real(cost) << '\n';
        }
    }
}

} // namespace epigp
