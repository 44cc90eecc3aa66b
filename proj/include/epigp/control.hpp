#pragma once

#include <iosfwd>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "epigp/dataset.hpp"
#include "epigp/epimodel.hpp"
#include "epigp/gpsolve.hpp"
#include "epigp/mobility.hpp"

namespace epigp {

/// Control problem for one region over days t = 0..T-1. The region model
/// is fixed: `init` is the state on the first controlled day.
struct ControlConfig {
    std::size_t T = 21;
    std::size_t week_length = 7;
    double tau_H = std::numeric_limits<double>::infinity();
    std::optional<double> budget;
    double gamma_D = 0.99;
    std::vector<double> c;
    std::vector<double> u_lower;
    std::vector<double> u_upper;
    std::vector<double> day_weights; // cost multiplier per day; empty means all 1

    GlobalParams global;
    MobilityMapParams mobility_map;
    RegionInit init;

    std::size_t num_categories() const noexcept { return c.size(); }
    std::size_t num_blocks() const noexcept { return (T + week_length - 1) / week_length; }
    std::size_t block_of(std::size_t t) const noexcept { return t / week_length; }
    double day_weight(std::size_t t) const { return day_weights.empty() ? 1.0 : day_weights[t]; }

    void validate() const;
};

/// JSON covers the problem settings only; the region model is attached by the caller.
void to_json(nlohmann::json& j, const ControlConfig& c);
void from_json(const nlohmann::json& j, ControlConfig& c);

/// Discounted weight of all deaths after T: gamma^T / (1 - gamma).
double gamma_infinity(double gamma_D, std::size_t T);

/// Daily cost sum_k c_k (1/u_k - 1/ub_k) / (1/lb_k - 1/ub_k).
double cost_term(const MobilityVector& u, const ControlConfig& cfg);

struct CostPosynomial {
    Posynomial posy; // sum_k c_k u_k^-1 / (1/lb_k - 1/ub_k)
    double offset;   // sum_k c_k ub_k^-1 / (1/lb_k - 1/ub_k); cost = posy - offset
};

CostPosynomial cost_posynomial(const ControlConfig& cfg, std::span<const VarId> vars);

/// Numeric objective sum_{t=1}^{T-1} gamma^t D(t) + gamma_inf D(T).
double discounted_deaths(const Trajectory& traj, double gamma_D);

struct ControlProgram {
    GeometricProgram gp;
    std::vector<std::vector<VarId>> vars; // [block][category]
    double cost_constant = 0.0;           // min-cost: schedule cost = GP objective + cost_constant
};

/// Variables are named u_<category>_<block>.
ControlProgram build_min_deaths(const ControlConfig& cfg, const SymbolicLimits& limits = {});
ControlProgram build_min_cost(const ControlConfig& cfg, const SymbolicLimits& limits = {});

struct ControlSolution {
    std::vector<MobilityVector> u_star; // per day
    double objective_value = 0.0;       // GP objective in original units
    double deaths_objective = 0.0;      // discounted_deaths of the trajectory
    std::vector<double> per_day_cost;   // weighted daily cost
    double total_cost = 0.0;
    Trajectory trajectory;
    std::size_t iterations = 0;
    double kkt_residual = 0.0;
};

/// Simulates a per-day mobility schedule through the fixed region model.
Trajectory simulate(const ControlConfig& cfg, std::span<const MobilityVector> schedule);

/// Solves GP (min deaths under budget); cfg.budget must be set.
ControlSolution min_deaths(const ControlConfig& cfg, const SolverOptions& options = {},
                           const SymbolicLimits& limits = {});

struct MinimalBudget {
    double B_star;
    ControlSolution solution;
};

/// Solves GP (min budget under the hospital cap); B* is the recomputed
/// total cost of the optimal schedule.
MinimalBudget minimal_budget(const ControlConfig& cfg, const SolverOptions& options = {},
                             const SymbolicLimits& limits = {});

/// `t,category,u_star,cost`
void write_schedule_csv(std::ostream& out, const ControlSolution& sol, const ControlConfig& cfg);

} // namespace epigp
