#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "epigp/posynomial.hpp"

namespace epigp {

struct GpVariable {
    VarId id;
    std::optional<double> lower;
    std::optional<double> upper;
};

struct GpInequality {
    Posynomial posy; // posy <= 1
    std::string label;
};

struct GpEquality {
    Monomial mono; // mono == 1
    std::string label;
};

/// minimize objective s.t. ineq_i <= 1, eq_j == 1, lower <= x <= upper.
class GeometricProgram {
public:
    explicit GeometricProgram(Posynomial objective) : objective_(std::move(objective)) {}

    VarId add_variable(std::string_view name, std::optional<double> lower = std::nullopt,
                       std::optional<double> upper = std::nullopt);
    void add_inequality(Posynomial p, std::string label);
    void add_equality(Monomial m, std::string label);

    const Posynomial& objective() const noexcept { return objective_; }
    const std::vector<GpVariable>& variables() const noexcept { return vars_; }
    const std::vector<GpInequality>& inequalities() const noexcept { return ineq_; }
    const std::vector<GpEquality>& equalities() const noexcept { return eq_; }

    // Throws ValidationError on unregistered variables or bad bounds.
    void validate() const;

private:
    Posynomial objective_;
    std::vector<GpVariable> vars_;
    std::vector<GpInequality> ineq_;
    std::vector<GpEquality> eq_;
};

struct SolverOptions {
    double tol = 1e-8;
    std::size_t max_iterations = 200; // per phase
    double mu = 10.0;
    double ls_alpha = 0.01;
    double ls_beta = 0.5;
    double phase1_margin = 0.1; // phase I stops once every log-constraint is <= -margin
    // Constraints met within this relative violation count as feasible; when
    // no strictly feasible point exists, phase II runs on constraints relaxed
    // by this amount.
    double feas_tol = 1e-9;
};

struct IpmIteration {
    double t;               // barrier parameter
    double residual_before; // ||r_t|| at the current point
    double residual_after;  // ||r_t|| at the accepted point, same t
    double step;
};

struct SolveResult {
    Assignment x;
    double objective = 0.0;
    std::size_t iterations = 0;
    std::size_t phase1_iterations = 0;
    double kkt_residual = 0.0;
    double relaxation = 0.0; // log-space relaxation applied to every inequality
    std::vector<double> duals; // one per inequality, in program order
    std::vector<IpmIteration> history;
};

/// Log-transform and primal-dual interior-point solve. A phase I precedes
/// optimization when the start point (box midpoint in log space) violates
/// an inequality. Throws InfeasibleError naming the most-violated
/// constraint, or NonConvergenceError with the last KKT residual.
SolveResult solve(const GeometricProgram& gp, const SolverOptions& options = {});

} // namespace epigp
