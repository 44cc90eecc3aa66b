#include "epigp/gpsolve.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <set>

#include "epigp/csv.hpp"
#include "epigp/errors.hpp"

namespace epigp {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// Convex function with optional gradient and Hessian outputs.
using Fn = std::function<double(const VectorXd&, VectorXd*, MatrixXd*)>;

struct IpmProblem {
    Eigen::Index n = 0;
    Fn f0;
    std::vector<Fn> f; // f_i(x) <= 0
    MatrixXd A;        // A x = b
    VectorXd b;
};

struct IpmOutcome {
    VectorXd x;
    VectorXd lambda;
    std::size_t iterations = 0;
    double kkt = std::numeric_limits<double>::infinity();
    bool converged = false;
    bool stopped = false; // caller's predicate fired
    std::vector<IpmIteration> history;
};

struct Residual {
    VectorXd fval;
    MatrixXd Df; // m x n
    VectorXd dual;
    VectorXd cent;
    VectorXd pri;
    double eta = 0.0;

    double norm() const
    {
        return std::sqrt(dual.squaredNorm() + cent.squaredNorm() + pri.squaredNorm());
    }
};

Fn log_posy_fn(const LogPosynomial& lp)
{
    return [lp](const VectorXd& y, VectorXd* g, MatrixXd* H) {
        if (H != nullptr) {
            return lp.value(y, *g, *H);
        }
        if (g != nullptr) {
            return lp.value(y, *g);
        }
        return lp.value(y);
    };
}

// sign * y_j + c, used for box bounds in log space.
Fn affine_coordinate(Eigen::Index n, Eigen::Index j, double sign, double c)
{
    return [=](const VectorXd& y, VectorXd* g, MatrixXd* H) {
        if (g != nullptr) {
            *g = VectorXd::Zero(n);
            (*g)[j] = sign;
        }
        if (H != nullptr) {
            *H = MatrixXd::Zero(n, n);
        }
        return sign * y[j] + c;
    };
}

bool strictly_feasible(const IpmProblem& P, const VectorXd& x)
{
    for (const auto& fi : P.f) {
        double v = fi(x, nullptr, nullptr);
        if (!(v < 0.0)) {
            return false;
        }
    }
    return true;
}

Residual residual(const IpmProblem& P, const VectorXd& x, const VectorXd& lambda, const VectorXd& nu, double t,
                  VectorXd* g0_out = nullptr)
{
    const auto m = static_cast<Eigen::Index>(P.f.size());
    Residual r;
    VectorXd g0;
    P.f0(x, &g0, nullptr);
    r.fval.resize(m);
    r.Df.resize(m, P.n);
    VectorXd gi;
    for (Eigen::Index i = 0; i < m; ++i) {
        r.fval[i] = P.f[static_cast<std::size_t>(i)](x, &gi, nullptr);
        r.Df.row(i) = gi.transpose();
    }
    r.dual = g0;
    if (m > 0) {
        r.dual += r.Df.transpose() * lambda;
    }
    if (P.A.rows() > 0) {
        r.dual += P.A.transpose() * nu;
        r.pri = P.A * x - P.b;
    }
    else {
        r.pri.resize(0);
    }
    r.eta = m > 0 ? -r.fval.dot(lambda) : 0.0;
    r.cent = m > 0 ? VectorXd(-lambda.cwiseProduct(r.fval) - VectorXd::Constant(m, 1.0 / t)) : VectorXd();
    if (g0_out != nullptr) {
        *g0_out = g0;
    }
    return r;
}

double kkt_of(const Residual& r)
{
    double d = r.dual.size() > 0 ? r.dual.lpNorm<Eigen::Infinity>() : 0.0;
    double p = r.pri.size() > 0 ? r.pri.lpNorm<Eigen::Infinity>() : 0.0;
    return std::max({d, p, r.eta});
}

VectorXd solve_newton(const MatrixXd& Hpd, const MatrixXd& A, const VectorXd& rhs_x, const VectorXd& rhs_nu,
                      VectorXd& dnu)
{
    const Eigen::Index n = Hpd.rows();
    const Eigen::Index p = A.rows();
    // Near an active constraint the barrier terms can exceed the tangent
    // curvature by 20+ orders of magnitude. Symmetric diagonal scaling keeps
    // both visible to the factorization.
    VectorXd d = Hpd.diagonal().cwiseAbs().cwiseMax(1e-300).cwiseSqrt().cwiseInverse();
    MatrixXd H = d.asDiagonal() * Hpd * d.asDiagonal();
    H.diagonal().array() += 1e-14;
    if (p == 0) {
        Eigen::LDLT<MatrixXd> ldlt(H);
        if (ldlt.info() == Eigen::Success) {
            VectorXd dx = d.cwiseProduct(ldlt.solve(d.cwiseProduct(rhs_x)));
            if (dx.allFinite()) {
                dnu.resize(0);
                return dx;
            }
        }
    }
    MatrixXd K = MatrixXd::Zero(n + p, n + p);
    K.topLeftCorner(n, n) = H;
    if (p > 0) {
        MatrixXd As = A * d.asDiagonal();
        K.topRightCorner(n, p) = As.transpose();
        K.bottomLeftCorner(p, n) = As;
    }
    VectorXd rhs(n + p);
    rhs << d.cwiseProduct(rhs_x), rhs_nu;
    VectorXd sol = Eigen::FullPivLU<MatrixXd>(K).solve(rhs);
    dnu = sol.tail(p);
    return d.cwiseProduct(sol.head(n));
}

// Primal-dual interior-point method for convex f0, f_i with Ax = b.
// x must satisfy f_i(x) < 0; Ax = b may be violated initially.
IpmOutcome primal_dual(const IpmProblem& P, VectorXd x, const SolverOptions& o,
                       const std::function<bool(const VectorXd&)>& stop)
{
    const auto m = static_cast<Eigen::Index>(P.f.size());
    const Eigen::Index p = P.A.rows();
    IpmOutcome out;
    VectorXd lambda = VectorXd::Constant(m, 1.0);
    VectorXd nu = VectorXd::Zero(p);

    for (std::size_t iter = 0;; ++iter) {
        // Barrier parameter from the current surrogate duality gap.
        double eta = 0.0;
        for (Eigen::Index i = 0; i < m; ++i) {
            eta -= P.f[static_cast<std::size_t>(i)](x, nullptr, nullptr) * lambda[i];
        }
        // No point pushing the gap far below tol: slacks would approach
        // rounding level and stall the line search.
        const double t =
            m > 0 ? std::min(o.mu * static_cast<double>(m) / eta, static_cast<double>(m) / (0.1 * o.tol)) : 1.0;

        Residual r = residual(P, x, lambda, nu, t);
        out.kkt = kkt_of(r);
        out.iterations = iter;
        if (out.kkt <= o.tol) {
            out.converged = true;
            break;
        }
        if (iter >= o.max_iterations) {
            break;
        }

        // Reduced Newton system.
        VectorXd g0;
        MatrixXd H;
        P.f0(x, &g0, &H);
        VectorXd gi;
        MatrixXd Hi;
        for (Eigen::Index i = 0; i < m; ++i) {
            P.f[static_cast<std::size_t>(i)](x, &gi, &Hi);
            H += lambda[i] * Hi;
            H += (lambda[i] / -r.fval[i]) * gi * gi.transpose();
        }
        VectorXd rhs_x = -r.dual;
        if (m > 0) {
            rhs_x -= r.Df.transpose() * r.cent.cwiseQuotient(r.fval);
        }
        VectorXd dnu;
        VectorXd dx = solve_newton(H, P.A, rhs_x, -r.pri, dnu);
        VectorXd dlambda(m);
        if (m > 0) {
            dlambda = (r.cent - lambda.cwiseProduct(r.Df * dx)).cwiseQuotient(r.fval);
        }
        if (p == 0) {
            dnu = VectorXd();
        }
        if (!dx.allFinite() || !dlambda.allFinite()) {
            break;
        }

        // Keep lambda positive, then f(x) < 0, then sufficient residual decrease.
        double s = 1.0;
        for (Eigen::Index i = 0; i < m; ++i) {
            if (dlambda[i] < 0.0) {
                s = std::min(s, -lambda[i] / dlambda[i]);
            }
        }
        s *= 0.99;
        while (s > 1e-20 && !strictly_feasible(P, x + s * dx)) {
            s *= o.ls_beta;
        }
        const double r0 = r.norm();
        double r1 = r0;
        for (; s > 1e-20; s *= o.ls_beta) {
            VectorXd nu1 = p > 0 ? VectorXd(nu + s * dnu) : nu;
            r1 = residual(P, x + s * dx, lambda + s * dlambda, nu1, t).norm();
            if (r1 <= (1.0 - o.ls_alpha * s) * r0) {
                break;
            }
        }
        if (!(s > 1e-20)) {
            break; // stalled at working precision
        }
        x += s * dx;
        lambda += s * dlambda;
        if (p > 0) {
            nu += s * dnu;
        }
        out.history.push_back({t, r0, r1, s});
        if (stop && stop(x)) {
            out.stopped = true;
            out.iterations = iter + 1;
            break;
        }
    }
    out.x = std::move(x);
    out.lambda = std::move(lambda);
    return out;
}

std::string describe_violation(const std::string& label, double log_value)
{
    return "constraint '" + label + "' cannot be satisfied (best value " + csv::format_real(std::exp(log_value)) +
           " > 1)";
}

} // namespace

VarId GeometricProgram::add_variable(std::string_view name, std::optional<double> lower, std::optional<double> upper)
{
    VarId id(name);
    for (const auto& v : vars_) {
        if (v.id == id) {
            throw ValidationError("variable '" + std::string(name) + "' registered twice");
        }
    }
    auto positive = [](const std::optional<double>& b) { return !b || (*b > 0.0 && std::isfinite(*b)); };
    if (!positive(lower) || !positive(upper) || (lower && upper && *lower > *upper)) {
        throw ValidationError("variable '" + std::string(name) + "' needs bounds with 0 < lower <= upper");
    }
    vars_.push_back({id, lower, upper});
    return id;
}

void GeometricProgram::add_inequality(Posynomial p, std::string label)
{
    ineq_.push_back({std::move(p), std::move(label)});
}

void GeometricProgram::add_equality(Monomial m, std::string label)
{
    eq_.push_back({std::move(m), std::move(label)});
}

void GeometricProgram::validate() const
{
    std::set<VarId> known;
    for (const auto& v : vars_) {
        if (v.lower && !(*v.lower > 0.0 && std::isfinite(*v.lower))) {
            throw ValidationError("lower bound of '" + v.id.name() + "' must be positive and finite");
        }
        if (v.upper && !(*v.upper > 0.0 && std::isfinite(*v.upper))) {
            throw ValidationError("upper bound of '" + v.id.name() + "' must be positive and finite");
        }
        if (v.lower && v.upper && !(*v.lower <= *v.upper)) {
            throw ValidationError("empty box for '" + v.id.name() + "'");
        }
        known.insert(v.id);
    }
    auto check = [&](const Posynomial& p, const std::string& where) {
        for (VarId v : p.variables()) {
            if (!known.count(v)) {
                throw ValidationError(where + " references unregistered variable '" + v.name() + "'");
            }
        }
    };
    check(objective_, "objective");
    for (const auto& c : ineq_) {
        check(c.posy, "constraint '" + c.label + "'");
    }
    for (const auto& c : eq_) {
        check(Posynomial(c.mono), "equality '" + c.label + "'");
    }
}

SolveResult solve(const GeometricProgram& gp, const SolverOptions& options)
{
    gp.validate();
    const auto n = static_cast<Eigen::Index>(gp.variables().size());
    std::vector<VarId> order;
    for (const auto& v : gp.variables()) {
        order.push_back(v.id);
    }

    // Start: box midpoint in original units.
    VectorXd y0(n);
    for (Eigen::Index j = 0; j < n; ++j) {
        const auto& v = gp.variables()[static_cast<std::size_t>(j)];
        if (v.lower && v.upper) {
            y0[j] = std::log(0.5 * (*v.lower + *v.upper));
        }
        else if (v.lower) {
            y0[j] = std::log(*v.lower) + 1.0;
        }
        else if (v.upper) {
            y0[j] = std::log(*v.upper) - 1.0;
        }
        else {
            y0[j] = 0.0;
        }
    }

    // General inequalities in log form; constant ones are checked here.
    std::vector<LogPosynomial> cons;
    std::vector<std::size_t> cons_index;
    for (std::size_t i = 0; i < gp.inequalities().size(); ++i) {
        const auto& c = gp.inequalities()[i];
        if (c.posy.is_constant()) {
            double v = c.posy.terms().front().coeff();
            if (v > 1.0) {
                throw InfeasibleError(describe_violation(c.label, std::log(v)), c.label);
            }
            continue;
        }
        cons.emplace_back(c.posy, order);
        cons_index.push_back(i);
    }

    std::vector<Fn> boxes;
    for (Eigen::Index j = 0; j < n; ++j) {
        const auto& v = gp.variables()[static_cast<std::size_t>(j)];
        if (v.lower && v.upper && *v.lower == *v.upper) {
            continue; // pinned via an equality row below
        }
        if (v.lower) {
            boxes.push_back(affine_coordinate(n, j, -1.0, std::log(*v.lower)));
        }
        if (v.upper) {
            boxes.push_back(affine_coordinate(n, j, 1.0, -std::log(*v.upper)));
        }
    }

    std::vector<std::pair<VectorXd, double>> eq_rows;
    for (const auto& e : gp.equalities()) {
        VectorXd a = VectorXd::Zero(n);
        for (const auto& [v, ex] : e.mono.exponents()) {
            a[std::find(order.begin(), order.end(), v) - order.begin()] = ex;
        }
        eq_rows.emplace_back(a, -std::log(e.mono.coeff()));
    }
    for (Eigen::Index j = 0; j < n; ++j) {
        const auto& v = gp.variables()[static_cast<std::size_t>(j)];
        if (v.lower && v.upper && *v.lower == *v.upper) {
            VectorXd a = VectorXd::Zero(n);
            a[j] = 1.0;
            eq_rows.emplace_back(a, std::log(*v.lower));
        }
    }
    MatrixXd A(static_cast<Eigen::Index>(eq_rows.size()), n);
    VectorXd b(static_cast<Eigen::Index>(eq_rows.size()));
    for (std::size_t k = 0; k < eq_rows.size(); ++k) {
        A.row(static_cast<Eigen::Index>(k)) = eq_rows[k].first.transpose();
        b[static_cast<Eigen::Index>(k)] = eq_rows[k].second;
    }

    SolveResult result;
    auto most_violated = [&](const VectorXd& y) {
        std::size_t worst = 0;
        double worst_v = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < cons.size(); ++i) {
            double v = cons[i].value(y);
            if (v > worst_v) {
                worst_v = v;
                worst = i;
            }
        }
        return std::pair{worst, worst_v};
    };

    VectorXd y = y0;
    if (!cons.empty() && most_violated(y0).second >= 0.0) {
        // Phase I over (y, s): minimize s s.t. F_i(y) <= s, boxes and equalities kept.
        IpmProblem P1;
        P1.n = n + 1;
        P1.f0 = [n](const VectorXd& z, VectorXd* g, MatrixXd* H) {
            if (g != nullptr) {
                *g = VectorXd::Zero(n + 1);
                (*g)[n] = 1.0;
            }
            if (H != nullptr) {
                *H = MatrixXd::Zero(n + 1, n + 1);
            }
            return z[n];
        };
        for (const auto& lp : cons) {
            P1.f.push_back([&lp, n](const VectorXd& z, VectorXd* g, MatrixXd* H) {
                VectorXd yy = z.head(n);
                double v;
                if (g != nullptr) {
                    VectorXd gy;
                    if (H != nullptr) {
                        MatrixXd Hy;
                        v = lp.value(yy, gy, Hy);
                        *H = MatrixXd::Zero(n + 1, n + 1);
                        H->topLeftCorner(n, n) = Hy;
                    }
                    else {
                        v = lp.value(yy, gy);
                    }
                    g->resize(n + 1);
                    g->head(n) = gy;
                    (*g)[n] = -1.0;
                }
                else {
                    v = lp.value(yy);
                }
                return v - z[n];
            });
        }
        for (const auto& box : boxes) {
            P1.f.push_back([&box, n](const VectorXd& z, VectorXd* g, MatrixXd* H) {
                VectorXd yy = z.head(n);
                VectorXd gy;
                double v = box(yy, g != nullptr ? &gy : nullptr, nullptr);
                if (g != nullptr) {
                    *g = VectorXd::Zero(n + 1);
                    g->head(n) = gy;
                }
                if (H != nullptr) {
                    *H = MatrixXd::Zero(n + 1, n + 1);
                }
                return v;
            });
        }
        P1.A = MatrixXd::Zero(A.rows(), n + 1);
        P1.A.leftCols(n) = A;
        P1.b = b;
        VectorXd z0(n + 1);
        z0.head(n) = y0;
        z0[n] = most_violated(y0).second + 1.0;
        const double margin = options.phase1_margin;
        SolverOptions o1 = options;
        o1.tol = std::min(options.tol, 1e-3 * options.feas_tol);
        IpmOutcome ph1 = primal_dual(P1, z0, o1, [&](const VectorXd& z) { return z[n] <= -margin; });
        result.phase1_iterations = ph1.iterations;
        y = ph1.x.head(n);
        auto [worst, worst_v] = most_violated(y);
        if (!(worst_v < 0.0) && worst_v < 0.5 * options.feas_tol) {
            // Feasible only within tolerance: no interior to start from.
            result.relaxation = options.feas_tol;
        }
        else if (!(worst_v < 0.0)) {
            const auto& label = gp.inequalities()[cons_index[worst]].label;
            if (ph1.converged || ph1.stopped) {
                throw InfeasibleError(describe_violation(label, worst_v), label);
            }
            throw InfeasibleError("no strictly feasible point found (phase I stalled with residual " +
                                      csv::format_real(ph1.kkt) + "); most violated: " +
                                      describe_violation(label, worst_v),
                                  label);
        }
    }

    IpmProblem P;
    P.n = n;
    P.f0 = log_posy_fn(LogPosynomial(gp.objective(), order));
    for (const auto& lp : cons) {
        P.f.push_back([f = log_posy_fn(lp), d = result.relaxation](const VectorXd& yy, VectorXd* g, MatrixXd* H) {
            return f(yy, g, H) - d;
        });
    }
    for (const auto& box : boxes) {
        P.f.push_back(box);
    }
    P.A = A;
    P.b = b;
    IpmOutcome ph2 = primal_dual(P, y, options, {});
    if (!ph2.converged) {
        throw NonConvergenceError("interior-point solve did not reach KKT residual " + csv::format_real(options.tol) +
                                      " (last " + csv::format_real(ph2.kkt) + " after " +
                                      std::to_string(ph2.iterations) + " iterations)",
                                  ph2.kkt);
    }

    for (Eigen::Index j = 0; j < n; ++j) {
        result.x[order[static_cast<std::size_t>(j)]] = std::exp(ph2.x[j]);
    }
    result.objective = eval(gp.objective(), result.x);
    result.iterations = ph2.iterations;
    result.kkt_residual = ph2.kkt;
    result.history = std::move(ph2.history);
    result.duals.assign(gp.inequalities().size(), 0.0);
    for (std::size_t i = 0; i < cons_index.size(); ++i) {
        result.duals[cons_index[i]] = ph2.lambda[static_cast<Eigen::Index>(i)];
    }
    return result;
}

} // namespace epigp
