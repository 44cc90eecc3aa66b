#include "epigp/epimodel.hpp"

#include <cmath>
#include <ostream>
#include <string>

#include "epigp/csv.hpp"
#include "epigp/errors.hpp"

namespace epigp {

namespace {

void require_rate(double v, const char* name)
{
    if (!std::isfinite(v) || v < 0.0 || v >= 1.0) {
        throw ValidationError(std::string(name) + " must lie in [0, 1), got " + csv::format_real(v));
    }
}

void require_count(double v, const char* name)
{
    if (!std::isfinite(v) || v < 0.0) {
        throw ValidationError(std::string(name) + " must be a finite nonnegative count, got " + csv::format_real(v));
    }
}

std::optional<Posynomial> constant_or_zero(double c)
{
    if (c > 0.0) {
        return Posynomial::constant(c);
    }
    return std::nullopt;
}

std::optional<Posynomial> times(double c, const std::optional<Posynomial>& p)
{
    if (!p || c == 0.0) {
        return std::nullopt;
    }
    return scale(*p, c);
}

} // namespace

void GlobalParams::validate() const
{
    require_rate(rho_EI, "rho_EI");
    require_rate(rho_EA, "rho_EA");
    require_rate(rho_IR, "rho_IR");
    require_rate(rho_IH, "rho_IH");
    require_rate(rho_AR, "rho_AR");
    require_rate(rho_HR, "rho_HR");
    if (!(rho_EI + rho_EA < 1.0)) {
        throw ValidationError("rho_EI + rho_EA must be < 1");
    }
    if (!(rho_IR + rho_IH < 1.0)) {
        throw ValidationError("rho_IR + rho_IH must be < 1");
    }
    if (!std::isfinite(alpha_D) || alpha_D < 0.0 || alpha_D > 1.0) {
        throw ValidationError("alpha_D must lie in [0, 1], got " + csv::format_real(alpha_D));
    }
}

void RegionInit::validate() const
{
    if (!std::isfinite(S0) || !(S0 > 0.0)) {
        throw ValidationError("S0 must be positive, got " + csv::format_real(S0));
    }
    require_count(E0, "E0");
    require_count(I0, "I0");
    require_count(A0, "A0");
    require_count(H0, "H0");
    require_count(R0, "R0");
    require_count(D0, "D0");
}

EpiState step(const EpiState& s, const GlobalParams& g, double S0, double beta, double gamma_A)
{
    g.validate();
    if (!(beta >= 0.0) || !std::isfinite(beta)) {
        throw ValidationError("beta must be finite and nonnegative, got " + csv::format_real(beta));
    }
    if (!(gamma_A >= 0.0) || !std::isfinite(gamma_A)) {
        throw ValidationError("gamma_A must be finite and nonnegative");
    }
    EpiState n;
    n.E = (1.0 - g.rho_EI - g.rho_EA) * s.E + S0 * beta * (gamma_A * s.A + s.I);
    n.I = (1.0 - g.rho_IR - g.rho_IH) * s.I + g.rho_EI * s.E;
    n.A = (1.0 - g.rho_AR) * s.A + g.rho_EA * s.E;
    n.H = (1.0 - g.rho_HR) * s.H + g.rho_IH * s.I;
    n.R = s.R + g.rho_IR * s.I + g.rho_AR * s.A + (1.0 - g.alpha_D) * g.rho_HR * s.H;
    n.D = s.D + g.alpha_D * g.rho_HR * s.H;
    return n;
}

Trajectory rollout(const RegionInit& init, const GlobalParams& g, double gamma_A, std::span<const double> beta_series,
                   std::size_t T)
{
    if (beta_series.size() < T) {
        throw InputError("rollout needs " + std::to_string(T) + " beta values, got " +
                         std::to_string(beta_series.size()));
    }
    init.validate();
    Trajectory traj;
    traj.states.reserve(T + 1);
    traj.states.push_back(EpiState::from(init));
    traj.beta_series.assign(beta_series.begin(), beta_series.begin() + static_cast<std::ptrdiff_t>(T));
    for (std::size_t t = 0; t < T; ++t) {
        traj.states.push_back(step(traj.states.back(), g, init.S0, beta_series[t], gamma_A));
    }
    return traj;
}

PosyMatrix transition_matrix(const GlobalParams& g, double S0, double gamma_A, const Posynomial& beta_t)
{
    g.validate();
    if (!(S0 > 0.0)) {
        throw ValidationError("S0 must be positive");
    }
    if (!(gamma_A >= 0.0) || !std::isfinite(gamma_A)) {
        throw ValidationError("gamma_A must be finite and nonnegative");
    }
    PosyMatrix m(4, 4);
    m(0, 0) = constant_or_zero(1.0 - g.rho_EI - g.rho_EA);
    m(0, 1) = scale(beta_t, S0);
    m(0, 2) = times(gamma_A * S0, beta_t);
    m(1, 0) = constant_or_zero(g.rho_EI);
    m(1, 1) = constant_or_zero(1.0 - g.rho_IR - g.rho_IH);
    m(2, 0) = constant_or_zero(g.rho_EA);
    m(2, 2) = constant_or_zero(1.0 - g.rho_AR);
    m(3, 1) = constant_or_zero(g.rho_IH);
    m(3, 3) = constant_or_zero(1.0 - g.rho_HR);
    return m;
}

SymbolicStates symbolic_state_posynomials(const RegionInit& init, const GlobalParams& g, double gamma_A,
                                          std::span<const Posynomial> beta_posys, std::size_t T,
                                          const SymbolicLimits& limits)
{
    init.validate();
    g.validate();
    if (T < 1) {
        throw InputError("symbolic expansion needs T >= 1");
    }
    if (beta_posys.size() < T) {
        throw InputError("symbolic expansion needs " + std::to_string(T) + " beta posynomials, got " +
                         std::to_string(beta_posys.size()));
    }
    if (init.E0 == 0.0 && init.I0 == 0.0 && init.A0 == 0.0 && init.H0 == 0.0) {
        throw DegeneracyError("initial E, I, A, H are all zero: H(t) and D(t) are constant and not posynomials");
    }
    std::size_t K = 0;
    for (std::size_t t = 0; t < T; ++t) {
        K = std::max(K, beta_posys[t].variables().size());
    }
    if (T > 90 && K > 6) {
        throw SizeLimitError("symbolic expansion with T = " + std::to_string(T) + " and " + std::to_string(K) +
                             " control variables per day exceeds the size limit (T <= 90 or K <= 6)");
    }

    PosyMatrix y(4, 1);
    y(0, 0) = constant_or_zero(init.E0);
    y(1, 0) = constant_or_zero(init.I0);
    y(2, 0) = constant_or_zero(init.A0);
    y(3, 0) = constant_or_zero(init.H0);

    const double death_rate = g.alpha_D * g.rho_HR;
    SymbolicStates out;
    out.H.reserve(T + 1);
    out.D.reserve(T + 1);
    out.H.push_back(y(3, 0));
    out.D.push_back(constant_or_zero(init.D0));
    for (std::size_t t = 0; t < T; ++t) {
        // D(t+1) uses H(t), so accumulate before advancing the state.
        out.D.push_back(add(out.D.back(), times(death_rate, out.H.back())));
        y = mat_mul(transition_matrix(g, init.S0, gamma_A, beta_posys[t]), y);
        if (y.term_count() > limits.max_terms) {
            throw SizeLimitError("symbolic state exceeded " + std::to_string(limits.max_terms) + " terms at t = " +
                                 std::to_string(t + 1));
        }
        out.H.push_back(y(3, 0));
    }
    return out;
}

void write_trajectory_csv(std::ostream& out, const Trajectory& traj)
{
    out << "t,E,I,A,H,R,D,beta\n";
    for (std::size_t t = 0; t < traj.states.size(); ++t) {
        const auto& s = traj.states[t];
        out << t << ',' << csv::format_real(s.E) << ',' << csv::format_real(s.I) << ',' << csv::format_real(s.A)
            << ',' << csv::format_real(s.H) << ',' << csv::format_real(s.R) << ',' << csv::format_real(s.D) << ',';
        if (t < traj.beta_series.size()) {
            out << csv::format_real(traj.beta_series[t]);
        }
        out << '\n';
    }
}

void to_json(nlohmann::json& j, const GlobalParams& g)
{
    j = nlohmann::json{{"rho_EI", g.rho_EI}, {"rho_EA", g.rho_EA}, {"rho_IR", g.rho_IR}, {"rho_IH", g.rho_IH},
                       {"rho_AR", g.rho_AR}, {"rho_HR", g.rho_HR}, {"alpha_D", g.alpha_D}};
}

void from_json(const nlohmann::json& j, GlobalParams& g)
{
    j.at("rho_EI").get_to(g.rho_EI);
    j.at("rho_EA").get_to(g.rho_EA);
    j.at("rho_IR").get_to(g.rho_IR);
    j.at("rho_IH").get_to(g.rho_IH);
    j.at("rho_AR").get_to(g.rho_AR);
    j.at("rho_HR").get_to(g.rho_HR);
    j.at("alpha_D").get_to(g.alpha_D);
    g.validate();
}

void to_json(nlohmann::json& j, const RegionInit& r)
{
    j = nlohmann::json{{"S0", r.S0}, {"E0", r.E0}, {"I0", r.I0}, {"A0", r.A0},
                       {"H0", r.H0}, {"R0", r.R0}, {"D0", r.D0}};
}

void from_json(const nlohmann::json& j, RegionInit& r)
{
    j.at("S0").get_to(r.S0);
    j.at("E0").get_to(r.E0);
    j.at("I0").get_to(r.I0);
    j.at("A0").get_to(r.A0);
    j.at("H0").get_to(r.H0);
    j.at("R0").get_to(r.R0);
    j.at("D0").get_to(r.D0);
    r.validate();
}

} // namespace epigp
