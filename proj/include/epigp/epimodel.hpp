#pragma once

#include <iosfwd>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "epigp/posynomial.hpp"

namespace epigp {

/// Clinical transition rates shared by all regions (per day).
///
/// The hospital compartment discharges at total rate rho_HR, a fraction
/// alpha_D of which dies and the rest recovers.
struct GlobalParams {
    double rho_EI = 0.0;
    double rho_EA = 0.0;
    double rho_IR = 0.0;
    double rho_IH = 0.0;
    double rho_AR = 0.0;
    double rho_HR = 0.0;
    double alpha_D = 0.0;

    // Rates in [0,1), stay fractions 1 - (outflows) > 0, alpha_D in [0,1].
    void validate() const;
};

/// Initial compartment counts; S0 is held constant over the horizon.
struct RegionInit {
    double S0 = 0.0;
    double E0 = 0.0;
    double I0 = 0.0;
    double A0 = 0.0;
    double H0 = 0.0;
    double R0 = 0.0;
    double D0 = 0.0;

    void validate() const;
};

struct EpiState {
    double E = 0.0;
    double I = 0.0;
    double A = 0.0;
    double H = 0.0;
    double R = 0.0;
    double D = 0.0;

    static EpiState from(const RegionInit& init) { return {init.E0, init.I0, init.A0, init.H0, init.R0, init.D0}; }
    double total() const noexcept { return E + I + A + H + R + D; }
};

struct Trajectory {
    std::vector<EpiState> states;    // t = 0..T
    std::vector<double> beta_series; // t = 0..T-1

    std::size_t horizon() const noexcept { return states.empty() ? 0 : states.size() - 1; }
};

/// One day of the discrete dynamics.
EpiState step(const EpiState& s, const GlobalParams& g, double S0, double beta, double gamma_A);

/// states[t+1] = step(states[t], ..., beta_series[t]) for t < T.
Trajectory rollout(const RegionInit& init, const GlobalParams& g, double gamma_A, std::span<const double> beta_series,
                   std::size_t T);

/// 4x4 update matrix over (E, I, A, H) for one day, with beta as a posynomial.
PosyMatrix transition_matrix(const GlobalParams& g, double S0, double gamma_A, const Posynomial& beta_t);

struct SymbolicStates {
    // Index t = 0..T. nullopt marks a state that is identically zero.
    std::vector<std::optional<Posynomial>> H;
    std::vector<std::optional<Posynomial>> D;
};

struct SymbolicLimits {
    std::size_t max_terms = 4'000'000; // summed over the state vector
};

/// H(t) and D(t) as posynomials in the control variables, obtained by
/// propagating the state vector through the transition matrices with like
/// terms merged after every product.
SymbolicStates symbolic_state_posynomials(const RegionInit& init, const GlobalParams& g, double gamma_A,
                                          std::span<const Posynomial> beta_posys, std::size_t T,
                                          const SymbolicLimits& limits = {});

/// CSV with header `t,E,I,A,H,R,D,beta`; beta is empty on the last row.
void write_trajectory_csv(std::ostream& out, const Trajectory& traj);

void to_json(nlohmann::json& j, const GlobalParams& g);
void from_json(const nlohmann::json& j, GlobalParams& g);
void to_json(nlohmann::json& j, const RegionInit& r);
void from_json(const nlohmann::json& j, RegionInit& r);

} // namespace epigp
