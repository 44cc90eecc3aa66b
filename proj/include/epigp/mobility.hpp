#pragma once

#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "epigp/posynomial.hpp"

namespace epigp {

/// The six category columns of the public community-mobility reports.
const std::vector<std::string>& default_categories();

/// Relative visitation levels per category; 1.0 is the pre-lockdown baseline.
struct MobilityVector {
    std::vector<double> levels;

    std::size_t size() const noexcept { return levels.size(); }
    double operator[](std::size_t k) const { return levels[k]; }

    // Throws DomainError unless every level is positive and finite.
    void validate() const;
};

/// Parameters of beta(m) = sum_k theta_k m_k^alpha_k + b, plus the
/// asymptomatic infectivity weight that multiplies beta for A.
struct MobilityMapParams {
    std::vector<double> theta;
    std::vector<double> alpha;
    double b = 0.0;
    double gamma_A = 0.0;
    std::vector<std::string> categories;

    std::size_t num_categories() const noexcept { return theta.size(); }
    void validate() const;
};

double beta(const MobilityVector& m, const MobilityMapParams& p);

/// Symbolic beta over the given variables (one per category). Categories
/// with theta_k == 0 and a zero bias are omitted.
Posynomial beta_posynomial(const MobilityMapParams& p, std::span<const VarId> vars);

/// Signed percent change from baseline -> positive level, floored at 1e-3.
double percent_to_level(double pct);

constexpr double kMinMobilityLevel = 1e-3;

void to_json(nlohmann::json& j, const MobilityMapParams& p);
void from_json(const nlohmann::json& j, MobilityMapParams& p);

} // namespace epigp
