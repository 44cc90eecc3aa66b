#include "epigp/mobility.hpp"

#include <cmath>

#include "epigp/csv.hpp"
#include "epigp/errors.hpp"

namespace epigp {

const std::vector<std::string>& default_categories()
{
    static const std::vector<std::string> cats{"retail_and_recreation", "grocery_and_pharmacy", "parks",
                                               "transit_stations",      "workplaces",           "residential"};
    return cats;
}

void MobilityVector::validate() const
{
    for (std::size_t k = 0; k < levels.size(); ++k) {
        if (!(levels[k] > 0.0) || !std::isfinite(levels[k])) {
            throw DomainError("mobility level " + std::to_string(k) + " must be positive, got " +
                              csv::format_real(levels[k]));
        }
    }
}

void MobilityMapParams::validate() const
{
    if (theta.empty()) {
        throw ValidationError("mobility map needs at least one category");
    }
    if (alpha.size() != theta.size()) {
        throw ValidationError("theta and alpha must have the same length");
    }
    if (!categories.empty() && categories.size() != theta.size()) {
        throw ValidationError("category names do not match the number of map weights");
    }
    for (std::size_t k = 0; k < theta.size(); ++k) {
        if (!std::isfinite(theta[k]) || theta[k] < 0.0) {
            throw ValidationError("theta must be nonnegative");
        }
        if (!std::isfinite(alpha[k])) {
            throw ValidationError("alpha must be finite");
        }
    }
    if (!std::isfinite(b) || b < 0.0) {
        throw ValidationError("bias b must be nonnegative");
    }
    if (!std::isfinite(gamma_A) || gamma_A < 0.0) {
        throw ValidationError("gamma_A must be nonnegative");
    }
}

double beta(const MobilityVector& m, const MobilityMapParams& p)
{
    if (m.size() != p.num_categories()) {
        throw ShapeError("mobility vector has " + std::to_string(m.size()) + " categories, map expects " +
                         std::to_string(p.num_categories()));
    }
    m.validate();
    double b = p.b;
    for (std::size_t k = 0; k < m.size(); ++k) {
        b += p.theta[k] * std::pow(m[k], p.alpha[k]);
    }
    return b;
}

Posynomial beta_posynomial(const MobilityMapParams& p, std::span<const VarId> vars)
{
    if (vars.size() != p.num_categories()) {
        throw ShapeError("beta_posynomial needs one variable per category");
    }
    std::vector<Monomial> terms;
    for (std::size_t k = 0; k < vars.size(); ++k) {
        if (p.theta[k] > 0.0) {
            terms.emplace_back(p.theta[k], Monomial::Exponents{{vars[k], p.alpha[k]}});
        }
    }
    if (p.b > 0.0) {
        terms.emplace_back(p.b);
    }
    if (terms.empty()) {
        throw ValidationError("mobility map with all-zero theta and b has no posynomial form");
    }
    return Posynomial(std::move(terms));
}

double percent_to_level(double pct)
{
    return std::max(kMinMobilityLevel, 1.0 + pct / 100.0);
}

void to_json(nlohmann::json& j, const MobilityMapParams& p)
{
    j = nlohmann::json{{"theta", p.theta}, {"alpha", p.alpha}, {"b", p.b}, {"gamma_A", p.gamma_A},
                       {"categories", p.categories}};
}

void from_json(const nlohmann::json& j, MobilityMapParams& p)
{
    j.at("theta").get_to(p.theta);
    j.at("alpha").get_to(p.alpha);
    j.at("b").get_to(p.b);
    j.at("gamma_A").get_to(p.gamma_A);
    p.categories = j.value("categories", std::vector<std::string>{});
    p.validate();
}

} // namespace epigp
