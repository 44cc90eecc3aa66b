#include "epigp/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>

#include "epigp/errors.hpp"

namespace epigp {

Date Date::parse(std::string_view iso)
{
    int y = 0;
    unsigned m = 0;
    unsigned d = 0;
    char tail = 0;
    std::string s(iso);
    if (s.size() != 10 || s[4] != '-' || s[7] != '-' || std::sscanf(s.c_str(), "%4d-%2u-%2u%c", &y, &m, &d, &tail) != 3) {
        throw FormatError("invalid date '" + s + "', expected YYYY-MM-DD");
    }
    std::chrono::year_month_day ymd{std::chrono::year{y}, std::chrono::month{m}, std::chrono::day{d}};
    if (!ymd.ok()) {
        throw FormatError("invalid calendar date '" + s + "'");
    }
    return Date(std::chrono::sys_days{ymd});
}

bool Date::valid(std::string_view iso)
{
    try {
        parse(iso);
        return true;
    }
    catch (const FormatError&) {
        return false;
    }
}

std::string Date::to_string() const
{
    std::chrono::year_month_day ymd{days_};
    char buf[16];
    std::snprintf(buf, sizeof buf, "%04d-%02u-%02u", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                  static_cast<unsigned>(ymd.day()));
    return buf;
}

void RegionDataset::validate() const
{
    if (region_id.empty()) {
        throw ValidationError("dataset without region_id");
    }
    if (!(population > 0.0) || !std::isfinite(population)) {
        throw ValidationError("region " + region_id + ": population must be positive");
    }
    if (categories.empty()) {
        throw ValidationError("region " + region_id + ": no mobility categories");
    }
    if (mobility.size() != deaths.size() || (!dates.empty() && dates.size() != deaths.size())) {
        throw ValidationError("region " + region_id + ": mobility, deaths and dates are not aligned");
    }
    for (const auto& m : mobility) {
        if (m.size() != categories.size()) {
            throw ValidationError("region " + region_id + ": mobility row width differs from category count");
        }
        m.validate();
    }
    for (double d : deaths) {
        if (!std::isfinite(d) || d < 0.0) {
            throw ValidationError("region " + region_id + ": death counts must be finite and nonnegative");
        }
    }
}

void to_json(nlohmann::json& j, const RegionDataset& d)
{
    nlohmann::json mob = nlohmann::json::array();
    for (const auto& m : d.mobility) {
        mob.push_back(m.levels);
    }
    j = nlohmann::json{{"region_id", d.region_id}, {"population", d.population}, {"categories", d.categories},
                       {"dates", d.dates},         {"mobility", std::move(mob)},  {"deaths", d.deaths}};
    if (d.deaths_smoothed) {
        j["deaths_smoothed"] = true;
    }
}

void from_json(const nlohmann::json& j, RegionDataset& d)
{
    j.at("region_id").get_to(d.region_id);
    j.at("population").get_to(d.population);
    j.at("categories").get_to(d.categories);
    d.dates = j.value("dates", std::vector<std::string>{});
    d.mobility.clear();
    for (const auto& row : j.at("mobility")) {
        d.mobility.push_back(MobilityVector{row.get<std::vector<double>>()});
    }
    j.at("deaths").get_to(d.deaths);
    d.deaths_smoothed = j.value("deaths_smoothed", false);
    d.validate();
}

std::vector<RegionDataset> read_datasets(std::istream& in)
{
    nlohmann::json j;
    try {
        in >> j;
    }
    catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("dataset file is not valid JSON: ") + e.what());
    }
    try {
        if (j.is_object()) {
            return {j.get<RegionDataset>()};
        }
        return j.get<std::vector<RegionDataset>>();
    }
    catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("dataset file does not match the schema: ") + e.what());
    }
}

void write_datasets(std::ostream& out, const std::vector<RegionDataset>& data)
{
    out << nlohmann::json(data).dump(1) << '\n';
}

const RegionParams& ParamSet::region(const std::string& id) const
{
    auto it = per_region.find(id);
    if (it == per_region.end()) {
        throw InputError("no fitted parameters for region '" + id + "'");
    }
    return it->second;
}

void ParamSet::validate() const
{
    global.validate();
    for (const auto& [id, r] : per_region) {
        r.mobility_map.validate();
        r.init.validate();
    }
}

void to_json(nlohmann::json& j, const ParamSet& p)
{
    nlohmann::json regions = nlohmann::json::object();
    for (const auto& [id, r] : p.per_region) {
        regions[id] = nlohmann::json{{"mobility_map", r.mobility_map}, {"init", r.init}};
    }
    j = nlohmann::json{{"global", p.global}, {"regions", std::move(regions)}};
}

void from_json(const nlohmann::json& j, ParamSet& p)
{
    j.at("global").get_to(p.global);
    p.per_region.clear();
    for (const auto& [id, r] : j.at("regions").items()) {
        RegionParams rp;
        r.at("mobility_map").get_to(rp.mobility_map);
        r.at("init").get_to(rp.init);
        p.per_region.emplace(id, std::move(rp));
    }
}

std::vector<double> observed_beta(const RegionDataset& d, const MobilityMapParams& map, std::size_t T)
{
    if (d.mobility.size() < T) {
        throw InputError("region " + d.region_id + " has " + std::to_string(d.mobility.size()) +
                         " mobility days, need " + std::to_string(T));
    }
    std::vector<double> out(T);
    for (std::size_t t = 0; t < T; ++t) {
        out[t] = beta(d.mobility[t], map);
    }
    return out;
}

} // namespace epigp
