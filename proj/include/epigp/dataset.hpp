#pragma once

#include <chrono>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "epigp/epimodel.hpp"
#include "epigp/mobility.hpp"

namespace epigp {

/// Calendar day, ISO-8601 `YYYY-MM-DD` on the wire.
class Date {
public:
    Date() = default;
    explicit Date(std::chrono::sys_days d) : days_(d) {}

    // Throws FormatError on anything but a valid YYYY-MM-DD.
    static Date parse(std::string_view iso);
    static bool valid(std::string_view iso);

    std::string to_string() const;
    std::chrono::sys_days sys_days() const noexcept { return days_; }

    Date operator+(int days) const { return Date(days_ + std::chrono::days(days)); }
    friend int operator-(Date a, Date b) { return static_cast<int>((a.days_ - b.days_).count()); }
    friend auto operator<=>(Date, Date) = default;

private:
    std::chrono::sys_days days_{};
};

/// Aligned daily mobility and cumulative deaths for one region.
///
/// Day index 0 is the initial-condition day of the model. `deaths` holds the
/// reported cumulative counts; when `deaths_smoothed` is set the series is
/// already a smoothed cumulative curve (synthetic ground truth) and is used
/// as the fitting target without the 7-day average.
struct RegionDataset {
    std::string region_id;
    double population = 0.0;
    std::vector<std::string> categories;
    std::vector<std::string> dates;
    std::vector<MobilityVector> mobility;
    std::vector<double> deaths;
    bool deaths_smoothed = false;

    std::size_t days() const noexcept { return deaths.size(); }
    std::size_t num_categories() const noexcept { return categories.size(); }
    void validate() const;
};

void to_json(nlohmann::json& j, const RegionDataset& d);
void from_json(const nlohmann::json& j, RegionDataset& d);

std::vector<RegionDataset> read_datasets(std::istream& in);
void write_datasets(std::ostream& out, const std::vector<RegionDataset>& data);

/// Fitted parameters of one region: mobility map (incl. gamma_A) and initial state.
struct RegionParams {
    MobilityMapParams mobility_map;
    RegionInit init;
};

/// Shared clinical parameters plus per-region locals.
struct ParamSet {
    GlobalParams global;
    std::map<std::string, RegionParams> per_region;

    const RegionParams& region(const std::string& id) const;
    void validate() const;
};

void to_json(nlohmann::json& j, const ParamSet& p);
void from_json(const nlohmann::json& j, ParamSet& p);

/// beta(t) for t < T from the region's observed mobility.
std::vector<double> observed_beta(const RegionDataset& d, const MobilityMapParams& map, std::size_t T);

} // namespace epigp
