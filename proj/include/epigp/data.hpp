#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "epigp/dataset.hpp"

namespace epigp {

/// One row of a community-mobility report. `percent` follows
/// default_categories() order; nullopt marks an empty field.
struct MobilityRow {
    std::string country_region_code;
    std::string country_region;
    std::string sub_region_1;
    std::string sub_region_2;
    std::string metro_area;
    std::string iso_3166_2_code;
    std::string fips;
    std::string place_id;
    std::string date;
    std::vector<std::optional<double>> percent;
};

/// One row of the county-level cumulative cases/deaths file.
struct DeathsRow {
    std::string date;
    std::string county;
    std::string state;
    std::string fips;
    double cases = 0.0;
    double deaths = 0.0;
};

struct RejectedRow {
    std::size_t line = 0; // 1-based, header is line 1
    std::string reason;
    std::string text;
};

template <class Row>
struct ParseResult {
    std::vector<Row> rows;
    std::vector<RejectedRow> rejects;
};

ParseResult<MobilityRow> parse_mobility_csv(std::istream& in);
ParseResult<DeathsRow> parse_deaths_csv(std::istream& in);
ParseResult<MobilityRow> parse_mobility_csv(const std::filesystem::path& file);
ParseResult<DeathsRow> parse_deaths_csv(const std::filesystem::path& file);

void write_mobility_csv(std::ostream& out, const std::vector<MobilityRow>& rows);
void write_deaths_csv(std::ostream& out, const std::vector<DeathsRow>& rows);

/// Two-column `fips,population` file.
std::map<std::string, double> read_population_csv(std::istream& in);

struct JoinRequest {
    std::vector<std::string> region_ids;
    std::map<std::string, double> population;
    Date from;
    Date to; // inclusive
    std::vector<std::string> categories = default_categories();
    int max_fill_days = 7; // longest run of missing mobility dates bridged by carrying forward
};

/// Aligns both sources per region over [from, to]. Missing mobility values
/// are carried forward from the last observation, or set to the 0% baseline
/// when nothing has been observed yet; percents become levels through
/// percent_to_level(). Deaths before a region's first report count as 0.
std::vector<RegionDataset> join(const std::vector<MobilityRow>& mobility, const std::vector<DeathsRow>& deaths,
                                const JoinRequest& request);

/// Bounded random walk for synthetic mobility levels.
struct RandomWalk {
    double lower = 0.4;
    double upper = 1.2;
    double step_sd = 0.03;
};

struct SynthRegion {
    std::string region_id;
    double population = 0.0;
    RegionParams truth;
};

struct SynthSpec {
    GlobalParams global;
    std::vector<SynthRegion> regions;
    std::size_t days = 82;
    RandomWalk walk;
    double noise = 0.0; // multiplicative Gaussian noise on reported deaths
    std::string start_date = "2020-07-01";
    std::vector<std::string> categories;

    void validate() const;
    ParamSet true_params() const;
};

/// Plausible ground truth with `regions` regions and K categories, drawn from `seed`.
SynthSpec default_synth_spec(std::size_t regions, std::size_t K, std::size_t days, std::uint64_t seed);

struct SynthResult {
    std::vector<RegionDataset> datasets;
    std::map<std::string, std::vector<double>> noiseless_deaths;
};

/// Mobility from the bounded walk, deaths from rollout under the true
/// parameters. Datasets are flagged deaths_smoothed since the generated
/// curve is the model's own cumulative deaths.
SynthResult synth_gen(const SynthSpec& spec, std::uint64_t seed);

/// Re-express synthetic datasets as rows of the two public CSV formats
/// (integer percents and integer cumulative deaths, as published).
std::vector<MobilityRow> to_mobility_rows(const std::vector<RegionDataset>& data);
std::vector<DeathsRow> to_deaths_rows(const std::vector<RegionDataset>& data);

} // namespace epigp
