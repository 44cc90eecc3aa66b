#include "epigp/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include "epigp/csv.hpp"
#include "epigp/errors.hpp"

namespace epigp {

namespace {

const std::string kPercentSuffix = "_percent_change_from_baseline";

const std::vector<std::string>& mobility_meta_columns()
{
    static const std::vector<std::string> cols{"country_region_code", "country_region",   "sub_region_1",
                                               "sub_region_2",        "metro_area",       "iso_3166_2_code",
                                               "census_fips_code",    "place_id",         "date"};
    return cols;
}

std::string* meta_field(MobilityRow& row, const std::string& col)
{
    if (col == "country_region_code") return &row.country_region_code;
    if (col == "country_region") return &row.country_region;
    if (col == "sub_region_1") return &row.sub_region_1;
    if (col == "sub_region_2") return &row.sub_region_2;
    if (col == "metro_area") return &row.metro_area;
    if (col == "iso_3166_2_code") return &row.iso_3166_2_code;
    if (col == "census_fips_code") return &row.fips;
    if (col == "place_id") return &row.place_id;
    if (col == "date") return &row.date;
    return nullptr;
}

std::vector<std::string> read_header(std::istream& in, const char* what)
{
    std::string line;
    if (!csv::read_line(in, line) || line.empty()) {
        throw FormatError(std::string(what) + " file is empty (missing header row)");
    }
    if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) {
        line.erase(0, 3); // UTF-8 BOM
    }
    auto header = csv::split_record(line);
    if (!header) {
        throw FormatError(std::string(what) + " header has an unterminated quote");
    }
    return *header;
}

std::ifstream open_or_throw(const std::filesystem::path& file)
{
    std::ifstream in(file);
    if (!in) {
        throw InputError("cannot open " + file.string());
    }
    return in;
}

std::size_t category_index(const std::string& name)
{
    const auto& cats = default_categories();
    auto it = std::find(cats.begin(), cats.end(), name);
    if (it == cats.end()) {
        throw InputError("unknown mobility category '" + name + "'");
    }
    return static_cast<std::size_t>(it - cats.begin());
}

std::string format_count(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.0f", v);
    return buf;
}

} // namespace

ParseResult<MobilityRow> parse_mobility_csv(std::istream& in)
{
    const auto header = read_header(in, "mobility");
    const auto& cats = default_categories();

    // Per column: meta column name, or category index.
    struct Column {
        std::string meta;
        std::optional<std::size_t> category;
    };
    std::vector<Column> columns;
    std::set<std::string> seen;
    for (const auto& name : header) {
        if (!seen.insert(name).second) {
            throw FormatError("mobility header repeats column '" + name + "'");
        }
        const auto& meta = mobility_meta_columns();
        if (std::find(meta.begin(), meta.end(), name) != meta.end()) {
            columns.push_back({name, std::nullopt});
            continue;
        }
        bool matched = false;
        if (name.size() > kPercentSuffix.size() &&
            name.compare(name.size() - kPercentSuffix.size(), kPercentSuffix.size(), kPercentSuffix) == 0) {
            std::string cat = name.substr(0, name.size() - kPercentSuffix.size());
            auto it = std::find(cats.begin(), cats.end(), cat);
            if (it != cats.end()) {
                columns.push_back({"", static_cast<std::size_t>(it - cats.begin())});
                matched = true;
            }
        }
        if (!matched) {
            throw FormatError("unknown mobility column '" + name + "'");
        }
    }
    for (const char* required : {"date", "census_fips_code"}) {
        if (!seen.contains(required)) {
            throw FormatError(std::string("mobility header lacks required column '") + required + "'");
        }
    }
    for (const auto& cat : cats) {
        if (!seen.contains(cat + kPercentSuffix)) {
            throw FormatError("mobility header lacks column '" + cat + kPercentSuffix + "'");
        }
    }

    ParseResult<MobilityRow> out;
    std::string line;
    std::size_t line_no = 1;
    while (csv::read_line(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        auto reject = [&](std::string reason) { out.rejects.push_back({line_no, std::move(reason), line}); };
        auto fields = csv::split_record(line);
        if (!fields) {
            reject("unterminated quote");
            continue;
        }
        if (fields->size() != columns.size()) {
            reject("expected " + std::to_string(columns.size()) + " fields, found " + std::to_string(fields->size()));
            continue;
        }
        MobilityRow row;
        row.percent.assign(cats.size(), std::nullopt);
        std::string problem;
        for (std::size_t c = 0; c < columns.size() && problem.empty(); ++c) {
            const auto& field = (*fields)[c];
            if (columns[c].category) {
                if (field.empty()) {
                    continue;
                }
                auto v = csv::parse_real(field);
                if (!v) {
                    problem = "non-numeric percent '" + field + "'";
                }
                else if (*v < -100.0 || *v > 500.0) {
                    problem = "percent " + field + " outside [-100, 500]";
                }
                else {
                    row.percent[*columns[c].category] = *v;
                }
            }
            else {
                *meta_field(row, columns[c].meta) = field;
            }
        }
        if (problem.empty() && !Date::valid(row.date)) {
            problem = "invalid date '" + row.date + "'";
        }
        if (!problem.empty()) {
            reject(std::move(problem));
            continue;
        }
        out.rows.push_back(std::move(row));
    }
    return out;
}

ParseResult<DeathsRow> parse_deaths_csv(std::istream& in)
{
    const auto header = read_header(in, "deaths");
    static const std::vector<std::string> known{"date", "county", "state", "fips", "cases", "deaths"};
    std::vector<std::size_t> role; // index into `known` per column
    std::set<std::string> seen;
    for (const auto& name : header) {
        auto it = std::find(known.begin(), known.end(), name);
        if (it == known.end()) {
            throw FormatError("unknown deaths column '" + name + "'");
        }
        if (!seen.insert(name).second) {
            throw FormatError("deaths header repeats column '" + name + "'");
        }
        role.push_back(static_cast<std::size_t>(it - known.begin()));
    }
    for (const auto& k : known) {
        if (!seen.contains(k)) {
            throw FormatError("deaths header lacks required column '" + k + "'");
        }
    }

    ParseResult<DeathsRow> out;
    std::string line;
    std::size_t line_no = 1;
    while (csv::read_line(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        auto reject = [&](std::string reason) { out.rejects.push_back({line_no, std::move(reason), line}); };
        auto fields = csv::split_record(line);
        if (!fields) {
            reject("unterminated quote");
            continue;
        }
        if (fields->size() != role.size()) {
            reject("expected " + std::to_string(role.size()) + " fields, found " + std::to_string(fields->size()));
            continue;
        }
        DeathsRow row;
        std::string problem;
        for (std::size_t c = 0; c < role.size() && problem.empty(); ++c) {
            const auto& field = (*fields)[c];
            switch (role[c]) {
            case 0: row.date = field; break;
            case 1: row.county = field; break;
            case 2: row.state = field; break;
            case 3: row.fips = field; break;
            default: {
                auto v = csv::parse_real(field);
                if (!v || *v < 0.0) {
                    problem = "invalid " + known[role[c]] + " count '" + field + "'";
                }
                else {
                    (role[c] == 4 ? row.cases : row.deaths) = *v;
                }
            }
            }
        }
        if (problem.empty() && !Date::valid(row.date)) {
            problem = "invalid date '" + row.date + "'";
        }
        if (problem.empty() && row.fips.empty()) {
            problem = "missing fips";
        }
        if (!problem.empty()) {
            reject(std::move(problem));
            continue;
        }
        out.rows.push_back(std::move(row));
    }
    return out;
}

ParseResult<MobilityRow> parse_mobility_csv(const std::filesystem::path& file)
{
    auto in = open_or_throw(file);
    return parse_mobility_csv(in);
}

ParseResult<DeathsRow> parse_deaths_csv(const std::filesystem::path& file)
{
    auto in = open_or_throw(file);
    return parse_deaths_csv(in);
}

void write_mobility_csv(std::ostream& out, const std::vector<MobilityRow>& rows)
{
    const auto& meta = mobility_meta_columns();
    for (std::size_t c = 0; c < meta.size(); ++c) {
        out << (c ? "," : "") << meta[c];
    }
    for (const auto& cat : default_categories()) {
        out << ',' << cat << kPercentSuffix;
    }
    out << '\n';
    for (auto row : rows) {
        for (std::size_t c = 0; c < meta.size(); ++c) {
            out << (c ? "," : "") << csv::quote(*meta_field(row, meta[c]));
        }
        for (std::size_t k = 0; k < default_categories().size(); ++k) {
            out << ',';
            if (k < row.percent.size() && row.percent[k]) {
                out << csv::format_real(*row.percent[k]);
            }
        }
        out << '\n';
    }
}

void write_deaths_csv(std::ostream& out, const std::vector<DeathsRow>& rows)
{
    out << "date,county,state,fips,cases,deaths\n";
    for (const auto& r : rows) {
        out << r.date << ',' << csv::quote(r.county) << ',' << csv::quote(r.state) << ',' << r.fips << ','
            << format_count(r.cases) << ',' << format_count(r.deaths) << '\n';
    }
}

std::map<std::string, double> read_population_csv(std::istream& in)
{
    const auto header = read_header(in, "population");
    if (header.size() != 2 || (header[0] != "fips" && header[0] != "region_id") || header[1] != "population") {
        throw FormatError("population file must have header 'fips,population'");
    }
    std::map<std::string, double> out;
    std::string line;
    std::size_t line_no = 1;
    while (csv::read_line(in, line)) {
        ++line_no;
        if (line.empty()) {
            continue;
        }
        auto fields = csv::split_record(line);
        std::optional<double> pop;
        if (fields && fields->size() == 2) {
            pop = csv::parse_real((*fields)[1]);
        }
        if (!pop || !(*pop > 0.0)) {
            throw FormatError("population file line " + std::to_string(line_no) + ": expected 'fips,positive number'");
        }
        out[(*fields)[0]] = *pop;
    }
    return out;
}

std::vector<RegionDataset> join(const std::vector<MobilityRow>& mobility, const std::vector<DeathsRow>& deaths,
                                const JoinRequest& request)
{
    if (request.to < request.from) {
        throw InputError("empty date range " + request.from.to_string() + " .. " + request.to.to_string());
    }
    if (request.categories.empty()) {
        throw InputError("no mobility categories selected");
    }
    std::vector<std::size_t> cat_idx;
    for (const auto& c : request.categories) {
        cat_idx.push_back(category_index(c));
    }
    const int n_days = request.to - request.from + 1;

    std::vector<RegionDataset> out;
    for (const auto& id : request.region_ids) {
        std::map<Date, const MobilityRow*> mob;
        for (const auto& r : mobility) {
            if (r.fips != id) {
                continue;
            }
            auto [it, fresh] = mob.emplace(Date::parse(r.date), &r);
            if (!fresh && it->second->percent != r.percent) {
                throw JoinError("region " + id + ": conflicting mobility rows for " + r.date);
            }
        }
        std::map<Date, double> dth;
        for (const auto& r : deaths) {
            if (r.fips != id) {
                continue;
            }
            auto [it, fresh] = dth.emplace(Date::parse(r.date), r.deaths);
            if (!fresh && it->second != r.deaths) {
                throw JoinError("region " + id + ": conflicting death rows for " + r.date);
            }
        }
        if (mob.empty()) {
            throw JoinError("region " + id + " not found in the mobility data");
        }
        if (dth.empty()) {
            throw JoinError("region " + id + " not found in the deaths data");
        }
        auto pop = request.population.find(id);
        if (pop == request.population.end()) {
            throw JoinError("region " + id + " has no population entry");
        }

        RegionDataset ds;
        ds.region_id = id;
        ds.population = pop->second;
        ds.categories = request.categories;

        // Seed last-observation values from rows before the window.
        std::vector<std::optional<double>> last(cat_idx.size());
        for (auto it = mob.begin(); it != mob.end() && it->first < request.from; ++it) {
            for (std::size_t k = 0; k < cat_idx.size(); ++k) {
                if (auto v = it->second->percent[cat_idx[k]]) {
                    last[k] = v;
                }
            }
        }
        int missing_run = 0;
        const Date first_death = dth.begin()->first;
        for (int d = 0; d < n_days; ++d) {
            Date day = request.from + d;
            ds.dates.push_back(day.to_string());

            auto row = mob.find(day);
            if (row == mob.end()) {
                if (++missing_run > request.max_fill_days) {
                    throw GapError("region " + id + ": mobility missing for more than " +
                                   std::to_string(request.max_fill_days) + " consecutive days ending " +
                                   day.to_string());
                }
            }
            else {
                missing_run = 0;
                for (std::size_t k = 0; k < cat_idx.size(); ++k) {
                    if (auto v = row->second->percent[cat_idx[k]]) {
                        last[k] = v;
                    }
                }
            }
            MobilityVector m;
            for (const auto& v : last) {
                m.levels.push_back(percent_to_level(v.value_or(0.0)));
            }
            ds.mobility.push_back(std::move(m));

            if (day < first_death) {
                ds.deaths.push_back(0.0);
            }
            else if (auto it = dth.find(day); it != dth.end()) {
                ds.deaths.push_back(it->second);
            }
            else {
                throw GapError("region " + id + ": no death count reported for " + day.to_string());
            }
        }
        ds.validate();
        out.push_back(std::move(ds));
    }
    return out;
}

// --- synthetic data ------------------------------------------------------

void SynthSpec::validate() const
{
    global.validate();
    if (regions.empty()) {
        throw ValidationError("synthetic spec needs at least one region");
    }
    if (days < 14) {
        throw ValidationError("synthetic spec needs at least 14 days");
    }
    if (!(walk.lower > 0.0) || !(walk.upper > walk.lower) || walk.step_sd < 0.0) {
        throw ValidationError("random walk needs 0 < lower < upper and step_sd >= 0");
    }
    if (noise < 0.0) {
        throw ValidationError("noise must be nonnegative");
    }
    for (const auto& r : regions) {
        r.truth.mobility_map.validate();
        r.truth.init.validate();
        if (!(r.population > 0.0)) {
            throw ValidationError("synthetic region " + r.region_id + " needs a positive population");
        }
        if (r.truth.mobility_map.num_categories() != categories.size()) {
            throw ValidationError("synthetic region " + r.region_id + " map width differs from category count");
        }
    }
    Date::parse(start_date);
}

ParamSet SynthSpec::true_params() const
{
    ParamSet p;
    p.global = global;
    for (const auto& r : regions) {
        p.per_region.emplace(r.region_id, r.truth);
    }
    return p;
}

SynthSpec default_synth_spec(std::size_t regions, std::size_t K, std::size_t days, std::uint64_t seed)
{
    static const std::vector<std::string> order{"retail_and_recreation", "workplaces", "grocery_and_pharmacy",
                                                "transit_stations",      "parks",      "residential"};
    if (K < 1 || K > order.size()) {
        throw ValidationError("synthetic K must be between 1 and 6");
    }
    std::mt19937_64 rng(seed);
    auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
    auto log_uniform = [&](double lo, double hi) { return std::exp(uniform(std::log(lo), std::log(hi))); };

    SynthSpec spec;
    spec.days = days;
    spec.categories.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(K));
    spec.global = {0.25, 0.2, 0.12, 0.04, 0.12, 0.1, 0.25};
    for (std::size_t i = 0; i < regions; ++i) {
        SynthRegion r;
        char id[32];
        std::snprintf(id, sizeof id, "99%03zu", i + 1);
        r.region_id = id;
        r.population = std::round(log_uniform(3e5, 2e6));
        auto& map = r.truth.mobility_map;
        auto& init = r.truth.init;
        init.S0 = 0.6 * r.population;
        // Per-category share of the daily contact number S0 * beta at baseline.
        for (std::size_t k = 0; k < K; ++k) {
            map.theta.push_back(uniform(0.15, 0.35) / static_cast<double>(K) / init.S0);
            map.alpha.push_back(uniform(0.8, 1.6));
        }
        map.b = 0.01 / init.S0;
        map.gamma_A = uniform(0.4, 0.7);
        map.categories = spec.categories;
        double infected = r.population * log_uniform(2e-4, 8e-4);
        init.I0 = infected;
        init.E0 = infected * uniform(0.6, 1.0);
        init.A0 = infected * uniform(0.8, 1.2);
        init.H0 = 0.4 * infected * uniform(0.8, 1.2);
        init.R0 = 0.01 * r.population;
        init.D0 = r.population * log_uniform(2e-4, 6e-4);
        spec.regions.push_back(std::move(r));
    }
    return spec;
}

SynthResult synth_gen(const SynthSpec& spec, std::uint64_t seed)
{
    spec.validate();
    std::mt19937_64 rng(seed);
    // Separate stream so that the noise level does not change the mobility walk.
    std::seed_seq noise_seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), 1u};
    std::mt19937_64 noise_rng(noise_seq);
    std::normal_distribution<double> gauss(0.0, 1.0);
    const Date start = Date::parse(spec.start_date);
    const double lo = spec.walk.lower;
    const double hi = spec.walk.upper;

    SynthResult out;
    for (const auto& region : spec.regions) {
        const std::size_t K = spec.categories.size();
        RegionDataset ds;
        ds.region_id = region.region_id;
        ds.population = region.population;
        ds.categories = spec.categories;
        ds.deaths_smoothed = true;

        std::vector<double> level(K);
        for (auto& v : level) {
            v = lo + (hi - lo) * std::uniform_real_distribution<double>(0.25, 0.75)(rng);
        }
        for (std::size_t t = 0; t < spec.days; ++t) {
            ds.dates.push_back((start + static_cast<int>(t)).to_string());
            ds.mobility.push_back(MobilityVector{level});
            for (auto& v : level) {
                v += spec.walk.step_sd * gauss(rng);
                // Reflect back into the box.
                while (v < lo || v > hi) {
                    v = v < lo ? 2 * lo - v : 2 * hi - v;
                }
            }
        }
        const auto& map = region.truth.mobility_map;
        auto betas = observed_beta(ds, map, spec.days - 1);
        auto traj = rollout(region.truth.init, spec.global, map.gamma_A, betas, spec.days - 1);
        std::vector<double> clean;
        for (const auto& s : traj.states) {
            clean.push_back(s.D);
        }
        ds.deaths = clean;
        if (spec.noise > 0.0) {
            for (auto& d : ds.deaths) {
                d = std::max(0.0, d * (1.0 + spec.noise * gauss(noise_rng)));
            }
        }
        ds.validate();
        out.noiseless_deaths.emplace(region.region_id, std::move(clean));
        out.datasets.push_back(std::move(ds));
    }
    return out;
}

std::vector<MobilityRow> to_mobility_rows(const std::vector<RegionDataset>& data)
{
    std::vector<MobilityRow> rows;
    for (const auto& ds : data) {
        std::vector<std::size_t> idx;
        for (const auto& c : ds.categories) {
            idx.push_back(category_index(c));
        }
        for (std::size_t t = 0; t < ds.days(); ++t) {
            MobilityRow r;
            r.country_region_code = "US";
            r.country_region = "United States";
            r.sub_region_1 = "Synthetic";
            r.sub_region_2 = "County " + ds.region_id;
            r.fips = ds.region_id;
            r.date = ds.dates.at(t);
            r.percent.assign(default_categories().size(), std::nullopt);
            for (std::size_t k = 0; k < idx.size(); ++k) {
                r.percent[idx[k]] = std::round((ds.mobility[t][k] - 1.0) * 100.0);
            }
            rows.push_back(std::move(r));
        }
    }
    return rows;
}

std::vector<DeathsRow> to_deaths_rows(const std::vector<RegionDataset>& data)
{
    std::vector<DeathsRow> rows;
    for (const auto& ds : data) {
        for (std::size_t t = 0; t < ds.days(); ++t) {
            // Case counts are not modelled; the column is kept for schema compatibility.
            rows.push_back({ds.dates.at(t), "County " + ds.region_id, "Synthetic", ds.region_id, 0.0,
                            std::round(ds.deaths[t])});
        }
    }
    return rows;
}

} // namespace epigp
