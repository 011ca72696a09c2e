#pragma once

#include "openmig/error.hpp"
#include "openmig/io.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <unordered_map>
#include <vector>

namespace openmig {

enum class Skill { all, tertiary, nontertiary };

inline std::string_view to_string(Skill s) {
    switch (s) {
    case Skill::all: return "all";
    case Skill::tertiary: return "tertiary";
    case Skill::nontertiary: return "nontertiary";
    }
    return "all";
}

inline std::optional<Skill> parse_skill(std::string_view s) {
    if (s == "all") return Skill::all;
    if (s == "tertiary") return Skill::tertiary;
    if (s == "nontertiary") return Skill::nontertiary;
    return std::nullopt;
}

inline bool is_iso3(std::string_view code) {
    return code.size() == 3 && std::all_of(code.begin(), code.end(), [](char c) { return c >= 'A' && c <= 'Z'; });
}

inline bool is_census_year(long long year) { return year == 2000 || year == 2010 || year == 2020; }

struct StockRow {
    std::string origin;
    std::string destination;
    int year = 0;
    Skill skill = Skill::all;
    double stock = 0.0;
};

struct StockTable {
    std::vector<StockRow> rows;
    std::string digest;
};

struct DyadRow {
    std::string origin;
    std::string destination;
    double dist_km = 0.0;
    int contig = 0;
    int comlang = 0;
    int comcol = 0;
    int coldepever = 0;
};

struct DyadTable {
    std::vector<DyadRow> rows;
    std::vector<std::string> warnings; // asymmetric coverage
    std::string digest;
};

struct IndicatorRow {
    std::string country;
    int year = 0;
    double pop = 0.0;
    std::optional<double> gdp_pc_ppp;
    std::optional<double> land_km2;
    std::optional<double> old_dep_ratio;
    std::optional<double> wage_proxy;
    std::string region;
};

struct IndicatorTable {
    std::vector<IndicatorRow> rows;
    std::string digest;

    const IndicatorRow* find(const std::string& country, int year) const {
        for (const auto& r : rows)
            if (r.year == year && r.country == country) return &r;
        return nullptr;
    }

    /// Last non-empty region label per country, in year order.
    std::map<std::string, std::string> region_map() const {
        std::vector<const IndicatorRow*> sorted;
        for (const auto& r : rows) sorted.push_back(&r);
        std::stable_sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->year < b->year; });
        std::map<std::string, std::string> out;
        for (const auto* r : sorted)
            if (!r->region.empty()) out[r->country] = r->region;
        return out;
    }
};

struct PanelFilter {
    double min_population = 1.2e6;
    std::vector<int> years{2000, 2010, 2020};
    Skill skill = Skill::all;
};

struct PanelRow {
    std::string origin;
    std::string destination;
    int year = 0;
    Skill skill = Skill::all;
    double stock = 0.0;
    bool imputed_zero = false;
    double pop_d = 0.0;
    double log_pop_d = 0.0;
    double log_gdppc_d = 0.0;
    double log_dist = 0.0;
    double contig = 0.0;
    double comlang = 0.0;
    double comcol = 0.0;
    double coldepever = 0.0;
    double log_land_d = 0.0;
    std::string origin_fe_key;
    std::string origin_year_fe_key;
    std::string year_fe_key;
};

struct FilterLogEntry {
    std::string origin;
    std::string destination;
    int year = 0;
    std::string reason;
};

struct EstimationPanel {
    std::vector<PanelRow> rows;
    Skill skill = Skill::all;
    std::vector<int> years;
    double min_population = 0.0;
    std::map<std::string, std::string> input_digests;
    std::vector<FilterLogEntry> excluded;
    std::size_t rows_in = 0;
    std::size_t imputed_zeros = 0;

    std::size_t size() const { return rows.size(); }
};

inline const std::vector<std::string>& numeric_panel_columns() {
    static const std::vector<std::string> names{"stock",  "pop_d",   "log_pop_d", "log_gdppc_d", "log_dist",
                                                "contig", "comlang", "comcol",    "coldepever",  "log_land_d"};
    return names;
}

inline double panel_value(const PanelRow& r, std::string_view name) {
    if (name == "stock") return r.stock;
    if (name == "pop_d") return r.pop_d;
    if (name == "log_pop_d") return r.log_pop_d;
    if (name == "log_gdppc_d") return r.log_gdppc_d;
    if (name == "log_dist") return r.log_dist;
    if (name == "contig") return r.contig;
    if (name == "comlang") return r.comlang;
    if (name == "comcol") return r.comcol;
    if (name == "coldepever") return r.coldepever;
    if (name == "log_land_d") return r.log_land_d;
    throw Error(ErrorKind::UnknownColumn, "no numeric panel column '" + std::string(name) + "'");
}

inline bool is_numeric_panel_column(std::string_view name) {
    const auto& names = numeric_panel_columns();
    return std::find(names.begin(), names.end(), name) != names.end();
}

inline bool is_key_panel_column(std::string_view name) {
    return name == "origin" || name == "destination" || name == "year" || name == "origin_year" ||
           name == "origin_fe_key" || name == "origin_year_fe_key" || name == "year_fe_key" || name == "dyad" ||
           name == "row";
}

/// String key of a categorical panel column. "row" gives every row its own key.
inline std::string panel_key(const PanelRow& r, std::string_view name, std::size_t index = 0) {
    if (name == "origin" || name == "origin_fe_key") return r.origin_fe_key.empty() ? r.origin : r.origin_fe_key;
    if (name == "destination") return r.destination;
    if (name == "year" || name == "year_fe_key") return r.year_fe_key.empty() ? std::to_string(r.year) : r.year_fe_key;
    if (name == "origin_year" || name == "origin_year_fe_key")
        return r.origin_year_fe_key.empty() ? r.origin + "_" + std::to_string(r.year) : r.origin_year_fe_key;
    if (name == "dyad") return r.origin + "_" + r.destination;
    if (name == "row") return std::to_string(index);
    throw Error(ErrorKind::UnknownColumn, "no key panel column '" + std::string(name) + "'");
}

namespace detail {

inline std::string read_digest(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) throw Error(ErrorKind::FileNotFound, "input file not found: " + path.string());
    return io::file_sha256(path);
}

inline const std::string& cell(const io::CsvTable& t, std::size_t row, std::size_t col) {
    const auto& r = t.rows[row];
    if (col >= r.size())
        throw Error(ErrorKind::MalformedRow, "expected " + std::to_string(t.header.size()) + " fields, got " +
                                                 std::to_string(r.size()),
                    row);
    return r[col];
}

inline std::string iso3_cell(const io::CsvTable& t, std::size_t row, std::size_t col) {
    const auto& v = cell(t, row, col);
    if (!is_iso3(v)) throw Error(ErrorKind::BadISO3, "'" + v + "' is not an ISO3 code", row);
    return v;
}

inline double number_cell(const io::CsvTable& t, std::size_t row, std::size_t col) {
    auto v = io::parse_double(cell(t, row, col));
    if (!v || !std::isfinite(*v))
        throw Error(ErrorKind::InvalidValue, "column '" + t.header[col] + "' is not a finite number", row);
    return *v;
}

inline std::optional<double> optional_number_cell(const io::CsvTable& t, std::size_t row, std::size_t col) {
    const auto& s = cell(t, row, col);
    if (s.empty()) return std::nullopt;
    auto v = io::parse_double(s);
    if (!v || !std::isfinite(*v))
        throw Error(ErrorKind::InvalidValue, "column '" + t.header[col] + "' is not a finite number", row);
    return v;
}

inline int year_cell(const io::CsvTable& t, std::size_t row, std::size_t col) {
    auto v = io::parse_int(cell(t, row, col));
    if (!v) throw Error(ErrorKind::InvalidValue, "year is not an integer", row);
    return static_cast<int>(*v);
}

inline int dummy_cell(const io::CsvTable& t, std::size_t row, std::size_t col) {
    auto v = io::parse_double(cell(t, row, col));
    if (!v || (*v != 0.0 && *v != 1.0))
        throw Error(ErrorKind::NonBinaryDummy, "column '" + t.header[col] + "' must be 0 or 1", row);
    return static_cast<int>(*v);
}

} // namespace detail

inline StockTable parse_stock_table(const io::CsvTable& t) {
    const auto c_origin = t.column("origin");
    const auto c_dest = t.column("destination");
    const auto c_year = t.column("year");
    const auto c_skill = t.column("skill");
    const auto c_stock = t.column("stock");

    StockTable out;
    out.rows.reserve(t.rows.size());
    std::set<std::tuple<std::string, std::string, int, Skill>> seen;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        StockRow r;
        r.origin = detail::iso3_cell(t, i, c_origin);
        r.destination = detail::iso3_cell(t, i, c_dest);
        if (r.origin == r.destination)
            throw Error(ErrorKind::InvalidValue, "origin equals destination (" + r.origin + ")", i);
        r.year = detail::year_cell(t, i, c_year);
        if (!is_census_year(r.year))
            throw Error(ErrorKind::InvalidValue, "year " + std::to_string(r.year) + " not in {2000,2010,2020}", i);
        auto skill = parse_skill(detail::cell(t, i, c_skill));
        if (!skill) throw Error(ErrorKind::InvalidValue, "unknown skill '" + detail::cell(t, i, c_skill) + "'", i);
        r.skill = *skill;
        auto stock = io::parse_double(detail::cell(t, i, c_stock));
        if (!stock || !std::isfinite(*stock)) throw Error(ErrorKind::InvalidValue, "stock is not a finite number", i);
        if (*stock < 0.0) throw Error(ErrorKind::NegativeStock, "stock " + io::format_double(*stock) + " < 0", i);
        r.stock = *stock;
        if (!seen.emplace(r.origin, r.destination, r.year, r.skill).second)
            throw Error(ErrorKind::DuplicateKey,
                        "duplicate key (" + r.origin + "," + r.destination + "," + std::to_string(r.year) + "," +
                            std::string(to_string(r.skill)) + ")",
                        i);
        out.rows.push_back(std::move(r));
    }
    return out;
}

inline StockTable load_stock_table(const std::filesystem::path& path) {
    auto digest = detail::read_digest(path);
    auto table = parse_stock_table(io::read_csv(path));
    table.digest = std::move(digest);
    return table;
}

inline DyadTable parse_dyad_table(const io::CsvTable& t) {
    const auto c_origin = t.column("origin");
    const auto c_dest = t.column("destination");
    const auto c_dist = t.column("dist_km");
    const auto c_contig = t.column("contig");
    const auto c_comlang = t.column("comlang");
    const auto c_comcol = t.column("comcol");
    const auto c_coldep = t.column("coldepever");

    DyadTable out;
    std::set<std::pair<std::string, std::string>> seen;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        DyadRow r;
        r.origin = detail::iso3_cell(t, i, c_origin);
        r.destination = detail::iso3_cell(t, i, c_dest);
        r.dist_km = detail::number_cell(t, i, c_dist);
        if (r.dist_km <= 0.0)
            throw Error(ErrorKind::NonpositiveDistance, "dist_km " + io::format_double(r.dist_km) + " <= 0", i);
        r.contig = detail::dummy_cell(t, i, c_contig);
        r.comlang = detail::dummy_cell(t, i, c_comlang);
        r.comcol = detail::dummy_cell(t, i, c_comcol);
        r.coldepever = detail::dummy_cell(t, i, c_coldep);
        if (!seen.emplace(r.origin, r.destination).second)
            throw Error(ErrorKind::DuplicateKey, "duplicate dyad (" + r.origin + "," + r.destination + ")", i);
        out.rows.push_back(std::move(r));
    }
    for (const auto& [o, d] : seen)
        if (!seen.count({d, o})) out.warnings.push_back("dyad (" + o + "," + d + ") has no reverse (" + d + "," + o + ")");
    return out;
}

inline DyadTable load_dyad_table(const std::filesystem::path& path) {
    auto digest = detail::read_digest(path);
    auto table = parse_dyad_table(io::read_csv(path));
    table.digest = std::move(digest);
    return table;
}

inline IndicatorTable parse_indicator_table(const io::CsvTable& t) {
    const auto c_country = t.column("country");
    const auto c_year = t.column("year");
    const auto c_pop = t.column("pop");
    const auto c_gdp = t.column("gdp_pc_ppp");
    const auto c_land = t.column("land_km2");
    const auto c_old = t.column("old_dep_ratio");
    const auto c_wage = t.column("wage_proxy");
    const auto c_region = t.column("region");

    IndicatorTable out;
    std::set<std::pair<std::string, int>> seen;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        IndicatorRow r;
        r.country = detail::iso3_cell(t, i, c_country);
        r.year = detail::year_cell(t, i, c_year);
        auto pop = io::parse_double(detail::cell(t, i, c_pop));
        if (!pop || !std::isfinite(*pop) || *pop <= 0.0)
            throw Error(ErrorKind::NonpositivePopulation, "pop must be a positive number for " + r.country, i);
        r.pop = *pop;
        r.gdp_pc_ppp = detail::optional_number_cell(t, i, c_gdp);
        if (r.gdp_pc_ppp && *r.gdp_pc_ppp <= 0.0) throw Error(ErrorKind::InvalidValue, "gdp_pc_ppp must be > 0", i);
        r.land_km2 = detail::optional_number_cell(t, i, c_land);
        if (r.land_km2 && *r.land_km2 <= 0.0) throw Error(ErrorKind::InvalidValue, "land_km2 must be > 0", i);
        r.old_dep_ratio = detail::optional_number_cell(t, i, c_old);
        if (r.old_dep_ratio && *r.old_dep_ratio < 0.0) throw Error(ErrorKind::InvalidValue, "old_dep_ratio must be >= 0", i);
        r.wage_proxy = detail::optional_number_cell(t, i, c_wage);
        if (r.wage_proxy && *r.wage_proxy <= 0.0) throw Error(ErrorKind::InvalidValue, "wage_proxy must be > 0", i);
        r.region = detail::cell(t, i, c_region);
        if (!seen.emplace(r.country, r.year).second)
            throw Error(ErrorKind::DuplicateKey, "duplicate (" + r.country + "," + std::to_string(r.year) + ")", i);
        out.rows.push_back(std::move(r));
    }
    return out;
}

inline IndicatorTable load_indicator_table(const std::filesystem::path& path) {
    auto digest = detail::read_digest(path);
    auto table = parse_indicator_table(io::read_csv(path));
    table.digest = std::move(digest);
    return table;
}

inline std::string origin_year_key(const std::string& origin, int year) { return origin + "_" + std::to_string(year); }

inline void sort_panel_rows(std::vector<PanelRow>& rows) {
    std::sort(rows.begin(), rows.end(), [](const PanelRow& a, const PanelRow& b) {
        return std::tie(a.origin, a.destination, a.year, a.skill) < std::tie(b.origin, b.destination, b.year, b.skill);
    });
}

/// Joins stocks, dyad covariates and destination indicators into the dense
/// origin x destination x year grid. Absent stock cells become zeros; rows that
/// cannot be completed are dropped and logged, never imputed.
inline EstimationPanel build_panel(const StockTable& stocks, const DyadTable& dyads, const IndicatorTable& indicators,
                                   const PanelFilter& filter) {
    EstimationPanel panel;
    panel.skill = filter.skill;
    panel.years = filter.years;
    std::sort(panel.years.begin(), panel.years.end());
    panel.min_population = filter.min_population;
    panel.input_digests = {{"stocks", stocks.digest}, {"dyads", dyads.digest}, {"countries", indicators.digest}};

    std::map<std::tuple<std::string, std::string, int>, double> stock_of;
    std::map<int, std::set<std::string>> origins_by_year, dests_by_year;
    for (const auto& r : stocks.rows) {
        if (r.skill != filter.skill) continue;
        stock_of[{r.origin, r.destination, r.year}] = r.stock;
        origins_by_year[r.year].insert(r.origin);
        dests_by_year[r.year].insert(r.destination);
    }

    std::map<std::pair<std::string, std::string>, const DyadRow*> dyad_of;
    for (const auto& r : dyads.rows) dyad_of[{r.origin, r.destination}] = &r;

    std::map<std::pair<std::string, int>, const IndicatorRow*> ind_of;
    std::map<std::string, double> max_pop;
    std::set<int> indicator_years;
    for (const auto& r : indicators.rows) {
        ind_of[{r.country, r.year}] = &r;
        max_pop[r.country] = std::max(max_pop[r.country], r.pop);
        indicator_years.insert(r.year);
    }
    for (int y : panel.years)
        if (!indicator_years.count(y))
            throw Error(ErrorKind::InvalidValue, "indicator table has no rows for year " + std::to_string(y));

    auto exclude = [&](const std::string& o, const std::string& d, int y, const char* reason) {
        panel.excluded.push_back({o, d, y, reason});
    };

    for (int y : panel.years) {
        const auto& origins = origins_by_year[y];
        const auto& dests = dests_by_year[y];
        for (const auto& d : dests) {
            auto mp = max_pop.find(d);
            const bool below_floor = mp == max_pop.end() || mp->second < filter.min_population;
            auto ind_it = ind_of.find({d, y});
            const IndicatorRow* ind = ind_it == ind_of.end() ? nullptr : ind_it->second;
            for (const auto& o : origins) {
                if (o == d) continue;
                ++panel.rows_in;
                if (below_floor) {
                    exclude(o, d, y, "below_min_population");
                    continue;
                }
                if (!ind || !ind->gdp_pc_ppp || !ind->land_km2) {
                    exclude(o, d, y, "missing_indicator");
                    continue;
                }
                auto dy = dyad_of.find({o, d});
                if (dy == dyad_of.end()) {
                    exclude(o, d, y, "missing_dyad");
                    continue;
                }
                PanelRow row;
                row.origin = o;
                row.destination = d;
                row.year = y;
                row.skill = filter.skill;
                auto st = stock_of.find({o, d, y});
                if (st == stock_of.end()) {
                    row.imputed_zero = true;
                    ++panel.imputed_zeros;
                } else {
                    row.stock = st->second;
                }
                row.pop_d = ind->pop;
                row.log_pop_d = std::log(ind->pop);
                row.log_gdppc_d = std::log(*ind->gdp_pc_ppp);
                row.log_land_d = std::log(*ind->land_km2);
                row.log_dist = std::log(dy->second->dist_km);
                if (!std::isfinite(row.log_pop_d) || !std::isfinite(row.log_gdppc_d) || !std::isfinite(row.log_land_d) ||
                    !std::isfinite(row.log_dist)) {
                    exclude(o, d, y, "nonfinite_log_input");
                    continue;
                }
                row.contig = dy->second->contig;
                row.comlang = dy->second->comlang;
                row.comcol = dy->second->comcol;
                row.coldepever = dy->second->coldepever;
                row.origin_fe_key = o;
                row.origin_year_fe_key = origin_year_key(o, y);
                row.year_fe_key = std::to_string(y);
                panel.rows.push_back(std::move(row));
            }
        }
    }
    // imputed zeros only count rows that survived
    panel.imputed_zeros = static_cast<std::size_t>(
        std::count_if(panel.rows.begin(), panel.rows.end(), [](const PanelRow& r) { return r.imputed_zero; }));
    if (panel.rows.empty()) throw Error(ErrorKind::EmptyPanel, "no rows survive the panel filters");
    sort_panel_rows(panel.rows);
    return panel;
}

inline std::map<int, std::size_t> destinations_per_year(const EstimationPanel& panel) {
    std::map<int, std::set<std::string>> sets;
    for (const auto& r : panel.rows) sets[r.year].insert(r.destination);
    std::map<int, std::size_t> out;
    for (const auto& [y, s] : sets) out[y] = s.size();
    return out;
}

inline std::map<int, std::size_t> origins_per_year(const EstimationPanel& panel) {
    std::map<int, std::set<std::string>> sets;
    for (const auto& r : panel.rows) sets[r.year].insert(r.origin);
    std::map<int, std::size_t> out;
    for (const auto& [y, s] : sets) out[y] = s.size();
    return out;
}

inline const std::vector<std::string>& panel_csv_header() {
    static const std::vector<std::string> header{
        "origin",  "destination", "year",   "skill",      "stock",      "imputed_zero",  "pop_d",
        "log_pop_d", "log_gdppc_d", "log_dist", "contig", "comlang", "comcol", "coldepever", "log_land_d",
        "origin_fe_key", "origin_year_fe_key", "year_fe_key"};
    return header;
}

inline std::string panel_to_csv(const EstimationPanel& panel) {
    std::string out;
    const auto& header = panel_csv_header();
    for (std::size_t j = 0; j < header.size(); ++j) out += (j ? "," : "") + header[j];
    out += '\n';
    for (const auto& r : panel.rows) {
        out += r.origin + ',' + r.destination + ',' + std::to_string(r.year) + ',' + std::string(to_string(r.skill)) +
               ',' + io::format_double(r.stock) + ',' + (r.imputed_zero ? "1" : "0") + ',' + io::format_double(r.pop_d) +
               ',' + io::format_double(r.log_pop_d) + ',' + io::format_double(r.log_gdppc_d) + ',' +
               io::format_double(r.log_dist) + ',' + io::format_double(r.contig) + ',' + io::format_double(r.comlang) +
               ',' + io::format_double(r.comcol) + ',' + io::format_double(r.coldepever) + ',' +
               io::format_double(r.log_land_d) + ',' + r.origin_fe_key + ',' + r.origin_year_fe_key + ',' +
               r.year_fe_key + '\n';
    }
    return out;
}

inline EstimationPanel panel_from_csv(const io::CsvTable& t) {
    EstimationPanel panel;
    std::vector<std::size_t> col;
    for (const auto& name : panel_csv_header()) col.push_back(t.column(name));
    std::set<int> years;
    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        PanelRow r;
        r.origin = detail::iso3_cell(t, i, col[0]);
        r.destination = detail::iso3_cell(t, i, col[1]);
        r.year = detail::year_cell(t, i, col[2]);
        auto skill = parse_skill(detail::cell(t, i, col[3]));
        if (!skill) throw Error(ErrorKind::InvalidValue, "unknown skill", i);
        r.skill = *skill;
        r.stock = detail::number_cell(t, i, col[4]);
        r.imputed_zero = detail::cell(t, i, col[5]) == "1";
        r.pop_d = detail::number_cell(t, i, col[6]);
        r.log_pop_d = detail::number_cell(t, i, col[7]);
        r.log_gdppc_d = detail::number_cell(t, i, col[8]);
        r.log_dist = detail::number_cell(t, i, col[9]);
        r.contig = detail::number_cell(t, i, col[10]);
        r.comlang = detail::number_cell(t, i, col[11]);
        r.comcol = detail::number_cell(t, i, col[12]);
        r.coldepever = detail::number_cell(t, i, col[13]);
        r.log_land_d = detail::number_cell(t, i, col[14]);
        r.origin_fe_key = detail::cell(t, i, col[15]);
        r.origin_year_fe_key = detail::cell(t, i, col[16]);
        r.year_fe_key = detail::cell(t, i, col[17]);
        years.insert(r.year);
        panel.skill = r.skill;
        panel.rows.push_back(std::move(r));
    }
    panel.years.assign(years.begin(), years.end());
    panel.rows_in = panel.rows.size();
    panel.imputed_zeros = static_cast<std::size_t>(
        std::count_if(panel.rows.begin(), panel.rows.end(), [](const PanelRow& r) { return r.imputed_zero; }));
    return panel;
}

inline nlohmann::ordered_json panel_meta_json(const EstimationPanel& panel, const std::string& generated_at = {}) {
    nlohmann::ordered_json j;
    j["schema_version"] = 1;
    j["skill"] = std::string(to_string(panel.skill));
    j["years"] = panel.years;
    j["min_population"] = panel.min_population;
    j["input_digests"] = panel.input_digests;
    j["rows_in"] = panel.rows_in;
    j["rows_kept"] = panel.rows.size();
    j["rows_excluded"] = panel.excluded.size();
    j["imputed_zeros"] = panel.imputed_zeros;
    std::map<std::string, std::size_t> by_reason;
    for (const auto& e : panel.excluded) ++by_reason[e.reason];
    j["excluded_by_reason"] = by_reason;
    nlohmann::ordered_json dpy, opy;
    for (const auto& [y, n] : destinations_per_year(panel)) dpy[std::to_string(y)] = n;
    for (const auto& [y, n] : origins_per_year(panel)) opy[std::to_string(y)] = n;
    j["destinations_per_year"] = dpy;
    j["origins_per_year"] = opy;
    auto log = nlohmann::ordered_json::array();
    for (const auto& e : panel.excluded)
        log.push_back({{"origin", e.origin}, {"destination", e.destination}, {"year", e.year}, {"reason", e.reason}});
    j["filter_log"] = std::move(log);
    j["generated_at"] = generated_at;
    return j;
}

} // namespace openmig
