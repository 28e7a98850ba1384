#include "epi/csv.hpp"
#include "epi/dataset.hpp"
#include "epi/errors.hpp"

#include <json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

namespace epi::data {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string block_name(bool is_static) { return is_static ? "static" : "dynamic"; }

csv::Table schema_table(const FeaturePanel& panel) {
    csv::Table t;
    t.header = {"name", "block", "unit", "share", "mobility_slot"};
    auto add = [&](const FeatureInfo& f, bool is_static) {
        t.rows.push_back({f.name, block_name(is_static), f.unit, f.share ? "1" : "0",
                          std::to_string(f.mobility_slot)});
    };
    for (const auto& f : panel.schema.static_features) add(f, true);
    for (const auto& f : panel.schema.dynamic_features) add(f, false);
    return t;
}

} // namespace

void save_panel(const FeaturePanel& panel, const std::string& dir) {
    fs::create_directories(dir);

    csv::Table statics;
    statics.header = {"fips", "state"};
    for (const auto& f : panel.schema.static_features) statics.header.push_back(f.name);
    for (size_t c = 0; c < panel.counties.size(); ++c) {
        std::vector<std::string> row{panel.counties[c].fips, panel.counties[c].state};
        for (size_t f = 0; f < panel.schema.static_features.size(); ++f) {
            row.push_back(csv::format_double(panel.static_values(c, f)));
        }
        statics.rows.push_back(std::move(row));
    }
    csv::write_file((fs::path(dir) / "static.csv").string(), statics);

    csv::Table dynamic;
    dynamic.header = {"fips", "date"};
    for (const auto& f : panel.schema.dynamic_features) dynamic.header.push_back(f.name);
    for (size_t c = 0; c < panel.counties.size(); ++c) {
        for (int d = 0; d < panel.num_days; ++d) {
            std::vector<std::string> row{panel.counties[c].fips, panel.date_at(d).to_string()};
            for (size_t f = 0; f < panel.schema.dynamic_features.size(); ++f) {
                row.push_back(csv::format_double(panel.dynamic_values(panel.row(c, d), f)));
            }
            dynamic.rows.push_back(std::move(row));
        }
    }
    csv::write_file((fs::path(dir) / "dynamic.csv").string(), dynamic);

    csv::Table outbreak;
    outbreak.header = {"fips", "state", "date", "confirmed", "deaths", "recovered"};
    for (size_t c = 0; c < panel.counties.size(); ++c) {
        for (int d = 0; d < panel.num_days; ++d) {
            const size_t r = panel.row(c, d);
            outbreak.rows.push_back({panel.counties[c].fips, panel.counties[c].state,
                                     panel.date_at(d).to_string(),
                                     csv::format_double(panel.outbreak_values(r, 0)),
                                     csv::format_double(panel.outbreak_values(r, 1)),
                                     csv::format_double(panel.outbreak_values(r, 2))});
        }
    }
    csv::write_file((fs::path(dir) / "outbreak.csv").string(), outbreak);

    csv::write_file((fs::path(dir) / "schema.csv").string(), schema_table(panel));

    csv::Table flags;
    flags.header = {"fips", "date", "column", "flag"};
    for (const auto& f : panel.flags) {
        flags.rows.push_back(
            {f.fips, f.date ? f.date->to_string() : std::string{}, f.column, f.flag});
    }
    csv::write_file((fs::path(dir) / "flags.csv").string(), flags);
}

FeaturePanel load_panel(const std::string& dir) {
    const csv::Table schema_csv = csv::read_file((fs::path(dir) / "schema.csv").string());
    FeaturePanel panel;
    for (const auto& row : schema_csv.rows) {
        if (row.size() != 5) throw DataError(dir + "/schema.csv: malformed row");
        FeatureInfo info{row[0], row[2], row[3] == "1",
                         static_cast<int>(csv::parse_int(row[4], "schema.csv mobility_slot"))};
        if (row[1] == "static") panel.schema.static_features.push_back(std::move(info));
        else if (row[1] == "dynamic") panel.schema.dynamic_features.push_back(std::move(info));
        else throw DataError(dir + "/schema.csv: unknown block '" + row[1] + "'");
    }

    const csv::Table statics = csv::read_file((fs::path(dir) / "static.csv").string());
    const csv::Table dynamic = csv::read_file((fs::path(dir) / "dynamic.csv").string());
    const csv::Table outbreak = csv::read_file((fs::path(dir) / "outbreak.csv").string());

    // Counties and dates come from the outbreak file; the other blocks must align.
    std::map<std::string, std::string> state_of;
    Date lo, hi;
    bool first_date = true;
    for (const auto& row : outbreak.rows) {
        state_of.emplace(row[0], row[1]);
        const Date date = Date::parse(row[2]);
        if (first_date) {
            lo = hi = date;
            first_date = false;
        } else {
            lo = std::min(lo, date);
            hi = std::max(hi, date);
        }
    }
    if (first_date) throw DataError(dir + ": outbreak.csv has no rows");
    panel.start_date = lo;
    panel.num_days = static_cast<int>(hi - lo) + 1;
    for (const auto& [fips, state] : state_of) panel.counties.push_back({fips, state});

    const size_t n_counties = panel.counties.size();
    const size_t n_rows = n_counties * static_cast<size_t>(panel.num_days);
    panel.static_values = Matrix(n_counties, panel.schema.static_features.size());
    panel.dynamic_values = Matrix(n_rows, panel.schema.dynamic_features.size());
    panel.outbreak_values = Matrix(n_rows, 3);
    panel.population.resize(n_counties);

    auto county_of = [&](const std::string& fips, const std::string& file) {
        auto idx = panel.county_index(fips);
        if (!idx) throw DataError(dir + "/" + file + ": unknown fips " + fips);
        return *idx;
    };
    auto day_of = [&](const std::string& date, const std::string& file) {
        const std::int64_t d = Date::parse(date) - panel.start_date;
        if (d < 0 || d >= panel.num_days) throw DataError(dir + "/" + file + ": date out of range");
        return static_cast<int>(d);
    };

    for (const auto& row : outbreak.rows) {
        const size_t c = county_of(row[0], "outbreak.csv");
        const size_t r = panel.row(c, day_of(row[2], "outbreak.csv"));
        for (int k = 0; k < 3; ++k) {
            panel.outbreak_values(r, static_cast<size_t>(k)) =
                csv::parse_double(row[static_cast<size_t>(3 + k)], "outbreak.csv");
        }
    }

    if (statics.header.size() != 2 + panel.schema.static_features.size()) {
        throw DataError(dir + "/static.csv: column count does not match schema.csv");
    }
    for (const auto& row : statics.rows) {
        const size_t c = county_of(row[0], "static.csv");
        for (size_t f = 0; f < panel.schema.static_features.size(); ++f) {
            panel.static_values(c, f) = csv::parse_double(row[2 + f], "static.csv");
        }
    }
    const auto pop_idx = panel.schema.static_index("population");
    if (!pop_idx) throw DataError(dir + ": schema has no 'population' static feature");
    for (size_t c = 0; c < n_counties; ++c) {
        panel.population[c] = static_cast<std::int64_t>(std::llround(panel.static_values(c, *pop_idx)));
    }

    if (dynamic.header.size() != 2 + panel.schema.dynamic_features.size()) {
        throw DataError(dir + "/dynamic.csv: column count does not match schema.csv");
    }
    for (const auto& row : dynamic.rows) {
        const size_t c = county_of(row[0], "dynamic.csv");
        const size_t r = panel.row(c, day_of(row[1], "dynamic.csv"));
        for (size_t f = 0; f < panel.schema.dynamic_features.size(); ++f) {
            panel.dynamic_values(r, f) = csv::parse_double(row[2 + f], "dynamic.csv");
        }
    }

    const csv::Table flags = csv::read_file((fs::path(dir) / "flags.csv").string());
    for (const auto& row : flags.rows) {
        CellFlag flag{row[0], std::nullopt, row[2], row[3]};
        if (!row[1].empty()) flag.date = Date::parse(row[1]);
        panel.flags.push_back(std::move(flag));
    }

    validate_panel(panel);
    return panel;
}

void write_panel_dataset_descriptors(const FeaturePanel& panel, const std::string& dir) {
    auto type_string = [](const FeatureInfo& f) {
        return f.share ? std::string("share_fraction")
                       : (f.name == "population" ? std::string("count") : std::string("real"));
    };

    json statics;
    statics["name"] = "panel_static";
    statics["kind"] = "static";
    statics["fips_column"] = "fips";
    statics["state_column"] = "state";
    statics["columns"] = json::array();
    for (const auto& f : panel.schema.static_features) {
        statics["columns"].push_back(
            {{"name", f.name}, {"type", type_string(f)}, {"unit", f.unit}});
    }

    json dynamic;
    dynamic["name"] = "panel_dynamic";
    dynamic["kind"] = "dynamic";
    dynamic["fips_column"] = "fips";
    dynamic["date_column"] = "date";
    dynamic["columns"] = json::array();
    for (const auto& f : panel.schema.dynamic_features) {
        json col{{"name", f.name}, {"type", type_string(f)}, {"unit", f.unit}};
        if (f.mobility_slot > 0) col["mobility_slot"] = f.mobility_slot;
        dynamic["columns"].push_back(std::move(col));
    }

    json outbreak;
    outbreak["name"] = "panel_outbreak";
    outbreak["kind"] = "outbreak";
    outbreak["fips_column"] = "fips";
    outbreak["state_column"] = "state";
    outbreak["date_column"] = "date";
    outbreak["confirmed_column"] = "confirmed";
    outbreak["deaths_column"] = "deaths";
    outbreak["recovered_column"] = "recovered";

    auto dump = [&](const json& doc, const std::string& file) {
        std::ofstream out(fs::path(dir) / file);
        if (!out) throw DataError("cannot write " + file);
        out << doc.dump(2) << '\n';
    };
    dump(statics, "static_schema.json");
    dump(dynamic, "dynamic_schema.json");
    dump(outbreak, "outbreak_schema.json");
}

} // namespace epi::data
