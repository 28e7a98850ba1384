#include "epi/dataset.hpp"

#include "epi/csv.hpp"
#include "epi/errors.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>

namespace epi::data {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

bool is_missing_field(const std::string& s) {
    return s.empty() || s == "NA" || s == "NaN" || s == "null";
}

bool parse_finite(const std::string& s, double& out) {
    try {
        out = csv::parse_double(s, "");
        return true;
    } catch (const DataError&) {
        return false;
    }
}

double median(std::vector<double> values) {
    const size_t n = values.size();
    std::sort(values.begin(), values.end());
    if (n % 2 == 1) return values[n / 2];
    return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

} // namespace

void validate_county_key(const CountyKey& key) {
    bool ok = key.fips.size() == 5 && key.state.size() == 2;
    if (ok) {
        for (char c : key.fips) ok = ok && std::isdigit(static_cast<unsigned char>(c));
        for (char c : key.state) ok = ok && std::isupper(static_cast<unsigned char>(c));
    }
    if (!ok) {
        throw DataError("invalid county key: fips='" + key.fips + "' state='" + key.state + "'");
    }
}

// ---------------------------------------------------------------------------
// Schema descriptors
// ---------------------------------------------------------------------------

namespace {

using nlohmann::json;

ColumnType column_type_from_string(const std::string& s) {
    if (s == "count") return ColumnType::Count;
    if (s == "real") return ColumnType::Real;
    if (s == "share_fraction") return ColumnType::ShareFraction;
    if (s == "share_percent") return ColumnType::SharePercent;
    throw DataError("schema: unknown column type '" + s + "'");
}

void require_keys(const json& obj, const std::set<std::string>& allowed,
                  const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (!allowed.count(it.key())) {
            throw DataError("schema " + where + ": unknown key '" + it.key() + "'");
        }
    }
}

} // namespace

DatasetSchema DatasetSchema::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open schema descriptor: " + path);
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw DataError("schema " + path + ": " + e.what());
    }

    require_keys(doc,
                 {"name", "kind", "fips_column", "state_column", "date_column",
                  "confirmed_column", "deaths_column", "recovered_column", "columns", "derived"},
                 path);

    DatasetSchema schema;
    schema.name = doc.value("name", std::string{});
    const std::string kind = doc.value("kind", std::string{});
    if (kind == "static") schema.kind = DatasetKind::Static;
    else if (kind == "dynamic") schema.kind = DatasetKind::Dynamic;
    else if (kind == "outbreak") schema.kind = DatasetKind::Outbreak;
    else throw DataError("schema " + path + ": kind must be static|dynamic|outbreak");

    schema.fips_column = doc.value("fips_column", std::string{});
    schema.state_column = doc.value("state_column", std::string{});
    schema.date_column = doc.value("date_column", std::string{});
    schema.confirmed_column = doc.value("confirmed_column", std::string{});
    schema.deaths_column = doc.value("deaths_column", std::string{});
    schema.recovered_column = doc.value("recovered_column", std::string{});

    if (schema.fips_column.empty()) throw DataError("schema " + path + ": fips_column required");
    if (schema.kind != DatasetKind::Static && schema.date_column.empty()) {
        throw DataError("schema " + path + ": date_column required for dynamic/outbreak tables");
    }
    if (schema.kind == DatasetKind::Outbreak) {
        if (schema.state_column.empty()) {
            throw DataError("schema " + path + ": state_column required for outbreak tables");
        }
        if (schema.confirmed_column.empty() || schema.deaths_column.empty()) {
            throw DataError("schema " + path +
                            ": confirmed_column and deaths_column required for outbreak tables");
        }
    }

    for (const auto& col : doc.value("columns", json::array())) {
        require_keys(col, {"name", "type", "unit", "mobility_slot", "keep"}, path);
        ColumnSpec spec;
        spec.name = col.at("name").get<std::string>();
        spec.type = column_type_from_string(col.value("type", std::string("real")));
        spec.unit = col.value("unit", std::string{});
        spec.mobility_slot = col.value("mobility_slot", 0);
        spec.keep = col.value("keep", true);
        if (spec.mobility_slot < 0 || spec.mobility_slot > 6) {
            throw DataError("schema " + path + ": mobility_slot must be in 0..6");
        }
        schema.columns.push_back(std::move(spec));
    }
    for (const auto& der : doc.value("derived", json::array())) {
        require_keys(der, {"name", "kind", "inputs"}, path);
        DerivedSpec spec;
        spec.name = der.at("name").get<std::string>();
        spec.kind = der.at("kind").get<std::string>();
        for (const auto& input : der.at("inputs")) spec.inputs.push_back(input.get<std::string>());
        if (spec.kind != "diversity_index") {
            throw DataError("schema " + path + ": unknown derived kind '" + spec.kind + "'");
        }
        schema.derived.push_back(std::move(spec));
    }
    if (schema.kind == DatasetKind::Outbreak && !schema.columns.empty()) {
        throw DataError("schema " + path + ": outbreak tables carry only the count series");
    }
    return schema;
}

// ---------------------------------------------------------------------------
// Regional metric formulas
// ---------------------------------------------------------------------------

double diversity_index(std::span<const double> race_counts) {
    double total = 0.0;
    for (double n : race_counts) {
        if (!(n >= 0.0)) throw DataError("diversity_index: counts must be non-negative");
        total += n;
    }
    if (total <= 0.0) throw DataError("diversity_index: all-zero counts");
    double sum_sq = 0.0;
    for (double n : race_counts) {
        const double p = n / total;
        sum_sq += p * p;
    }
    return 1.0 - sum_sq;
}

double compliance_score(std::span<const double> mobility) {
    if (mobility.size() != 6) {
        throw DataError("compliance_score: expected 6 mobility values, got " +
                        std::to_string(mobility.size()));
    }
    double sum = 0.0;
    for (double m : mobility) sum += m;
    return -1.0 - (sum / 6.0 - 100.0) / 100.0;
}

std::vector<double> per_capita(std::span<const double> counts, std::int64_t population,
                               double base) {
    if (population <= 0) throw DataError("per_capita: population must be positive");
    std::vector<double> out(counts.size());
    const double scale = base / static_cast<double>(population);
    for (size_t i = 0; i < counts.size(); ++i) out[i] = counts[i] * scale;
    return out;
}

// ---------------------------------------------------------------------------
// load_dataset
// ---------------------------------------------------------------------------

namespace {

// FIPS codes arrive with dropped leading zeros in several sources; accept
// 1..5 digits and zero-pad.
bool normalize_fips(const std::string& raw, std::string& out) {
    if (raw.empty() || raw.size() > 5) return false;
    for (char c : raw) {
        if (!std::isdigit(static_cast<unsigned char>(c))) return false;
    }
    out = std::string(5 - raw.size(), '0') + raw;
    return true;
}

bool normalize_state(const std::string& raw, std::string& out) {
    if (raw.size() != 2) return false;
    out.clear();
    for (char c : raw) {
        if (!std::isalpha(static_cast<unsigned char>(c))) return false;
        out += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
    }
    return true;
}

// Parses one typed cell. Returns false (with reason) on coercion failure;
// missing cells come back as NaN.
bool parse_cell(const std::string& field, ColumnType type, double& out, std::string& reason) {
    if (is_missing_field(field)) {
        out = kNaN;
        return true;
    }
    double v;
    if (!parse_finite(field, v)) {
        reason = "not a number: '" + field + "'";
        return false;
    }
    switch (type) {
    case ColumnType::Count:
        if (v < 0.0) {
            reason = "negative count: " + field;
            return false;
        }
        break;
    case ColumnType::ShareFraction:
        if (v < -1e-9 || v > 1.0 + 1e-9) {
            reason = "share outside [0,1]: " + field;
            return false;
        }
        v = std::clamp(v, 0.0, 1.0);
        break;
    case ColumnType::SharePercent:
        if (v < -1e-7 || v > 100.0 + 1e-7) {
            reason = "percentage outside [0,100]: " + field;
            return false;
        }
        v = std::clamp(v, 0.0, 100.0) / 100.0;
        break;
    case ColumnType::Real:
        break;
    }
    out = v;
    return true;
}

} // namespace

RawTable load_dataset(const DatasetSchema& schema, const std::string& path) {
    const csv::Table table = csv::read_file(path);

    auto require_column = [&](const std::string& name) -> size_t {
        auto idx = table.column(name);
        if (!idx) {
            throw DataError(path + ": schema mismatch, missing required column '" + name + "'");
        }
        return *idx;
    };

    const size_t fips_idx = require_column(schema.fips_column);
    std::optional<size_t> state_idx;
    if (!schema.state_column.empty()) state_idx = require_column(schema.state_column);
    std::optional<size_t> date_idx;
    if (!schema.date_column.empty()) date_idx = require_column(schema.date_column);

    RawTable out;
    out.schema = schema;

    // Resolve the value columns: outbreak roles or declared feature columns.
    std::vector<std::pair<size_t, ColumnSpec>> cells;
    if (schema.kind == DatasetKind::Outbreak) {
        ColumnSpec count{.name = "", .type = ColumnType::Count, .unit = "persons"};
        count.name = "confirmed";
        cells.emplace_back(require_column(schema.confirmed_column), count);
        count.name = "deaths";
        cells.emplace_back(require_column(schema.deaths_column), count);
        if (!schema.recovered_column.empty()) {
            count.name = "recovered";
            cells.emplace_back(require_column(schema.recovered_column), count);
        }
    } else {
        for (const auto& col : schema.columns) {
            cells.emplace_back(require_column(col.name), col);
        }
    }
    for (const auto& [idx, spec] : cells) {
        (void)idx;
        if (spec.keep) {
            out.value_names.push_back(spec.name);
            out.value_specs.push_back(spec);
        }
    }
    for (const auto& der : schema.derived) {
        out.value_names.push_back(der.name);
        ColumnSpec spec{.name = der.name, .type = ColumnType::Real, .unit = "index"};
        out.value_specs.push_back(spec);
    }
    // Derived inputs must name declared columns.
    for (const auto& der : schema.derived) {
        for (const auto& input : der.inputs) {
            const bool found = std::any_of(cells.begin(), cells.end(),
                                           [&](const auto& c) { return c.second.name == input; });
            if (!found) {
                throw DataError(path + ": derived feature '" + der.name +
                                "' references undeclared column '" + input + "'");
            }
        }
    }

    for (size_t r = 0; r < table.rows.size(); ++r) {
        const auto& fields = table.rows[r];
        const size_t line = r + 2;
        std::string reason;

        RawRow row;
        if (!normalize_fips(fields[fips_idx], row.fips)) {
            out.rejects.push_back({line, "bad fips: '" + fields[fips_idx] + "'"});
            continue;
        }
        if (state_idx && !normalize_state(fields[*state_idx], row.state)) {
            out.rejects.push_back({line, "bad state: '" + fields[*state_idx] + "'"});
            continue;
        }
        if (date_idx) {
            try {
                row.date = Date::parse(fields[*date_idx]);
            } catch (const DataError&) {
                out.rejects.push_back({line, "bad date: '" + fields[*date_idx] + "'"});
                continue;
            }
        }

        std::map<std::string, double> by_name;
        bool ok = true;
        for (const auto& [idx, spec] : cells) {
            double v;
            if (!parse_cell(fields[idx], spec.type, v, reason)) {
                out.rejects.push_back({line, spec.name + ": " + reason});
                ok = false;
                break;
            }
            by_name[spec.name] = v;
            if (spec.keep) row.values.push_back(v);
        }
        if (!ok) continue;

        for (const auto& der : schema.derived) {
            std::vector<double> inputs;
            bool missing = false;
            for (const auto& input : der.inputs) {
                const double v = by_name.at(input);
                if (std::isnan(v)) missing = true;
                inputs.push_back(v);
            }
            if (missing) {
                row.values.push_back(kNaN);
                continue;
            }
            try {
                row.values.push_back(diversity_index(inputs));
            } catch (const DataError& e) {
                out.rejects.push_back({line, der.name + ": " + e.what()});
                ok = false;
                break;
            }
        }
        if (!ok) continue;

        out.rows.push_back(std::move(row));
    }

    const size_t total = out.rows.size() + out.rejects.size();
    if (total > 0 && static_cast<double>(out.rejects.size()) > 0.10 * static_cast<double>(total)) {
        throw DataError(path + ": schema mismatch, " + std::to_string(out.rejects.size()) +
                        " of " + std::to_string(total) + " rows rejected (first: line " +
                        std::to_string(out.rejects.front().line) + ", " +
                        out.rejects.front().reason + ")");
    }
    return out;
}

// ---------------------------------------------------------------------------
// build_panel
// ---------------------------------------------------------------------------

namespace {

struct SeriesFill {
    std::vector<double> values;       // length n_days, no NaN on success
    std::vector<std::pair<int, const char*>> flags;  // (day, flag)
    bool ok = false;
    std::string fail_reason;
};

// Fills one per-county daily series from sparse observations. Interior gaps
// up to max_gap are linearly interpolated; trailing gaps up to max_gap carry
// the last value forward. Leading gaps: zero-filled for cumulative outbreak
// series, backfilled (up to max_gap) otherwise.
SeriesFill fill_daily_series(const std::map<int, double>& observed, int n_days, int max_gap,
                             bool leading_zero) {
    SeriesFill out;
    out.values.assign(static_cast<size_t>(n_days), kNaN);
    for (const auto& [day, v] : observed) {
        if (day >= 0 && day < n_days && !std::isnan(v)) out.values[static_cast<size_t>(day)] = v;
    }

    int first = -1, last = -1;
    for (int d = 0; d < n_days; ++d) {
        if (!std::isnan(out.values[static_cast<size_t>(d)])) {
            if (first < 0) first = d;
            last = d;
        }
    }
    if (first < 0) {
        out.fail_reason = "no observations in panel range";
        return out;
    }

    if (first > 0) {
        if (leading_zero) {
            for (int d = 0; d < first; ++d) {
                out.values[static_cast<size_t>(d)] = 0.0;
                out.flags.emplace_back(d, "leading_zero");
            }
        } else if (first <= max_gap) {
            for (int d = 0; d < first; ++d) {
                out.values[static_cast<size_t>(d)] = out.values[static_cast<size_t>(first)];
                out.flags.emplace_back(d, "backfilled");
            }
        } else {
            out.fail_reason = "leading gap of " + std::to_string(first) + " days exceeds max_gap";
            return out;
        }
    }
    if (last < n_days - 1) {
        const int gap = n_days - 1 - last;
        if (gap <= max_gap) {
            for (int d = last + 1; d < n_days; ++d) {
                out.values[static_cast<size_t>(d)] = out.values[static_cast<size_t>(last)];
                out.flags.emplace_back(d, "carried_forward");
            }
        } else {
            out.fail_reason = "trailing gap of " + std::to_string(gap) + " days exceeds max_gap";
            return out;
        }
    }

    int d = first;
    while (d <= last) {
        if (!std::isnan(out.values[static_cast<size_t>(d)])) {
            ++d;
            continue;
        }
        int gap_end = d;
        while (std::isnan(out.values[static_cast<size_t>(gap_end)])) ++gap_end;
        const int gap_len = gap_end - d;
        if (gap_len > max_gap) {
            out.fail_reason = "interior gap of " + std::to_string(gap_len) + " days exceeds max_gap";
            return out;
        }
        const double lo = out.values[static_cast<size_t>(d - 1)];
        const double hi = out.values[static_cast<size_t>(gap_end)];
        for (int g = d; g < gap_end; ++g) {
            const double t = static_cast<double>(g - (d - 1)) / static_cast<double>(gap_len + 1);
            out.values[static_cast<size_t>(g)] = lo + t * (hi - lo);
            out.flags.emplace_back(g, "interpolated");
        }
        d = gap_end;
    }

    out.ok = true;
    return out;
}

FeatureInfo feature_info_from_spec(const ColumnSpec& spec) {
    FeatureInfo info;
    info.name = spec.name;
    info.unit = spec.unit;
    info.share = spec.type == ColumnType::ShareFraction || spec.type == ColumnType::SharePercent;
    info.mobility_slot = spec.mobility_slot;
    return info;
}

} // namespace

FeaturePanel build_panel(const std::vector<RawTable>& tables, const BuildConfig& config,
                         BuildLog* log) {
    BuildLog local_log;
    if (!log) log = &local_log;

    const RawTable* outbreak = nullptr;
    std::vector<const RawTable*> statics;
    std::vector<const RawTable*> dynamics;
    for (const auto& t : tables) {
        switch (t.schema.kind) {
        case DatasetKind::Outbreak:
            if (outbreak) throw DataError("build_panel: multiple outbreak tables");
            outbreak = &t;
            break;
        case DatasetKind::Static: statics.push_back(&t); break;
        case DatasetKind::Dynamic: dynamics.push_back(&t); break;
        }
    }
    if (!outbreak) throw DataError("build_panel: outbreak table required");
    if (statics.empty()) throw DataError("build_panel: at least one static table required");

    // County universe and state lookup from the outbreak table.
    std::map<std::string, std::string> state_of;
    for (const auto& row : outbreak->rows) {
        auto [it, inserted] = state_of.emplace(row.fips, row.state);
        if (!inserted && it->second != row.state) {
            log->notes.push_back("fips " + row.fips + ": conflicting states '" + it->second +
                                 "' and '" + row.state + "', keeping first");
        }
    }

    // Panel date range: explicit config, else intersection of table ranges.
    Date range_lo = Date(std::numeric_limits<std::int64_t>::min());
    Date range_hi = Date(std::numeric_limits<std::int64_t>::max());
    auto intersect_table = [&](const RawTable& t) {
        Date lo = Date(std::numeric_limits<std::int64_t>::max());
        Date hi = Date(std::numeric_limits<std::int64_t>::min());
        for (const auto& row : t.rows) {
            lo = std::min(lo, row.date);
            hi = std::max(hi, row.date);
        }
        range_lo = std::max(range_lo, lo);
        range_hi = std::min(range_hi, hi);
    };
    if (outbreak->rows.empty()) throw DataError("build_panel: outbreak table has no rows");
    intersect_table(*outbreak);
    for (const auto* t : dynamics) {
        if (t->rows.empty()) throw DataError("build_panel: dynamic table has no rows");
        intersect_table(*t);
    }
    if (config.start) range_lo = *config.start;
    if (config.end) range_hi = *config.end;
    if (range_hi < range_lo) throw DataError("build_panel: empty panel date range");

    FeaturePanel panel;
    panel.start_date = range_lo;
    panel.num_days = static_cast<int>(range_hi - range_lo) + 1;

    // Candidate counties: present in outbreak and in every other table.
    std::set<std::string> candidates;
    for (const auto& [fips, state] : state_of) {
        (void)state;
        candidates.insert(fips);
    }
    auto restrict_to_table = [&](const RawTable& t) {
        std::set<std::string> present;
        for (const auto& row : t.rows) present.insert(row.fips);
        for (auto it = candidates.begin(); it != candidates.end();) {
            if (!present.count(*it)) {
                log->dropped.push_back(*it + ": absent from table '" + t.schema.name + "'");
                it = candidates.erase(it);
            } else {
                ++it;
            }
        }
    };
    for (const auto* t : statics) restrict_to_table(*t);
    for (const auto* t : dynamics) restrict_to_table(*t);

    // Static feature block: tables in input order, columns in declared order.
    std::vector<FeatureInfo> static_infos;
    std::map<std::string, std::map<std::string, double>> static_cells;  // feature -> fips -> value
    for (const auto* t : statics) {
        std::map<std::string, const RawRow*> by_fips;
        for (const auto& row : t->rows) {
            auto [it, inserted] = by_fips.emplace(row.fips, &row);
            if (!inserted) {
                it->second = &row;
                log->notes.push_back("table '" + t->schema.name + "': duplicate fips " + row.fips +
                                     ", keeping last row");
            }
        }
        for (size_t v = 0; v < t->value_names.size(); ++v) {
            const std::string& name = t->value_names[v];
            if (std::any_of(static_infos.begin(), static_infos.end(),
                            [&](const FeatureInfo& f) { return f.name == name; })) {
                throw DataError("build_panel: duplicate static feature '" + name + "'");
            }
            static_infos.push_back(feature_info_from_spec(t->value_specs[v]));
            auto& cells = static_cells[name];
            for (const auto& fips : candidates) {
                auto it = by_fips.find(fips);
                if (it != by_fips.end()) cells[fips] = it->second->values[v];
            }
        }
    }

    auto pop_it = std::find_if(static_infos.begin(), static_infos.end(),
                               [](const FeatureInfo& f) { return f.name == "population"; });
    if (pop_it == static_infos.end()) {
        throw DataError("build_panel: a static feature named 'population' is required");
    }

    // Drop counties without a usable positive population.
    {
        const auto& pop_cells = static_cells["population"];
        for (auto it = candidates.begin(); it != candidates.end();) {
            auto cell = pop_cells.find(*it);
            const bool usable =
                cell != pop_cells.end() && !std::isnan(cell->second) && cell->second >= 1.0;
            if (!usable) {
                log->dropped.push_back(*it + ": missing or non-positive population");
                it = candidates.erase(it);
            } else {
                ++it;
            }
        }
    }

    // Outbreak series per county; counties whose series cannot be bridged drop.
    std::map<std::string, std::array<std::map<int, double>, 3>> outbreak_obs;
    for (const auto& row : outbreak->rows) {
        if (!candidates.count(row.fips)) continue;
        const int day = static_cast<int>(row.date - panel.start_date);
        if (day < 0 || day >= panel.num_days) continue;
        auto& slots = outbreak_obs[row.fips];
        slots[0][day] = row.values.size() > 0 ? row.values[0] : kNaN;
        slots[1][day] = row.values.size() > 1 ? row.values[1] : kNaN;
        slots[2][day] = row.values.size() > 2 ? row.values[2] : 0.0;  // recovered optional
    }

    struct CountyOutbreak {
        std::array<std::vector<double>, 3> series;
        std::vector<CellFlag> flags;
    };
    static const char* kOutbreakNames[3] = {"confirmed", "deaths", "recovered"};
    std::map<std::string, CountyOutbreak> outbreak_filled;
    for (auto it = candidates.begin(); it != candidates.end();) {
        const std::string& fips = *it;
        auto obs = outbreak_obs.find(fips);
        if (obs == outbreak_obs.end()) {
            log->dropped.push_back(fips + ": no outbreak rows in panel range");
            it = candidates.erase(it);
            continue;
        }
        CountyOutbreak filled;
        bool ok = true;
        std::string reason;
        for (int which = 0; which < 3 && ok; ++which) {
            auto fill = fill_daily_series(obs->second[static_cast<size_t>(which)], panel.num_days,
                                          config.max_gap_days, /*leading_zero=*/true);
            if (!fill.ok) {
                ok = false;
                reason = std::string(kOutbreakNames[which]) + ": " + fill.fail_reason;
                break;
            }
            // Rolling-max cleaning restores cumulative monotonicity.
            double run_max = 0.0;
            for (int d = 0; d < panel.num_days; ++d) {
                double& v = fill.values[static_cast<size_t>(d)];
                if (v < run_max) {
                    v = run_max;
                    fill.flags.emplace_back(d, "rolling_max");
                } else {
                    run_max = v;
                }
            }
            filled.series[static_cast<size_t>(which)] = std::move(fill.values);
            for (const auto& [day, flag] : fill.flags) {
                filled.flags.push_back(
                    {fips, panel.start_date + day, kOutbreakNames[which], flag});
            }
        }
        if (!ok) {
            log->dropped.push_back(fips + ": " + reason);
            it = candidates.erase(it);
            continue;
        }
        outbreak_filled[fips] = std::move(filled);
        ++it;
    }

    // Dynamic feature block.
    std::vector<FeatureInfo> dynamic_infos;
    for (const auto* t : dynamics) {
        for (size_t v = 0; v < t->value_names.size(); ++v) {
            const std::string& name = t->value_names[v];
            if (std::any_of(dynamic_infos.begin(), dynamic_infos.end(),
                            [&](const FeatureInfo& f) { return f.name == name; })) {
                throw DataError("build_panel: duplicate dynamic feature '" + name + "'");
            }
            dynamic_infos.push_back(feature_info_from_spec(t->value_specs[v]));
        }
    }

    struct CountyDynamic {
        std::vector<std::vector<double>> series;  // per feature
        std::vector<CellFlag> flags;
    };
    std::map<std::string, CountyDynamic> dynamic_filled;
    if (!dynamics.empty()) {
        // observations[fips][feature][day]
        std::map<std::string, std::vector<std::map<int, double>>> dyn_obs;
        size_t feature_base = 0;
        for (const auto* t : dynamics) {
            std::set<std::pair<std::string, int>> seen;
            for (const auto& row : t->rows) {
                if (!candidates.count(row.fips)) continue;
                const int day = static_cast<int>(row.date - panel.start_date);
                if (day < 0 || day >= panel.num_days) continue;
                auto& per_feature = dyn_obs[row.fips];
                per_feature.resize(dynamic_infos.size());
                if (!seen.emplace(row.fips, day).second) {
                    log->notes.push_back("table '" + t->schema.name + "': duplicate (fips,date) " +
                                         row.fips + "," + (panel.start_date + day).to_string() +
                                         ", keeping last row");
                }
                for (size_t v = 0; v < t->value_names.size(); ++v) {
                    per_feature[feature_base + v][day] = row.values[v];
                }
            }
            feature_base += t->value_names.size();
        }

        for (auto it = candidates.begin(); it != candidates.end();) {
            const std::string& fips = *it;
            auto obs = dyn_obs.find(fips);
            if (obs == dyn_obs.end()) {
                log->dropped.push_back(fips + ": no dynamic rows in panel range");
                it = candidates.erase(it);
                continue;
            }
            obs->second.resize(dynamic_infos.size());
            CountyDynamic filled;
            filled.series.resize(dynamic_infos.size());
            bool ok = true;
            std::string reason;
            for (size_t f = 0; f < dynamic_infos.size() && ok; ++f) {
                auto fill = fill_daily_series(obs->second[f], panel.num_days, config.max_gap_days,
                                              /*leading_zero=*/false);
                if (!fill.ok) {
                    ok = false;
                    reason = dynamic_infos[f].name + ": " + fill.fail_reason;
                    break;
                }
                filled.series[f] = std::move(fill.values);
                for (const auto& [day, flag] : fill.flags) {
                    filled.flags.push_back(
                        {fips, panel.start_date + day, dynamic_infos[f].name, flag});
                }
            }
            if (!ok) {
                log->dropped.push_back(fips + ": " + reason);
                it = candidates.erase(it);
                continue;
            }
            dynamic_filled[fips] = std::move(filled);
            ++it;
        }
    }

    if (candidates.empty()) throw DataError("build_panel: empty join result");

    // Assemble panel in sorted county order.
    panel.counties.reserve(candidates.size());
    for (const auto& fips : candidates) {
        CountyKey key{fips, state_of.at(fips)};
        validate_county_key(key);
        panel.counties.push_back(std::move(key));
    }

    panel.schema.static_features = static_infos;
    panel.schema.dynamic_features = dynamic_infos;

    // Append the compliance score when all six mobility categories exist.
    std::array<std::optional<size_t>, 6> mobility_idx;
    for (size_t f = 0; f < dynamic_infos.size(); ++f) {
        const int slot = dynamic_infos[f].mobility_slot;
        if (slot >= 1 && slot <= 6) mobility_idx[static_cast<size_t>(slot - 1)] = f;
    }
    const bool all_mobility =
        std::all_of(mobility_idx.begin(), mobility_idx.end(), [](auto& m) { return m.has_value(); });
    const bool has_compliance = panel.schema.dynamic_index("compliance").has_value();
    const bool add_compliance = all_mobility && !has_compliance;
    if (add_compliance) {
        panel.schema.dynamic_features.push_back({"compliance", "score", false, 0});
    }

    const size_t n_static = panel.schema.static_features.size();
    const size_t n_dynamic = panel.schema.dynamic_features.size();
    const size_t n_counties = panel.counties.size();
    const size_t n_rows = n_counties * static_cast<size_t>(panel.num_days);
    panel.static_values = Matrix(n_counties, n_static);
    panel.dynamic_values = Matrix(n_rows, n_dynamic);
    panel.outbreak_values = Matrix(n_rows, 3);
    panel.population.resize(n_counties);

    // Static block with state-median imputation (population excluded: counties
    // without it were already dropped).
    for (size_t f = 0; f < static_infos.size(); ++f) {
        const std::string& name = static_infos[f].name;
        const auto& cells = static_cells[name];

        std::map<std::string, std::vector<double>> state_values;
        std::vector<double> all_values;
        for (size_t c = 0; c < n_counties; ++c) {
            auto it = cells.find(panel.counties[c].fips);
            if (it != cells.end() && !std::isnan(it->second)) {
                state_values[panel.counties[c].state].push_back(it->second);
                all_values.push_back(it->second);
            }
        }

        for (size_t c = 0; c < n_counties; ++c) {
            auto it = cells.find(panel.counties[c].fips);
            if (it != cells.end() && !std::isnan(it->second)) {
                panel.static_values(c, f) = it->second;
                continue;
            }
            if (name == "population") {
                throw DataError("build_panel: internal error, unpopulated population cell");
            }
            if (all_values.empty()) {
                throw DataError("build_panel: static feature '" + name +
                                "' has no observed values to impute from");
            }
            auto sv = state_values.find(panel.counties[c].state);
            const double imputed =
                (sv != state_values.end()) ? median(sv->second) : median(all_values);
            panel.static_values(c, f) = imputed;
            panel.flags.push_back({panel.counties[c].fips, std::nullopt, name, "imputed"});
        }
    }

    for (size_t c = 0; c < n_counties; ++c) {
        const std::string& fips = panel.counties[c].fips;
        panel.population[c] =
            static_cast<std::int64_t>(std::llround(panel.static_values(c, *panel.schema.static_index("population"))));

        const auto& ob = outbreak_filled.at(fips);
        for (int d = 0; d < panel.num_days; ++d) {
            for (int which = 0; which < 3; ++which) {
                panel.outbreak_values(panel.row(c, d), static_cast<size_t>(which)) =
                    ob.series[static_cast<size_t>(which)][static_cast<size_t>(d)];
            }
        }
        for (const auto& flag : ob.flags) panel.flags.push_back(flag);

        if (!dynamics.empty()) {
            const auto& dyn = dynamic_filled.at(fips);
            for (size_t f = 0; f < dynamic_infos.size(); ++f) {
                for (int d = 0; d < panel.num_days; ++d) {
                    panel.dynamic_values(panel.row(c, d), f) =
                        dyn.series[f][static_cast<size_t>(d)];
                }
            }
            for (const auto& flag : dyn.flags) panel.flags.push_back(flag);
        }
    }

    if (add_compliance) {
        const size_t comp_idx = n_dynamic - 1;
        for (size_t c = 0; c < n_counties; ++c) {
            for (int d = 0; d < panel.num_days; ++d) {
                const size_t r = panel.row(c, d);
                double m[6];
                for (int s = 0; s < 6; ++s) {
                    m[s] = panel.dynamic_values(r, *mobility_idx[static_cast<size_t>(s)]);
                }
                panel.dynamic_values(r, comp_idx) = compliance_score(m);
            }
        }
    }

    // Deterministic flag order independent of assembly path.
    std::sort(panel.flags.begin(), panel.flags.end(), [](const CellFlag& a, const CellFlag& b) {
        const auto da = a.date ? a.date->days() : std::numeric_limits<std::int64_t>::min();
        const auto db = b.date ? b.date->days() : std::numeric_limits<std::int64_t>::min();
        return std::tie(a.fips, da, a.column, a.flag) < std::tie(b.fips, db, b.column, b.flag);
    });

    validate_panel(panel);
    return panel;
}

// ---------------------------------------------------------------------------
// Panel helpers and validation
// ---------------------------------------------------------------------------

std::optional<size_t> PanelSchema::static_index(const std::string& name) const {
    for (size_t i = 0; i < static_features.size(); ++i) {
        if (static_features[i].name == name) return i;
    }
    return std::nullopt;
}

std::optional<size_t> PanelSchema::dynamic_index(const std::string& name) const {
    for (size_t i = 0; i < dynamic_features.size(); ++i) {
        if (dynamic_features[i].name == name) return i;
    }
    return std::nullopt;
}

std::optional<size_t> FeaturePanel::county_index(const std::string& fips) const {
    auto it = std::lower_bound(counties.begin(), counties.end(), fips,
                               [](const CountyKey& k, const std::string& f) { return k.fips < f; });
    if (it != counties.end() && it->fips == fips) {
        return static_cast<size_t>(it - counties.begin());
    }
    return std::nullopt;
}

std::vector<double> FeaturePanel::cumulative_series(size_t county, int which) const {
    std::vector<double> out(static_cast<size_t>(num_days));
    for (int d = 0; d < num_days; ++d) {
        out[static_cast<size_t>(d)] = outbreak_values(row(county, d), static_cast<size_t>(which));
    }
    return out;
}

std::vector<double> FeaturePanel::daily_series(size_t county, int which) const {
    std::vector<double> cum = cumulative_series(county, which);
    std::vector<double> out(cum.size());
    for (size_t d = cum.size(); d-- > 1;) out[d] = cum[d] - cum[d - 1];
    if (!cum.empty()) out[0] = cum[0];
    return out;
}

void validate_panel(const FeaturePanel& panel) {
    if (panel.counties.empty()) throw DataError("panel: no counties");
    if (panel.num_days < 1) throw DataError("panel: empty date range");

    for (size_t c = 0; c < panel.counties.size(); ++c) {
        validate_county_key(panel.counties[c]);
        if (c > 0 && !(panel.counties[c - 1].fips < panel.counties[c].fips)) {
            throw DataError("panel: counties not sorted/unique by fips");
        }
    }
    if (panel.population.size() != panel.counties.size()) {
        throw DataError("panel: population size mismatch");
    }
    for (auto p : panel.population) {
        if (p <= 0) throw DataError("panel: non-positive population");
    }

    const size_t n_rows = panel.counties.size() * static_cast<size_t>(panel.num_days);
    if (panel.static_values.rows() != panel.counties.size() ||
        panel.static_values.cols() != panel.schema.static_features.size() ||
        panel.dynamic_values.rows() != n_rows ||
        panel.dynamic_values.cols() != panel.schema.dynamic_features.size() ||
        panel.outbreak_values.rows() != n_rows || panel.outbreak_values.cols() != 3) {
        throw DataError("panel: block shape mismatch");
    }

    auto check_finite = [](const Matrix& m, const char* what) {
        for (double v : m.data()) {
            if (!std::isfinite(v)) throw DataError(std::string("panel: non-finite value in ") + what);
        }
    };
    check_finite(panel.static_values, "static block");
    check_finite(panel.dynamic_values, "dynamic block");
    check_finite(panel.outbreak_values, "outbreak block");

    for (size_t f = 0; f < panel.schema.static_features.size(); ++f) {
        if (!panel.schema.static_features[f].share) continue;
        for (size_t c = 0; c < panel.counties.size(); ++c) {
            const double v = panel.static_values(c, f);
            if (v < -1e-9 || v > 1.0 + 1e-9) {
                throw DataError("panel: share feature '" + panel.schema.static_features[f].name +
                                "' outside [0,1]");
            }
        }
    }

    for (size_t c = 0; c < panel.counties.size(); ++c) {
        for (int which = 0; which < 3; ++which) {
            double prev = 0.0;
            for (int d = 0; d < panel.num_days; ++d) {
                const double v = panel.outbreak_values(panel.row(c, d), static_cast<size_t>(which));
                if (v < 0.0) throw DataError("panel: negative cumulative count");
                if (d > 0 && v < prev - 1e-9) {
                    throw DataError("panel: cumulative series not monotone for fips " +
                                    panel.counties[c].fips);
                }
                prev = v;
            }
        }
    }

    // Compliance must be recomputable from the six mobility categories.
    std::array<std::optional<size_t>, 6> mob;
    for (size_t f = 0; f < panel.schema.dynamic_features.size(); ++f) {
        const int slot = panel.schema.dynamic_features[f].mobility_slot;
        if (slot >= 1 && slot <= 6) mob[static_cast<size_t>(slot - 1)] = f;
    }
    const auto comp = panel.schema.dynamic_index("compliance");
    if (comp && std::all_of(mob.begin(), mob.end(), [](auto& m) { return m.has_value(); })) {
        for (size_t c = 0; c < panel.counties.size(); ++c) {
            for (int d = 0; d < panel.num_days; ++d) {
                const size_t r = panel.row(c, d);
                double m[6];
                for (int s = 0; s < 6; ++s) m[s] = panel.dynamic_values(r, *mob[static_cast<size_t>(s)]);
                const double expect = compliance_score(m);
                if (std::abs(expect - panel.dynamic_values(r, *comp)) > 1e-12) {
                    throw DataError("panel: compliance inconsistent with mobility at fips " +
                                    panel.counties[c].fips + " " + panel.date_at(d).to_string());
                }
            }
        }
    }
}

} // namespace epi::data
