#pragma once

#include "epi/date.hpp"
#include "epi/matrix.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace epi::data {

/// County identity: 5-digit zero-padded FIPS plus 2-letter state postal code.
struct CountyKey {
    std::string fips;
    std::string state;

    bool operator==(const CountyKey&) const = default;
};

/// Throws DataError unless fips is exactly five decimal digits and state is
/// two uppercase letters.
void validate_county_key(const CountyKey& key);

// ---------------------------------------------------------------------------
// Dataset schemas (one descriptor per snapshot CSV)
// ---------------------------------------------------------------------------

enum class ColumnType {
    Count,         // non-negative integer-ish quantity
    Real,          // unconstrained real (mobility % changes, rates, scores)
    ShareFraction, // share in [0,1]
    SharePercent,  // share in [0,100]; converted to [0,1] at load
};

struct ColumnSpec {
    std::string name;          // CSV header name
    ColumnType type = ColumnType::Real;
    std::string unit;
    int mobility_slot = 0;     // 1..6 marks the six mobility categories
    bool keep = true;          // false: parsed (usable by derived) but not a panel feature
};

/// Feature computed per row from declared columns (e.g. a diversity index
/// from race counts).
struct DerivedSpec {
    std::string name;
    std::string kind;                 // currently: "diversity_index"
    std::vector<std::string> inputs;  // names of declared columns
};

enum class DatasetKind { Static, Dynamic, Outbreak };

struct DatasetSchema {
    std::string name;
    DatasetKind kind = DatasetKind::Static;
    std::string fips_column;
    std::string state_column;      // required for outbreak tables
    std::string date_column;       // dynamic + outbreak tables
    std::string confirmed_column;  // outbreak roles
    std::string deaths_column;
    std::string recovered_column;
    std::vector<ColumnSpec> columns;
    std::vector<DerivedSpec> derived;

    static DatasetSchema from_json_file(const std::string& path);
};

// ---------------------------------------------------------------------------
// Raw typed tables
// ---------------------------------------------------------------------------

struct RawRow {
    std::string fips;
    std::string state;              // empty if the table has no state column
    Date date;                      // meaningful for dynamic/outbreak tables
    std::vector<double> values;     // kept columns + derived, in value_names order
};

struct Reject {
    size_t line;                    // 1-based line number in the CSV (header is 1)
    std::string reason;
};

struct RawTable {
    DatasetSchema schema;
    std::vector<std::string> value_names;
    std::vector<ColumnSpec> value_specs;  // parallel to value_names
    std::vector<RawRow> rows;
    std::vector<Reject> rejects;
};

/// Loads a snapshot CSV against its schema. Rows that fail type coercion are
/// collected into `rejects` with line numbers; a reject rate above 10% aborts
/// with a schema-mismatch DataError, as does a missing declared column.
/// Empty cells become NaN (missing, imputable downstream); garbage rejects.
RawTable load_dataset(const DatasetSchema& schema, const std::string& path);

// ---------------------------------------------------------------------------
// Regional metric formulas
// ---------------------------------------------------------------------------

/// Probability that two randomly picked residents belong to different races:
/// 1 - sum((n_i / N)^2). Requires at least one strictly positive count.
double diversity_index(std::span<const double> race_counts);

/// Shelter-in-place compliance from the six mobility percent-changes:
/// -1 - ((1/6) * sum(m_i) - 100) / 100. A uniform -100% change maps to +1,
/// a uniform +100% change maps to -1.
double compliance_score(std::span<const double> mobility);

/// Scales a count series to per-`base` population units (default per 100k).
std::vector<double> per_capita(std::span<const double> counts, std::int64_t population,
                               double base = 100000.0);

// ---------------------------------------------------------------------------
// Feature panel
// ---------------------------------------------------------------------------

struct FeatureInfo {
    std::string name;
    std::string unit;
    bool share = false;        // stored in [0,1]
    int mobility_slot = 0;     // 1..6 for the mobility categories, else 0
};

struct PanelSchema {
    std::vector<FeatureInfo> static_features;
    std::vector<FeatureInfo> dynamic_features;

    std::optional<size_t> static_index(const std::string& name) const;
    std::optional<size_t> dynamic_index(const std::string& name) const;
};

/// Provenance flag for a cell whose value was not taken verbatim from input.
struct CellFlag {
    std::string fips;
    std::optional<Date> date;  // nullopt for static cells
    std::string column;
    std::string flag;          // imputed | interpolated | backfilled |
                               // carried_forward | leading_zero | rolling_max
};

struct BuildConfig {
    int max_gap_days = 3;
    std::optional<Date> start;  // explicit panel range; default: intersection
    std::optional<Date> end;    // of the outbreak and dynamic table ranges
};

struct BuildLog {
    std::vector<std::string> dropped;  // "fips: reason"
    std::vector<std::string> notes;
};

// Outbreak tensor column indices.
inline constexpr int kConfirmed = 0;
inline constexpr int kDeaths = 1;
inline constexpr int kRecovered = 2;

/// The joined (county x date) table: static matrix, dynamic tensor, outbreak
/// tensor, schema and provenance flags. Counties are sorted by FIPS and all
/// blocks share that ordering and one contiguous daily date range.
struct FeaturePanel {
    std::vector<CountyKey> counties;
    std::vector<std::int64_t> population;
    Date start_date;
    int num_days = 0;
    PanelSchema schema;
    Matrix static_values;    // counties x n_static
    Matrix dynamic_values;   // (counties * num_days) x n_dynamic
    Matrix outbreak_values;  // (counties * num_days) x 3, cumulative counts
    std::vector<CellFlag> flags;

    size_t row(size_t county, int day) const {
        return county * static_cast<size_t>(num_days) + static_cast<size_t>(day);
    }
    Date date_at(int day) const { return start_date + day; }
    std::optional<size_t> county_index(const std::string& fips) const;

    /// Cumulative outbreak series (which = kConfirmed/kDeaths/kRecovered).
    std::vector<double> cumulative_series(size_t county, int which) const;
    /// First difference of the cumulative series; element 0 is the day-0
    /// cumulative value (new events before the panel range are unattributed).
    std::vector<double> daily_series(size_t county, int which) const;
};

/// Inner-joins the raw tables into a clean panel: enforces cumulative
/// monotonicity by rolling-max cleaning, bridges gaps up to
/// config.max_gap_days by linear interpolation, imputes missing static
/// values by state-level median, flags every touched cell, and drops
/// counties without a usable positive population. Exactly one outbreak
/// table and at least one static table are required; a static feature
/// named "population" must be present.
FeaturePanel build_panel(const std::vector<RawTable>& tables, const BuildConfig& config,
                         BuildLog* log = nullptr);

/// Checks every panel invariant (shapes, finiteness, monotone cumulative
/// series, share ranges, compliance consistency); throws DataError.
void validate_panel(const FeaturePanel& panel);

// ---------------------------------------------------------------------------
// Panel directory serialization (bit-exact round trip)
// ---------------------------------------------------------------------------

/// Writes static.csv, dynamic.csv, outbreak.csv, schema.csv, flags.csv.
void save_panel(const FeaturePanel& panel, const std::string& dir);
FeaturePanel load_panel(const std::string& dir);

/// Emits dataset schema descriptors (static_schema.json, dynamic_schema.json,
/// outbreak_schema.json) describing a serialized panel's CSVs, so the panel
/// can be re-ingested through load_dataset/build_panel.
void write_panel_dataset_descriptors(const FeaturePanel& panel, const std::string& dir);

// ---------------------------------------------------------------------------
// Synthetic panels
// ---------------------------------------------------------------------------

/// Controls the deterministic synthetic panel generator. Outbreaks follow a
/// logistic-growth process whose rate and attack fraction are driven by
/// beta * (first static feature) + sqrt(1-beta^2) * independent noise, so
/// beta=0 decouples outcomes from the statics and beta near 1 couples them.
/// The coupled feature is named "synth_f00".
struct SynthSpec {
    int counties = 30;
    int days = 120;
    int static_features = 6;
    double beta = 0.9;          // coupling strength in [0,1]
    double noise = 0.25;        // lognormal daily observation noise scale
    Date start = Date::from_ymd(2020, 3, 1);
};

FeaturePanel generate_synthetic_panel(const SynthSpec& spec, std::uint64_t seed);

} // namespace epi::data
