#pragma once

#include "epi/dataset.hpp"
#include "epi/date.hpp"

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace epi::stats {

enum class Method { Pearson, Spearman, Kendall, HistIntersection, MutualInformation };

const char* method_name(Method method);

struct CorrelationResult {
    Method method;
    double statistic = 0.0;
    std::optional<double> p_value;  // present only for Pearson
    size_t n = 0;
};

/// Pearson correlation with a two-sided p-value from the exact t-test with
/// n-2 degrees of freedom. Requires equal lengths, n >= 3, and non-constant
/// inputs.
CorrelationResult pearson(std::span<const double> x, std::span<const double> y);

/// Spearman rank correlation: Pearson applied to average ranks. Equals the
/// 1 - 6*sum(d^2)/(m(m^2-1)) shortcut exactly on tie-free data.
CorrelationResult spearman(std::span<const double> x, std::span<const double> y);

/// Kendall tau-a: (concordant - discordant) / C(m,2); tied pairs count toward
/// neither. Computed in O(m log m) by merge-sort inversion counting.
CorrelationResult kendall(std::span<const double> x, std::span<const double> y);

/// Overlap of the two normalized histograms over the series' joint min-max
/// range: sum_b min(h_x(b), h_y(b)) in [0,1]. A fully degenerate range (all
/// values of both series identical) returns 1 by convention.
CorrelationResult histogram_intersection(std::span<const double> x, std::span<const double> y,
                                         int bins);

/// Plug-in mutual information (nats) over an equal-width 2-D histogram with
/// per-axis ranges; 0*ln(0) = 0.
CorrelationResult mutual_information(std::span<const double> x, std::span<const double> y,
                                     int bins);

/// Average ranks (1-based; ties share the mean of their positions).
std::vector<double> average_ranks(std::span<const double> x);

/// Two-sided tail probability of Student's t with `dof` degrees of freedom,
/// via the regularized incomplete beta function (absolute error <= 1e-10).
double student_t_two_sided_p(double t, int dof);

/// I_x(a, b), continued-fraction evaluation.
double regularized_incomplete_beta(double a, double b, double x);

// ---------------------------------------------------------------------------
// Panel-level reports
// ---------------------------------------------------------------------------

/// Outcome names: cumulative_{deaths,cases,recoveries}, daily_{deaths,cases,
/// recoveries}, each optionally suffixed with "_per_100k".
struct OutcomeSpec {
    std::vector<std::string> outcomes;
    std::optional<Date> report_date;  // default: last panel date
    int bins = 16;
};

struct ReportRow {
    std::string feature;
    std::string outcome;
    std::array<CorrelationResult, 5> results;  // pearson..mutual_information
};

struct CorrelationReport {
    std::vector<ReportRow> rows;
};

/// Per-county outcome values at the report date.
std::vector<double> outcome_series(const data::FeaturePanel& panel, const std::string& outcome,
                                   std::optional<Date> report_date);

/// Cross-sectional correlation of every non-constant static feature against
/// every requested outcome (county feature value vs county outcome at the
/// report date), all five measures per pair. Row order: feature declaration
/// order, then outcome order. Requires at least 3 counties.
CorrelationReport correlate_panel(const data::FeaturePanel& panel, const OutcomeSpec& spec,
                                  int threads = 1);

/// CSV with stable columns (feature, outcome, method, statistic, p_value, n).
void save_report_csv(const CorrelationReport& report, const std::string& path);

} // namespace epi::stats
