#include "epi/stats.hpp"

#include "epi/csv.hpp"
#include "epi/errors.hpp"
#include "epi/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace epi::stats {

namespace {

void check_pair(std::span<const double> x, std::span<const double> y, size_t min_n,
                const char* op) {
    if (x.size() != y.size()) {
        throw DataError(std::string(op) + ": length mismatch (" + std::to_string(x.size()) +
                        " vs " + std::to_string(y.size()) + ")");
    }
    if (x.size() < min_n) {
        throw DataError(std::string(op) + ": need at least " + std::to_string(min_n) +
                        " samples, got " + std::to_string(x.size()));
    }
}

// Plain Pearson statistic; throws on constant input.
double pearson_stat(std::span<const double> x, std::span<const double> y, const char* op) {
    const size_t m = x.size();
    double mean_x = 0.0, mean_y = 0.0;
    for (size_t i = 0; i < m; ++i) {
        mean_x += x[i];
        mean_y += y[i];
    }
    mean_x /= static_cast<double>(m);
    mean_y /= static_cast<double>(m);

    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (size_t i = 0; i < m; ++i) {
        const double dx = x[i] - mean_x;
        const double dy = y[i] - mean_y;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx <= 0.0 || syy <= 0.0) {
        throw DataError(std::string(op) + ": undefined correlation for constant input");
    }
    return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

// Lentz's continued fraction for the incomplete beta function.
double beta_continued_fraction(double a, double b, double x) {
    constexpr int kMaxIter = 300;
    constexpr double kEps = 1e-16;
    constexpr double kTiny = 1e-300;

    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < kEps) return h;
    }
    throw NumericError("incomplete beta continued fraction did not converge");
}

size_t bin_of(double v, double lo, double width, int bins) {
    if (width <= 0.0) return 0;
    const auto b = static_cast<long>((v - lo) / width);
    return static_cast<size_t>(std::clamp<long>(b, 0, bins - 1));
}

} // namespace

const char* method_name(Method method) {
    switch (method) {
    case Method::Pearson: return "pearson";
    case Method::Spearman: return "spearman";
    case Method::Kendall: return "kendall";
    case Method::HistIntersection: return "hist_intersection";
    case Method::MutualInformation: return "mutual_information";
    }
    return "?";
}

double regularized_incomplete_beta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                             a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(log_front);
    if (x < (a + 1.0) / (a + b + 2.0)) {
        return front * beta_continued_fraction(a, b, x) / a;
    }
    return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_two_sided_p(double t, int dof) {
    if (dof < 1) throw DataError("t-test requires at least 1 degree of freedom");
    if (std::isinf(t)) return 0.0;
    const double nu = dof;
    return regularized_incomplete_beta(nu / 2.0, 0.5, nu / (nu + t * t));
}

CorrelationResult pearson(std::span<const double> x, std::span<const double> y) {
    check_pair(x, y, 3, "pearson");
    const double r = pearson_stat(x, y, "pearson");
    const size_t m = x.size();

    double p;
    if (std::abs(r) >= 1.0) {
        p = 0.0;
    } else {
        const double t = r * std::sqrt(static_cast<double>(m - 2) / (1.0 - r * r));
        p = student_t_two_sided_p(t, static_cast<int>(m) - 2);
    }
    return {Method::Pearson, r, p, m};
}

std::vector<double> average_ranks(std::span<const double> x) {
    const size_t m = x.size();
    std::vector<size_t> order(m);
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return x[a] < x[b]; });

    std::vector<double> ranks(m);
    size_t i = 0;
    while (i < m) {
        size_t j = i;
        while (j + 1 < m && x[order[j + 1]] == x[order[i]]) ++j;
        const double rank = 0.5 * static_cast<double>(i + j) + 1.0;  // mean of 1-based positions
        for (size_t k = i; k <= j; ++k) ranks[order[k]] = rank;
        i = j + 1;
    }
    return ranks;
}

CorrelationResult spearman(std::span<const double> x, std::span<const double> y) {
    check_pair(x, y, 3, "spearman");
    const auto rx = average_ranks(x);
    const auto ry = average_ranks(y);
    const double s = pearson_stat(rx, ry, "spearman");
    return {Method::Spearman, s, std::nullopt, x.size()};
}

namespace {

// Counts strict inversions (a[i] > a[j], i < j) by merge sort.
std::uint64_t count_inversions(std::vector<double>& a, std::vector<double>& buf, size_t lo,
                               size_t hi) {
    if (hi - lo < 2) return 0;
    const size_t mid = lo + (hi - lo) / 2;
    std::uint64_t inv = count_inversions(a, buf, lo, mid) + count_inversions(a, buf, mid, hi);
    size_t i = lo, j = mid, k = lo;
    while (i < mid && j < hi) {
        if (a[j] < a[i]) {
            inv += mid - i;
            buf[k++] = a[j++];
        } else {
            buf[k++] = a[i++];
        }
    }
    while (i < mid) buf[k++] = a[i++];
    while (j < hi) buf[k++] = a[j++];
    std::copy(buf.begin() + static_cast<long>(lo), buf.begin() + static_cast<long>(hi),
              a.begin() + static_cast<long>(lo));
    return inv;
}

std::uint64_t tie_pairs(std::vector<double> values) {
    std::sort(values.begin(), values.end());
    std::uint64_t pairs = 0;
    size_t i = 0;
    while (i < values.size()) {
        size_t j = i;
        while (j + 1 < values.size() && values[j + 1] == values[i]) ++j;
        const std::uint64_t g = j - i + 1;
        pairs += g * (g - 1) / 2;
        i = j + 1;
    }
    return pairs;
}

} // namespace

CorrelationResult kendall(std::span<const double> x, std::span<const double> y) {
    check_pair(x, y, 2, "kendall");
    const size_t m = x.size();

    std::vector<size_t> order(m);
    std::iota(order.begin(), order.end(), size_t{0});
    std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
        if (x[a] != x[b]) return x[a] < x[b];
        return y[a] < y[b];
    });

    // With the sequence sorted by (x, y), strict y-inversions are exactly the
    // discordant pairs: x-tied pairs appear y-sorted and produce none.
    std::vector<double> ys(m), buf(m);
    for (size_t i = 0; i < m; ++i) ys[i] = y[order[i]];
    const std::uint64_t discordant = count_inversions(ys, buf, 0, m);

    std::uint64_t ties_x = 0, ties_xy = 0;
    {
        size_t i = 0;
        while (i < m) {
            size_t j = i;
            while (j + 1 < m && x[order[j + 1]] == x[order[i]]) ++j;
            const std::uint64_t g = j - i + 1;
            ties_x += g * (g - 1) / 2;
            size_t a = i;
            while (a <= j) {
                size_t b = a;
                while (b + 1 <= j && y[order[b + 1]] == y[order[a]]) ++b;
                const std::uint64_t h = b - a + 1;
                ties_xy += h * (h - 1) / 2;
                a = b + 1;
            }
            i = j + 1;
        }
    }
    std::vector<double> y_copy(y.begin(), y.end());
    const std::uint64_t ties_y = tie_pairs(std::move(y_copy));

    const std::uint64_t total = static_cast<std::uint64_t>(m) * (m - 1) / 2;
    const std::uint64_t concordant = total - ties_x - (ties_y - ties_xy) - discordant;
    const double tau = (static_cast<double>(concordant) - static_cast<double>(discordant)) /
                       static_cast<double>(total);
    return {Method::Kendall, tau, std::nullopt, m};
}

CorrelationResult histogram_intersection(std::span<const double> x, std::span<const double> y,
                                         int bins) {
    check_pair(x, y, 1, "histogram_intersection");
    if (bins < 2) throw DataError("histogram_intersection: bins must be >= 2");

    double lo = x[0], hi = x[0];
    for (double v : x) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    for (double v : y) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (hi == lo) {
        // Both distributions are a point mass at the same value.
        return {Method::HistIntersection, 1.0, std::nullopt, x.size()};
    }

    const double width = (hi - lo) / bins;
    std::vector<double> hx(static_cast<size_t>(bins), 0.0), hy(static_cast<size_t>(bins), 0.0);
    const double w = 1.0 / static_cast<double>(x.size());
    for (double v : x) hx[bin_of(v, lo, width, bins)] += w;
    for (double v : y) hy[bin_of(v, lo, width, bins)] += w;

    double overlap = 0.0;
    for (int b = 0; b < bins; ++b) {
        overlap += std::min(hx[static_cast<size_t>(b)], hy[static_cast<size_t>(b)]);
    }
    return {Method::HistIntersection, std::clamp(overlap, 0.0, 1.0), std::nullopt, x.size()};
}

CorrelationResult mutual_information(std::span<const double> x, std::span<const double> y,
                                     int bins) {
    check_pair(x, y, 1, "mutual_information");
    if (bins < 2) throw DataError("mutual_information: bins must be >= 2");

    const auto [x_lo, x_hi] = std::minmax_element(x.begin(), x.end());
    const auto [y_lo, y_hi] = std::minmax_element(y.begin(), y.end());
    const double wx = (*x_hi - *x_lo) / bins;
    const double wy = (*y_hi - *y_lo) / bins;

    const size_t nb = static_cast<size_t>(bins);
    std::vector<double> joint(nb * nb, 0.0), px(nb, 0.0), py(nb, 0.0);
    const double w = 1.0 / static_cast<double>(x.size());
    for (size_t i = 0; i < x.size(); ++i) {
        const size_t a = bin_of(x[i], *x_lo, wx, bins);
        const size_t b = bin_of(y[i], *y_lo, wy, bins);
        joint[a * nb + b] += w;
        px[a] += w;
        py[b] += w;
    }

    double mi = 0.0;
    for (size_t a = 0; a < nb; ++a) {
        for (size_t b = 0; b < nb; ++b) {
            const double pab = joint[a * nb + b];
            if (pab > 0.0) mi += pab * std::log(pab / (px[a] * py[b]));
        }
    }
    return {Method::MutualInformation, std::max(0.0, mi), std::nullopt, x.size()};
}

// ---------------------------------------------------------------------------
// Panel-level reports
// ---------------------------------------------------------------------------

std::vector<double> outcome_series(const data::FeaturePanel& panel, const std::string& outcome,
                                   std::optional<Date> report_date) {
    std::string base = outcome;
    bool per_100k = false;
    constexpr const char* kSuffix = "_per_100k";
    if (base.size() > 9 && base.ends_with(kSuffix)) {
        per_100k = true;
        base = base.substr(0, base.size() - 9);
    }

    bool daily = false;
    int which;
    if (base == "cumulative_deaths") which = data::kDeaths;
    else if (base == "cumulative_cases") which = data::kConfirmed;
    else if (base == "cumulative_recoveries") which = data::kRecovered;
    else if (base == "daily_deaths") { which = data::kDeaths; daily = true; }
    else if (base == "daily_cases") { which = data::kConfirmed; daily = true; }
    else if (base == "daily_recoveries") { which = data::kRecovered; daily = true; }
    else throw DataError("unknown outcome name: '" + outcome + "'");

    const Date date = report_date.value_or(panel.date_at(panel.num_days - 1));
    const std::int64_t day = date - panel.start_date;
    if (day < 0 || day >= panel.num_days) {
        throw DataError("report date " + date.to_string() + " outside panel range");
    }

    std::vector<double> out(panel.counties.size());
    for (size_t c = 0; c < panel.counties.size(); ++c) {
        const size_t w = static_cast<size_t>(which);
        double v = panel.outbreak_values(panel.row(c, static_cast<int>(day)), w);
        if (daily && day > 0) {
            v -= panel.outbreak_values(panel.row(c, static_cast<int>(day - 1)), w);
        }
        if (per_100k) {
            v = v * 100000.0 / static_cast<double>(panel.population[c]);
        }
        out[c] = v;
    }
    return out;
}

CorrelationReport correlate_panel(const data::FeaturePanel& panel, const OutcomeSpec& spec,
                                  int threads) {
    if (panel.counties.size() < 3) {
        throw DataError("correlate_panel: need at least 3 counties, got " +
                        std::to_string(panel.counties.size()));
    }
    if (spec.outcomes.empty()) throw DataError("correlate_panel: no outcomes requested");

    std::vector<std::vector<double>> outcome_values;
    for (const auto& name : spec.outcomes) {
        outcome_values.push_back(outcome_series(panel, name, spec.report_date));
    }

    // Constant columns have no defined correlation; leave them out.
    auto is_constant = [](std::span<const double> v) {
        for (double z : v) {
            if (z != v[0]) return false;
        }
        return true;
    };
    for (size_t o = 0; o < outcome_values.size(); ++o) {
        if (is_constant(outcome_values[o])) {
            throw DataError("correlate_panel: outcome '" + spec.outcomes[o] +
                            "' is constant across counties");
        }
    }

    std::vector<size_t> features;
    for (size_t f = 0; f < panel.schema.static_features.size(); ++f) {
        std::vector<double> col(panel.counties.size());
        for (size_t c = 0; c < panel.counties.size(); ++c) col[c] = panel.static_values(c, f);
        if (!is_constant(col)) features.push_back(f);
    }

    CorrelationReport report;
    report.rows.resize(features.size() * spec.outcomes.size());
    parallel_for(features.size(), threads, [&](size_t fi) {
        const size_t f = features[fi];
        std::vector<double> col(panel.counties.size());
        for (size_t c = 0; c < panel.counties.size(); ++c) col[c] = panel.static_values(c, f);
        for (size_t o = 0; o < spec.outcomes.size(); ++o) {
            ReportRow row;
            row.feature = panel.schema.static_features[f].name;
            row.outcome = spec.outcomes[o];
            const auto& out = outcome_values[o];
            row.results[0] = pearson(col, out);
            row.results[1] = spearman(col, out);
            row.results[2] = kendall(col, out);
            row.results[3] = histogram_intersection(col, out, spec.bins);
            row.results[4] = mutual_information(col, out, spec.bins);
            report.rows[fi * spec.outcomes.size() + o] = std::move(row);
        }
    });
    return report;
}

void save_report_csv(const CorrelationReport& report, const std::string& path) {
    csv::Table t;
    t.header = {"feature", "outcome", "method", "statistic", "p_value", "n"};
    for (const auto& row : report.rows) {
        for (const auto& res : row.results) {
            t.rows.push_back({row.feature, row.outcome, method_name(res.method),
                              csv::format_double(res.statistic),
                              res.p_value ? csv::format_double(*res.p_value) : std::string{},
                              std::to_string(res.n)});
        }
    }
    csv::write_file(path, t);
}

} // namespace epi::stats
