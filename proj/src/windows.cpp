#include "epi/windows.hpp"

#include "epi/errors.hpp"

#include <algorithm>
#include <set>

namespace epi::eval {

const char* objective_name(Objective objective) {
    switch (objective) {
    case Objective::NewDailyDeaths: return "new_daily_deaths";
    case Objective::NewDailyCases: return "new_daily_cases";
    case Objective::CumulativeDeathsPer100k: return "cumulative_deaths_per_100k";
    }
    return "?";
}

Objective objective_from_string(const std::string& name) {
    if (name == "new_daily_deaths") return Objective::NewDailyDeaths;
    if (name == "new_daily_cases") return Objective::NewDailyCases;
    if (name == "cumulative_deaths_per_100k") return Objective::CumulativeDeathsPer100k;
    throw ConfigError("unknown objective: '" + name + "'");
}

bool objective_is_count(Objective) {
    return true;  // all current objectives are non-negative quantities
}

std::vector<double> objective_series(const data::FeaturePanel& panel, size_t county,
                                     Objective objective) {
    switch (objective) {
    case Objective::NewDailyDeaths: return panel.daily_series(county, data::kDeaths);
    case Objective::NewDailyCases: return panel.daily_series(county, data::kConfirmed);
    case Objective::CumulativeDeathsPer100k:
        return data::per_capita(panel.cumulative_series(county, data::kDeaths),
                                panel.population[county]);
    }
    throw DataError("objective_series: unknown objective");
}

namespace {

// Chronological split of sorted windows: boundaries fall on distinct start
// dates so one date never spans two splits.
size_t date_split_point(const std::vector<TrainingWindow>& windows, double frac) {
    std::vector<Date> dates;
    for (const auto& w : windows) {
        if (dates.empty() || dates.back() != w.start) dates.push_back(w.start);
    }
    const size_t cut = static_cast<size_t>(static_cast<double>(dates.size()) * frac);
    if (cut == 0 || cut >= dates.size()) return cut == 0 ? 0 : windows.size();
    const Date boundary = dates[cut];
    size_t idx = 0;
    while (idx < windows.size() && windows[idx].start < boundary) ++idx;
    return idx;
}

} // namespace

WindowSets make_windows(const data::FeaturePanel& panel, const ForecastTask& task) {
    if (task.w_in < 2) throw ConfigError("make_windows: w_in must be >= 2");
    if (task.w_out < 0) throw ConfigError("make_windows: w_out must be non-negative");

    const std::set<std::string> excluded_fips(task.exclude_fips.begin(), task.exclude_fips.end());
    const std::set<std::string> excluded_states(task.exclude_states.begin(),
                                                task.exclude_states.end());

    std::optional<std::int64_t> test_start_day;
    std::int64_t test_end_day = panel.num_days - 1;
    if (task.test_start) {
        test_start_day = *task.test_start - panel.start_date;
        if (*test_start_day < 0 || *test_start_day >= panel.num_days) {
            throw DataError("make_windows: test period starts outside the panel range");
        }
        if (task.test_end) {
            test_end_day = *task.test_end - panel.start_date;
            if (test_end_day < *test_start_day || test_end_day >= panel.num_days) {
                throw DataError("make_windows: invalid test period end");
            }
        }
    }

    const int w_in = task.w_in;
    const int w_out = task.w_out;
    const size_t n_dynamic = panel.schema.dynamic_features.size();

    std::vector<TrainingWindow> pre_test;
    std::vector<TrainingWindow> test;

    for (size_t c = 0; c < panel.counties.size(); ++c) {
        if (excluded_fips.count(panel.counties[c].fips)) continue;
        if (excluded_states.count(panel.counties[c].state)) continue;

        const std::vector<double> target = objective_series(panel, c, task.objective);

        for (int s = 0; s + w_in + w_out <= panel.num_days; ++s) {
            const int first_target_day = s + w_in;
            const int last_target_day = s + w_in + w_out - 1;

            bool is_test = false;
            bool keep_horizon = true;
            if (test_start_day) {
                if (first_target_day >= *test_start_day && last_target_day <= test_end_day) {
                    is_test = true;
                } else if (first_target_day >= *test_start_day) {
                    continue;  // starts in the test period but overruns it
                } else if (last_target_day >= *test_start_day) {
                    // teacher-forcing range must stay strictly pre-test
                    if (s + w_in >= *test_start_day) continue;
                    keep_horizon = false;
                }
            }

            TrainingWindow window;
            window.county = c;
            window.start = panel.date_at(s);
            window.exogenous = Matrix(static_cast<size_t>(w_in), n_dynamic);
            window.history.resize(static_cast<size_t>(w_in));
            window.step_targets.resize(static_cast<size_t>(w_in));
            for (int t = 0; t < w_in; ++t) {
                const size_t row = panel.row(c, s + t);
                for (size_t f = 0; f < n_dynamic; ++f) {
                    window.exogenous(static_cast<size_t>(t), f) = panel.dynamic_values(row, f);
                }
                window.history[static_cast<size_t>(t)] = target[static_cast<size_t>(s + t)];
                window.step_targets[static_cast<size_t>(t)] = target[static_cast<size_t>(s + t + 1)];
            }
            window.statics.resize(panel.schema.static_features.size());
            for (size_t f = 0; f < window.statics.size(); ++f) {
                window.statics[f] = panel.static_values(c, f);
            }
            if (keep_horizon) {
                window.horizon_targets.resize(static_cast<size_t>(w_out));
                for (int t = 0; t < w_out; ++t) {
                    window.horizon_targets[static_cast<size_t>(t)] =
                        target[static_cast<size_t>(first_target_day + t)];
                }
            }
            (is_test ? test : pre_test).push_back(std::move(window));
        }
    }

    auto by_start = [](const TrainingWindow& a, const TrainingWindow& b) {
        if (a.start != b.start) return a.start < b.start;
        return a.county < b.county;
    };
    std::sort(pre_test.begin(), pre_test.end(), by_start);
    std::sort(test.begin(), test.end(), by_start);

    WindowSets sets;
    if (test_start_day) {
        const size_t cut = date_split_point(pre_test, 0.9);
        sets.train.assign(pre_test.begin(), pre_test.begin() + static_cast<long>(cut));
        sets.validation.assign(pre_test.begin() + static_cast<long>(cut), pre_test.end());
        sets.test = std::move(test);
    } else {
        const size_t cut80 = date_split_point(pre_test, 0.8);
        size_t cut90 = date_split_point(pre_test, 0.9);
        cut90 = std::max(cut90, cut80);
        sets.train.assign(pre_test.begin(), pre_test.begin() + static_cast<long>(cut80));
        sets.validation.assign(pre_test.begin() + static_cast<long>(cut80),
                               pre_test.begin() + static_cast<long>(cut90));
        sets.test.assign(pre_test.begin() + static_cast<long>(cut90), pre_test.end());

        // Horizon targets of earlier windows may reach into the held-out
        // block; drop them (the teacher-forcing range never does).
        if (!sets.test.empty()) {
            Date first_test_target = sets.test.front().start + w_in;
            for (auto* split : {&sets.train, &sets.validation}) {
                for (auto& w : *split) {
                    if (!w.horizon_targets.empty() && !(w.last_date(w_in) < first_test_target)) {
                        w.horizon_targets.clear();
                    }
                }
            }
        }
    }

    if (sets.train.empty()) throw DataError("make_windows: empty training split");
    if (sets.validation.empty()) throw DataError("make_windows: empty validation split");
    if (sets.test.empty()) throw DataError("make_windows: empty test split");

    // No-leakage assertion: every day used by a training or validation window
    // must precede every test forecast-target day.
    sets.max_train_date = sets.train.front().start;
    for (const auto* split : {&sets.train, &sets.validation}) {
        for (const auto& w : *split) {
            sets.max_train_date = std::max(sets.max_train_date, w.last_date(w_in));
        }
    }
    sets.min_test_date = sets.test.front().start + w_in;
    for (const auto& w : sets.test) {
        sets.min_test_date = std::min(sets.min_test_date, w.start + w_in);
    }
    if (!(sets.max_train_date < sets.min_test_date)) {
        throw DataError("make_windows: leakage detected, max train date " +
                        sets.max_train_date.to_string() + " >= min test target date " +
                        sets.min_test_date.to_string());
    }
    return sets;
}

} // namespace epi::eval
