#pragma once

#include "epi/dataset.hpp"
#include "epi/matrix.hpp"
#include "epi/task.hpp"

#include <vector>

namespace epi::eval {

/// One training/inference example: w_in observed days of exogenous dynamic
/// features and the target's own history, the county's static vector, the
/// teacher-forcing next-day targets inside the input window, and the w_out
/// forecast-window targets. All values are in raw target units.
struct TrainingWindow {
    size_t county = 0;
    Date start;                           // first input day
    Matrix exogenous;                     // w_in x n_dynamic (panel features)
    std::vector<double> history;          // w_in observed target values
    std::vector<double> statics;          // county static features
    std::vector<double> step_targets;     // w_in next-day targets (days start+1 .. start+w_in)
    std::vector<double> horizon_targets;  // w_out targets, or empty when they
                                          // would cross into the test period

    Date last_date(int w_in) const {
        const int horizon = static_cast<int>(horizon_targets.size());
        return start + (w_in + std::max(0, horizon - 1));
    }
};

struct WindowSets {
    std::vector<TrainingWindow> train;
    std::vector<TrainingWindow> validation;
    std::vector<TrainingWindow> test;
    Date max_train_date;  // latest day appearing anywhere in train/validation
    Date min_test_date;   // earliest forecast-target day across test windows
};

/// Per-county target series for an objective, in raw units.
std::vector<double> objective_series(const data::FeaturePanel& panel, size_t county,
                                     Objective objective);

/// Whether the objective is a count-like quantity (forecasts clamp at 0).
bool objective_is_count(Objective objective);

/// Slides daily windows over the panel and splits them chronologically.
/// With a test period set: test windows are those whose w_out target days
/// fall entirely inside it; earlier windows split 90/10 (train/validation)
/// by start date, and a training window whose forecast targets would cross
/// the test boundary keeps its teacher-forcing targets but drops the horizon
/// targets. Without a test period: 80/10/10 by start date. Throws DataError
/// on an empty split, and asserts the no-leakage invariant
/// (max train date < min test target date) before returning.
WindowSets make_windows(const data::FeaturePanel& panel, const ForecastTask& task);

} // namespace epi::eval
