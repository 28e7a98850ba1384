#pragma once

#include "epi/arima.hpp"
#include "epi/dataset.hpp"
#include "epi/forecast.hpp"
#include "epi/matrix.hpp"
#include "epi/task.hpp"
#include "epi/windows.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace epi::eval {

// ---------------------------------------------------------------------------
// RMSE protocols
// ---------------------------------------------------------------------------

struct DailyRmse {
    std::vector<double> per_day;  // RMSE across units, per forecast day
    double average = 0.0;         // mean of per_day ("Average Daily RMSE")
};

/// Rows are forecast units (county, or county x origin), columns are days.
DailyRmse rmse_daily(const Matrix& preds, const Matrix& targets);

/// macro: unweighted mean over units of each unit's own RMSE.
/// micro: RMSE pooled over every (unit, day) cell.
std::pair<double, double> rmse_macro_micro(const Matrix& preds, const Matrix& targets);

/// Sums county rows into per-state rows (exact, no re-modeling). Row r of
/// `values` belongs to states[r]; states are sorted and unique on output.
struct StateSeries {
    std::vector<std::string> states;
    Matrix values;
};
StateSeries aggregate_state(const std::vector<std::string>& county_states, const Matrix& values);

// ---------------------------------------------------------------------------
// Ensemble confidence intervals
// ---------------------------------------------------------------------------

struct CiSeries {
    std::vector<double> mean, lo, hi;
};

/// Per-day ensemble mean +- 1.96 * sample std (ddof=1) over M >= 2 models
/// that share a config up to the seed; lo clamps at 0 for count objectives.
CiSeries ensemble_ci(const std::vector<forecast::DwlstmModel>& models,
                     const TrainingWindow& window, int w_out, double level = 0.95);

// ---------------------------------------------------------------------------
// Backtests
// ---------------------------------------------------------------------------

struct ModelSpec {
    bool dwlstm = true;
    forecast::DwlstmConfig dwlstm_config;
    int ensemble = 1;          // DWLSTM seeds trained; >= 2 adds intervals
    bool arima_fixed = true;   // ARIMA(1,2,0) baseline
    bool arima_star = true;    // ADF/AIC-selected baseline
    int arima_max_p = 3;
    int arima_max_q = 3;
    int threads = 1;
};

struct ForecastTrace {
    std::string fips;
    Date origin;  // first input day of the window
    Date date;    // forecast day
    double truth = 0.0;
    double point = 0.0;
    double lo95 = 0.0, hi95 = 0.0;
    bool has_interval = false;
};

struct ModelResult {
    std::string model;  // dwlstm | arima | arima_star
    DailyRmse daily;
    double macro = 0.0, micro = 0.0;
    double state_macro = 0.0, state_micro = 0.0;
    double ci_coverage = -1.0;  // fraction of cells with truth inside [lo,hi]; -1 if none
    int fallback_forecasts = 0; // windows served by the last-value fallback
    std::vector<std::tuple<std::string, std::string, double, size_t>> county_rmse;  // fips,state,rmse,cells
    std::vector<ForecastTrace> traces;
};

struct EvalReport {
    ForecastTask task;
    std::uint64_t seed = 0;
    Date test_start, test_end;
    Date max_train_date;
    size_t n_counties = 0;
    size_t n_test_windows = 0;
    std::vector<ModelResult> models;
};

/// Trains/fits the requested models on the pre-test span, forecasts every
/// test window, and computes the full metric set. When the task has no test
/// period, the final w_out days of the panel are used.
EvalReport backtest(const data::FeaturePanel& panel, const ForecastTask& task,
                    const ModelSpec& spec);

/// Chronological contiguous folds: the post-warmup date range is cut into k
/// spans and each span is backtested as the test period with all earlier
/// data for training. Folds without enough training history are skipped.
std::vector<EvalReport> backtest_kfold(const data::FeaturePanel& panel, const ForecastTask& task,
                                       const ModelSpec& spec, int k);

/// report.csv, per_county.csv, forecasts.csv, state_daily.csv, summary.txt.
void save_report(const EvalReport& report, const std::string& dir);

} // namespace epi::eval
