#include "epi/eval.hpp"

#include "epi/csv.hpp"
#include "epi/errors.hpp"
#include "epi/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

namespace epi::eval {

namespace fs = std::filesystem;

DailyRmse rmse_daily(const Matrix& preds, const Matrix& targets) {
    if (preds.rows() != targets.rows() || preds.cols() != targets.cols()) {
        throw DataError("rmse_daily: shape mismatch");
    }
    if (preds.rows() == 0 || preds.cols() == 0) throw DataError("rmse_daily: empty input");

    DailyRmse out;
    out.per_day.resize(preds.cols());
    for (size_t day = 0; day < preds.cols(); ++day) {
        double sq = 0.0;
        for (size_t u = 0; u < preds.rows(); ++u) {
            const double r = preds(u, day) - targets(u, day);
            sq += r * r;
        }
        out.per_day[day] = std::sqrt(sq / static_cast<double>(preds.rows()));
        out.average += out.per_day[day];
    }
    out.average /= static_cast<double>(preds.cols());
    return out;
}

std::pair<double, double> rmse_macro_micro(const Matrix& preds, const Matrix& targets) {
    if (preds.rows() != targets.rows() || preds.cols() != targets.cols()) {
        throw DataError("rmse_macro_micro: shape mismatch");
    }
    if (preds.rows() == 0 || preds.cols() == 0) throw DataError("rmse_macro_micro: empty input");

    double macro = 0.0, pooled = 0.0;
    for (size_t u = 0; u < preds.rows(); ++u) {
        double sq = 0.0;
        for (size_t day = 0; day < preds.cols(); ++day) {
            const double r = preds(u, day) - targets(u, day);
            sq += r * r;
        }
        macro += std::sqrt(sq / static_cast<double>(preds.cols()));
        pooled += sq;
    }
    macro /= static_cast<double>(preds.rows());
    const double micro =
        std::sqrt(pooled / static_cast<double>(preds.rows() * preds.cols()));
    return {macro, micro};
}

StateSeries aggregate_state(const std::vector<std::string>& county_states, const Matrix& values) {
    if (county_states.size() != values.rows()) {
        throw DataError("aggregate_state: state list does not match row count");
    }
    for (const auto& s : county_states) {
        if (s.size() != 2) throw DataError("aggregate_state: unknown state code '" + s + "'");
    }
    std::map<std::string, size_t> index;
    for (const auto& s : county_states) index.emplace(s, 0);
    StateSeries out;
    for (auto& [state, idx] : index) {
        idx = out.states.size();
        out.states.push_back(state);
    }
    out.values = Matrix(out.states.size(), values.cols());
    for (size_t r = 0; r < values.rows(); ++r) {
        const size_t s = index.at(county_states[r]);
        for (size_t c = 0; c < values.cols(); ++c) out.values(s, c) += values(r, c);
    }
    return out;
}

CiSeries ensemble_ci(const std::vector<forecast::DwlstmModel>& models,
                     const TrainingWindow& window, int w_out, double level) {
    if (models.size() < 2) throw DataError("ensemble_ci: need at least 2 models");
    if (std::abs(level - 0.95) > 1e-12) {
        throw DataError("ensemble_ci: only the 95% level is supported");
    }
    const auto& first = models.front().config;
    for (const auto& m : models) {
        const auto& c = m.config;
        const bool same = c.w_in == first.w_in && c.w_out == first.w_out &&
                          c.hidden == first.hidden && c.dyn_proj == first.dyn_proj &&
                          c.stat_proj == first.stat_proj &&
                          c.include_target_history == first.include_target_history &&
                          m.objective == models.front().objective;
        if (!same) throw DataError("ensemble_ci: mismatched model configs");
    }

    std::vector<std::vector<double>> member;
    member.reserve(models.size());
    for (const auto& m : models) member.push_back(forecast::rollout(m, window, w_out));

    const bool clamp = objective_is_count(models.front().objective);
    const double z = 1.96;
    CiSeries out;
    for (int day = 0; day < w_out; ++day) {
        double mean = 0.0;
        for (const auto& preds : member) mean += preds[static_cast<size_t>(day)];
        mean /= static_cast<double>(member.size());
        double var = 0.0;
        for (const auto& preds : member) {
            const double d = preds[static_cast<size_t>(day)] - mean;
            var += d * d;
        }
        var /= static_cast<double>(member.size() - 1);  // ddof = 1
        const double half = z * std::sqrt(var);
        out.mean.push_back(mean);
        out.lo.push_back(clamp ? std::max(0.0, mean - half) : mean - half);
        out.hi.push_back(mean + half);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Backtest
// ---------------------------------------------------------------------------

namespace {

struct UnitPredictions {
    Matrix point;    // test windows x w_out
    Matrix lo, hi;   // same shape; meaningful iff has_intervals
    bool has_intervals = false;
    int fallbacks = 0;
};

// Last-value forecast used when an ARIMA fit is unusable for a window.
std::vector<double> locf_forecast(std::span<const double> history, int h) {
    return std::vector<double>(static_cast<size_t>(h), history.empty() ? 0.0 : history.back());
}

ModelResult summarize(const std::string& name, const data::FeaturePanel& panel,
                      const std::vector<TrainingWindow>& test_windows,
                      const Matrix& truth, const UnitPredictions& up, int w_in) {
    ModelResult result;
    result.model = name;
    result.fallback_forecasts = up.fallbacks;
    result.daily = rmse_daily(up.point, truth);
    std::tie(result.macro, result.micro) = [&] {
        // macro pools each county's cells across its windows
        std::map<size_t, std::pair<double, size_t>> chelper;  // county -> (sq, cells)
        double pooled = 0.0;
        for (size_t u = 0; u < test_windows.size(); ++u) {
            auto& agg = chelper[test_windows[u].county];
            for (size_t k = 0; k < truth.cols(); ++k) {
                const double r = up.point(u, k) - truth(u, k);
                agg.first += r * r;
                agg.second += 1;
                pooled += r * r;
            }
        }
        double macro = 0.0;
        for (auto& [county, agg] : chelper) {
            const double rmse = std::sqrt(agg.first / static_cast<double>(agg.second));
            result.county_rmse.emplace_back(panel.counties[county].fips,
                                            panel.counties[county].state, rmse, agg.second);
            macro += rmse;
        }
        macro /= static_cast<double>(chelper.size());
        const double micro = std::sqrt(pooled / static_cast<double>(truth.rows() * truth.cols()));
        return std::make_pair(macro, micro);
    }();

    // State-level: counties summed per state within each forecast origin.
    {
        std::map<Date, std::vector<size_t>> by_origin;
        for (size_t u = 0; u < test_windows.size(); ++u) {
            by_origin[test_windows[u].start].push_back(u);
        }
        double pooled = 0.0;
        size_t pooled_cells = 0;
        std::map<std::string, std::pair<double, size_t>> per_state;
        for (const auto& [origin, units] : by_origin) {
            std::vector<std::string> states;
            Matrix pred_block(units.size(), truth.cols());
            Matrix truth_block(units.size(), truth.cols());
            for (size_t i = 0; i < units.size(); ++i) {
                states.push_back(panel.counties[test_windows[units[i]].county].state);
                for (size_t k = 0; k < truth.cols(); ++k) {
                    pred_block(i, k) = up.point(units[i], k);
                    truth_block(i, k) = truth(units[i], k);
                }
            }
            const StateSeries sp = aggregate_state(states, pred_block);
            const StateSeries st = aggregate_state(states, truth_block);
            for (size_t s = 0; s < sp.states.size(); ++s) {
                auto& agg = per_state[sp.states[s]];
                for (size_t k = 0; k < truth.cols(); ++k) {
                    const double r = sp.values(s, k) - st.values(s, k);
                    agg.first += r * r;
                    agg.second += 1;
                    pooled += r * r;
                    ++pooled_cells;
                }
            }
        }
        double macro = 0.0;
        for (const auto& [state, agg] : per_state) {
            macro += std::sqrt(agg.first / static_cast<double>(agg.second));
        }
        result.state_macro = per_state.empty() ? 0.0 : macro / static_cast<double>(per_state.size());
        result.state_micro =
            pooled_cells == 0 ? 0.0 : std::sqrt(pooled / static_cast<double>(pooled_cells));
    }

    if (up.has_intervals) {
        size_t inside = 0, cells = 0;
        for (size_t u = 0; u < truth.rows(); ++u) {
            for (size_t k = 0; k < truth.cols(); ++k) {
                inside += (truth(u, k) >= up.lo(u, k) && truth(u, k) <= up.hi(u, k)) ? 1 : 0;
                ++cells;
            }
        }
        result.ci_coverage = static_cast<double>(inside) / static_cast<double>(cells);
    }

    for (size_t u = 0; u < test_windows.size(); ++u) {
        const auto& w = test_windows[u];
        for (size_t k = 0; k < truth.cols(); ++k) {
            ForecastTrace trace;
            trace.fips = panel.counties[w.county].fips;
            trace.origin = w.start;
            trace.date = w.start + (w_in + static_cast<int>(k));
            trace.truth = truth(u, k);
            trace.point = up.point(u, k);
            if (up.has_intervals) {
                trace.lo95 = up.lo(u, k);
                trace.hi95 = up.hi(u, k);
                trace.has_interval = true;
            }
            result.traces.push_back(std::move(trace));
        }
    }
    return result;
}

} // namespace

EvalReport backtest(const data::FeaturePanel& panel, const ForecastTask& task_in,
                    const ModelSpec& spec) {
    ForecastTask task = task_in;
    if (!task.test_start) {
        if (panel.num_days <= task.w_out) throw DataError("backtest: panel shorter than w_out");
        task.test_start = panel.date_at(panel.num_days - task.w_out);
        task.test_end = panel.date_at(panel.num_days - 1);
    }
    if (!task.test_end) task.test_end = panel.date_at(panel.num_days - 1);

    const WindowSets sets = make_windows(panel, task);
    const size_t n_units = sets.test.size();
    const size_t w_out = static_cast<size_t>(task.w_out);

    EvalReport report;
    report.task = task;
    report.seed = spec.dwlstm_config.seed;
    report.test_start = *task.test_start;
    report.test_end = *task.test_end;
    report.max_train_date = sets.max_train_date;
    report.n_test_windows = n_units;
    {
        std::set<size_t> counties;
        for (const auto& w : sets.test) counties.insert(w.county);
        report.n_counties = counties.size();
    }

    Matrix truth(n_units, w_out);
    for (size_t u = 0; u < n_units; ++u) {
        for (size_t k = 0; k < w_out; ++k) truth(u, k) = sets.test[u].horizon_targets[k];
    }

    if (spec.dwlstm) {
        std::vector<forecast::DwlstmModel> members;
        for (int i = 0; i < std::max(1, spec.ensemble); ++i) {
            forecast::DwlstmConfig config = spec.dwlstm_config;
            config.seed = spec.dwlstm_config.seed + static_cast<std::uint64_t>(i);
            members.push_back(
                forecast::train_on_windows(sets.train, sets.validation, panel, task, config));
        }

        UnitPredictions up;
        up.point = Matrix(n_units, w_out);
        up.has_intervals = members.size() >= 2;
        if (up.has_intervals) {
            up.lo = Matrix(n_units, w_out);
            up.hi = Matrix(n_units, w_out);
        }
        parallel_for(n_units, spec.threads, [&](size_t u) {
            if (members.size() == 1) {
                const auto preds = forecast::rollout(members[0], sets.test[u], task.w_out);
                for (size_t k = 0; k < w_out; ++k) up.point(u, k) = preds[k];
            } else {
                const CiSeries ci = ensemble_ci(members, sets.test[u], task.w_out);
                for (size_t k = 0; k < w_out; ++k) {
                    up.point(u, k) = ci.mean[k];
                    up.lo(u, k) = ci.lo[k];
                    up.hi(u, k) = ci.hi[k];
                }
            }
        });
        report.models.push_back(
            summarize("dwlstm", panel, sets.test, truth, up, task.w_in));
    }

    const bool clamp = objective_is_count(task.objective);
    auto run_arima = [&](const std::string& name, bool use_selected) {
        // ARIMA* selects each county's order once on the pre-test span, then
        // every forecast origin refits the coefficients on all data before it.
        std::map<size_t, std::array<int, 3>> orders;
        if (use_selected) {
            std::set<size_t> counties;
            for (const auto& w : sets.test) counties.insert(w.county);
            std::vector<size_t> list(counties.begin(), counties.end());
            std::vector<std::array<int, 3>> chosen(list.size());
            const std::int64_t pre_days = *task.test_start - panel.start_date;
            parallel_for(list.size(), spec.threads, [&](size_t i) {
                const auto series = objective_series(panel, list[i], task.objective);
                std::span<const double> pre(series.data(),
                                            static_cast<size_t>(std::max<std::int64_t>(0, pre_days)));
                try {
                    const auto model = arima::select_arima(pre, spec.arima_max_p, spec.arima_max_q);
                    chosen[i] = {model.p, model.d, model.q};
                } catch (const Error&) {
                    chosen[i] = {0, 1, 0};  // random-walk default
                }
            });
            for (size_t i = 0; i < list.size(); ++i) orders[list[i]] = chosen[i];
        }

        UnitPredictions up;
        up.point = Matrix(n_units, w_out);
        up.lo = Matrix(n_units, w_out);
        up.hi = Matrix(n_units, w_out);
        up.has_intervals = true;
        std::vector<int> fallbacks(n_units, 0);
        parallel_for(n_units, spec.threads, [&](size_t u) {
            const auto& window = sets.test[u];
            const auto series = objective_series(panel, window.county, task.objective);
            const std::int64_t origin_day = window.start - panel.start_date;
            const size_t history_len = static_cast<size_t>(origin_day) + static_cast<size_t>(task.w_in);
            std::span<const double> history(series.data(), history_len);
            std::array<int, 3> order{1, 2, 0};
            if (use_selected) order = orders.at(window.county);
            try {
                const auto model = arima::fit_arima(history, order[0], order[1], order[2]);
                const auto fc = arima::arima_forecast(model, history, task.w_out, clamp);
                for (size_t k = 0; k < w_out; ++k) {
                    up.point(u, k) = fc.point[k];
                    up.lo(u, k) = fc.lo95[k];
                    up.hi(u, k) = fc.hi95[k];
                }
            } catch (const Error&) {
                const auto fc = locf_forecast(history, task.w_out);
                for (size_t k = 0; k < w_out; ++k) {
                    up.point(u, k) = fc[k];
                    up.lo(u, k) = fc[k];
                    up.hi(u, k) = fc[k];
                }
                fallbacks[u] = 1;
            }
        });
        for (int f : fallbacks) up.fallbacks += f;
        report.models.push_back(summarize(name, panel, sets.test, truth, up, task.w_in));
    };

    if (spec.arima_fixed) run_arima("arima", false);
    if (spec.arima_star) run_arima("arima_star", true);

    return report;
}

std::vector<EvalReport> backtest_kfold(const data::FeaturePanel& panel, const ForecastTask& task,
                                       const ModelSpec& spec, int k) {
    if (k < 2) throw ConfigError("backtest_kfold: k must be >= 2");
    // Warmup covers enough history to build at least a handful of windows.
    const int warmup = task.w_in + task.w_out + 10;
    const int usable = panel.num_days - warmup;
    if (usable < k * task.w_out) {
        throw DataError("backtest_kfold: panel too short for " + std::to_string(k) + " folds");
    }

    std::vector<EvalReport> reports;
    for (int fold = 0; fold < k; ++fold) {
        const int lo = warmup + usable * fold / k;
        const int hi = warmup + usable * (fold + 1) / k - 1;
        if (hi - lo + 1 < task.w_out) continue;
        ForecastTask fold_task = task;
        fold_task.test_start = panel.date_at(lo);
        fold_task.test_end = panel.date_at(hi);
        reports.push_back(backtest(panel, fold_task, spec));
    }
    if (reports.empty()) throw DataError("backtest_kfold: no usable folds");
    return reports;
}

// ---------------------------------------------------------------------------
// Report emission
// ---------------------------------------------------------------------------

void save_report(const EvalReport& report, const std::string& dir) {
    fs::create_directories(dir);

    csv::Table main;
    main.header = {"objective",  "w_in",          "w_out",       "test_start", "test_end",
                   "model",      "avg_daily_rmse", "macro_rmse", "micro_rmse", "state_macro_rmse",
                   "state_micro_rmse", "ci_coverage", "n_counties", "n_test_windows", "fallbacks",
                   "seed"};
    for (const auto& m : report.models) {
        main.rows.push_back({objective_name(report.task.objective), std::to_string(report.task.w_in),
                             std::to_string(report.task.w_out), report.test_start.to_string(),
                             report.test_end.to_string(), m.model,
                             csv::format_double(m.daily.average), csv::format_double(m.macro),
                             csv::format_double(m.micro), csv::format_double(m.state_macro),
                             csv::format_double(m.state_micro),
                             m.ci_coverage >= 0.0 ? csv::format_double(m.ci_coverage) : std::string{},
                             std::to_string(report.n_counties),
                             std::to_string(report.n_test_windows),
                             std::to_string(m.fallback_forecasts), std::to_string(report.seed)});
    }
    csv::write_file((fs::path(dir) / "report.csv").string(), main);

    csv::Table county;
    county.header = {"model", "fips", "state", "rmse", "n_cells"};
    for (const auto& m : report.models) {
        for (const auto& [fips, state, rmse, cells] : m.county_rmse) {
            county.rows.push_back(
                {m.model, fips, state, csv::format_double(rmse), std::to_string(cells)});
        }
    }
    csv::write_file((fs::path(dir) / "per_county.csv").string(), county);

    csv::Table traces;
    traces.header = {"model", "fips", "origin", "date", "truth", "point", "lo95", "hi95"};
    for (const auto& m : report.models) {
        for (const auto& t : m.traces) {
            traces.rows.push_back({m.model, t.fips, t.origin.to_string(), t.date.to_string(),
                                   csv::format_double(t.truth), csv::format_double(t.point),
                                   t.has_interval ? csv::format_double(t.lo95) : std::string{},
                                   t.has_interval ? csv::format_double(t.hi95) : std::string{}});
        }
    }
    csv::write_file((fs::path(dir) / "forecasts.csv").string(), traces);

    // Per-state daily sums of truth and point forecasts, per origin.
    csv::Table state_daily;
    state_daily.header = {"model", "origin", "state", "date", "truth", "point"};
    for (const auto& m : report.models) {
        std::map<std::string, std::string> state_of;
        for (const auto& [fips, st, rmse, cells] : m.county_rmse) {
            (void)rmse;
            (void)cells;
            state_of.emplace(fips, st);
        }
        std::map<std::tuple<Date, std::string, Date>, std::pair<double, double>> acc;
        for (const auto& t : m.traces) {
            auto& cell = acc[{t.origin, state_of.at(t.fips), t.date}];
            cell.first += t.truth;
            cell.second += t.point;
        }
        for (const auto& [key, sums] : acc) {
            state_daily.rows.push_back({m.model, std::get<0>(key).to_string(), std::get<1>(key),
                                        std::get<2>(key).to_string(),
                                        csv::format_double(sums.first),
                                        csv::format_double(sums.second)});
        }
    }
    csv::write_file((fs::path(dir) / "state_daily.csv").string(), state_daily);

    std::ofstream summary(fs::path(dir) / "summary.txt");
    summary << "objective: " << objective_name(report.task.objective) << "\n"
            << "windows:   " << report.task.w_in << " in / " << report.task.w_out << " out\n"
            << "test:      " << report.test_start.to_string() << " .. "
            << report.test_end.to_string() << " (" << report.n_test_windows << " windows, "
            << report.n_counties << " counties)\n"
            << "train cut: " << report.max_train_date.to_string() << "\n\n";
    summary << "model        avg_daily_rmse   macro_rmse   micro_rmse   state_macro\n";
    for (const auto& m : report.models) {
        char line[160];
        std::snprintf(line, sizeof(line), "%-12s %14.4f %12.4f %12.4f %13.4f\n", m.model.c_str(),
                      m.daily.average, m.macro, m.micro, m.state_macro);
        summary << line;
    }
}

} // namespace epi::eval
