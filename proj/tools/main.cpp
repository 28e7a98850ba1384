// epiforecast: panel building, analytics, DWLSTM/ARIMA forecasting and
// backtesting for county-level outbreak data, driven by one JSON config.

#include "epi/arima.hpp"
#include "epi/csv.hpp"
#include "epi/dataset.hpp"
#include "epi/errors.hpp"
#include "epi/eval.hpp"
#include "epi/forecast.hpp"
#include "epi/pca.hpp"
#include "epi/stats.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Config loading: every key is declared here; unknown keys are a hard error.
// ---------------------------------------------------------------------------

const std::map<std::string, std::set<std::string>> kKnownKeys = {
    {"", {"seed", "threads", "out_dir", "datasets", "panel", "synth", "analyze", "task", "dwlstm",
          "backtest", "report"}},
    {"datasets", {"outbreak", "static", "dynamic"}},
    {"datasets.entry", {"path", "schema"}},
    {"panel", {"dir", "max_gap_days", "start", "end"}},
    {"synth", {"counties", "days", "static_features", "beta", "noise", "start"}},
    {"analyze", {"outcomes", "report_date", "bins", "retain", "pca_rows"}},
    {"task",
     {"objective", "w_in", "w_out", "test_start", "test_end", "exclude_fips", "exclude_states"}},
    {"dwlstm",
     {"dyn_proj", "stat_proj", "hidden", "learning_rate", "epochs", "batch", "theta_quantile",
      "weight_boost", "l2", "clip_norm", "patience", "include_target_history"}},
    {"backtest", {"models", "ensemble", "kfold", "arima_max_p", "arima_max_q"}},
    {"report", {"inputs"}},
};

void check_keys(const json& obj, const std::string& scope) {
    if (!obj.is_object()) return;
    const auto& allowed = kKnownKeys.at(scope);
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        if (!allowed.count(it.key())) {
            throw epi::ConfigError("config: unknown key '" +
                                   (scope.empty() ? it.key() : scope + "." + it.key()) + "'");
        }
    }
}

struct RunConfig {
    std::uint64_t seed = 42;
    int threads = 1;
    std::string out_dir = "out";

    struct DatasetRef {
        std::string path;
        std::string schema;
    };
    std::optional<DatasetRef> outbreak;
    std::vector<DatasetRef> statics;
    std::vector<DatasetRef> dynamics;

    std::string panel_dir;  // panel to read; defaults to <out_dir>/panel
    epi::data::BuildConfig build;

    epi::data::SynthSpec synth;

    std::vector<std::string> outcomes = {"cumulative_deaths", "cumulative_cases", "daily_deaths"};
    std::optional<epi::Date> report_date;
    int bins = 16;
    double retain = 0.98;
    epi::pca::RowMode pca_rows = epi::pca::RowMode::PerDate;

    epi::eval::ForecastTask task;
    epi::forecast::DwlstmConfig dwlstm;

    std::set<std::string> backtest_models = {"dwlstm", "arima", "arima_star"};
    int ensemble = 1;
    int kfold = 0;
    int arima_max_p = 3;
    int arima_max_q = 3;

    std::vector<std::string> report_inputs;
};

std::optional<epi::Date> parse_optional_date(const json& obj, const char* key) {
    const std::string s = obj.value(key, std::string{});
    if (s.empty()) return std::nullopt;
    return epi::Date::parse(s);
}

RunConfig load_config(const std::string& path) {
    RunConfig config;
    if (path.empty()) return config;

    std::ifstream in(path);
    if (!in) throw epi::ConfigError("cannot open config file: " + path);
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw epi::ConfigError(std::string("config parse error: ") + e.what());
    }
    check_keys(doc, "");

    config.seed = doc.value("seed", config.seed);
    config.threads = doc.value("threads", config.threads);
    config.out_dir = doc.value("out_dir", config.out_dir);

    if (doc.contains("datasets")) {
        const json& d = doc.at("datasets");
        check_keys(d, "datasets");
        auto parse_ref = [&](const json& entry) {
            check_keys(entry, "datasets.entry");
            RunConfig::DatasetRef ref;
            ref.path = entry.at("path").get<std::string>();
            ref.schema = entry.at("schema").get<std::string>();
            return ref;
        };
        if (d.contains("outbreak")) config.outbreak = parse_ref(d.at("outbreak"));
        for (const auto& entry : d.value("static", json::array())) {
            config.statics.push_back(parse_ref(entry));
        }
        for (const auto& entry : d.value("dynamic", json::array())) {
            config.dynamics.push_back(parse_ref(entry));
        }
    }

    if (doc.contains("panel")) {
        const json& p = doc.at("panel");
        check_keys(p, "panel");
        config.panel_dir = p.value("dir", std::string{});
        config.build.max_gap_days = p.value("max_gap_days", config.build.max_gap_days);
        config.build.start = parse_optional_date(p, "start");
        config.build.end = parse_optional_date(p, "end");
    }

    if (doc.contains("synth")) {
        const json& s = doc.at("synth");
        check_keys(s, "synth");
        config.synth.counties = s.value("counties", config.synth.counties);
        config.synth.days = s.value("days", config.synth.days);
        config.synth.static_features = s.value("static_features", config.synth.static_features);
        config.synth.beta = s.value("beta", config.synth.beta);
        config.synth.noise = s.value("noise", config.synth.noise);
        if (auto d = parse_optional_date(s, "start")) config.synth.start = *d;
    }

    if (doc.contains("analyze")) {
        const json& a = doc.at("analyze");
        check_keys(a, "analyze");
        if (a.contains("outcomes")) config.outcomes = a.at("outcomes").get<std::vector<std::string>>();
        config.report_date = parse_optional_date(a, "report_date");
        config.bins = a.value("bins", config.bins);
        config.retain = a.value("retain", config.retain);
        const std::string rows = a.value("pca_rows", std::string("per_date"));
        if (rows == "per_date") config.pca_rows = epi::pca::RowMode::PerDate;
        else if (rows == "aggregated") config.pca_rows = epi::pca::RowMode::Aggregated;
        else throw epi::ConfigError("config: analyze.pca_rows must be per_date|aggregated");
    }

    if (doc.contains("task")) {
        const json& t = doc.at("task");
        check_keys(t, "task");
        config.task.objective =
            epi::eval::objective_from_string(t.value("objective", std::string("new_daily_deaths")));
        config.task.w_in = t.value("w_in", config.task.w_in);
        config.task.w_out = t.value("w_out", config.task.w_out);
        config.task.test_start = parse_optional_date(t, "test_start");
        config.task.test_end = parse_optional_date(t, "test_end");
        if (t.contains("exclude_fips")) {
            config.task.exclude_fips = t.at("exclude_fips").get<std::vector<std::string>>();
        }
        if (t.contains("exclude_states")) {
            config.task.exclude_states = t.at("exclude_states").get<std::vector<std::string>>();
        }
    }

    if (doc.contains("dwlstm")) {
        const json& n = doc.at("dwlstm");
        check_keys(n, "dwlstm");
        auto& c = config.dwlstm;
        c.dyn_proj = n.value("dyn_proj", c.dyn_proj);
        c.stat_proj = n.value("stat_proj", c.stat_proj);
        c.hidden = n.value("hidden", c.hidden);
        c.learning_rate = n.value("learning_rate", c.learning_rate);
        c.epochs = n.value("epochs", c.epochs);
        c.batch = n.value("batch", c.batch);
        c.theta_quantile = n.value("theta_quantile", c.theta_quantile);
        c.weight_boost = n.value("weight_boost", c.weight_boost);
        c.l2 = n.value("l2", c.l2);
        c.clip_norm = n.value("clip_norm", c.clip_norm);
        c.patience = n.value("patience", c.patience);
        c.include_target_history = n.value("include_target_history", c.include_target_history);
    }

    if (doc.contains("backtest")) {
        const json& b = doc.at("backtest");
        check_keys(b, "backtest");
        if (b.contains("models")) {
            config.backtest_models.clear();
            for (const auto& m : b.at("models")) {
                const std::string name = m.get<std::string>();
                if (name != "dwlstm" && name != "arima" && name != "arima_star") {
                    throw epi::ConfigError("config: unknown backtest model '" + name + "'");
                }
                config.backtest_models.insert(name);
            }
        }
        config.ensemble = b.value("ensemble", config.ensemble);
        config.kfold = b.value("kfold", config.kfold);
        config.arima_max_p = b.value("arima_max_p", config.arima_max_p);
        config.arima_max_q = b.value("arima_max_q", config.arima_max_q);
    }

    if (doc.contains("report")) {
        const json& r = doc.at("report");
        check_keys(r, "report");
        if (r.contains("inputs")) config.report_inputs = r.at("inputs").get<std::vector<std::string>>();
    }
    return config;
}

std::string resolved_panel_dir(const RunConfig& config) {
    if (!config.panel_dir.empty()) return config.panel_dir;
    return (fs::path(config.out_dir) / "panel").string();
}

void write_build_log(const epi::data::BuildLog& log, std::uint64_t seed, const std::string& dir) {
    std::ofstream out(fs::path(dir) / "build_log.txt");
    out << "seed: " << seed << "\n";
    out << "dropped_counties: " << log.dropped.size() << "\n";
    for (const auto& line : log.dropped) out << "  " << line << "\n";
    out << "notes: " << log.notes.size() << "\n";
    for (const auto& line : log.notes) out << "  " << line << "\n";
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

int cmd_synth(const RunConfig& config) {
    const auto panel = epi::data::generate_synthetic_panel(config.synth, config.seed);
    const std::string dir = (fs::path(config.out_dir) / "panel").string();
    epi::data::save_panel(panel, dir);
    epi::data::write_panel_dataset_descriptors(panel, dir);
    write_build_log({}, config.seed, dir);
    std::cout << "panel: " << dir << " (" << panel.counties.size() << " counties, "
              << panel.num_days << " days)\n";
    return 0;
}

int cmd_build_panel(const RunConfig& config) {
    if (!config.outbreak) throw epi::ConfigError("build-panel: datasets.outbreak is required");
    if (config.statics.empty()) {
        throw epi::ConfigError("build-panel: at least one datasets.static entry is required");
    }
    std::vector<epi::data::RawTable> tables;
    auto load = [&](const RunConfig::DatasetRef& ref) {
        const auto schema = epi::data::DatasetSchema::from_json_file(ref.schema);
        tables.push_back(epi::data::load_dataset(schema, ref.path));
    };
    load(*config.outbreak);
    for (const auto& ref : config.statics) load(ref);
    for (const auto& ref : config.dynamics) load(ref);

    epi::data::BuildLog log;
    const auto panel = epi::data::build_panel(tables, config.build, &log);
    const std::string dir = (fs::path(config.out_dir) / "panel").string();
    epi::data::save_panel(panel, dir);
    epi::data::write_panel_dataset_descriptors(panel, dir);
    write_build_log(log, config.seed, dir);

    size_t rejects = 0;
    for (const auto& t : tables) rejects += t.rejects.size();
    std::cout << "panel: " << dir << " (" << panel.counties.size() << " counties, "
              << panel.num_days << " days, " << log.dropped.size() << " dropped, " << rejects
              << " rejected rows)\n";
    return 0;
}

int cmd_analyze(const RunConfig& config, double retain_override) {
    const auto panel = epi::data::load_panel(resolved_panel_dir(config));
    fs::create_directories(config.out_dir);

    epi::stats::OutcomeSpec spec;
    spec.outcomes = config.outcomes;
    spec.report_date = config.report_date;
    spec.bins = config.bins;
    const auto report = epi::stats::correlate_panel(panel, spec, config.threads);
    epi::stats::save_report_csv(report, (fs::path(config.out_dir) / "correlations.csv").string());

    std::vector<std::string> names;
    const epi::Matrix design = epi::pca::design_matrix(panel, config.pca_rows, names);
    const auto model = epi::pca::fit(design, names);
    const std::string pca_dir = (fs::path(config.out_dir) / "pca").string();
    epi::pca::save_model_csv(model, pca_dir);

    // Biplot-ready projection of the design rows onto the first two components.
    {
        std::vector<size_t> kept_cols;
        for (const auto& name : model.feature_names) {
            for (size_t i = 0; i < names.size(); ++i) {
                if (names[i] == name) {
                    kept_cols.push_back(i);
                    break;
                }
            }
        }
        epi::Matrix kept(design.rows(), kept_cols.size());
        for (size_t r = 0; r < design.rows(); ++r) {
            for (size_t c = 0; c < kept_cols.size(); ++c) kept(r, c) = design(r, kept_cols[c]);
        }
        const epi::Matrix scores = epi::pca::project(model, kept, 2);
        epi::csv::Table t;
        t.header = {"fips", "date", "pc1", "pc2"};
        const size_t days = config.pca_rows == epi::pca::RowMode::PerDate
                                ? static_cast<size_t>(panel.num_days)
                                : 1;
        for (size_t r = 0; r < scores.rows(); ++r) {
            const size_t county = r / days;
            const std::string date =
                config.pca_rows == epi::pca::RowMode::PerDate
                    ? panel.date_at(static_cast<int>(r % days)).to_string()
                    : std::string{};
            t.rows.push_back({panel.counties[county].fips, date,
                              epi::csv::format_double(scores(r, 0)),
                              scores.cols() > 1 ? epi::csv::format_double(scores(r, 1)) : "0"});
        }
        epi::csv::write_file((fs::path(config.out_dir) / "projection.csv").string(), t);
    }

    const double retain = retain_override > 0.0 ? retain_override : config.retain;
    const auto curve = epi::pca::components_for_variance(model, retain);
    std::cout << "components for " << retain << " variance: " << curve.k << " of "
              << curve.cumulative.size() << "\n";
    std::cout << "reports: " << config.out_dir << "/correlations.csv, " << pca_dir << "/*\n";
    return 0;
}

int cmd_train(const RunConfig& config) {
    const auto panel = epi::data::load_panel(resolved_panel_dir(config));
    fs::create_directories(config.out_dir);
    epi::forecast::DwlstmConfig c = config.dwlstm;
    c.seed = config.seed;
    const auto model = epi::forecast::train(panel, config.task, c);
    epi::forecast::save_checkpoint(model, (fs::path(config.out_dir) / "checkpoint.json").string());
    epi::forecast::save_training_log(model,
                                     (fs::path(config.out_dir) / "training_log.csv").string());
    std::cout << "checkpoint: " << config.out_dir << "/checkpoint.json ("
              << model.log.size() - 1 << " epochs, final val loss "
              << (model.log.empty() ? 0.0 : model.log.back().val_loss) << ")\n";
    if (model.diverged) std::cout << "warning: training diverged; kept last good checkpoint\n";
    return 0;
}

int cmd_forecast(const RunConfig& config, const std::string& checkpoint_path) {
    const auto panel = epi::data::load_panel(resolved_panel_dir(config));
    const std::string path = checkpoint_path.empty()
                                 ? (fs::path(config.out_dir) / "checkpoint.json").string()
                                 : checkpoint_path;
    const auto model = epi::forecast::load_checkpoint(path);
    fs::create_directories(config.out_dir);

    const int w_in = model.config.w_in;
    const int w_out = config.task.w_out;
    if (panel.num_days < w_in) throw epi::DataError("forecast: panel shorter than w_in");

    // Forecast the w_out days following the panel's last observed day.
    epi::csv::Table t;
    t.header = {"fips", "date", "point"};
    const int start = panel.num_days - w_in;
    for (size_t c = 0; c < panel.counties.size(); ++c) {
        epi::eval::TrainingWindow window;
        window.county = c;
        window.start = panel.date_at(start);
        window.exogenous = epi::Matrix(static_cast<size_t>(w_in),
                                       panel.schema.dynamic_features.size());
        const auto target = epi::eval::objective_series(panel, c, model.objective);
        window.history.resize(static_cast<size_t>(w_in));
        for (int i = 0; i < w_in; ++i) {
            const size_t row = panel.row(c, start + i);
            for (size_t f = 0; f < panel.schema.dynamic_features.size(); ++f) {
                window.exogenous(static_cast<size_t>(i), f) = panel.dynamic_values(row, f);
            }
            window.history[static_cast<size_t>(i)] = target[static_cast<size_t>(start + i)];
        }
        window.statics.resize(panel.schema.static_features.size());
        for (size_t f = 0; f < window.statics.size(); ++f) {
            window.statics[f] = panel.static_values(c, f);
        }
        const auto preds = epi::forecast::rollout(model, window, w_out);
        for (int k = 0; k < w_out; ++k) {
            t.rows.push_back({panel.counties[c].fips,
                              panel.date_at(panel.num_days - 1 + 1 + k).to_string(),
                              epi::csv::format_double(preds[static_cast<size_t>(k)])});
        }
    }
    const std::string out_path = (fs::path(config.out_dir) / "forecast.csv").string();
    epi::csv::write_file(out_path, t);
    std::cout << "forecast: " << out_path << " (" << panel.counties.size() << " counties x "
              << w_out << " days)\n";
    return 0;
}

int cmd_backtest(const RunConfig& config, int kfold_override) {
    const auto panel = epi::data::load_panel(resolved_panel_dir(config));

    epi::eval::ModelSpec spec;
    spec.dwlstm = config.backtest_models.count("dwlstm") > 0;
    spec.arima_fixed = config.backtest_models.count("arima") > 0;
    spec.arima_star = config.backtest_models.count("arima_star") > 0;
    spec.dwlstm_config = config.dwlstm;
    spec.dwlstm_config.seed = config.seed;
    spec.ensemble = config.ensemble;
    spec.arima_max_p = config.arima_max_p;
    spec.arima_max_q = config.arima_max_q;
    spec.threads = config.threads;

    const int kfold = kfold_override >= 0 ? kfold_override : config.kfold;
    const std::string dir = (fs::path(config.out_dir) / "backtest").string();
    if (kfold > 0) {
        const auto reports = epi::eval::backtest_kfold(panel, config.task, spec, kfold);
        epi::csv::Table folds;
        folds.header = {"fold", "test_start", "test_end", "model", "avg_daily_rmse", "macro_rmse",
                        "micro_rmse"};
        for (size_t i = 0; i < reports.size(); ++i) {
            char name[32];
            std::snprintf(name, sizeof(name), "fold_%02zu", i);
            epi::eval::save_report(reports[i], (fs::path(dir) / name).string());
            for (const auto& m : reports[i].models) {
                folds.rows.push_back({std::to_string(i), reports[i].test_start.to_string(),
                                      reports[i].test_end.to_string(), m.model,
                                      epi::csv::format_double(m.daily.average),
                                      epi::csv::format_double(m.macro),
                                      epi::csv::format_double(m.micro)});
            }
        }
        fs::create_directories(dir);
        epi::csv::write_file((fs::path(dir) / "folds_summary.csv").string(), folds);
        std::cout << "backtest: " << dir << " (" << reports.size() << " folds)\n";
    } else {
        const auto report = epi::eval::backtest(panel, config.task, spec);
        epi::eval::save_report(report, dir);
        std::cout << "backtest: " << dir << "\n";
        for (const auto& m : report.models) {
            std::cout << "  " << m.model << ": avg daily rmse " << m.daily.average << ", macro "
                      << m.macro << ", micro " << m.micro << "\n";
        }
    }
    return 0;
}

int cmd_report(const RunConfig& config, const std::vector<std::string>& inputs_flag) {
    const auto& inputs = inputs_flag.empty() ? config.report_inputs : inputs_flag;
    if (inputs.empty()) throw epi::ConfigError("report: no input directories (report.inputs)");

    epi::csv::Table combined;
    bool have_header = false;
    for (const auto& dir : inputs) {
        const auto t = epi::csv::read_file((fs::path(dir) / "report.csv").string());
        if (!have_header) {
            combined.header = t.header;
            combined.header.insert(combined.header.begin(), "source");
            have_header = true;
        }
        for (const auto& row : t.rows) {
            std::vector<std::string> out{dir};
            out.insert(out.end(), row.begin(), row.end());
            combined.rows.push_back(std::move(out));
        }
    }
    fs::create_directories(config.out_dir);
    const std::string path = (fs::path(config.out_dir) / "combined_report.csv").string();
    epi::csv::write_file(path, combined);
    std::cout << "report: " << path << " (" << combined.rows.size() << " rows)\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"County-level outbreak analytics and forecasting"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::string panel_dir;
    std::int64_t seed = -1;
    int threads = 0;
    app.add_option("--config", config_path, "JSON run configuration")->envname("EPI_CONFIG");
    app.add_option("--out", out_dir, "output directory (overrides config out_dir)");
    app.add_option("--seed", seed, "root RNG seed (overrides config seed)");
    app.add_option("--threads", threads, "worker threads (overrides config threads)");
    app.add_option("--panel", panel_dir, "panel directory (overrides config panel.dir)");

    auto* synth = app.add_subcommand(
        "synth", "Generate a synthetic panel. Config keys: seed, out_dir, synth.*");
    auto* build = app.add_subcommand(
        "build-panel",
        "Build a panel from snapshot CSVs. Config keys: out_dir, datasets.*, panel.max_gap_days, "
        "panel.start, panel.end");
    auto* analyze = app.add_subcommand(
        "analyze",
        "Correlation + PCA reports. Config keys: out_dir, panel.dir, threads, analyze.*");
    double retain_flag = -1.0;
    analyze->add_option("--retain", retain_flag, "variance fraction for the component count");
    auto* train = app.add_subcommand(
        "train", "Train the DWLSTM predictor. Config keys: seed, out_dir, panel.dir, task.*, dwlstm.*");
    auto* forecast = app.add_subcommand(
        "forecast",
        "Roll a trained model past the panel end. Config keys: out_dir, panel.dir, task.w_out");
    std::string checkpoint_flag;
    forecast->add_option("--checkpoint", checkpoint_flag, "checkpoint path");
    auto* backtest = app.add_subcommand(
        "backtest",
        "Train/fit, forecast the test period, and score. Config keys: seed, threads, out_dir, "
        "panel.dir, task.*, dwlstm.*, backtest.*");
    int kfold_flag = -1;
    backtest->add_option("--kfold", kfold_flag, "chronological folds (0 = single test period)");
    auto* report = app.add_subcommand(
        "report", "Merge backtest reports. Config keys: out_dir, report.inputs");
    std::vector<std::string> report_inputs;
    report->add_option("--inputs", report_inputs, "backtest directories to merge");

    CLI11_PARSE(app, argc, argv);

    try {
        RunConfig config = load_config(config_path);
        if (!out_dir.empty()) config.out_dir = out_dir;
        if (!panel_dir.empty()) config.panel_dir = panel_dir;
        if (seed >= 0) config.seed = static_cast<std::uint64_t>(seed);
        if (threads > 0) config.threads = threads;

        if (synth->parsed()) return cmd_synth(config);
        if (build->parsed()) return cmd_build_panel(config);
        if (analyze->parsed()) return cmd_analyze(config, retain_flag);
        if (train->parsed()) return cmd_train(config);
        if (forecast->parsed()) return cmd_forecast(config, checkpoint_flag);
        if (backtest->parsed()) return cmd_backtest(config, kfold_flag);
        if (report->parsed()) return cmd_report(config, report_inputs);
        return 1;
    } catch (const epi::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.exit_code();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
