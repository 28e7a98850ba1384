#pragma once

#include "epi/dataset.hpp"
#include "epi/matrix.hpp"
#include "epi/task.hpp"
#include "epi/windows.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace epi::forecast {

/// Hyperparameters of the double-window LSTM predictor. w_in/w_out of 0
/// inherit the task's windows at training time.
struct DwlstmConfig {
    int w_in = 10;
    int w_out = 10;
    int dynamic_input_size = 0;  // 0: derived from the panel at train time
    int static_input_size = 0;
    int dyn_proj = 16;
    int stat_proj = 8;
    int hidden = 32;
    double learning_rate = 1e-3;
    int epochs = 200;
    int batch = 64;
    double theta_quantile = 0.9;  // weight threshold = this quantile of train targets
    double weight_boost = 4.0;    // alpha
    double l2 = 1e-4;             // lambda, applied to weights (not biases)
    double clip_norm = 5.0;
    int patience = 20;
    bool include_target_history = true;
    std::uint64_t seed = 42;

    void validate() const;  // throws ConfigError
};

/// All learnable tensors. Gate weight matrices act on [projected input (+)
/// hidden state].
struct DwlstmParams {
    Matrix w_dyn;
    std::vector<double> b_dyn;
    Matrix w_stat;
    std::vector<double> b_stat;
    Matrix w_i, w_f, w_g, w_o;
    std::vector<double> b_i, b_f, b_g, b_o;
    std::vector<double> w_head;  // 1 x (hidden + stat_proj)
    std::vector<double> b_head;  // 1 value
};

/// Applies fn(name, flat_values, is_weight) to every tensor, in a fixed order
/// shared by the optimizer, gradient checks, and the checkpoint format.
template <typename Params, typename Fn>
void visit_params(Params& p, Fn&& fn) {
    fn("w_dyn", p.w_dyn.data(), true);
    fn("b_dyn", p.b_dyn, false);
    fn("w_stat", p.w_stat.data(), true);
    fn("b_stat", p.b_stat, false);
    fn("w_i", p.w_i.data(), true);
    fn("b_i", p.b_i, false);
    fn("w_f", p.w_f.data(), true);
    fn("b_f", p.b_f, false);
    fn("w_g", p.w_g.data(), true);
    fn("b_g", p.b_g, false);
    fn("w_o", p.w_o.data(), true);
    fn("b_o", p.b_o, false);
    fn("w_head", p.w_head, true);
    fn("b_head", p.b_head, false);
}

struct Normalization {
    std::vector<double> exo_mean, exo_std;    // per dynamic feature
    std::vector<double> stat_mean, stat_std;  // per static feature
    double target_mean = 0.0;
    double target_std = 1.0;
};

struct LogEntry {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;
};

struct DwlstmModel {
    DwlstmConfig config;
    eval::Objective objective = eval::Objective::NewDailyDeaths;
    std::vector<std::string> exo_names;     // dynamic feature order
    std::vector<std::string> static_names;  // static feature order
    Normalization norm;
    double weight_threshold = 0.0;  // theta, raw target units
    DwlstmParams params;
    std::vector<LogEntry> log;
    bool diverged = false;  // training aborted at the last good checkpoint
};

// ---------------------------------------------------------------------------
// Pipeline operations
// ---------------------------------------------------------------------------

/// Affine map W v + b.
std::vector<double> project(std::span<const double> v, const Matrix& weights,
                            std::span<const double> bias);

/// One LSTM cell step: logistic input/forget/output gates, tanh candidate,
/// c' = f.c + i.g, h' = o.tanh(c').
void lstm_step(std::span<const double> x, std::vector<double>& h, std::vector<double>& c,
               const DwlstmParams& params);

struct ForwardResult {
    std::vector<double> predictions;  // w_in per-step next-day predictions (normalized units)
    std::vector<double> h, c;         // final LSTM state
    std::vector<double> static_proj;
};

/// Runs the window through the pipeline: per step t the regression head maps
/// [h_t (+) projected statics] to the prediction for day t+1. Inputs are
/// normalized with the model's stats; predictions stay in normalized units.
/// Throws NumericError (with the step index) if anything goes non-finite.
ForwardResult forward(const eval::TrainingWindow& window, const DwlstmModel& model);

/// Weighted MSE plus L2: sum(w_t (pred_t - target_t)^2) / sum(w_t)
/// + lambda * ||weights||^2, with w_t = 1 + alpha * [target_t > theta].
/// Pass params = nullptr (or lambda = 0) for the data term alone.
double weighted_mse(std::span<const double> pred, std::span<const double> target, double theta,
                    double alpha, double lambda, const DwlstmParams* params);

/// Loss of one window under the model (normalized residuals, raw-unit
/// threshold), including the L2 term.
double window_loss(const eval::TrainingWindow& window, const DwlstmModel& model);

/// Exact reverse-mode gradient of window_loss for every parameter tensor
/// (backpropagation through time across the input window).
DwlstmParams backward(const eval::TrainingWindow& window, const DwlstmModel& model);

/// Autoregressive w_out-day forecast in raw target units: each prediction is
/// fed back as the next step's target history; exogenous features hold their
/// last observed value; count forecasts clamp at 0.
std::vector<double> rollout(const DwlstmModel& model, const eval::TrainingWindow& window,
                            int w_out);

/// Trains on the panel with Adam updates, gradient-norm clipping, an early
/// stop on validation loss, and full determinism under a fixed seed. The
/// epoch-0 log entry records the losses before any update.
DwlstmModel train(const data::FeaturePanel& panel, const eval::ForecastTask& task,
                  const DwlstmConfig& config);

/// Same, on pre-built window splits (used by backtests).
DwlstmModel train_on_windows(const std::vector<eval::TrainingWindow>& train_set,
                             const std::vector<eval::TrainingWindow>& val_set,
                             const data::FeaturePanel& panel, const eval::ForecastTask& task,
                             const DwlstmConfig& config);

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

/// Versioned JSON checkpoint with all tensors as full-precision decimal
/// arrays; loading validates the format version and every shape.
void save_checkpoint(const DwlstmModel& model, const std::string& path);
DwlstmModel load_checkpoint(const std::string& path);

/// CSV (epoch, train_loss, val_loss).
void save_training_log(const DwlstmModel& model, const std::string& path);

} // namespace epi::forecast
