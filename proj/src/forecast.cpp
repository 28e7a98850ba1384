#include "epi/forecast.hpp"

#include "epi/csv.hpp"
#include "epi/errors.hpp"
#include "epi/rng.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <set>

namespace epi::forecast {

namespace {

using nlohmann::json;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct Dims {
    size_t n_exo = 0;     // panel dynamic features
    size_t n_input = 0;   // n_exo + 1 when target history is included
    size_t n_static = 0;
    size_t d_p = 0, s_p = 0, h = 0;
};

Dims dims_of(const DwlstmConfig& config) {
    Dims d;
    d.n_exo = static_cast<size_t>(config.dynamic_input_size);
    d.n_input = d.n_exo + (config.include_target_history ? 1 : 0);
    d.n_static = static_cast<size_t>(config.static_input_size);
    d.d_p = static_cast<size_t>(config.dyn_proj);
    d.s_p = static_cast<size_t>(config.stat_proj);
    d.h = static_cast<size_t>(config.hidden);
    return d;
}

DwlstmParams zero_params(const Dims& d) {
    DwlstmParams p;
    p.w_dyn = Matrix(d.d_p, d.n_input);
    p.b_dyn.assign(d.d_p, 0.0);
    p.w_stat = Matrix(d.s_p, d.n_static);
    p.b_stat.assign(d.s_p, 0.0);
    const size_t z = d.d_p + d.h;
    p.w_i = Matrix(d.h, z);
    p.w_f = Matrix(d.h, z);
    p.w_g = Matrix(d.h, z);
    p.w_o = Matrix(d.h, z);
    p.b_i.assign(d.h, 0.0);
    p.b_f.assign(d.h, 0.0);
    p.b_g.assign(d.h, 0.0);
    p.b_o.assign(d.h, 0.0);
    p.w_head.assign(d.h + d.s_p, 0.0);
    p.b_head.assign(1, 0.0);
    return p;
}

std::vector<std::vector<double>*> tensor_list(DwlstmParams& p) {
    std::vector<std::vector<double>*> out;
    visit_params(p, [&](const char*, std::vector<double>& v, bool) { out.push_back(&v); });
    return out;
}

void fill_uniform(Rng& rng, std::vector<double>& v, double bound) {
    for (double& x : v) x = rng.uniform(-bound, bound);
}

DwlstmParams init_params(const Dims& d, std::uint64_t seed) {
    DwlstmParams p = zero_params(d);
    Rng rng = Rng(seed).derive(0x1157);
    fill_uniform(rng, p.w_dyn.data(), 1.0 / std::sqrt(static_cast<double>(std::max<size_t>(1, d.n_input))));
    fill_uniform(rng, p.w_stat.data(), 1.0 / std::sqrt(static_cast<double>(std::max<size_t>(1, d.n_static))));
    const double gate_bound = 1.0 / std::sqrt(static_cast<double>(d.d_p + d.h));
    fill_uniform(rng, p.w_i.data(), gate_bound);
    fill_uniform(rng, p.w_f.data(), gate_bound);
    fill_uniform(rng, p.w_g.data(), gate_bound);
    fill_uniform(rng, p.w_o.data(), gate_bound);
    fill_uniform(rng, p.w_head, 1.0 / std::sqrt(static_cast<double>(d.h + d.s_p)));
    // Open forget gates at the start so gradients flow across the window.
    std::fill(p.b_f.begin(), p.b_f.end(), 1.0);
    return p;
}

double normalize(double v, double mean, double std) { return (v - mean) / std; }
double denormalize(double v, double mean, double std) { return v * std + mean; }

// Normalized view of one window under the model's stats.
struct NormalizedWindow {
    Matrix inputs;                     // w_in x n_input
    std::vector<double> statics;       // normalized
    std::vector<double> step_targets;  // normalized
};

NormalizedWindow normalize_window(const eval::TrainingWindow& window, const DwlstmModel& model) {
    const Dims d = dims_of(model.config);
    const int w_in = static_cast<int>(window.exogenous.rows());
    if (window.exogenous.cols() != d.n_exo || window.statics.size() != d.n_static) {
        throw DataError("forward: window shape does not match the model");
    }
    NormalizedWindow out;
    out.inputs = Matrix(static_cast<size_t>(w_in), d.n_input);
    for (int t = 0; t < w_in; ++t) {
        for (size_t f = 0; f < d.n_exo; ++f) {
            out.inputs(static_cast<size_t>(t), f) =
                normalize(window.exogenous(static_cast<size_t>(t), f), model.norm.exo_mean[f],
                          model.norm.exo_std[f]);
        }
        if (model.config.include_target_history) {
            out.inputs(static_cast<size_t>(t), d.n_exo) =
                normalize(window.history[static_cast<size_t>(t)], model.norm.target_mean,
                          model.norm.target_std);
        }
    }
    out.statics.resize(d.n_static);
    for (size_t f = 0; f < d.n_static; ++f) {
        out.statics[f] =
            normalize(window.statics[f], model.norm.stat_mean[f], model.norm.stat_std[f]);
    }
    out.step_targets.resize(window.step_targets.size());
    for (size_t t = 0; t < window.step_targets.size(); ++t) {
        out.step_targets[t] =
            normalize(window.step_targets[t], model.norm.target_mean, model.norm.target_std);
    }
    return out;
}

// Per-step activations cached for backpropagation.
struct StepCache {
    std::vector<double> x, xp, z;           // input, projection, [xp (+) h_prev]
    std::vector<double> gi, gf, gg, go;     // gate activations
    std::vector<double> c, tanh_c, h;
};

struct ForwardCache {
    std::vector<StepCache> steps;
    std::vector<double> static_proj;
    std::vector<double> predictions;  // normalized
};

ForwardCache run_forward(const NormalizedWindow& nw, const DwlstmModel& model) {
    const Dims d = dims_of(model.config);
    const DwlstmParams& p = model.params;
    const size_t w_in = nw.inputs.rows();

    ForwardCache cache;
    cache.static_proj = project(nw.statics, p.w_stat, p.b_stat);

    std::vector<double> h(d.h, 0.0), c(d.h, 0.0);
    std::vector<double> head_in(d.h + d.s_p);
    for (size_t t = 0; t < w_in; ++t) {
        StepCache step;
        step.x.assign(nw.inputs.row(t).begin(), nw.inputs.row(t).end());
        step.xp = project(step.x, p.w_dyn, p.b_dyn);

        step.z.resize(d.d_p + d.h);
        std::copy(step.xp.begin(), step.xp.end(), step.z.begin());
        std::copy(h.begin(), h.end(), step.z.begin() + static_cast<long>(d.d_p));

        step.gi.resize(d.h);
        step.gf.resize(d.h);
        step.gg.resize(d.h);
        step.go.resize(d.h);
        matvec(p.w_i, step.z, step.gi);
        matvec(p.w_f, step.z, step.gf);
        matvec(p.w_g, step.z, step.gg);
        matvec(p.w_o, step.z, step.go);
        step.c.resize(d.h);
        step.tanh_c.resize(d.h);
        step.h.resize(d.h);
        for (size_t k = 0; k < d.h; ++k) {
            const double gi = sigmoid(step.gi[k] + p.b_i[k]);
            const double gf = sigmoid(step.gf[k] + p.b_f[k]);
            const double gg = std::tanh(step.gg[k] + p.b_g[k]);
            const double go = sigmoid(step.go[k] + p.b_o[k]);
            step.gi[k] = gi;
            step.gf[k] = gf;
            step.gg[k] = gg;
            step.go[k] = go;
            step.c[k] = gf * c[k] + gi * gg;
            step.tanh_c[k] = std::tanh(step.c[k]);
            step.h[k] = go * step.tanh_c[k];
        }
        h = step.h;
        c = step.c;

        std::copy(h.begin(), h.end(), head_in.begin());
        std::copy(cache.static_proj.begin(), cache.static_proj.end(),
                  head_in.begin() + static_cast<long>(d.h));
        const double pred = dot(p.w_head, head_in) + p.b_head[0];
        if (!std::isfinite(pred)) {
            throw NumericError("forward: non-finite prediction at step " + std::to_string(t));
        }
        cache.predictions.push_back(pred);
        cache.steps.push_back(std::move(step));
    }
    return cache;
}

std::vector<double> loss_weights(std::span<const double> target, double theta, double alpha) {
    std::vector<double> w(target.size());
    for (size_t t = 0; t < target.size(); ++t) {
        w[t] = 1.0 + (target[t] > theta ? alpha : 0.0);
    }
    return w;
}

double params_sq_norm_weights(const DwlstmParams& p) {
    double s = 0.0;
    visit_params(const_cast<DwlstmParams&>(p),
                 [&](const char*, std::vector<double>& v, bool is_weight) {
                     if (!is_weight) return;
                     for (double x : v) s += x * x;
                 });
    return s;
}

} // namespace

void DwlstmConfig::validate() const {
    auto positive = [](int v, const char* name) {
        if (v <= 0) throw ConfigError(std::string("dwlstm config: ") + name + " must be positive");
    };
    if (w_in < 2) throw ConfigError("dwlstm config: w_in must be >= 2");
    if (w_out < 0) throw ConfigError("dwlstm config: w_out must be non-negative");
    positive(dyn_proj, "dyn_proj");
    positive(stat_proj, "stat_proj");
    positive(hidden, "hidden");
    positive(epochs, "epochs");
    positive(batch, "batch");
    if (learning_rate <= 0.0) throw ConfigError("dwlstm config: learning_rate must be positive");
    if (l2 < 0.0) throw ConfigError("dwlstm config: l2 must be non-negative");
    if (weight_boost < 0.0) throw ConfigError("dwlstm config: weight_boost must be non-negative");
    if (theta_quantile < 0.0 || theta_quantile > 1.0) {
        throw ConfigError("dwlstm config: theta_quantile must be in [0,1]");
    }
    if (clip_norm <= 0.0) throw ConfigError("dwlstm config: clip_norm must be positive");
    if (patience < 0) throw ConfigError("dwlstm config: patience must be non-negative");
}

std::vector<double> project(std::span<const double> v, const Matrix& weights,
                            std::span<const double> bias) {
    if (v.size() != weights.cols() || bias.size() != weights.rows()) {
        throw DataError("project: dimension mismatch");
    }
    std::vector<double> out(weights.rows());
    matvec(weights, v, out);
    for (size_t i = 0; i < out.size(); ++i) out[i] += bias[i];
    return out;
}

void lstm_step(std::span<const double> x, std::vector<double>& h, std::vector<double>& c,
               const DwlstmParams& params) {
    const size_t hidden = params.b_i.size();
    if (h.size() != hidden || c.size() != hidden ||
        x.size() + hidden != params.w_i.cols()) {
        throw DataError("lstm_step: dimension mismatch");
    }
    std::vector<double> z(x.size() + hidden);
    std::copy(x.begin(), x.end(), z.begin());
    std::copy(h.begin(), h.end(), z.begin() + static_cast<long>(x.size()));

    std::vector<double> ai(hidden), af(hidden), ag(hidden), ao(hidden);
    matvec(params.w_i, z, ai);
    matvec(params.w_f, z, af);
    matvec(params.w_g, z, ag);
    matvec(params.w_o, z, ao);
    for (size_t k = 0; k < hidden; ++k) {
        const double gi = sigmoid(ai[k] + params.b_i[k]);
        const double gf = sigmoid(af[k] + params.b_f[k]);
        const double gg = std::tanh(ag[k] + params.b_g[k]);
        const double go = sigmoid(ao[k] + params.b_o[k]);
        c[k] = gf * c[k] + gi * gg;
        h[k] = go * std::tanh(c[k]);
    }
}

double weighted_mse(std::span<const double> pred, std::span<const double> target, double theta,
                    double alpha, double lambda, const DwlstmParams* params) {
    if (pred.size() != target.size()) throw DataError("weighted_mse: length mismatch");
    const auto weights = loss_weights(target, theta, alpha);
    double num = 0.0, den = 0.0;
    for (size_t t = 0; t < pred.size(); ++t) {
        const double r = pred[t] - target[t];
        num += weights[t] * r * r;
        den += weights[t];
    }
    double loss = den > 0.0 ? num / den : 0.0;
    if (lambda > 0.0 && params) loss += lambda * params_sq_norm_weights(*params);
    return loss;
}

ForwardResult forward(const eval::TrainingWindow& window, const DwlstmModel& model) {
    const NormalizedWindow nw = normalize_window(window, model);
    ForwardCache cache = run_forward(nw, model);
    ForwardResult result;
    result.predictions = std::move(cache.predictions);
    result.static_proj = std::move(cache.static_proj);
    if (!cache.steps.empty()) {
        result.h = cache.steps.back().h;
        result.c = cache.steps.back().c;
    }
    return result;
}

double window_loss(const eval::TrainingWindow& window, const DwlstmModel& model) {
    const NormalizedWindow nw = normalize_window(window, model);
    const ForwardCache cache = run_forward(nw, model);
    const double theta_norm =
        normalize(model.weight_threshold, model.norm.target_mean, model.norm.target_std);
    return weighted_mse(cache.predictions, nw.step_targets, theta_norm,
                        model.config.weight_boost, model.config.l2, &model.params);
}

DwlstmParams backward(const eval::TrainingWindow& window, const DwlstmModel& model) {
    const Dims d = dims_of(model.config);
    const DwlstmParams& p = model.params;
    const NormalizedWindow nw = normalize_window(window, model);
    const ForwardCache cache = run_forward(nw, model);
    const size_t w_in = cache.steps.size();

    DwlstmParams g = zero_params(d);

    const double theta_norm =
        normalize(model.weight_threshold, model.norm.target_mean, model.norm.target_std);
    const auto weights = loss_weights(nw.step_targets, theta_norm, model.config.weight_boost);
    double weight_sum = 0.0;
    for (double w : weights) weight_sum += w;

    // d(loss)/d(prediction_t) for the weighted-MSE data term.
    std::vector<double> dpred(w_in);
    for (size_t t = 0; t < w_in; ++t) {
        dpred[t] = 2.0 * weights[t] * (cache.predictions[t] - nw.step_targets[t]) / weight_sum;
    }

    // Regression head feeds every step; collect dh per step and the shared
    // static-projection gradient.
    std::vector<std::vector<double>> dh_head(w_in, std::vector<double>(d.h, 0.0));
    std::vector<double> dsproj(d.s_p, 0.0);
    for (size_t t = 0; t < w_in; ++t) {
        const auto& step = cache.steps[t];
        for (size_t k = 0; k < d.h; ++k) {
            g.w_head[k] += dpred[t] * step.h[k];
            dh_head[t][k] = p.w_head[k] * dpred[t];
        }
        for (size_t k = 0; k < d.s_p; ++k) {
            g.w_head[d.h + k] += dpred[t] * cache.static_proj[k];
            dsproj[k] += p.w_head[d.h + k] * dpred[t];
        }
        g.b_head[0] += dpred[t];
    }

    // BPTT across the input window.
    std::vector<double> dh_carry(d.h, 0.0), dc_carry(d.h, 0.0);
    std::vector<double> da_i(d.h), da_f(d.h), da_g(d.h), da_o(d.h), dz(d.d_p + d.h);
    const std::vector<double> zero_state(d.h, 0.0);
    for (size_t t = w_in; t-- > 0;) {
        const auto& step = cache.steps[t];
        const std::vector<double>& c_prev = t > 0 ? cache.steps[t - 1].c : zero_state;

        for (size_t k = 0; k < d.h; ++k) {
            const double dh = dh_head[t][k] + dh_carry[k];
            const double dc = dc_carry[k] + dh * step.go[k] * (1.0 - step.tanh_c[k] * step.tanh_c[k]);
            const double dgo = dh * step.tanh_c[k];
            const double dgi = dc * step.gg[k];
            const double dgf = dc * c_prev[k];
            const double dgg = dc * step.gi[k];
            dc_carry[k] = dc * step.gf[k];
            da_i[k] = dgi * step.gi[k] * (1.0 - step.gi[k]);
            da_f[k] = dgf * step.gf[k] * (1.0 - step.gf[k]);
            da_o[k] = dgo * step.go[k] * (1.0 - step.go[k]);
            da_g[k] = dgg * (1.0 - step.gg[k] * step.gg[k]);
        }

        add_outer(g.w_i, da_i, step.z);
        add_outer(g.w_f, da_f, step.z);
        add_outer(g.w_g, da_g, step.z);
        add_outer(g.w_o, da_o, step.z);
        for (size_t k = 0; k < d.h; ++k) {
            g.b_i[k] += da_i[k];
            g.b_f[k] += da_f[k];
            g.b_g[k] += da_g[k];
            g.b_o[k] += da_o[k];
        }

        std::fill(dz.begin(), dz.end(), 0.0);
        matvec_transpose_add(p.w_i, da_i, dz);
        matvec_transpose_add(p.w_f, da_f, dz);
        matvec_transpose_add(p.w_g, da_g, dz);
        matvec_transpose_add(p.w_o, da_o, dz);

        std::span<const double> dxp(dz.data(), d.d_p);
        for (size_t k = 0; k < d.h; ++k) dh_carry[k] = dz[d.d_p + k];

        add_outer(g.w_dyn, dxp, step.x);
        for (size_t k = 0; k < d.d_p; ++k) g.b_dyn[k] += dxp[k];
    }

    // Static projection (shared across steps).
    add_outer(g.w_stat, dsproj, nw.statics);
    for (size_t k = 0; k < d.s_p; ++k) g.b_stat[k] += dsproj[k];

    // L2 on weights.
    if (model.config.l2 > 0.0) {
        DwlstmParams& pm = const_cast<DwlstmParams&>(p);
        auto gs = tensor_list(g);
        auto ps = tensor_list(pm);
        std::vector<bool> is_weight;
        visit_params(g, [&](const char*, std::vector<double>&, bool w) { is_weight.push_back(w); });
        for (size_t k = 0; k < gs.size(); ++k) {
            if (!is_weight[k]) continue;
            for (size_t j = 0; j < gs[k]->size(); ++j) {
                (*gs[k])[j] += 2.0 * model.config.l2 * (*ps[k])[j];
            }
        }
    }
    return g;
}

std::vector<double> rollout(const DwlstmModel& model, const eval::TrainingWindow& window,
                            int w_out) {
    if (w_out < 0) throw DataError("rollout: negative horizon");
    if (w_out == 0) return {};

    const Dims d = dims_of(model.config);
    const NormalizedWindow nw = normalize_window(window, model);
    ForwardCache cache = run_forward(nw, model);

    const bool clamp = eval::objective_is_count(model.objective);
    const auto& norm = model.norm;
    auto emit = [&](double pred_norm) {
        double raw = denormalize(pred_norm, norm.target_mean, norm.target_std);
        if (clamp) raw = std::max(0.0, raw);
        if (!std::isfinite(raw)) throw NumericError("rollout: non-finite forecast");
        return raw;
    };

    std::vector<double> out;
    out.push_back(emit(cache.predictions.back()));

    std::vector<double> h = cache.steps.back().h;
    std::vector<double> c = cache.steps.back().c;
    // Exogenous features are unknown in the forecast window; hold the last
    // observed (normalized) values.
    const auto last_row = nw.inputs.row(nw.inputs.rows() - 1);
    std::vector<double> x(last_row.begin(), last_row.end());
    std::vector<double> head_in(d.h + d.s_p);

    for (int k = 1; k < w_out; ++k) {
        if (model.config.include_target_history) {
            x[d.n_exo] = normalize(out.back(), norm.target_mean, norm.target_std);
        }
        const std::vector<double> xp = project(x, model.params.w_dyn, model.params.b_dyn);
        lstm_step(xp, h, c, model.params);
        std::copy(h.begin(), h.end(), head_in.begin());
        std::copy(cache.static_proj.begin(), cache.static_proj.end(),
                  head_in.begin() + static_cast<long>(d.h));
        out.push_back(emit(dot(model.params.w_head, head_in) + model.params.b_head[0]));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

namespace {

double mean_loss(const std::vector<eval::TrainingWindow>& windows, const DwlstmModel& model) {
    if (windows.empty()) return 0.0;
    double total = 0.0;
    for (const auto& w : windows) total += window_loss(w, model);
    return total / static_cast<double>(windows.size());
}

double quantile_nearest_rank(std::vector<double> values, double q) {
    std::sort(values.begin(), values.end());
    const size_t n = values.size();
    const auto rank = static_cast<size_t>(std::ceil(q * static_cast<double>(n)));
    return values[std::clamp<size_t>(rank == 0 ? 0 : rank - 1, 0, n - 1)];
}

} // namespace

DwlstmModel train_on_windows(const std::vector<eval::TrainingWindow>& train_set,
                             const std::vector<eval::TrainingWindow>& val_set,
                             const data::FeaturePanel& panel, const eval::ForecastTask& task,
                             const DwlstmConfig& config_in) {
    DwlstmConfig config = config_in;
    config.w_in = task.w_in;
    config.w_out = task.w_out;
    config.dynamic_input_size = static_cast<int>(panel.schema.dynamic_features.size());
    config.static_input_size = static_cast<int>(panel.schema.static_features.size());
    config.validate();
    if (train_set.empty() || val_set.empty()) {
        throw DataError("train: empty training or validation split");
    }

    DwlstmModel model;
    model.config = config;
    model.objective = task.objective;
    for (const auto& f : panel.schema.dynamic_features) model.exo_names.push_back(f.name);
    for (const auto& f : panel.schema.static_features) model.static_names.push_back(f.name);

    // Normalization stats from the training split only.
    const Dims d = dims_of(config);
    auto finish_stats = [](double sum, double sq, size_t n, double& mean, double& stddev) {
        mean = sum / static_cast<double>(n);
        const double var = std::max(0.0, sq / static_cast<double>(n) - mean * mean);
        stddev = std::sqrt(var);
        if (stddev < 1e-12) stddev = 1.0;
    };
    {
        std::vector<double> sum(d.n_exo, 0.0), sq(d.n_exo, 0.0);
        size_t rows = 0;
        for (const auto& w : train_set) {
            for (size_t t = 0; t < w.exogenous.rows(); ++t) {
                for (size_t f = 0; f < d.n_exo; ++f) {
                    const double v = w.exogenous(t, f);
                    sum[f] += v;
                    sq[f] += v * v;
                }
                ++rows;
            }
        }
        model.norm.exo_mean.resize(d.n_exo);
        model.norm.exo_std.resize(d.n_exo);
        for (size_t f = 0; f < d.n_exo; ++f) {
            finish_stats(sum[f], sq[f], rows, model.norm.exo_mean[f], model.norm.exo_std[f]);
        }
    }
    {
        std::set<size_t> seen;
        std::vector<double> sum(d.n_static, 0.0), sq(d.n_static, 0.0);
        for (const auto& w : train_set) {
            if (!seen.insert(w.county).second) continue;
            for (size_t f = 0; f < d.n_static; ++f) {
                sum[f] += w.statics[f];
                sq[f] += w.statics[f] * w.statics[f];
            }
        }
        model.norm.stat_mean.resize(d.n_static);
        model.norm.stat_std.resize(d.n_static);
        for (size_t f = 0; f < d.n_static; ++f) {
            finish_stats(sum[f], sq[f], seen.size(), model.norm.stat_mean[f],
                         model.norm.stat_std[f]);
        }
    }
    std::vector<double> train_targets;
    for (const auto& w : train_set) {
        train_targets.insert(train_targets.end(), w.step_targets.begin(), w.step_targets.end());
    }
    {
        double sum = 0.0, sq = 0.0;
        for (double v : train_targets) {
            sum += v;
            sq += v * v;
        }
        finish_stats(sum, sq, train_targets.size(), model.norm.target_mean,
                     model.norm.target_std);
    }
    model.weight_threshold = quantile_nearest_rank(train_targets, config.theta_quantile);

    model.params = init_params(d, config.seed);

    // Adam state.
    DwlstmParams adam_m = zero_params(d), adam_v = zero_params(d);
    auto params_t = tensor_list(model.params);
    auto m_t = tensor_list(adam_m);
    auto v_t = tensor_list(adam_v);
    constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
    long adam_step = 0;

    DwlstmParams best_params = model.params;
    double best_val = std::numeric_limits<double>::infinity();
    int stale_epochs = 0;

    const auto record = [&](int epoch) {
        LogEntry entry;
        entry.epoch = epoch;
        entry.train_loss = mean_loss(train_set, model);
        entry.val_loss = mean_loss(val_set, model);
        model.log.push_back(entry);
        return entry;
    };

    LogEntry entry = record(0);
    if (std::isfinite(entry.val_loss) && entry.val_loss < best_val) {
        best_val = entry.val_loss;
        best_params = model.params;
    }

    const Rng root(config.seed);
    std::vector<size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), size_t{0});

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        Rng shuffle_rng = root.derive(0xE70C + static_cast<std::uint64_t>(epoch));
        for (size_t i = order.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(
                shuffle_rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
            std::swap(order[i - 1], order[j]);
        }

        for (size_t begin = 0; begin < order.size(); begin += static_cast<size_t>(config.batch)) {
            const size_t end = std::min(order.size(), begin + static_cast<size_t>(config.batch));
            DwlstmParams grad_sum = zero_params(d);
            auto sum_t = tensor_list(grad_sum);
            for (size_t i = begin; i < end; ++i) {
                DwlstmParams g = backward(train_set[order[i]], model);
                auto g_t = tensor_list(g);
                for (size_t k = 0; k < sum_t.size(); ++k) {
                    for (size_t j = 0; j < sum_t[k]->size(); ++j) {
                        (*sum_t[k])[j] += (*g_t[k])[j];
                    }
                }
            }
            const double inv_batch = 1.0 / static_cast<double>(end - begin);
            double norm_sq = 0.0;
            for (auto* t : sum_t) {
                for (double& v : *t) {
                    v *= inv_batch;
                    norm_sq += v * v;
                }
            }
            const double norm = std::sqrt(norm_sq);
            if (norm > config.clip_norm) {
                const double scale = config.clip_norm / norm;
                for (auto* t : sum_t) {
                    for (double& v : *t) v *= scale;
                }
            }

            ++adam_step;
            const double corr1 = 1.0 - std::pow(kBeta1, static_cast<double>(adam_step));
            const double corr2 = 1.0 - std::pow(kBeta2, static_cast<double>(adam_step));
            for (size_t k = 0; k < params_t.size(); ++k) {
                auto& par = *params_t[k];
                auto& mm = *m_t[k];
                auto& vv = *v_t[k];
                auto& gg = *sum_t[k];
                for (size_t j = 0; j < par.size(); ++j) {
                    mm[j] = kBeta1 * mm[j] + (1.0 - kBeta1) * gg[j];
                    vv[j] = kBeta2 * vv[j] + (1.0 - kBeta2) * gg[j] * gg[j];
                    par[j] -= config.learning_rate * (mm[j] / corr1) /
                              (std::sqrt(vv[j] / corr2) + kEps);
                }
            }
        }

        entry = record(epoch);
        if (!std::isfinite(entry.train_loss) || !std::isfinite(entry.val_loss)) {
            model.diverged = true;  // keep the last good checkpoint
            break;
        }
        if (entry.val_loss < best_val - 1e-12) {
            best_val = entry.val_loss;
            best_params = model.params;
            stale_epochs = 0;
        } else if (++stale_epochs > config.patience) {
            break;
        }
    }

    model.params = std::move(best_params);
    return model;
}

DwlstmModel train(const data::FeaturePanel& panel, const eval::ForecastTask& task,
                  const DwlstmConfig& config) {
    config.validate();
    if (panel.num_days < task.w_in + task.w_out + 10) {
        throw DataError("train: panel must cover at least w_in + w_out + 10 days");
    }
    if (panel.counties.size() < 2) throw DataError("train: need at least 2 counties");
    const eval::WindowSets sets = eval::make_windows(panel, task);
    return train_on_windows(sets.train, sets.validation, panel, task, config);
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

namespace {

constexpr int kCheckpointVersion = 1;

json matrix_to_json(const Matrix& m) {
    return json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", m.data()}};
}

Matrix matrix_from_json(const json& j, size_t rows, size_t cols, const std::string& name) {
    if (j.at("rows").get<size_t>() != rows || j.at("cols").get<size_t>() != cols) {
        throw DataError("checkpoint: shape mismatch for " + name);
    }
    Matrix m(rows, cols);
    const auto data = j.at("data").get<std::vector<double>>();
    if (data.size() != rows * cols) throw DataError("checkpoint: data size mismatch for " + name);
    m.data() = data;
    return m;
}

std::vector<double> vector_from_json(const json& j, size_t size, const std::string& name) {
    auto v = j.get<std::vector<double>>();
    if (v.size() != size) throw DataError("checkpoint: size mismatch for " + name);
    return v;
}

} // namespace

void save_checkpoint(const DwlstmModel& model, const std::string& path) {
    const DwlstmConfig& c = model.config;
    json doc;
    doc["format_version"] = kCheckpointVersion;
    doc["objective"] = eval::objective_name(model.objective);
    doc["config"] = {{"w_in", c.w_in},
                     {"w_out", c.w_out},
                     {"dynamic_input_size", c.dynamic_input_size},
                     {"static_input_size", c.static_input_size},
                     {"dyn_proj", c.dyn_proj},
                     {"stat_proj", c.stat_proj},
                     {"hidden", c.hidden},
                     {"learning_rate", c.learning_rate},
                     {"epochs", c.epochs},
                     {"batch", c.batch},
                     {"theta_quantile", c.theta_quantile},
                     {"weight_boost", c.weight_boost},
                     {"l2", c.l2},
                     {"clip_norm", c.clip_norm},
                     {"patience", c.patience},
                     {"include_target_history", c.include_target_history},
                     {"seed", c.seed}};
    doc["exo_names"] = model.exo_names;
    doc["static_names"] = model.static_names;
    doc["norm"] = {{"exo_mean", model.norm.exo_mean},   {"exo_std", model.norm.exo_std},
                   {"stat_mean", model.norm.stat_mean}, {"stat_std", model.norm.stat_std},
                   {"target_mean", model.norm.target_mean},
                   {"target_std", model.norm.target_std}};
    doc["weight_threshold"] = model.weight_threshold;
    doc["diverged"] = model.diverged;

    json params;
    params["w_dyn"] = matrix_to_json(model.params.w_dyn);
    params["b_dyn"] = model.params.b_dyn;
    params["w_stat"] = matrix_to_json(model.params.w_stat);
    params["b_stat"] = model.params.b_stat;
    params["w_i"] = matrix_to_json(model.params.w_i);
    params["b_i"] = model.params.b_i;
    params["w_f"] = matrix_to_json(model.params.w_f);
    params["b_f"] = model.params.b_f;
    params["w_g"] = matrix_to_json(model.params.w_g);
    params["b_g"] = model.params.b_g;
    params["w_o"] = matrix_to_json(model.params.w_o);
    params["b_o"] = model.params.b_o;
    params["w_head"] = model.params.w_head;
    params["b_head"] = model.params.b_head;
    doc["params"] = std::move(params);

    json log = json::array();
    for (const auto& entry : model.log) {
        log.push_back({{"epoch", entry.epoch},
                       {"train_loss", entry.train_loss},
                       {"val_loss", entry.val_loss}});
    }
    doc["log"] = std::move(log);

    std::ofstream out(path);
    if (!out) throw DataError("cannot write checkpoint: " + path);
    out << doc.dump(1) << '\n';
    if (!out) throw DataError("checkpoint write failed: " + path);
}

DwlstmModel load_checkpoint(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open checkpoint: " + path);
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw DataError(std::string("checkpoint parse error: ") + e.what());
    }
    if (doc.value("format_version", -1) != kCheckpointVersion) {
        throw DataError("checkpoint: unsupported format version");
    }

    DwlstmModel model;
    const json& c = doc.at("config");
    model.config.w_in = c.at("w_in").get<int>();
    model.config.w_out = c.at("w_out").get<int>();
    model.config.dynamic_input_size = c.at("dynamic_input_size").get<int>();
    model.config.static_input_size = c.at("static_input_size").get<int>();
    model.config.dyn_proj = c.at("dyn_proj").get<int>();
    model.config.stat_proj = c.at("stat_proj").get<int>();
    model.config.hidden = c.at("hidden").get<int>();
    model.config.learning_rate = c.at("learning_rate").get<double>();
    model.config.epochs = c.at("epochs").get<int>();
    model.config.batch = c.at("batch").get<int>();
    model.config.theta_quantile = c.at("theta_quantile").get<double>();
    model.config.weight_boost = c.at("weight_boost").get<double>();
    model.config.l2 = c.at("l2").get<double>();
    model.config.clip_norm = c.at("clip_norm").get<double>();
    model.config.patience = c.at("patience").get<int>();
    model.config.include_target_history = c.at("include_target_history").get<bool>();
    model.config.seed = c.at("seed").get<std::uint64_t>();
    model.config.validate();

    model.objective = eval::objective_from_string(doc.at("objective").get<std::string>());
    model.exo_names = doc.at("exo_names").get<std::vector<std::string>>();
    model.static_names = doc.at("static_names").get<std::vector<std::string>>();

    const Dims d = dims_of(model.config);
    const json& n = doc.at("norm");
    model.norm.exo_mean = vector_from_json(n.at("exo_mean"), d.n_exo, "exo_mean");
    model.norm.exo_std = vector_from_json(n.at("exo_std"), d.n_exo, "exo_std");
    model.norm.stat_mean = vector_from_json(n.at("stat_mean"), d.n_static, "stat_mean");
    model.norm.stat_std = vector_from_json(n.at("stat_std"), d.n_static, "stat_std");
    model.norm.target_mean = n.at("target_mean").get<double>();
    model.norm.target_std = n.at("target_std").get<double>();
    model.weight_threshold = doc.at("weight_threshold").get<double>();
    model.diverged = doc.value("diverged", false);

    const json& params = doc.at("params");
    const size_t z = d.d_p + d.h;
    model.params.w_dyn = matrix_from_json(params.at("w_dyn"), d.d_p, d.n_input, "w_dyn");
    model.params.b_dyn = vector_from_json(params.at("b_dyn"), d.d_p, "b_dyn");
    model.params.w_stat = matrix_from_json(params.at("w_stat"), d.s_p, d.n_static, "w_stat");
    model.params.b_stat = vector_from_json(params.at("b_stat"), d.s_p, "b_stat");
    model.params.w_i = matrix_from_json(params.at("w_i"), d.h, z, "w_i");
    model.params.b_i = vector_from_json(params.at("b_i"), d.h, "b_i");
    model.params.w_f = matrix_from_json(params.at("w_f"), d.h, z, "w_f");
    model.params.b_f = vector_from_json(params.at("b_f"), d.h, "b_f");
    model.params.w_g = matrix_from_json(params.at("w_g"), d.h, z, "w_g");
    model.params.b_g = vector_from_json(params.at("b_g"), d.h, "b_g");
    model.params.w_o = matrix_from_json(params.at("w_o"), d.h, z, "w_o");
    model.params.b_o = vector_from_json(params.at("b_o"), d.h, "b_o");
    model.params.w_head = vector_from_json(params.at("w_head"), d.h + d.s_p, "w_head");
    model.params.b_head = vector_from_json(params.at("b_head"), 1, "b_head");

    for (const auto& entry : doc.value("log", json::array())) {
        model.log.push_back({entry.at("epoch").get<int>(), entry.at("train_loss").get<double>(),
                             entry.at("val_loss").get<double>()});
    }

    if (model.exo_names.size() != d.n_exo || model.static_names.size() != d.n_static) {
        throw DataError("checkpoint: feature name counts do not match config sizes");
    }
    return model;
}

void save_training_log(const DwlstmModel& model, const std::string& path) {
    csv::Table t;
    t.header = {"epoch", "train_loss", "val_loss"};
    for (const auto& entry : model.log) {
        t.rows.push_back({std::to_string(entry.epoch), csv::format_double(entry.train_loss),
                          csv::format_double(entry.val_loss)});
    }
    csv::write_file(path, t);
}

} // namespace epi::forecast
