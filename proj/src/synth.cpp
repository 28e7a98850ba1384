#include "epi/dataset.hpp"
#include "epi/errors.hpp"
#include "epi/rng.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>

namespace epi::data {

namespace {

// Two-letter synthetic state codes: AA, AB, AC, ...
std::string state_code(int index) {
    std::string s = "AA";
    s[0] = static_cast<char>('A' + (index / 26) % 26);
    s[1] = static_cast<char>('A' + index % 26);
    return s;
}

std::string synth_fips(int county) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%05d", 10001 + county * 7);
    return buf;
}

double logistic_cdf(double x) { return 1.0 / (1.0 + std::exp(-x)); }

} // namespace

FeaturePanel generate_synthetic_panel(const SynthSpec& spec, std::uint64_t seed) {
    if (spec.counties <= 0 || spec.days <= 0 || spec.static_features <= 0) {
        throw DataError("synthetic panel: dimensions must be positive");
    }
    if (spec.beta < 0.0 || spec.beta > 1.0) throw DataError("synthetic panel: beta must be in [0,1]");
    if (spec.noise < 0.0) throw DataError("synthetic panel: noise must be non-negative");

    const int C = spec.counties;
    const int T = spec.days;
    const int S = spec.static_features;

    FeaturePanel panel;
    panel.start_date = spec.start;
    panel.num_days = T;

    for (int f = 0; f < S; ++f) {
        char name[24];
        std::snprintf(name, sizeof(name), "synth_f%02d", f);
        panel.schema.static_features.push_back({name, "z-score", false, 0});
    }
    panel.schema.static_features.push_back({"population", "persons", false, 0});

    const std::array<const char*, 6> mobility_names = {
        "mobility_retail",     "mobility_grocery",    "mobility_parks",
        "mobility_transit",    "mobility_workplaces", "mobility_residential"};
    for (int slot = 0; slot < 6; ++slot) {
        panel.schema.dynamic_features.push_back(
            {mobility_names[static_cast<size_t>(slot)], "% change from baseline", false, slot + 1});
    }
    panel.schema.dynamic_features.push_back({"influenza_activity", "level", false, 0});
    panel.schema.dynamic_features.push_back({"covid_hospitalizations", "persons", false, 0});
    panel.schema.dynamic_features.push_back({"compliance", "score", false, 0});

    const size_t n_static = panel.schema.static_features.size();
    const size_t n_dynamic = panel.schema.dynamic_features.size();
    const size_t n_rows = static_cast<size_t>(C) * static_cast<size_t>(T);
    panel.static_values = Matrix(static_cast<size_t>(C), n_static);
    panel.dynamic_values = Matrix(n_rows, n_dynamic);
    panel.outbreak_values = Matrix(n_rows, 3);
    panel.population.resize(static_cast<size_t>(C));

    const Rng root(seed);

    for (int c = 0; c < C; ++c) {
        panel.counties.push_back({synth_fips(c), state_code(c / 5)});
        Rng rng = root.derive(static_cast<std::uint64_t>(c));

        // Static features; feature 0 drives outbreak severity when beta > 0.
        for (int f = 0; f < S; ++f) {
            panel.static_values(static_cast<size_t>(c), static_cast<size_t>(f)) = rng.normal();
        }
        const std::int64_t population = rng.uniform_int(60000, 140000);
        panel.population[static_cast<size_t>(c)] = population;
        panel.static_values(static_cast<size_t>(c), static_cast<size_t>(S)) =
            static_cast<double>(population);

        const double coupled = panel.static_values(static_cast<size_t>(c), 0);
        const double independent = rng.normal();
        const double mix =
            spec.beta * coupled + std::sqrt(1.0 - spec.beta * spec.beta) * independent;

        // Severity knobs are monotone in `mix`: growth rate, attack fraction,
        // and case fatality all rise with it, so the coupled feature predicts
        // both the trajectory and the eventual scale.
        const double growth = 0.10 + 0.05 * std::tanh(mix);
        const double attack = 0.03 * std::exp(0.8 * std::tanh(mix));
        const double midpoint = T * (0.55 + 0.15 * rng.uniform());
        const double cfr = 0.04 * std::exp(0.4 * std::tanh(mix));
        const double capacity = attack * static_cast<double>(population);

        auto cases_curve = [&](double t) {
            return capacity * logistic_cdf(growth * (t - midpoint));
        };

        // Noisy daily increments, re-accumulated and floored to integers.
        auto noisy_cumulative = [&](auto&& smooth_cum, double noise_scale) {
            std::vector<double> cum(static_cast<size_t>(T));
            double acc = 0.0;
            double prev = smooth_cum(-1.0);
            for (int t = 0; t < T; ++t) {
                const double cur = smooth_cum(static_cast<double>(t));
                const double daily = std::max(0.0, cur - prev);
                prev = cur;
                const double factor =
                    std::exp(noise_scale * rng.normal() - 0.5 * noise_scale * noise_scale);
                acc += daily * factor;
                cum[static_cast<size_t>(t)] = std::floor(acc);
            }
            return cum;
        };

        const auto confirmed = noisy_cumulative(cases_curve, spec.noise);
        const auto deaths = noisy_cumulative(
            [&](double t) { return cfr * cases_curve(t - 7.0); }, spec.noise);
        const auto recovered = noisy_cumulative(
            [&](double t) { return 0.55 * cases_curve(t - 14.0); }, spec.noise * 0.5);

        for (int t = 0; t < T; ++t) {
            const size_t r = panel.row(static_cast<size_t>(c), t);
            panel.outbreak_values(r, 0) = confirmed[static_cast<size_t>(t)];
            panel.outbreak_values(r, 1) =
                std::min(deaths[static_cast<size_t>(t)], confirmed[static_cast<size_t>(t)]);
            panel.outbreak_values(r, 2) =
                std::min(recovered[static_cast<size_t>(t)], confirmed[static_cast<size_t>(t)]);
        }
        // min() against confirmed can break monotonicity of deaths/recovered;
        // restore it the same way the panel builder would.
        for (int which = 1; which <= 2; ++which) {
            double run_max = 0.0;
            for (int t = 0; t < T; ++t) {
                double& v = panel.outbreak_values(panel.row(static_cast<size_t>(c), t),
                                                  static_cast<size_t>(which));
                v = std::max(v, run_max);
                run_max = v;
            }
        }

        // Mobility drops as a lockdown ramps in around day 20; residential
        // movement rises instead (negative base amplitude).
        const std::array<double, 6> base_amp = {35.0, 25.0, 18.0, 45.0, 38.0, -12.0};
        const double county_amp = rng.uniform(0.8, 1.2);
        for (int t = 0; t < T; ++t) {
            const size_t r = panel.row(static_cast<size_t>(c), t);
            const double lockdown = logistic_cdf((t - 20.0) / 4.0);
            double mobility[6];
            for (int j = 0; j < 6; ++j) {
                mobility[j] = -base_amp[static_cast<size_t>(j)] * county_amp * lockdown +
                              3.0 * rng.normal();
                panel.dynamic_values(r, static_cast<size_t>(j)) = mobility[j];
            }
            panel.dynamic_values(r, 6) =
                std::max(0.0, 3.0 - 2.5 * t / static_cast<double>(T) + 0.3 * rng.normal());
            const int lag = std::max(0, t - 10);
            const double active =
                panel.outbreak_values(r, 0) -
                panel.outbreak_values(panel.row(static_cast<size_t>(c), lag), 0);
            panel.dynamic_values(r, 7) = 0.05 * active;
            panel.dynamic_values(r, 8) = compliance_score(mobility);
        }
    }

    validate_panel(panel);
    return panel;
}

} // namespace epi::data
