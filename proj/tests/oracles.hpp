#pragma once

// Independent brute-force oracles used to pin expected values. These stay
// deliberately naive and separate from the library implementations they
// check.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

namespace oracles {

// Pearson straight from the definition.
inline double pearson(std::span<const double> x, std::span<const double> y) {
    const size_t m = x.size();
    double mx = 0, my = 0;
    for (size_t i = 0; i < m; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= double(m);
    my /= double(m);
    double num = 0, dx = 0, dy = 0;
    for (size_t i = 0; i < m; ++i) {
        num += (x[i] - mx) * (y[i] - my);
        dx += (x[i] - mx) * (x[i] - mx);
        dy += (y[i] - my) * (y[i] - my);
    }
    return num / std::sqrt(dx * dy);
}

// Spearman shortcut 1 - 6*sum(d^2)/(m(m^2-1)); valid on tie-free data only.
inline double spearman_shortcut(std::span<const double> x, std::span<const double> y) {
    const size_t m = x.size();
    auto ranks = [m](std::span<const double> v) {
        std::vector<size_t> order(m);
        std::iota(order.begin(), order.end(), size_t{0});
        std::sort(order.begin(), order.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
        std::vector<double> r(m);
        for (size_t i = 0; i < m; ++i) r[order[i]] = double(i + 1);
        return r;
    };
    const auto rx = ranks(x), ry = ranks(y);
    double sum_d2 = 0;
    for (size_t i = 0; i < m; ++i) sum_d2 += (rx[i] - ry[i]) * (rx[i] - ry[i]);
    return 1.0 - 6.0 * sum_d2 / (double(m) * (double(m) * double(m) - 1.0));
}

// Kendall tau-a by explicit O(m^2) pair enumeration; ties count to neither.
inline double kendall_enumeration(std::span<const double> x, std::span<const double> y) {
    const size_t m = x.size();
    long long concordant = 0, discordant = 0;
    for (size_t i = 0; i < m; ++i) {
        for (size_t j = i + 1; j < m; ++j) {
            if (x[i] == x[j] || y[i] == y[j]) continue;
            const bool same = (x[i] < x[j]) == (y[i] < y[j]);
            (same ? concordant : discordant) += 1;
        }
    }
    const double pairs = double(m) * double(m - 1) / 2.0;
    return (double(concordant) - double(discordant)) / pairs;
}

// Two-pass normalized histogram intersection over the joint range.
inline double hist_intersection(std::span<const double> x, std::span<const double> y, int bins) {
    double lo = x[0], hi = x[0];
    for (double v : x) { lo = std::min(lo, v); hi = std::max(hi, v); }
    for (double v : y) { lo = std::min(lo, v); hi = std::max(hi, v); }
    if (hi == lo) return 1.0;
    auto histogram = [&](std::span<const double> v) {
        std::vector<double> h(size_t(bins), 0.0);
        for (double z : v) {
            auto b = long(double(bins) * (z - lo) / (hi - lo));
            b = std::clamp<long>(b, 0, bins - 1);
            h[size_t(b)] += 1.0 / double(v.size());
        }
        return h;
    };
    const auto hx = histogram(x), hy = histogram(y);
    double s = 0;
    for (int b = 0; b < bins; ++b) s += std::min(hx[size_t(b)], hy[size_t(b)]);
    return s;
}

// Student-t two-sided tail probability by adaptive Simpson quadrature of the
// density over [0, |t|]; p = 1 - 2*(F(|t|) - 1/2).
inline double t_two_sided_p_quadrature(double t, int dof) {
    const double nu = dof;
    const double log_norm =
        std::lgamma((nu + 1) / 2) - std::lgamma(nu / 2) - 0.5 * std::log(nu * M_PI);
    auto pdf = [&](double u) {
        return std::exp(log_norm - (nu + 1) / 2 * std::log1p(u * u / nu));
    };
    std::function<double(double, double, double, double, double, double)> simpson =
        [&](double a, double b, double fa, double fb, double fm, double whole) -> double {
        const double m = 0.5 * (a + b);
        const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
        const double flm = pdf(lm), frm = pdf(rm);
        const double left = (m - a) / 6 * (fa + 4 * flm + fm);
        const double right = (b - m) / 6 * (fm + 4 * frm + fb);
        if (std::abs(left + right - whole) < 1e-12) return left + right;
        return simpson(a, m, fa, fm, flm, left) + simpson(m, b, fm, fb, frm, right);
    };
    const double upper = std::abs(t);
    if (upper == 0.0) return 1.0;
    const double fa = pdf(0.0), fb = pdf(upper), fm = pdf(upper / 2);
    const double whole = upper / 6 * (fa + 4 * fm + fb);
    const double integral = simpson(0.0, upper, fa, fb, fm, whole);
    return std::max(0.0, 1.0 - 2.0 * integral);
}

// Rolling-max cleaning of a cumulative series.
inline std::vector<double> rolling_max(std::span<const double> v) {
    std::vector<double> out(v.begin(), v.end());
    double run = -std::numeric_limits<double>::infinity();
    for (double& z : out) {
        run = std::max(run, z);
        z = run;
    }
    return out;
}

// Plug-in entropy (nats) of an equal-width binned sample.
inline double binned_entropy(std::span<const double> x, int bins) {
    double lo = x[0], hi = x[0];
    for (double v : x) { lo = std::min(lo, v); hi = std::max(hi, v); }
    std::vector<double> h(size_t(bins), 0.0);
    for (double v : x) {
        auto b = hi > lo ? long(double(bins) * (v - lo) / (hi - lo)) : 0;
        b = std::clamp<long>(b, 0, bins - 1);
        h[size_t(b)] += 1.0 / double(x.size());
    }
    double e = 0;
    for (double p : h) {
        if (p > 0) e -= p * std::log(p);
    }
    return e;
}

} // namespace oracles
