#include "epi/arima.hpp"

#include "epi/errors.hpp"
#include "epi/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <functional>
#include <limits>
#include <numeric>
#include <string>

namespace epi::arima {

namespace {

constexpr double kInfeasible = 1e12;

double mean_of(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

bool is_constant(std::span<const double> v) {
    for (double x : v) {
        if (x != v[0]) return false;
    }
    return true;
}

// ---- small OLS via normal equations -------------------------------------

struct OlsFit {
    std::vector<double> coef;
    double sse = 0.0;
    size_t nobs = 0;
    Matrix xtx_inv;
};

// Gauss-Jordan inverse; throws NumericError on (near-)singularity.
Matrix invert(Matrix a) {
    const size_t n = a.rows();
    Matrix inv = Matrix::identity(n);
    for (size_t col = 0; col < n; ++col) {
        size_t pivot = col;
        for (size_t r = col + 1; r < n; ++r) {
            if (std::abs(a(r, col)) > std::abs(a(pivot, col))) pivot = r;
        }
        if (std::abs(a(pivot, col)) < 1e-12) throw NumericError("singular regression matrix");
        if (pivot != col) {
            for (size_t c = 0; c < n; ++c) {
                std::swap(a(pivot, c), a(col, c));
                std::swap(inv(pivot, c), inv(col, c));
            }
        }
        const double scale = 1.0 / a(col, col);
        for (size_t c = 0; c < n; ++c) {
            a(col, c) *= scale;
            inv(col, c) *= scale;
        }
        for (size_t r = 0; r < n; ++r) {
            if (r == col) continue;
            const double f = a(r, col);
            if (f == 0.0) continue;
            for (size_t c = 0; c < n; ++c) {
                a(r, c) -= f * a(col, c);
                inv(r, c) -= f * inv(col, c);
            }
        }
    }
    return inv;
}

OlsFit ols(const Matrix& x, std::span<const double> y) {
    const size_t n = x.rows();
    const size_t k = x.cols();
    Matrix xtx(k, k);
    std::vector<double> xty(k, 0.0);
    for (size_t r = 0; r < n; ++r) {
        const auto row = x.row(r);
        for (size_t i = 0; i < k; ++i) {
            xty[i] += row[i] * y[r];
            for (size_t j = i; j < k; ++j) xtx(i, j) += row[i] * row[j];
        }
    }
    for (size_t i = 0; i < k; ++i) {
        for (size_t j = 0; j < i; ++j) xtx(i, j) = xtx(j, i);
    }

    OlsFit fit;
    fit.xtx_inv = invert(xtx);
    fit.coef.assign(k, 0.0);
    for (size_t i = 0; i < k; ++i) {
        for (size_t j = 0; j < k; ++j) fit.coef[i] += fit.xtx_inv(i, j) * xty[j];
    }
    fit.nobs = n;
    for (size_t r = 0; r < n; ++r) {
        const double resid = y[r] - dot(x.row(r), fit.coef);
        fit.sse += resid * resid;
    }
    return fit;
}

// ---- stationarity/invertibility via polynomial roots ---------------------

// Roots of 1 + c_1 z + ... + c_k z^k by Durand-Kerner; near-zero leading
// coefficients reduce the effective degree.
std::vector<std::complex<double>> poly_roots(std::span<const double> coefs) {
    std::vector<double> c(coefs.begin(), coefs.end());
    while (!c.empty() && std::abs(c.back()) < 1e-12) c.pop_back();
    const size_t deg = c.size();
    if (deg == 0) return {};

    // monic form: z^deg + (c_{deg-1}/c_deg) z^{deg-1} + ... + (1/c_deg)
    std::vector<std::complex<double>> monic(deg + 1);
    monic[deg] = 1.0;
    monic[0] = 1.0 / c[deg - 1];
    for (size_t i = 1; i < deg; ++i) monic[i] = c[i - 1] / c[deg - 1];

    auto eval = [&](std::complex<double> z) {
        std::complex<double> acc = 0.0;
        for (size_t i = monic.size(); i-- > 0;) acc = acc * z + monic[i];
        return acc;
    };

    std::vector<std::complex<double>> roots(deg);
    for (size_t i = 0; i < deg; ++i) {
        roots[i] = std::pow(std::complex<double>(0.4, 0.9), static_cast<double>(i + 1));
    }
    for (int iter = 0; iter < 200; ++iter) {
        double shift = 0.0;
        for (size_t i = 0; i < deg; ++i) {
            std::complex<double> denom = 1.0;
            for (size_t j = 0; j < deg; ++j) {
                if (j != i) denom *= roots[i] - roots[j];
            }
            if (std::abs(denom) < 1e-30) denom = 1e-30;
            const auto delta = eval(roots[i]) / denom;
            roots[i] -= delta;
            shift = std::max(shift, std::abs(delta));
        }
        if (shift < 1e-12) break;
    }
    return roots;
}

// Amount by which roots of 1 - sum(coef_i z^i) (AR) or 1 + sum(coef_i z^i)
// (MA) intrude inside the |z| > 1.001 region; 0 means feasible.
double unit_circle_violation(std::span<const double> coef, bool negate) {
    std::vector<double> poly(coef.size());
    for (size_t i = 0; i < coef.size(); ++i) poly[i] = negate ? -coef[i] : coef[i];
    double violation = 0.0;
    for (const auto& root : poly_roots(poly)) {
        violation += std::max(0.0, 1.001 - std::abs(root));
    }
    return violation;
}

// ---- CSS objective --------------------------------------------------------

struct CssResult {
    double sse = 0.0;
    std::vector<double> residuals;  // aligned with w (first p entries zero)
};

CssResult css_residuals(std::span<const double> w, double intercept,
                        std::span<const double> ar, std::span<const double> ma) {
    const size_t n = w.size();
    const size_t p = ar.size();
    const size_t q = ma.size();
    CssResult out;
    out.residuals.assign(n, 0.0);
    for (size_t t = p; t < n; ++t) {
        double pred = intercept;
        for (size_t i = 0; i < p; ++i) pred += ar[i] * w[t - 1 - i];
        for (size_t j = 0; j < q; ++j) {
            if (t >= 1 + j && t - 1 - j >= p) pred += ma[j] * out.residuals[t - 1 - j];
        }
        out.residuals[t] = w[t] - pred;
        out.sse += out.residuals[t] * out.residuals[t];
    }
    return out;
}

// ---- Nelder-Mead ----------------------------------------------------------

std::vector<double> nelder_mead(std::function<double(std::span<const double>)> f,
                                std::vector<double> x0, int max_iter) {
    const size_t n = x0.size();
    std::vector<std::vector<double>> simplex{x0};
    for (size_t i = 0; i < n; ++i) {
        auto v = x0;
        v[i] += std::max(0.1 * std::abs(v[i]), 0.05);
        simplex.push_back(std::move(v));
    }
    std::vector<double> fv(simplex.size());
    for (size_t i = 0; i < simplex.size(); ++i) fv[i] = f(simplex[i]);

    auto order = [&] {
        std::vector<size_t> idx(simplex.size());
        std::iota(idx.begin(), idx.end(), size_t{0});
        std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return fv[a] < fv[b]; });
        std::vector<std::vector<double>> s2;
        std::vector<double> f2;
        for (size_t i : idx) {
            s2.push_back(simplex[i]);
            f2.push_back(fv[i]);
        }
        simplex = std::move(s2);
        fv = std::move(f2);
    };

    int iter = 0;
    for (; iter < max_iter; ++iter) {
        order();
        if (fv.back() - fv.front() < 1e-12 * (1.0 + std::abs(fv.front()))) break;

        std::vector<double> centroid(n, 0.0);
        for (size_t i = 0; i + 1 < simplex.size(); ++i) {
            for (size_t j = 0; j < n; ++j) centroid[j] += simplex[i][j];
        }
        for (double& c : centroid) c /= static_cast<double>(n);

        auto blend = [&](double t) {
            std::vector<double> v(n);
            for (size_t j = 0; j < n; ++j) v[j] = centroid[j] + t * (simplex.back()[j] - centroid[j]);
            return v;
        };

        auto reflected = blend(-1.0);
        const double fr = f(reflected);
        if (fr < fv.front()) {
            auto expanded = blend(-2.0);
            const double fe = f(expanded);
            if (fe < fr) {
                simplex.back() = std::move(expanded);
                fv.back() = fe;
            } else {
                simplex.back() = std::move(reflected);
                fv.back() = fr;
            }
            continue;
        }
        if (fr < fv[fv.size() - 2]) {
            simplex.back() = std::move(reflected);
            fv.back() = fr;
            continue;
        }
        auto contracted = blend(fr < fv.back() ? -0.5 : 0.5);
        const double fc = f(contracted);
        if (fc < std::min(fr, fv.back())) {
            simplex.back() = std::move(contracted);
            fv.back() = fc;
            continue;
        }
        // shrink toward the best vertex
        for (size_t i = 1; i < simplex.size(); ++i) {
            for (size_t j = 0; j < n; ++j) {
                simplex[i][j] = simplex[0][j] + 0.5 * (simplex[i][j] - simplex[0][j]);
            }
            fv[i] = f(simplex[i]);
        }
    }
    if (iter >= max_iter) {
        throw NumericError("fit_arima: simplex search did not converge in " +
                           std::to_string(max_iter) + " iterations");
    }
    order();
    return simplex.front();
}

int default_adf_lag(size_t n) {
    const int schwert = static_cast<int>(4.0 * std::pow(static_cast<double>(n) / 100.0, 0.25));
    const int budget = static_cast<int>(n) - 21;
    return std::clamp(std::min(schwert, budget), 1, 8);
}

} // namespace

std::vector<double> difference(std::span<const double> y, int d) {
    if (d < 0 || d > 2) throw DataError("difference: d must be in 0..2");
    if (static_cast<int>(y.size()) <= d) {
        throw DataError("difference: series of length " + std::to_string(y.size()) +
                        " too short for d=" + std::to_string(d));
    }
    std::vector<double> w(y.begin(), y.end());
    for (int round = 0; round < d; ++round) {
        for (size_t t = 0; t + 1 < w.size(); ++t) w[t] = w[t + 1] - w[t];
        w.pop_back();
    }
    return w;
}

AdfResult adf_test(std::span<const double> y, int max_lag) {
    const size_t n = y.size();
    if (max_lag < 0) throw DataError("adf_test: max_lag must be non-negative");
    if (n < static_cast<size_t>(20 + max_lag)) {
        throw DataError("adf_test: need at least " + std::to_string(20 + max_lag) +
                        " observations, got " + std::to_string(n));
    }
    if (is_constant(y)) throw DataError("adf_test: degenerate constant series");

    std::vector<double> dy(n - 1);
    for (size_t t = 0; t + 1 < n; ++t) dy[t] = y[t + 1] - y[t];

    // Regression of dy[t] on [1, y[t-1], dy[t-1..t-k]]; observations indexed
    // so that dy[t] pairs with level y[t]. AIC comparison over a common
    // sample, then a refit on the chosen lag's maximal sample.
    auto build = [&](int k, size_t t_start) {
        const size_t rows = dy.size() - t_start;
        Matrix x(rows, static_cast<size_t>(k) + 2);
        std::vector<double> dep(rows);
        for (size_t r = 0; r < rows; ++r) {
            const size_t t = t_start + r;
            dep[r] = dy[t];
            x(r, 0) = 1.0;
            x(r, 1) = y[t];
            for (int i = 1; i <= k; ++i) x(r, 1 + static_cast<size_t>(i)) = dy[t - static_cast<size_t>(i)];
        }
        return std::make_pair(std::move(x), std::move(dep));
    };

    int best_lag = 0;
    double best_aic = std::numeric_limits<double>::infinity();
    for (int k = 0; k <= max_lag; ++k) {
        auto [x, dep] = build(k, static_cast<size_t>(max_lag));
        OlsFit fit;
        try {
            fit = ols(x, dep);
        } catch (const NumericError&) {
            continue;
        }
        const double nobs = static_cast<double>(fit.nobs);
        const double aic =
            nobs * std::log(std::max(fit.sse, 1e-300) / nobs) + 2.0 * (static_cast<double>(k) + 2.0);
        if (aic < best_aic) {
            best_aic = aic;
            best_lag = k;
        }
    }
    if (!std::isfinite(best_aic)) throw NumericError("adf_test: all regressions singular");

    auto [x, dep] = build(best_lag, static_cast<size_t>(best_lag));
    const OlsFit fit = ols(x, dep);
    const size_t params = static_cast<size_t>(best_lag) + 2;
    if (fit.nobs <= params) throw DataError("adf_test: insufficient observations");
    const double sigma2 = fit.sse / static_cast<double>(fit.nobs - params);
    const double se = std::sqrt(std::max(sigma2 * fit.xtx_inv(1, 1), 1e-300));

    AdfResult result;
    result.lag = best_lag;
    result.statistic = fit.coef[1] / se;
    result.reject_unit_root = result.statistic < -2.86;
    return result;
}

ArimaModel fit_arima(std::span<const double> y, int p, int d, int q) {
    if (p < 0 || q < 0) throw DataError("fit_arima: negative order");
    const std::vector<double> w = difference(y, d);
    const size_t n = w.size();
    if (n < static_cast<size_t>(10 + p + q)) {
        throw DataError("fit_arima: series too short for ARIMA(" + std::to_string(p) + "," +
                        std::to_string(d) + "," + std::to_string(q) + ")");
    }

    ArimaModel model;
    model.p = p;
    model.d = d;
    model.q = q;
    model.n = y.size();

    const auto finalize = [&](double intercept, std::vector<double> ar, std::vector<double> ma) {
        model.intercept = intercept;
        model.ar = std::move(ar);
        model.ma = std::move(ma);
        const auto css = css_residuals(w, model.intercept, model.ar, model.ma);
        const double n_eff = static_cast<double>(n - static_cast<size_t>(p));
        const double sse = std::max(css.sse, 1e-12);
        model.sigma2 = sse / n_eff;
        model.aic = n_eff * std::log(sse / n_eff) +
                    2.0 * (static_cast<double>(p) + static_cast<double>(q) + 1.0);
    };

    if (p == 0 && q == 0) {
        finalize(mean_of(w), {}, {});
        return model;
    }

    // Least-squares AR starting values; MA terms start at zero.
    std::vector<double> start(static_cast<size_t>(1 + p + q), 0.0);
    if (p > 0) {
        const size_t rows = n - static_cast<size_t>(p);
        Matrix x(rows, static_cast<size_t>(p) + 1);
        std::vector<double> dep(rows);
        for (size_t r = 0; r < rows; ++r) {
            const size_t t = static_cast<size_t>(p) + r;
            dep[r] = w[t];
            x(r, 0) = 1.0;
            for (int i = 1; i <= p; ++i) x(r, static_cast<size_t>(i)) = w[t - static_cast<size_t>(i)];
        }
        try {
            const OlsFit init = ols(x, dep);
            for (size_t i = 0; i < init.coef.size(); ++i) start[i] = init.coef[i];
        } catch (const NumericError&) {
            start[0] = mean_of(w);
        }
        // Shrink an explosive start into the feasible region.
        std::span<double> ar_start(start.data() + 1, static_cast<size_t>(p));
        for (int tries = 0; tries < 200; ++tries) {
            if (unit_circle_violation({ar_start.data(), ar_start.size()}, true) == 0.0) break;
            for (double& a : ar_start) a *= 0.95;
        }
    } else {
        start[0] = mean_of(w);
    }

    auto objective = [&](std::span<const double> theta) {
        const double intercept = theta[0];
        std::span<const double> ar(theta.data() + 1, static_cast<size_t>(p));
        std::span<const double> ma(theta.data() + 1 + p, static_cast<size_t>(q));
        const double violation =
            unit_circle_violation(ar, true) + unit_circle_violation(ma, false);
        if (violation > 0.0) return kInfeasible * (1.0 + violation);
        return css_residuals(w, intercept, ar, ma).sse;
    };

    const std::vector<double> best = nelder_mead(objective, start, 2000);
    if (objective(best) >= kInfeasible) {
        throw NumericError("fit_arima: no feasible (stationary/invertible) optimum found");
    }
    finalize(best[0], {best.begin() + 1, best.begin() + 1 + p},
             {best.begin() + 1 + p, best.end()});
    return model;
}

ArimaModel select_arima(std::span<const double> y, int max_p, int max_q) {
    int d = 2;
    for (int d_try = 0; d_try <= 2; ++d_try) {
        std::vector<double> w;
        try {
            w = difference(y, d_try);
        } catch (const DataError&) {
            break;
        }
        if (is_constant(w)) {
            d = d_try;  // trivially stationary
            break;
        }
        const int lag = default_adf_lag(w.size());
        if (w.size() < static_cast<size_t>(20 + lag)) continue;  // cannot test, keep differencing
        try {
            if (adf_test(w, lag).reject_unit_root) {
                d = d_try;
                break;
            }
        } catch (const Error&) {
            continue;
        }
    }

    const ArimaModel* best = nullptr;
    std::vector<ArimaModel> fits;
    fits.reserve(static_cast<size_t>((max_p + 1) * (max_q + 1)));
    for (int p = 0; p <= max_p; ++p) {
        for (int q = 0; q <= max_q; ++q) {
            try {
                fits.push_back(fit_arima(y, p, d, q));
            } catch (const Error&) {
                continue;
            }
            const ArimaModel& cand = fits.back();
            if (!best) {
                best = &cand;
                continue;
            }
            const bool better =
                cand.aic < best->aic ||
                (cand.aic == best->aic &&
                 (cand.p + cand.q < best->p + best->q ||
                  (cand.p + cand.q == best->p + best->q && cand.p < best->p)));
            if (better) best = &cand;
        }
    }
    if (!best) throw DataError("select_arima: every grid cell failed to fit");
    return *best;
}

ArimaForecast arima_forecast(const ArimaModel& model, std::span<const double> y, int horizon,
                             bool clamp_non_negative) {
    if (horizon <= 0) throw DataError("arima_forecast: horizon must be positive");
    if (y.size() != model.n) {
        throw DataError("arima_forecast: series length differs from the fitted series");
    }

    const std::vector<double> w = difference(y, model.d);
    const auto css = css_residuals(w, model.intercept, model.ar, model.ma);

    const size_t p = model.ar.size();
    const size_t q = model.ma.size();
    std::vector<double> w_ext(w.begin(), w.end());
    std::vector<double> e_ext(css.residuals.begin(), css.residuals.end());
    for (int k = 0; k < horizon; ++k) {
        const size_t t = w_ext.size();
        double pred = model.intercept;
        for (size_t i = 0; i < p; ++i) pred += model.ar[i] * w_ext[t - 1 - i];
        for (size_t j = 0; j < q; ++j) {
            if (t >= 1 + j && t - 1 - j < e_ext.size()) pred += model.ma[j] * e_ext[t - 1 - j];
        }
        w_ext.push_back(pred);
        // future innovations are zero by construction; e_ext is not extended
    }

    // Integrate back through the d differencing levels.
    std::vector<double> tails(static_cast<size_t>(model.d) + 1);
    for (int lvl = 0; lvl <= model.d; ++lvl) {
        const auto diffed = difference(y, model.d - lvl);  // lvl = d gives y itself
        tails[static_cast<size_t>(lvl)] = diffed.back();
    }

    // psi-weights of the ARMA core, then d rounds of cumulative summation.
    const size_t h = static_cast<size_t>(horizon);
    std::vector<double> psi(h, 0.0);
    psi[0] = 1.0;
    for (size_t j = 1; j < h; ++j) {
        double v = j <= q ? model.ma[j - 1] : 0.0;
        for (size_t i = 1; i <= std::min(p, j); ++i) v += model.ar[i - 1] * psi[j - i];
        psi[j] = v;
    }
    for (int round = 0; round < model.d; ++round) {
        for (size_t j = 1; j < h; ++j) psi[j] += psi[j - 1];
    }

    ArimaForecast out;
    double var_acc = 0.0;
    std::vector<double> level = tails;
    for (int k = 0; k < horizon; ++k) {
        level[0] = w_ext[w.size() + static_cast<size_t>(k)];
        for (int lvl = 1; lvl <= model.d; ++lvl) {
            level[static_cast<size_t>(lvl)] += level[static_cast<size_t>(lvl - 1)];
        }
        double point = level[static_cast<size_t>(model.d)];

        var_acc += psi[static_cast<size_t>(k)] * psi[static_cast<size_t>(k)];
        const double half = 1.96 * std::sqrt(model.sigma2 * var_acc);
        double lo = point - half;
        double hi = point + half;
        if (clamp_non_negative) {
            point = std::max(0.0, point);
            lo = std::max(0.0, lo);
            hi = std::max(0.0, hi);
        }
        out.point.push_back(point);
        out.lo95.push_back(lo);
        out.hi95.push_back(hi);
    }
    return out;
}

} // namespace epi::arima
