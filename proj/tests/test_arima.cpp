#include "epi/arima.hpp"

#include "epi/errors.hpp"
#include "epi/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <vector>

using namespace epi;
using namespace epi::arima;

namespace {

std::vector<double> white_noise(Rng& rng, size_t n, double sigma = 1.0) {
    std::vector<double> y(n);
    for (double& v : y) v = rng.normal(0.0, sigma);
    return y;
}

std::vector<double> ar1(Rng& rng, size_t n, double phi, double intercept = 0.0) {
    std::vector<double> y(n);
    double prev = 0.0;
    for (size_t t = 0; t < n; ++t) {
        prev = intercept + phi * prev + rng.normal();
        y[t] = prev;
    }
    return y;
}

std::vector<double> integrate(std::span<const double> w, double y0) {
    std::vector<double> y{y0};
    for (double v : w) y.push_back(y.back() + v);
    return y;
}

} // namespace

TEST_CASE("difference: orders 0..2 and round trip") {
    const std::vector<double> y{1, 3, 6};
    CHECK(difference(y, 0) == y);
    CHECK(difference(y, 1) == std::vector<double>{2, 3});
    CHECK(difference(y, 2) == std::vector<double>{1});
    CHECK_THROWS_AS(difference(std::vector<double>{1, 2}, 2), DataError);
    CHECK_THROWS_AS(difference(y, 3), DataError);

    // cumulative summation with the stored initial value reproduces the series
    Rng rng(8);
    const auto series = white_noise(rng, 40);
    const auto diffed = difference(series, 1);
    const auto back = integrate(diffed, series[0]);
    for (size_t i = 0; i < series.size(); ++i) CHECK(back[i] == doctest::Approx(series[i]).epsilon(1e-12));
}

TEST_CASE("adf_test: stationary vs unit-root behavior on single seeds") {
    Rng rng(1234);
    const auto noise = white_noise(rng, 300);
    CHECK(adf_test(noise, 4).reject_unit_root);

    const auto walk = integrate(white_noise(rng, 299), 0.0);
    CHECK(!adf_test(walk, 4).reject_unit_root);

    CHECK_THROWS_AS(adf_test(std::vector<double>(100, 3.0), 2), DataError);
    CHECK_THROWS_AS(adf_test(std::vector<double>{1, 2, 3}, 1), DataError);
}

TEST_CASE("fit_arima: degenerate (0,0,0) equals sample moments") {
    Rng rng(9);
    const auto y = white_noise(rng, 200, 2.0);
    const auto model = fit_arima(y, 0, 0, 0);
    double mean = 0.0;
    for (double v : y) mean += v;
    mean /= static_cast<double>(y.size());
    double var = 0.0;
    for (double v : y) var += (v - mean) * (v - mean);
    var /= static_cast<double>(y.size());
    CHECK(std::abs(model.intercept - mean) < 1e-6);
    CHECK(std::abs(model.sigma2 - var) < 1e-6);
    CHECK(model.aic == doctest::Approx(200.0 * std::log(var * 200.0 / 200.0) + 2.0).epsilon(1e-6));
}

TEST_CASE("fit_arima: AR(1) coefficient recovery at n=500") {
    int hits = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed * 7919 + 1);
        const auto y = ar1(rng, 500, 0.7);
        const auto model = fit_arima(y, 1, 0, 0);
        if (std::abs(model.ar[0] - 0.7) <= 0.1) ++hits;
    }
    CHECK(hits >= 8);
}

TEST_CASE("fit_arima: MA(1) recovery and preconditions") {
    int hits = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed * 104729 + 3);
        std::vector<double> y(500);
        double prev_e = 0.0;
        for (auto& v : y) {
            const double e = rng.normal();
            v = e + 0.6 * prev_e;
            prev_e = e;
        }
        const auto model = fit_arima(y, 0, 0, 1);
        if (std::abs(model.ma[0] - 0.6) <= 0.1) ++hits;
    }
    CHECK(hits >= 8);

    CHECK_THROWS_AS(fit_arima(std::vector<double>(5, 1.0), 1, 0, 0), DataError);
}

TEST_CASE("AIC never prefers a nested larger model that fails to cut SSE") {
    // On pure white noise the (1,0,0) SSE gain is tiny, so the +2 parameter
    // penalty must dominate most seeds; verify the select step is parsimonious.
    int small = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed * 31 + 5);
        const auto y = white_noise(rng, 300);
        const auto model = select_arima(y, 3, 3);
        if (model.p + model.q <= 1) ++small;
    }
    CHECK(small >= 18);
}

TEST_CASE("select_arima: differencing order via ADF") {
    Rng rng(77);
    const auto stationary = ar1(rng, 400, 0.5);
    CHECK(select_arima(stationary).d == 0);

    const auto once = integrate(ar1(rng, 399, 0.4), 0.0);
    const auto twice = integrate(once, 0.0);
    CHECK(select_arima(twice).d == 2);

    // determinism: identical input, identical result
    const auto a = select_arima(stationary);
    const auto b = select_arima(stationary);
    CHECK(a.p == b.p);
    CHECK(a.d == b.d);
    CHECK(a.q == b.q);
    CHECK(a.intercept == b.intercept);
    CHECK(a.ar == b.ar);
    CHECK(a.aic == b.aic);
}

TEST_CASE("arima_forecast: random walk, constant model, interval growth") {
    SUBCASE("random-walk forecasts repeat the last value exactly") {
        Rng rng(3);
        auto y = integrate(white_noise(rng, 99), 10.0);
        y.back() = 42.0;
        ArimaModel model;
        model.p = 0;
        model.d = 1;
        model.q = 0;
        model.intercept = 0.0;
        model.sigma2 = 1.0;
        model.n = y.size();
        const auto fc = arima_forecast(model, y, 5, false);
        for (double v : fc.point) CHECK(v == 42.0);
        for (size_t k = 1; k < fc.point.size(); ++k) {
            CHECK(fc.hi95[k] - fc.lo95[k] >= fc.hi95[k - 1] - fc.lo95[k - 1]);
        }
        // psi-weights of (0,1,0) give width 2*1.96*sigma*sqrt(k)
        CHECK(fc.hi95[0] - fc.point[0] == doctest::Approx(1.96).epsilon(1e-12));
        CHECK(fc.hi95[3] - fc.point[3] == doctest::Approx(1.96 * 2.0).epsilon(1e-12));
    }

    SUBCASE("(0,0,0) forecasts the intercept") {
        Rng rng(4);
        const auto y = white_noise(rng, 60);
        const auto model = fit_arima(y, 0, 0, 0);
        const auto fc = arima_forecast(model, y, 4, false);
        for (double v : fc.point) CHECK(v == doctest::Approx(model.intercept).epsilon(1e-12));
    }

    SUBCASE("count clamping and horizon validation") {
        std::vector<double> y(60, 0.0);
        for (size_t i = 0; i < y.size(); ++i) y[i] = 10.0 - 0.2 * static_cast<double>(i);
        const auto model = fit_arima(y, 0, 1, 0);
        const auto fc = arima_forecast(model, y, 30, true);
        for (double v : fc.point) CHECK(v >= 0.0);
        for (double v : fc.lo95) CHECK(v >= 0.0);
        CHECK_THROWS_AS(arima_forecast(model, y, 0, true), DataError);
    }
}

TEST_CASE("fit_arima on an AR(2) with complex roots stays stationary") {
    Rng rng(42);
    std::vector<double> y(400, 0.0);
    double y1 = 0.0, y2 = 0.0;
    for (auto& v : y) {
        const double next = 1.2 * y1 - 0.7 * y2 + rng.normal();
        v = next;
        y2 = y1;
        y1 = next;
    }
    const auto model = fit_arima(y, 2, 0, 0);
    CHECK(std::abs(model.ar[0] - 1.2) < 0.15);
    CHECK(std::abs(model.ar[1] + 0.7) < 0.15);
}
