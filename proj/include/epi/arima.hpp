#pragma once

#include <span>
#include <vector>

namespace epi::arima {

struct ArimaModel {
    int p = 0;
    int d = 0;
    int q = 0;
    std::vector<double> ar;  // phi_1..phi_p
    std::vector<double> ma;  // theta_1..theta_q
    double intercept = 0.0;
    double sigma2 = 0.0;     // innovation variance
    double aic = 0.0;
    size_t n = 0;            // length of the series the model was fitted on
};

/// d-fold first difference (d in 0..2); output shrinks by d.
std::vector<double> difference(std::span<const double> y, int d);

struct AdfResult {
    double statistic = 0.0;      // t-ratio of the lagged-level coefficient
    bool reject_unit_root = false;
    int lag = 0;                 // augmentation order chosen by AIC
};

/// Augmented Dickey-Fuller test with constant, no trend. The augmentation
/// order is chosen by AIC over 0..max_lag on a common sample; rejection uses
/// the 5% Dickey-Fuller critical value -2.86. Requires length >= 20 + max_lag
/// and a non-constant series.
AdfResult adf_test(std::span<const double> y, int max_lag);

/// Conditional-sum-of-squares ARIMA(p,d,q) fit: the residual recursion over
/// the differenced series is minimized by Nelder-Mead simplex search from
/// least-squares AR starting values. Explosive/non-invertible parameter
/// regions are excluded by penalty. AIC = n_eff*ln(SSE/n_eff) + 2(p+q+1).
ArimaModel fit_arima(std::span<const double> y, int p, int d, int q);

/// ARIMA*: d is the smallest value in {0,1,2} whose differenced series
/// rejects the ADF unit root (2 if none does), then (p,q) <= (max_p,max_q)
/// by AIC with deterministic ties (smaller p+q, then smaller p).
ArimaModel select_arima(std::span<const double> y, int max_p = 3, int max_q = 3);

struct ArimaForecast {
    std::vector<double> point;
    std::vector<double> lo95;
    std::vector<double> hi95;
};

/// Recursive h-step forecast on the differenced scale, cumulatively
/// un-differenced; 95% intervals from psi-weight accumulated variance.
/// With clamp_non_negative, points and interval bounds floor at 0.
ArimaForecast arima_forecast(const ArimaModel& model, std::span<const double> y, int horizon,
                             bool clamp_non_negative = true);

} // namespace epi::arima
