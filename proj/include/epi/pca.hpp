#pragma once

#include "epi/dataset.hpp"
#include "epi/matrix.hpp"

#include <string>
#include <utility>
#include <vector>

namespace epi::pca {

struct StandardizeResult {
    Matrix z;                    // m x kept, each column mean 0 / population std 1
    std::vector<double> mean;    // per kept column
    std::vector<double> stddev;  // per kept column (population convention)
    std::vector<size_t> kept;    // original column indices
    std::vector<size_t> dropped; // constant columns (std < 1e-12)
};

/// Column-wise z-scoring; constant columns are dropped and reported.
/// Requires at least 2 rows.
StandardizeResult standardize(const Matrix& x);

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations,
/// sweeping until every off-diagonal magnitude is below 1e-12 (at most 100
/// sweeps, else NumericError). Input must be symmetric to 1e-9. Returns
/// eigenvalues in descending order; column j of `eigenvectors` is the
/// orthonormal eigenvector for eigenvalues[j].
void eigen_sym(const Matrix& s, std::vector<double>& eigenvalues, Matrix& eigenvectors);

struct PcaModel {
    std::vector<std::string> feature_names;    // retained features
    std::vector<std::string> dropped_features; // constant, score 0
    std::vector<double> mean;                  // per retained feature
    std::vector<double> stddev;
    Matrix components;                          // p x n, row j = component c_j
    std::vector<double> explained_variance;     // eigenvalues, descending
    std::vector<double> explained_variance_ratio;
    std::vector<double> informativeness;        // I_f = sum_j u_j * |c_j[f]|
};

/// PCA of an already-standardized matrix: eigendecomposition of the 1/(m-1)
/// sample covariance. Component signs are fixed by making each component's
/// largest-magnitude entry positive.
PcaModel fit_pca(const Matrix& z, std::vector<std::string> feature_names);

/// standardize + fit_pca; records the dropped constant features and the
/// standardization stats on the model.
PcaModel fit(const Matrix& x, std::vector<std::string> feature_names);

struct VarianceCurve {
    size_t k = 0;                    // smallest k whose cumulative ratio >= frac
    std::vector<double> cumulative;  // full cumulative explained-variance curve
};

/// Minimum number of leading components needed to retain `frac` of the
/// variance (frac in (0,1]), plus the cumulative curve for plotting.
VarianceCurve components_for_variance(const PcaModel& model, double frac);

/// Features sorted by informativeness descending (ties by name); dropped
/// constant features appear last with score 0. top_k = 0 returns all.
std::vector<std::pair<std::string, double>> rank_features(const PcaModel& model, size_t top_k);

/// Projects raw-unit rows (columns = retained features, in model order) onto
/// the first `k` components.
Matrix project(const PcaModel& model, const Matrix& x_raw, size_t k);

enum class RowMode {
    PerDate,     // one row per (county, date): statics repeated, dynamics per day
    Aggregated,  // one row per county: dynamics averaged over the date range
};

/// Builds the PCA design matrix from a panel (static ++ dynamic features).
Matrix design_matrix(const data::FeaturePanel& panel, RowMode mode,
                     std::vector<std::string>& feature_names_out);

/// components.csv / variance.csv / informativeness.csv under `dir`.
void save_model_csv(const PcaModel& model, const std::string& dir);

} // namespace epi::pca
