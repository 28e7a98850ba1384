#include "epi/pca.hpp"

#include "epi/csv.hpp"
#include "epi/errors.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

namespace epi::pca {

StandardizeResult standardize(const Matrix& x) {
    const size_t m = x.rows();
    const size_t n = x.cols();
    if (m < 2) throw DataError("standardize: need at least 2 rows");

    StandardizeResult out;
    std::vector<double> means(n, 0.0), stds(n, 0.0);
    for (size_t c = 0; c < n; ++c) {
        double mean = 0.0;
        for (size_t r = 0; r < m; ++r) mean += x(r, c);
        mean /= static_cast<double>(m);
        double var = 0.0;
        for (size_t r = 0; r < m; ++r) {
            const double d = x(r, c) - mean;
            var += d * d;
        }
        means[c] = mean;
        stds[c] = std::sqrt(var / static_cast<double>(m));  // population convention
        if (stds[c] < 1e-12) {
            out.dropped.push_back(c);
        } else {
            out.kept.push_back(c);
        }
    }

    out.z = Matrix(m, out.kept.size());
    for (size_t k = 0; k < out.kept.size(); ++k) {
        const size_t c = out.kept[k];
        out.mean.push_back(means[c]);
        out.stddev.push_back(stds[c]);
        for (size_t r = 0; r < m; ++r) out.z(r, k) = (x(r, c) - means[c]) / stds[c];
    }
    return out;
}

void eigen_sym(const Matrix& s, std::vector<double>& eigenvalues, Matrix& eigenvectors) {
    const size_t n = s.rows();
    if (n == 0 || s.cols() != n) throw DataError("eigen_sym: matrix must be square");
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = i + 1; j < n; ++j) {
            if (std::abs(s(i, j) - s(j, i)) > 1e-9) {
                throw DataError("eigen_sym: input not symmetric");
            }
        }
    }

    Matrix a = s;
    // Symmetrize exactly so rotations preserve symmetry bit-for-bit.
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = i + 1; j < n; ++j) {
            const double v = 0.5 * (a(i, j) + a(j, i));
            a(i, j) = v;
            a(j, i) = v;
        }
    }
    Matrix v = Matrix::identity(n);

    constexpr double kTol = 1e-12;
    constexpr int kMaxSweeps = 100;
    bool converged = n == 1;
    for (int sweep = 0; sweep < kMaxSweeps && !converged; ++sweep) {
        double off = 0.0;
        for (size_t p = 0; p < n; ++p) {
            for (size_t q = p + 1; q < n; ++q) off = std::max(off, std::abs(a(p, q)));
        }
        if (off < kTol) {
            converged = true;
            break;
        }
        for (size_t p = 0; p + 1 < n; ++p) {
            for (size_t q = p + 1; q < n; ++q) {
                const double apq = a(p, q);
                if (std::abs(apq) < kTol * 1e-3) continue;
                const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
                const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double sn = t * c;

                const double app = a(p, p), aqq = a(q, q);
                a(p, p) = app - t * apq;
                a(q, q) = aqq + t * apq;
                a(p, q) = 0.0;
                a(q, p) = 0.0;
                for (size_t k = 0; k < n; ++k) {
                    if (k == p || k == q) continue;
                    const double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - sn * akq;
                    a(p, k) = a(k, p);
                    a(k, q) = sn * akp + c * akq;
                    a(q, k) = a(k, q);
                }
                for (size_t k = 0; k < n; ++k) {
                    const double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - sn * vkq;
                    v(k, q) = sn * vkp + c * vkq;
                }
            }
        }
    }
    if (!converged) {
        double off = 0.0;
        for (size_t p = 0; p < n; ++p) {
            for (size_t q = p + 1; q < n; ++q) off = std::max(off, std::abs(a(p, q)));
        }
        if (off >= kTol) throw NumericError("eigen_sym: Jacobi sweeps did not converge");
    }

    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](size_t i, size_t j) { return a(i, i) > a(j, j); });

    eigenvalues.resize(n);
    eigenvectors = Matrix(n, n);
    for (size_t j = 0; j < n; ++j) {
        eigenvalues[j] = a(order[j], order[j]);
        for (size_t i = 0; i < n; ++i) eigenvectors(i, j) = v(i, order[j]);
    }
}

PcaModel fit_pca(const Matrix& z, std::vector<std::string> feature_names) {
    const size_t m = z.rows();
    const size_t n = z.cols();
    if (m < 2) throw DataError("fit_pca: need at least 2 rows");
    if (n == 0) throw DataError("fit_pca: no features");
    if (feature_names.size() != n) throw DataError("fit_pca: feature name count mismatch");

    // Sample covariance with the 1/(m-1) estimator.
    Matrix cov(n, n);
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = i; j < n; ++j) {
            double s = 0.0;
            for (size_t r = 0; r < m; ++r) s += z(r, i) * z(r, j);
            s /= static_cast<double>(m - 1);
            cov(i, j) = s;
            cov(j, i) = s;
        }
    }

    std::vector<double> eigenvalues;
    Matrix eigenvectors;
    eigen_sym(cov, eigenvalues, eigenvectors);

    PcaModel model;
    model.feature_names = std::move(feature_names);
    model.mean.assign(n, 0.0);
    model.stddev.assign(n, 1.0);
    model.components = Matrix(n, n);
    model.explained_variance.resize(n);

    double total = 0.0;
    for (size_t j = 0; j < n; ++j) {
        model.explained_variance[j] = std::max(0.0, eigenvalues[j]);  // clamp roundoff
        total += model.explained_variance[j];
    }
    if (total <= 0.0) throw NumericError("fit_pca: zero total variance");

    for (size_t j = 0; j < n; ++j) {
        // Fix the arbitrary eigenvector sign: largest-magnitude entry positive.
        size_t arg = 0;
        for (size_t i = 1; i < n; ++i) {
            if (std::abs(eigenvectors(i, j)) > std::abs(eigenvectors(arg, j))) arg = i;
        }
        const double flip = eigenvectors(arg, j) < 0.0 ? -1.0 : 1.0;
        for (size_t i = 0; i < n; ++i) model.components(j, i) = flip * eigenvectors(i, j);
    }

    model.explained_variance_ratio.resize(n);
    for (size_t j = 0; j < n; ++j) {
        model.explained_variance_ratio[j] = model.explained_variance[j] / total;
    }

    model.informativeness.assign(n, 0.0);
    for (size_t j = 0; j < n; ++j) {
        const double u = model.explained_variance_ratio[j];
        for (size_t f = 0; f < n; ++f) {
            model.informativeness[f] += u * std::abs(model.components(j, f));
        }
    }
    return model;
}

PcaModel fit(const Matrix& x, std::vector<std::string> feature_names) {
    if (feature_names.size() != x.cols()) throw DataError("fit: feature name count mismatch");
    StandardizeResult std_res = standardize(x);
    if (std_res.kept.empty()) throw DataError("fit: all features are constant");

    std::vector<std::string> kept_names;
    for (size_t k : std_res.kept) kept_names.push_back(feature_names[k]);
    PcaModel model = fit_pca(std_res.z, std::move(kept_names));
    model.mean = std_res.mean;
    model.stddev = std_res.stddev;
    for (size_t d : std_res.dropped) model.dropped_features.push_back(feature_names[d]);
    return model;
}

VarianceCurve components_for_variance(const PcaModel& model, double frac) {
    if (!(frac > 0.0 && frac <= 1.0)) throw DataError("components_for_variance: frac must be in (0,1]");
    VarianceCurve curve;
    curve.cumulative.resize(model.explained_variance_ratio.size());
    double acc = 0.0;
    for (size_t j = 0; j < curve.cumulative.size(); ++j) {
        acc += model.explained_variance_ratio[j];
        curve.cumulative[j] = acc;
        if (curve.k == 0 && acc >= frac) curve.k = j + 1;
    }
    if (curve.k == 0) curve.k = curve.cumulative.size();  // roundoff shy of 1.0
    return curve;
}

std::vector<std::pair<std::string, double>> rank_features(const PcaModel& model, size_t top_k) {
    std::vector<std::pair<std::string, double>> ranked;
    for (size_t f = 0; f < model.feature_names.size(); ++f) {
        ranked.emplace_back(model.feature_names[f], model.informativeness[f]);
    }
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    std::vector<std::string> dropped = model.dropped_features;
    std::sort(dropped.begin(), dropped.end());
    for (const auto& name : dropped) ranked.emplace_back(name, 0.0);
    if (top_k > 0 && ranked.size() > top_k) ranked.resize(top_k);
    return ranked;
}

Matrix project(const PcaModel& model, const Matrix& x_raw, size_t k) {
    const size_t n = model.feature_names.size();
    if (x_raw.cols() != n) throw DataError("project: column count mismatch");
    k = std::min(k, model.components.rows());
    Matrix scores(x_raw.rows(), k);
    std::vector<double> z(n);
    for (size_t r = 0; r < x_raw.rows(); ++r) {
        for (size_t f = 0; f < n; ++f) {
            z[f] = (x_raw(r, f) - model.mean[f]) / model.stddev[f];
        }
        for (size_t j = 0; j < k; ++j) scores(r, j) = dot(model.components.row(j), z);
    }
    return scores;
}

Matrix design_matrix(const data::FeaturePanel& panel, RowMode mode,
                     std::vector<std::string>& feature_names_out) {
    feature_names_out.clear();
    for (const auto& f : panel.schema.static_features) feature_names_out.push_back(f.name);
    for (const auto& f : panel.schema.dynamic_features) feature_names_out.push_back(f.name);

    const size_t n_static = panel.schema.static_features.size();
    const size_t n_dynamic = panel.schema.dynamic_features.size();
    const size_t n_counties = panel.counties.size();
    const size_t days = static_cast<size_t>(panel.num_days);

    if (mode == RowMode::PerDate) {
        Matrix x(n_counties * days, n_static + n_dynamic);
        for (size_t c = 0; c < n_counties; ++c) {
            for (size_t d = 0; d < days; ++d) {
                const size_t r = c * days + d;
                for (size_t f = 0; f < n_static; ++f) x(r, f) = panel.static_values(c, f);
                for (size_t f = 0; f < n_dynamic; ++f) {
                    x(r, n_static + f) = panel.dynamic_values(panel.row(c, static_cast<int>(d)), f);
                }
            }
        }
        return x;
    }

    Matrix x(n_counties, n_static + n_dynamic);
    for (size_t c = 0; c < n_counties; ++c) {
        for (size_t f = 0; f < n_static; ++f) x(c, f) = panel.static_values(c, f);
        for (size_t f = 0; f < n_dynamic; ++f) {
            double mean = 0.0;
            for (size_t d = 0; d < days; ++d) {
                mean += panel.dynamic_values(panel.row(c, static_cast<int>(d)), f);
            }
            x(c, n_static + f) = mean / static_cast<double>(days);
        }
    }
    return x;
}

void save_model_csv(const PcaModel& model, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);

    csv::Table comp;
    comp.header = {"component"};
    for (const auto& name : model.feature_names) comp.header.push_back(name);
    for (size_t j = 0; j < model.components.rows(); ++j) {
        std::vector<std::string> row{std::to_string(j + 1)};
        for (size_t f = 0; f < model.components.cols(); ++f) {
            row.push_back(csv::format_double(model.components(j, f)));
        }
        comp.rows.push_back(std::move(row));
    }
    csv::write_file((fs::path(dir) / "components.csv").string(), comp);

    csv::Table var;
    var.header = {"component", "eigenvalue", "explained_variance_ratio", "cumulative_ratio"};
    double acc = 0.0;
    for (size_t j = 0; j < model.explained_variance.size(); ++j) {
        acc += model.explained_variance_ratio[j];
        var.rows.push_back({std::to_string(j + 1), csv::format_double(model.explained_variance[j]),
                            csv::format_double(model.explained_variance_ratio[j]),
                            csv::format_double(acc)});
    }
    csv::write_file((fs::path(dir) / "variance.csv").string(), var);

    csv::Table info;
    info.header = {"feature", "informativeness"};
    for (const auto& [name, score] : rank_features(model, 0)) {
        info.rows.push_back({name, csv::format_double(score)});
    }
    csv::write_file((fs::path(dir) / "informativeness.csv").string(), info);
}

} // namespace epi::pca
