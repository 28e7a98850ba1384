#include "epi/pca.hpp"

#include "epi/dataset.hpp"
#include "epi/errors.hpp"
#include "epi/rng.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "test_util.hpp"

using namespace epi;
using namespace epi::pca;

namespace {

Matrix random_symmetric(Rng& rng, size_t n) {
    Matrix s(n, n);
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = i; j < n; ++j) {
            const double v = rng.uniform(-2, 2);
            s(i, j) = v;
            s(j, i) = v;
        }
    }
    return s;
}

double reconstruction_error(const Matrix& s, const std::vector<double>& lambda, const Matrix& v) {
    const size_t n = s.rows();
    double worst = 0.0;
    for (size_t i = 0; i < n; ++i) {
        for (size_t j = 0; j < n; ++j) {
            double sum = 0.0;
            for (size_t k = 0; k < n; ++k) sum += v(i, k) * lambda[k] * v(j, k);
            worst = std::max(worst, std::abs(sum - s(i, j)));
        }
    }
    return worst;
}

double orthonormality_error(const Matrix& v) {
    const size_t n = v.rows();
    double worst = 0.0;
    for (size_t a = 0; a < n; ++a) {
        for (size_t b = 0; b < n; ++b) {
            double d = 0.0;
            for (size_t i = 0; i < n; ++i) d += v(i, a) * v(i, b);
            worst = std::max(worst, std::abs(d - (a == b ? 1.0 : 0.0)));
        }
    }
    return worst;
}

} // namespace

TEST_CASE("standardize: drops constants, centers and scales") {
    Matrix x(3, 2);
    x(0, 0) = 1; x(1, 0) = 1; x(2, 0) = 1;   // constant
    x(0, 1) = 0; x(1, 1) = 2; x(2, 1) = 1;
    const auto result = standardize(x);
    REQUIRE(result.dropped == std::vector<size_t>{0});
    REQUIRE(result.kept == std::vector<size_t>{1});

    // population-std convention: column [0,2] -> [-1,+1]
    Matrix two(2, 1);
    two(0, 0) = 0; two(1, 0) = 2;
    const auto r2 = standardize(two);
    CHECK(r2.z(0, 0) == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(r2.z(1, 0) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r2.mean[0] == doctest::Approx(1.0));
    CHECK(r2.stddev[0] == doctest::Approx(1.0));

    // idempotence on an already standardized column
    const auto r3 = standardize(r2.z);
    CHECK(std::abs(r3.z(0, 0) - r2.z(0, 0)) < 1e-10);
    CHECK(std::abs(r3.mean[0]) < 1e-10);

    CHECK_THROWS_AS(standardize(Matrix(1, 2)), DataError);
}

TEST_CASE("eigen_sym: diagonal, 2x2 hand solution, random reconstruction") {
    {
        Matrix s(2, 2);
        s(0, 0) = 4; s(1, 1) = 1;
        std::vector<double> lambda;
        Matrix v;
        eigen_sym(s, lambda, v);
        CHECK(lambda == std::vector<double>{4, 1});
        CHECK(std::abs(std::abs(v(0, 0)) - 1.0) < 1e-12);
        CHECK(std::abs(v(1, 0)) < 1e-12);
    }
    {
        Matrix s(2, 2);
        s(0, 0) = 2; s(0, 1) = 1; s(1, 0) = 1; s(1, 1) = 2;
        std::vector<double> lambda;
        Matrix v;
        eigen_sym(s, lambda, v);
        CHECK(lambda[0] == doctest::Approx(3.0).epsilon(1e-12));
        CHECK(lambda[1] == doctest::Approx(1.0).epsilon(1e-12));
        const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
        CHECK(std::abs(std::abs(v(0, 0)) - inv_sqrt2) < 1e-9);
        CHECK(std::abs(v(0, 0) - v(1, 0)) < 1e-9);   // (1,1)/sqrt(2) direction
        CHECK(std::abs(v(0, 1) + v(1, 1)) < 1e-9);   // (1,-1)/sqrt(2) direction
    }
    {
        Rng rng(99);
        const Matrix s = random_symmetric(rng, 6);
        std::vector<double> lambda;
        Matrix v;
        eigen_sym(s, lambda, v);
        CHECK(reconstruction_error(s, lambda, v) < 1e-8);
        CHECK(orthonormality_error(v) < 1e-9);
        CHECK(std::is_sorted(lambda.rbegin(), lambda.rend()));
    }
    {
        Matrix bad(2, 2);
        bad(0, 1) = 1.0;  // asymmetric
        std::vector<double> lambda;
        Matrix v;
        CHECK_THROWS_AS(eigen_sym(bad, lambda, v), DataError);
    }
}

TEST_CASE("fit_pca: rank-1 data, single feature, informativeness recomputation") {
    SUBCASE("points exactly on y=x") {
        Rng rng(4);
        Matrix x(40, 2);
        for (size_t r = 0; r < 40; ++r) {
            const double v = rng.uniform(-3, 3);
            x(r, 0) = v;
            x(r, 1) = v;
        }
        const auto model = fit(x, {"a", "b"});
        CHECK(model.explained_variance_ratio[0] == doctest::Approx(1.0).epsilon(1e-9));
        CHECK(model.explained_variance_ratio[1] == doctest::Approx(0.0).epsilon(1e-9));
        const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
        CHECK(std::abs(model.components(0, 0) - inv_sqrt2) < 1e-9);
        CHECK(std::abs(model.components(0, 1) - inv_sqrt2) < 1e-9);
    }

    SUBCASE("single retained feature has informativeness exactly 1") {
        Matrix x(5, 2);
        for (size_t r = 0; r < 5; ++r) {
            x(r, 0) = static_cast<double>(r);
            x(r, 1) = 9.0;  // constant, dropped
        }
        const auto model = fit(x, {"varying", "flat"});
        REQUIRE(model.feature_names == std::vector<std::string>{"varying"});
        CHECK(model.informativeness[0] == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(model.dropped_features == std::vector<std::string>{"flat"});
    }

    SUBCASE("informativeness matches a brute-force recomputation") {
        Rng rng(50);
        Matrix x(50, 6);
        for (auto& v : x.data()) v = rng.normal();
        const auto model = fit(x, {"f0", "f1", "f2", "f3", "f4", "f5"});
        for (size_t f = 0; f < 6; ++f) {
            double expect = 0.0;
            for (size_t j = 0; j < 6; ++j) {
                expect += model.explained_variance_ratio[j] * std::abs(model.components(j, f));
            }
            CHECK(std::abs(model.informativeness[f] - expect) < 1e-12);
        }
    }
}

TEST_CASE("fit_pca: variance conservation and orthonormality invariants") {
    Rng rng(51);
    Matrix x(80, 5);
    for (auto& v : x.data()) v = rng.uniform(-4, 4);
    const auto std_res = standardize(x);
    const auto model = fit_pca(std_res.z, {"a", "b", "c", "d", "e"});

    double trace = 0.0;
    const size_t m = std_res.z.rows();
    for (size_t c = 0; c < 5; ++c) {
        double s = 0.0;
        for (size_t r = 0; r < m; ++r) s += std_res.z(r, c) * std_res.z(r, c);
        trace += s / static_cast<double>(m - 1);
    }
    double lambda_sum = 0.0, ratio_sum = 0.0;
    for (size_t j = 0; j < 5; ++j) {
        lambda_sum += model.explained_variance[j];
        ratio_sum += model.explained_variance_ratio[j];
    }
    CHECK(std::abs(lambda_sum - trace) < 1e-8);
    CHECK(std::abs(ratio_sum - 1.0) < 1e-9);

    for (size_t a = 0; a < 5; ++a) {
        for (size_t b = 0; b < 5; ++b) {
            const double d = dot(model.components.row(a), model.components.row(b));
            CHECK(std::abs(d - (a == b ? 1.0 : 0.0)) < 1e-9);
        }
    }
}

TEST_CASE("fit_pca: known diagonal covariance recovers analytic ratios within 0.02") {
    Rng rng(607);
    const std::vector<double> stds{3.0, 2.0, 1.0, 0.5};
    double total = 0.0;
    for (double s : stds) total += s * s;
    Matrix x(2000, 4);
    for (size_t r = 0; r < 2000; ++r) {
        for (size_t c = 0; c < 4; ++c) x(r, c) = stds[c] * rng.normal();
    }
    // no standardization here: the analytic ratios live in raw units
    const auto model = fit_pca(x, {"a", "b", "c", "d"});
    for (size_t j = 0; j < 4; ++j) {
        CHECK(std::abs(model.explained_variance_ratio[j] - stds[j] * stds[j] / total) < 0.02);
    }
}

TEST_CASE("components_for_variance: boundaries and monotonicity") {
    PcaModel model;
    model.explained_variance_ratio = {0.7, 0.2, 0.1};
    CHECK(components_for_variance(model, 0.7).k == 1);
    CHECK(components_for_variance(model, 0.98).k == 3);
    PcaModel single;
    single.explained_variance_ratio = {1.0};
    CHECK(components_for_variance(single, 0.5).k == 1);
    CHECK(components_for_variance(single, 1.0).k == 1);

    size_t prev = 0;
    for (double frac : {0.1, 0.3, 0.5, 0.69, 0.71, 0.89, 0.91, 1.0}) {
        const size_t k = components_for_variance(model, frac).k;
        CHECK(k >= prev);
        prev = k;
    }
    CHECK_THROWS_AS(components_for_variance(model, 0.0), DataError);
}

TEST_CASE("rank_features: ordering, name ties, dropped constants last") {
    PcaModel model;
    model.feature_names = {"f1", "f2", "f3"};
    model.informativeness = {0.2, 0.5, 0.1};
    model.dropped_features = {"flat_b", "flat_a"};
    const auto ranked = rank_features(model, 0);
    REQUIRE(ranked.size() == 5);
    CHECK(ranked[0].first == "f2");
    CHECK(ranked[1].first == "f1");
    CHECK(ranked[2].first == "f3");
    CHECK(ranked[3] == std::pair<std::string, double>{"flat_a", 0.0});
    CHECK(ranked[4] == std::pair<std::string, double>{"flat_b", 0.0});
    CHECK(rank_features(model, 2).size() == 2);

    PcaModel ties;
    ties.feature_names = {"zeta", "alpha"};
    ties.informativeness = {0.4, 0.4};
    const auto tied = rank_features(ties, 0);
    CHECK(tied[0].first == "alpha");
}

TEST_CASE("ranking is invariant to positive rescaling of a raw feature") {
    Rng rng(321);
    Matrix x(60, 4);
    for (auto& v : x.data()) v = rng.uniform(0, 10);
    const std::vector<std::string> names{"a", "b", "c", "d"};
    const auto base = rank_features(fit(x, names), 0);

    Matrix scaled = x;
    for (size_t r = 0; r < scaled.rows(); ++r) scaled(r, 2) *= 1000.0;
    const auto after = rank_features(fit(scaled, names), 0);
    for (size_t i = 0; i < base.size(); ++i) CHECK(base[i].first == after[i].first);
}

TEST_CASE("a dominant-variance synthetic feature ranks first") {
    Rng rng(88);
    Matrix x(500, 5);
    for (size_t r = 0; r < 500; ++r) {
        // one strong factor drives columns 0..1; the rest are weak noise
        const double factor = rng.normal();
        x(r, 0) = factor + 0.05 * rng.normal();
        x(r, 1) = factor + 0.05 * rng.normal();
        x(r, 2) = 0.3 * rng.normal();
        x(r, 3) = 0.3 * rng.normal();
        x(r, 4) = 0.3 * rng.normal();
    }
    const auto ranked = rank_features(fit(x, {"lead_a", "lead_b", "n1", "n2", "n3"}), 0);
    CHECK((ranked[0].first == "lead_a" || ranked[0].first == "lead_b"));
    CHECK((ranked[1].first == "lead_a" || ranked[1].first == "lead_b"));
}

TEST_CASE("design_matrix: per-date and aggregated modes") {
    const auto panel = data::generate_synthetic_panel(
        data::SynthSpec{.counties = 4, .days = 10, .static_features = 2}, 6);
    std::vector<std::string> names;
    const Matrix per_date = design_matrix(panel, RowMode::PerDate, names);
    CHECK(per_date.rows() == 4 * 10);
    CHECK(names.size() == panel.schema.static_features.size() +
                              panel.schema.dynamic_features.size());
    const Matrix agg = design_matrix(panel, RowMode::Aggregated, names);
    CHECK(agg.rows() == 4);

    // aggregated dynamics are the day-means of the per-date rows
    const size_t dyn0 = panel.schema.static_features.size();
    double mean = 0.0;
    for (int day = 0; day < 10; ++day) mean += per_date(static_cast<size_t>(day), dyn0);
    CHECK(agg(0, dyn0) == doctest::Approx(mean / 10.0).epsilon(1e-12));
}

TEST_CASE("pca model CSVs are emitted") {
    Rng rng(13);
    Matrix x(30, 3);
    for (auto& v : x.data()) v = rng.normal();
    const auto model = fit(x, {"a", "b", "c"});
    test_util::TempDir tmp("pca");
    save_model_csv(model, tmp.path().string());
    CHECK(test_util::read_text(tmp.file("components.csv")).find("component,a,b,c") == 0);
    CHECK(test_util::read_text(tmp.file("variance.csv"))
              .find("component,eigenvalue,explained_variance_ratio,cumulative_ratio") == 0);
    CHECK(test_util::read_text(tmp.file("informativeness.csv")).find("feature,informativeness") ==
          0);
}
