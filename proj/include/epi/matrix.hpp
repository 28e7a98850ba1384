#pragma once

#include <cassert>
#include <cstddef>
#include <span>
#include <vector>

namespace epi {

/// Dense row-major matrix of doubles. Small and explicit on purpose: every
/// numeric routine in this project that needs 2-D storage uses this type, so
/// results never depend on an external BLAS.
class Matrix {
public:
    Matrix() = default;
    Matrix(size_t rows, size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

    static Matrix identity(size_t n) {
        Matrix m(n, n);
        for (size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    size_t rows() const noexcept { return rows_; }
    size_t cols() const noexcept { return cols_; }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(size_t r, size_t c) {
        assert(r < rows_ && c < cols_);
        return data_[r * cols_ + c];
    }
    double operator()(size_t r, size_t c) const {
        assert(r < rows_ && c < cols_);
        return data_[r * cols_ + c];
    }

    std::span<double> row(size_t r) {
        assert(r < rows_);
        return {data_.data() + r * cols_, cols_};
    }
    std::span<const double> row(size_t r) const {
        assert(r < rows_);
        return {data_.data() + r * cols_, cols_};
    }

    std::vector<double>& data() noexcept { return data_; }
    const std::vector<double>& data() const noexcept { return data_; }

private:
    size_t rows_ = 0;
    size_t cols_ = 0;
    std::vector<double> data_;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
    assert(a.size() == b.size());
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

/// y = M x
inline void matvec(const Matrix& m, std::span<const double> x, std::span<double> y) {
    assert(x.size() == m.cols() && y.size() == m.rows());
    for (size_t r = 0; r < m.rows(); ++r) y[r] = dot(m.row(r), x);
}

/// y += M^T x  (accumulating transpose product, used by backprop)
inline void matvec_transpose_add(const Matrix& m, std::span<const double> x,
                                 std::span<double> y) {
    assert(x.size() == m.rows() && y.size() == m.cols());
    for (size_t r = 0; r < m.rows(); ++r) {
        const auto row = m.row(r);
        const double xr = x[r];
        for (size_t c = 0; c < m.cols(); ++c) y[c] += row[c] * xr;
    }
}

/// M += outer(x, y), the rank-1 gradient update of a linear layer.
inline void add_outer(Matrix& m, std::span<const double> x, std::span<const double> y) {
    assert(x.size() == m.rows() && y.size() == m.cols());
    for (size_t r = 0; r < m.rows(); ++r) {
        auto row = m.row(r);
        const double xr = x[r];
        for (size_t c = 0; c < m.cols(); ++c) row[c] += xr * y[c];
    }
}

} // namespace epi
