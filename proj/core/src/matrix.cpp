#include "moediff/matrix.hpp"

#include <cmath>
#include <cstring>
#include <string>

#include "moediff/error.hpp"

namespace moediff {

Matrix2D::Matrix2D(int rows, int cols)
    : rows_(rows), cols_(cols), data_(static_cast<std::size_t>(rows) * cols, 0.0) {
    if (rows < 0 || cols < 0) {
        throw ShapeError("negative matrix dimensions " + shape_str());
    }
}

Matrix2D::Matrix2D(int rows, int cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != static_cast<std::size_t>(rows) * cols) {
        throw ShapeError("data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_str());
    }
}

Matrix2D::Matrix2D(std::initializer_list<std::initializer_list<double>> rows) {
    rows_ = static_cast<int>(rows.size());
    cols_ = rows_ > 0 ? static_cast<int>(rows.begin()->size()) : 0;
    data_.reserve(static_cast<std::size_t>(rows_) * cols_);
    for (const auto& r : rows) {
        if (static_cast<int>(r.size()) != cols_) {
            throw ShapeError("ragged initializer rows");
        }
        data_.insert(data_.end(), r.begin(), r.end());
    }
}

Matrix2D Matrix2D::identity(int n) {
    Matrix2D m(n, n);
    for (int i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
}

Matrix2D Matrix2D::full(int rows, int cols, double value) {
    Matrix2D m(rows, cols);
    for (auto& x : m.data_) x = value;
    return m;
}

Matrix2D Matrix2D::row_vector(std::span<const double> v) {
    return Matrix2D(1, static_cast<int>(v.size()), std::vector<double>(v.begin(), v.end()));
}

std::span<double> Matrix2D::row_span(int r) {
    return {data_.data() + static_cast<std::size_t>(r) * cols_, static_cast<std::size_t>(cols_)};
}

std::span<const double> Matrix2D::row_span(int r) const {
    return {data_.data() + static_cast<std::size_t>(r) * cols_, static_cast<std::size_t>(cols_)};
}

bool Matrix2D::is_finite() const noexcept {
    for (double x : data_) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

Matrix2D Matrix2D::row_copy(int r) const {
    if (r < 0 || r >= rows_) {
        throw ShapeError("row index " + std::to_string(r) + " out of range for " + shape_str());
    }
    return row_vector(row_span(r));
}

void Matrix2D::set_row(int r, std::span<const double> v) {
    if (static_cast<int>(v.size()) != cols_) {
        throw ShapeError("row length " + std::to_string(v.size()) + " vs " + shape_str());
    }
    std::memcpy(row_span(r).data(), v.data(), sizeof(double) * v.size());
}

std::string Matrix2D::shape_str() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
}

Matrix2D matmul(const Matrix2D& a, const Matrix2D& b) {
    if (a.cols() != b.rows()) {
        throw ShapeError("matmul shape mismatch: " + a.shape_str() + " * " + b.shape_str());
    }
    Matrix2D out(a.rows(), b.cols());
    for (int i = 0; i < a.rows(); ++i) {
        for (int k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            if (aik == 0.0) continue;
            for (int j = 0; j < b.cols(); ++j) {
                out(i, j) += aik * b(k, j);
            }
        }
    }
    return out;
}

Matrix2D matmul_nt(const Matrix2D& a, const Matrix2D& b) {
    if (a.cols() != b.cols()) {
        throw ShapeError("matmul_nt shape mismatch: " + a.shape_str() + " * " + b.shape_str() +
                         "^T");
    }
    Matrix2D out(a.rows(), b.rows());
    for (int i = 0; i < a.rows(); ++i) {
        for (int j = 0; j < b.rows(); ++j) {
            double s = 0.0;
            for (int k = 0; k < a.cols(); ++k) s += a(i, k) * b(j, k);
            out(i, j) = s;
        }
    }
    return out;
}

Matrix2D matmul_tn(const Matrix2D& a, const Matrix2D& b) {
    if (a.rows() != b.rows()) {
        throw ShapeError("matmul_tn shape mismatch: " + a.shape_str() + "^T * " + b.shape_str());
    }
    Matrix2D out(a.cols(), b.cols());
    for (int k = 0; k < a.rows(); ++k) {
        for (int i = 0; i < a.cols(); ++i) {
            const double aki = a(k, i);
            if (aki == 0.0) continue;
            for (int j = 0; j < b.cols(); ++j) {
                out(i, j) += aki * b(k, j);
            }
        }
    }
    return out;
}

Matrix2D transpose(const Matrix2D& a) {
    Matrix2D out(a.cols(), a.rows());
    for (int i = 0; i < a.rows(); ++i) {
        for (int j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
    }
    return out;
}

namespace {

void require_same_shape(const Matrix2D& a, const Matrix2D& b, const char* op) {
    if (!a.same_shape(b)) {
        throw ShapeError(std::string(op) + " shape mismatch: " + a.shape_str() + " vs " +
                         b.shape_str());
    }
}

}  // namespace

Matrix2D add(const Matrix2D& a, const Matrix2D& b) {
    require_same_shape(a, b, "add");
    Matrix2D out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] += b.data()[i];
    return out;
}

Matrix2D sub(const Matrix2D& a, const Matrix2D& b) {
    require_same_shape(a, b, "sub");
    Matrix2D out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] -= b.data()[i];
    return out;
}

Matrix2D scale(const Matrix2D& a, double c) {
    Matrix2D out = a;
    for (auto& x : out.data()) x *= c;
    return out;
}

Matrix2D hadamard(const Matrix2D& a, const Matrix2D& b) {
    require_same_shape(a, b, "hadamard");
    Matrix2D out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.data()[i] *= b.data()[i];
    return out;
}

Matrix2D add_rowvec(const Matrix2D& a, const Matrix2D& v) {
    if (v.rows() != 1 || v.cols() != a.cols()) {
        throw ShapeError("add_rowvec shape mismatch: " + a.shape_str() + " + " + v.shape_str());
    }
    Matrix2D out = a;
    for (int i = 0; i < a.rows(); ++i) {
        for (int j = 0; j < a.cols(); ++j) out(i, j) += v(0, j);
    }
    return out;
}

Matrix2D broadcast_rows(const Matrix2D& v, int rows) {
    if (v.rows() != 1) {
        throw ShapeError("broadcast_rows needs a 1-row vector, got " + v.shape_str());
    }
    Matrix2D out(rows, v.cols());
    for (int i = 0; i < rows; ++i) out.set_row(i, v.row_span(0));
    return out;
}

Matrix2D stack_rows(const std::vector<Matrix2D>& rows) {
    if (rows.empty()) throw ShapeError("stack_rows on empty list");
    const int cols = rows.front().cols();
    Matrix2D out(static_cast<int>(rows.size()), cols);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].rows() != 1 || rows[i].cols() != cols) {
            throw ShapeError("stack_rows mismatched row " + rows[i].shape_str());
        }
        out.set_row(static_cast<int>(i), rows[i].row_span(0));
    }
    return out;
}

double sum_sq(const Matrix2D& a) {
    double s = 0.0;
    for (double x : a.data()) s += x * x;
    return s;
}

double frobenius_dist(const Matrix2D& a, const Matrix2D& b) {
    require_same_shape(a, b, "frobenius_dist");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a.data()[i] - b.data()[i];
        s += d * d;
    }
    return std::sqrt(s);
}

bool bit_equal(const Matrix2D& a, const Matrix2D& b) {
    if (!a.same_shape(b)) return false;
    return std::memcmp(a.data().data(), b.data().data(), a.size() * sizeof(double)) == 0;
}

double max_abs_diff(const Matrix2D& a, const Matrix2D& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        m = std::max(m, std::fabs(a.data()[i] - b.data()[i]));
    }
    return m;
}

}  // namespace moediff
