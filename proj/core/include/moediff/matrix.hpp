#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace moediff {

/// Dense row-major matrix of doubles. The only tensor type in the project:
/// token grids, weights, single rows (1 x c) and scalars (1 x 1) all use it.
class Matrix2D {
public:
    Matrix2D() = default;
    Matrix2D(int rows, int cols);                            // zero-filled
    Matrix2D(int rows, int cols, std::vector<double> data);  // takes ownership
    Matrix2D(std::initializer_list<std::initializer_list<double>> rows);

    static Matrix2D identity(int n);
    static Matrix2D full(int rows, int cols, double value);
    static Matrix2D row_vector(std::span<const double> v);

    int rows() const noexcept { return rows_; }
    int cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }

    double& operator()(int r, int c) { return data_[static_cast<std::size_t>(r) * cols_ + c]; }
    double operator()(int r, int c) const { return data_[static_cast<std::size_t>(r) * cols_ + c]; }

    std::span<double> row_span(int r);
    std::span<const double> row_span(int r) const;

    std::vector<double>& data() noexcept { return data_; }
    const std::vector<double>& data() const noexcept { return data_; }

    bool same_shape(const Matrix2D& o) const noexcept {
        return rows_ == o.rows_ && cols_ == o.cols_;
    }
    bool is_finite() const noexcept;

    Matrix2D row_copy(int r) const;  // 1 x cols
    void set_row(int r, std::span<const double> v);

    std::string shape_str() const;  // "RxC", used in shape-error messages

private:
    int rows_ = 0;
    int cols_ = 0;
    std::vector<double> data_;
};

// ---- free operations -------------------------------------------------------
// matmul throws ShapeError naming both shapes; the rest follow the same rule.

Matrix2D matmul(const Matrix2D& a, const Matrix2D& b);
Matrix2D matmul_nt(const Matrix2D& a, const Matrix2D& b);  // a * b^T
Matrix2D matmul_tn(const Matrix2D& a, const Matrix2D& b);  // a^T * b
Matrix2D transpose(const Matrix2D& a);
Matrix2D add(const Matrix2D& a, const Matrix2D& b);
Matrix2D sub(const Matrix2D& a, const Matrix2D& b);
Matrix2D scale(const Matrix2D& a, double c);
Matrix2D hadamard(const Matrix2D& a, const Matrix2D& b);
Matrix2D add_rowvec(const Matrix2D& a, const Matrix2D& v);       // v is 1 x cols
Matrix2D broadcast_rows(const Matrix2D& v, int rows);            // tile 1 x c row
Matrix2D stack_rows(const std::vector<Matrix2D>& rows);          // each 1 x c

double sum_sq(const Matrix2D& a);
double frobenius_dist(const Matrix2D& a, const Matrix2D& b);
bool bit_equal(const Matrix2D& a, const Matrix2D& b);
double max_abs_diff(const Matrix2D& a, const Matrix2D& b);

}  // namespace moediff
