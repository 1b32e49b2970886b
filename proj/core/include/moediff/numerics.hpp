#pragma once

#include <functional>
#include <span>
#include <vector>

#include "moediff/matrix.hpp"

namespace moediff {

/// Row-wise softmax of `scale * m`, stabilized by row-max subtraction.
/// Each output row sums to 1; entries are in (0, 1]. The 1/sqrt(d) attention
/// scaling is applied by the caller through `scale`.
Matrix2D softmax_rows(const Matrix2D& m, double scale);

/// ln(1 + e^x), overflow-safe for large |x|.
double softplus(double x);

/// Logistic sigmoid, in (0, 1).
double sigmoid(double x);

/// -ln(sigmoid(x)) == ln(1 + e^-x), evaluated without overflow. This is the
/// numerically safe form of the preference loss link function.
double neg_log_sigmoid(double x);

/// Cosine similarity in [-1, 1]. Throws DataError if either norm is zero.
double cosine_sim(std::span<const double> u, std::span<const double> v);

/// Z-score with the population standard deviation. Zero-variance input
/// (std <= 1e-12) returns an all-zero vector; length < 2 throws DataError.
std::vector<double> zscore(std::span<const double> values);

/// Central finite differences (f(x+h e_i) - f(x-h e_i)) / 2h per coordinate.
/// The gradient oracle every analytic gradient in the project is checked
/// against.
std::vector<double> finite_diff_grad(const std::function<double(const std::vector<double>&)>& f,
                                     const std::vector<double>& x, double h);

/// Sinusoidal position code of width `dim` for integer step `t`.
Matrix2D timestep_embedding(int t, int dim);

// Elementwise matrix maps shared by the plain and tape execution paths.
Matrix2D softplus_mat(const Matrix2D& m);
Matrix2D sigmoid_mat(const Matrix2D& m);
Matrix2D tanh_mat(const Matrix2D& m);

}  // namespace moediff
