#include "moediff/numerics.hpp"

#include <algorithm>
#include <cmath>

#include "moediff/error.hpp"

namespace moediff {

Matrix2D softmax_rows(const Matrix2D& m, double scale) {
    Matrix2D out(m.rows(), m.cols());
    for (int i = 0; i < m.rows(); ++i) {
        double mx = -HUGE_VAL;
        for (int j = 0; j < m.cols(); ++j) mx = std::max(mx, scale * m(i, j));
        double sum = 0.0;
        for (int j = 0; j < m.cols(); ++j) {
            const double e = std::exp(scale * m(i, j) - mx);
            out(i, j) = e;
            sum += e;
        }
        for (int j = 0; j < m.cols(); ++j) out(i, j) /= sum;
    }
    return out;
}

double softplus(double x) {
    // For large x, ln(1+e^x) = x + ln(1+e^-x); for very negative x, e^x directly.
    if (x > 0.0) return x + std::log1p(std::exp(-x));
    return std::log1p(std::exp(x));
}

double sigmoid(double x) {
    if (x >= 0.0) {
        return 1.0 / (1.0 + std::exp(-x));
    }
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double neg_log_sigmoid(double x) { return softplus(-x); }

double cosine_sim(std::span<const double> u, std::span<const double> v) {
    if (u.size() != v.size()) {
        throw ShapeError("cosine_sim length mismatch: " + std::to_string(u.size()) + " vs " +
                         std::to_string(v.size()));
    }
    double dot = 0.0, nu = 0.0, nv = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        dot += u[i] * v[i];
        nu += u[i] * u[i];
        nv += v[i] * v[i];
    }
    if (nu == 0.0 || nv == 0.0) {
        throw DataError("cosine_sim: zero-norm vector");
    }
    return std::clamp(dot / (std::sqrt(nu) * std::sqrt(nv)), -1.0, 1.0);
}

std::vector<double> zscore(std::span<const double> values) {
    const std::size_t n = values.size();
    if (n < 2) {
        throw DataError("zscore needs at least 2 samples, got " + std::to_string(n));
    }
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);  // population variance
    const double sd = std::sqrt(var);
    std::vector<double> out(n, 0.0);
    if (sd <= 1e-12) {
        return out;  // zero-variance convention: neutral contribution
    }
    for (std::size_t i = 0; i < n; ++i) out[i] = (values[i] - mean) / sd;
    return out;
}

std::vector<double> finite_diff_grad(const std::function<double(const std::vector<double>&)>& f,
                                     const std::vector<double>& x, double h) {
    if (h <= 0.0) throw ConfigError("finite_diff_grad: h must be positive");
    std::vector<double> grad(x.size(), 0.0);
    std::vector<double> p = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        p[i] = x[i] + h;
        const double fp = f(p);
        p[i] = x[i] - h;
        const double fm = f(p);
        p[i] = x[i];
        grad[i] = (fp - fm) / (2.0 * h);
    }
    return grad;
}

Matrix2D softplus_mat(const Matrix2D& m) {
    Matrix2D out = m;
    for (auto& x : out.data()) x = softplus(x);
    return out;
}

Matrix2D sigmoid_mat(const Matrix2D& m) {
    Matrix2D out = m;
    for (auto& x : out.data()) x = sigmoid(x);
    return out;
}

Matrix2D tanh_mat(const Matrix2D& m) {
    Matrix2D out = m;
    for (auto& x : out.data()) x = std::tanh(x);
    return out;
}

Matrix2D timestep_embedding(int t, int dim) {
    Matrix2D emb(1, dim);
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * (2.0 * i / dim));
        emb(0, 2 * i) = std::sin(t * freq);
        emb(0, 2 * i + 1) = std::cos(t * freq);
    }
    if (dim % 2 == 1) {
        emb(0, dim - 1) = std::sin(t * std::exp(-std::log(10000.0)));
    }
    return emb;
}

}  // namespace moediff
