#pragma once

#include <unordered_map>
#include <vector>

#include "moediff/error.hpp"
#include "moediff/matrix.hpp"
#include "moediff/numerics.hpp"
#include "moediff/tape.hpp"

namespace moediff {

/// The network forward pass is written once as templates over an execution
/// engine. PlainEngine computes values directly; TapeEngine records the same
/// arithmetic on an autodiff tape. Keeping one implementation guarantees the
/// no-grad and grad paths produce bit-identical values.
class PlainEngine {
public:
    using H = Matrix2D;

    H use(const Matrix2D& m) const { return m; }
    H use_param(const Matrix2D& m) const { return m; }
    const Matrix2D& value(const H& h) const { return h; }

    H matmul(const H& a, const H& b) const { return moediff::matmul(a, b); }
    H matmul_nt(const H& a, const H& b) const { return moediff::matmul_nt(a, b); }
    H add(const H& a, const H& b) const { return moediff::add(a, b); }
    H sub(const H& a, const H& b) const { return moediff::sub(a, b); }
    H scale(const H& a, double c) const { return moediff::scale(a, c); }
    H hadamard(const H& a, const H& b) const { return moediff::hadamard(a, b); }
    H scalar_mul(const H& s, const H& a) const { return moediff::scale(a, s(0, 0)); }
    H softmax_rows(const H& a, double scale) const { return moediff::softmax_rows(a, scale); }
    H softplus(const H& a) const { return softplus_mat(a); }
    H tanh_act(const H& a) const { return tanh_mat(a); }
    H add_rowvec(const H& a, const H& v) const { return moediff::add_rowvec(a, v); }
    H broadcast_rows(const H& v, int rows) const { return moediff::broadcast_rows(v, rows); }
    H row(const H& a, int r) const { return a.row_copy(r); }
    H stack_rows(const std::vector<H>& rows) const { return moediff::stack_rows(rows); }
    H gather_cols(const H& a, const std::vector<int>& idx) const {
        if (a.rows() != 1) throw ShapeError("gather_cols expects 1-row vector");
        Matrix2D out(1, static_cast<int>(idx.size()));
        for (std::size_t j = 0; j < idx.size(); ++j) out(0, static_cast<int>(j)) = a(0, idx[j]);
        return out;
    }
    H sum_sq(const H& a) const {
        Matrix2D out(1, 1);
        out(0, 0) = moediff::sum_sq(a);
        return out;
    }
};

class TapeEngine {
public:
    using H = Tape::Id;

    explicit TapeEngine(Tape& tape) : tape_(&tape) {}

    H use(const Matrix2D& m) { return tape_->constant(m); }

    /// Binds a trainable matrix by address; repeated uses share one leaf so
    /// gradients accumulate across all appearances.
    H use_param(const Matrix2D& m) {
        auto it = bound_.find(&m);
        if (it != bound_.end()) return it->second;
        const H id = tape_->param(m);
        bound_.emplace(&m, id);
        return id;
    }

    const Matrix2D& value(H h) const { return tape_->value(h); }

    H matmul(H a, H b) { return tape_->matmul(a, b); }
    H matmul_nt(H a, H b) { return tape_->matmul_nt(a, b); }
    H add(H a, H b) { return tape_->add(a, b); }
    H sub(H a, H b) { return tape_->sub(a, b); }
    H scale(H a, double c) { return tape_->scale(a, c); }
    H hadamard(H a, H b) { return tape_->hadamard(a, b); }
    H scalar_mul(H s, H a) { return tape_->scalar_mul(s, a); }
    H softmax_rows(H a, double scale) { return tape_->softmax_rows(a, scale); }
    H softplus(H a) { return tape_->softplus(a); }
    H tanh_act(H a) { return tape_->tanh_act(a); }
    H add_rowvec(H a, H v) { return tape_->add_rowvec(a, v); }
    H broadcast_rows(H v, int rows) { return tape_->broadcast_rows(v, rows); }
    H row(H a, int r) { return tape_->row(a, r); }
    H stack_rows(const std::vector<H>& rows) { return tape_->stack_rows(rows); }
    H gather_cols(H a, const std::vector<int>& idx) { return tape_->gather_cols(a, idx); }
    H sum_sq(H a) { return tape_->sum_sq(a); }

    void backward(H root) { tape_->backward(root); }

    /// Gradient for a bound matrix; zero matrix if it never entered the graph.
    Matrix2D grad_of(const Matrix2D& m) const {
        auto it = bound_.find(&m);
        if (it == bound_.end()) return Matrix2D(m.rows(), m.cols());
        return tape_->grad(it->second);
    }

    Tape& tape() { return *tape_; }

private:
    Tape* tape_;
    std::unordered_map<const Matrix2D*, H> bound_;
};

}  // namespace moediff
