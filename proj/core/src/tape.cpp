#include "moediff/tape.hpp"

#include <cmath>
#include <utility>

#include "moediff/error.hpp"
#include "moediff/numerics.hpp"

namespace moediff {

Tape::Id Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<Id>(nodes_.size() - 1);
}

Tape::Id Tape::constant(Matrix2D v) {
    Node n;
    n.value = std::move(v);
    return push(std::move(n));
}

Tape::Id Tape::param(Matrix2D v) {
    Node n;
    n.value = std::move(v);
    n.needs_grad = true;
    return push(std::move(n));
}

#define MOEDIFF_BINOP(name, OPCODE, expr)                                    \
    Tape::Id Tape::name(Id a, Id b) {                                        \
        Node n;                                                              \
        n.op = Op::OPCODE;                                                   \
        n.a = a;                                                             \
        n.b = b;                                                             \
        n.value = expr(nodes_[a].value, nodes_[b].value);                    \
        n.needs_grad = nodes_[a].needs_grad || nodes_[b].needs_grad;         \
        return push(std::move(n));                                           \
    }

MOEDIFF_BINOP(matmul, MatMul, moediff::matmul)
MOEDIFF_BINOP(matmul_nt, MatMulNT, moediff::matmul_nt)
MOEDIFF_BINOP(add, Add, moediff::add)
MOEDIFF_BINOP(sub, Sub, moediff::sub)
MOEDIFF_BINOP(hadamard, Hadamard, moediff::hadamard)
MOEDIFF_BINOP(add_rowvec, AddRowVec, moediff::add_rowvec)

#undef MOEDIFF_BINOP

Tape::Id Tape::scale(Id a, double c) {
    Node n;
    n.op = Op::Scale;
    n.a = a;
    n.factor = c;
    n.value = moediff::scale(nodes_[a].value, c);
    n.needs_grad = nodes_[a].needs_grad;
    return push(std::move(n));
}

Tape::Id Tape::scalar_mul(Id s, Id a) {
    const Matrix2D& sv = nodes_[s].value;
    if (sv.rows() != 1 || sv.cols() != 1) {
        throw ShapeError("scalar_mul: scalar operand is " + sv.shape_str());
    }
    Node n;
    n.op = Op::ScalarMul;
    n.a = s;
    n.b = a;
    n.value = moediff::scale(nodes_[a].value, sv(0, 0));
    n.needs_grad = nodes_[s].needs_grad || nodes_[a].needs_grad;
    return push(std::move(n));
}

Tape::Id Tape::softmax_rows(Id a, double scale) {
    Node n;
    n.op = Op::SoftmaxRows;
    n.a = a;
    n.factor = scale;
    n.value = moediff::softmax_rows(nodes_[a].value, scale);
    n.needs_grad = nodes_[a].needs_grad;
    return push(std::move(n));
}

Tape::Id Tape::softplus(Id a) {
    Node n;
    n.op = Op::Softplus;
    n.a = a;
    n.value = softplus_mat(nodes_[a].value);
    n.needs_grad = nodes_[a].needs_grad;
    return push(std::move(n));
}

Tape::Id Tape::tanh_act(Id a) {
    Node n;
    n.op = Op::Tanh;
    n.a = a;
    n.value = tanh_mat(nodes_[a].value);
    n.needs_grad = nodes_[a].needs_grad;
    return push(std::move(n));
}

Tape::Id Tape::broadcast_rows(Id v, int rows) {
    Node n;
    n.op = Op::BroadcastRows;
    n.a = v;
    n.value = moediff::broadcast_rows(nodes_[v].value, rows);
    n.needs_grad = nodes_[v].needs_grad;
    return push(std::move(n));
}

Tape::Id Tape::row(Id a, int r) {
    Node n;
    n.op = Op::Row;
    n.a = a;
    n.row_index = r;
    n.value = nodes_[a].value.row_copy(r);
    n.needs_grad = nodes_[a].needs_grad;
    return push(std::move(n));
}

Tape::Id Tape::stack_rows(const std::vector<Id>& rows) {
    std::vector<Matrix2D> vals;
    vals.reserve(rows.size());
    bool any_grad = false;
    for (Id id : rows) {
        vals.push_back(nodes_[id].value);
        any_grad = any_grad || nodes_[id].needs_grad;
    }
    Node n;
    n.op = Op::StackRows;
    n.srcs = rows;
    n.value = moediff::stack_rows(vals);
    n.needs_grad = any_grad;
    return push(std::move(n));
}

Tape::Id Tape::gather_cols(Id a, std::vector<int> idx) {
    const Matrix2D& av = nodes_[a].value;
    if (av.rows() != 1) {
        throw ShapeError("gather_cols expects a 1-row vector, got " + av.shape_str());
    }
    Matrix2D out(1, static_cast<int>(idx.size()));
    for (std::size_t j = 0; j < idx.size(); ++j) {
        if (idx[j] < 0 || idx[j] >= av.cols()) {
            throw ShapeError("gather_cols index out of range");
        }
        out(0, static_cast<int>(j)) = av(0, idx[j]);
    }
    Node n;
    n.op = Op::GatherCols;
    n.a = a;
    n.idx = std::move(idx);
    n.value = std::move(out);
    n.needs_grad = nodes_[a].needs_grad;
    return push(std::move(n));
}

Tape::Id Tape::sum_sq(Id a) {
    Node n;
    n.op = Op::SumSq;
    n.a = a;
    Matrix2D out(1, 1);
    out(0, 0) = moediff::sum_sq(nodes_[a].value);
    n.value = std::move(out);
    n.needs_grad = nodes_[a].needs_grad;
    return push(std::move(n));
}

void Tape::accumulate(Id id, const Matrix2D& g) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return;
    if (n.grad.rows() == 0) {
        n.grad = g;
    } else {
        n.grad = moediff::add(n.grad, g);
    }
}

void Tape::backward(Id root) {
    const Matrix2D& rv = nodes_[root].value;
    if (rv.rows() != 1 || rv.cols() != 1) {
        throw ShapeError("backward root must be 1x1, got " + rv.shape_str());
    }
    for (auto& n : nodes_) n.grad = Matrix2D();
    swept_ = true;
    Matrix2D seed(1, 1);
    seed(0, 0) = 1.0;
    accumulate(root, seed);
    for (Id id = root; id >= 0; --id) {
        backprop_node(id);
    }
}

void Tape::backprop_node(Id id) {
    Node& n = nodes_[id];
    if (!n.needs_grad || n.grad.rows() == 0) return;
    const Matrix2D& g = n.grad;
    switch (n.op) {
        case Op::Leaf:
            break;
        case Op::MatMul:
            accumulate(n.a, moediff::matmul_nt(g, nodes_[n.b].value));
            accumulate(n.b, matmul_tn(nodes_[n.a].value, g));
            break;
        case Op::MatMulNT:
            accumulate(n.a, moediff::matmul(g, nodes_[n.b].value));
            accumulate(n.b, matmul_tn(g, nodes_[n.a].value));
            break;
        case Op::Add:
            accumulate(n.a, g);
            accumulate(n.b, g);
            break;
        case Op::Sub:
            accumulate(n.a, g);
            accumulate(n.b, moediff::scale(g, -1.0));
            break;
        case Op::Scale:
            accumulate(n.a, moediff::scale(g, n.factor));
            break;
        case Op::Hadamard:
            accumulate(n.a, moediff::hadamard(g, nodes_[n.b].value));
            accumulate(n.b, moediff::hadamard(g, nodes_[n.a].value));
            break;
        case Op::ScalarMul: {
            const double s = nodes_[n.a].value(0, 0);
            Matrix2D gs(1, 1);
            double dot = 0.0;
            const Matrix2D& av = nodes_[n.b].value;
            for (std::size_t i = 0; i < av.size(); ++i) dot += g.data()[i] * av.data()[i];
            gs(0, 0) = dot;
            accumulate(n.a, gs);
            accumulate(n.b, moediff::scale(g, s));
            break;
        }
        case Op::SoftmaxRows: {
            const Matrix2D& y = n.value;
            Matrix2D gx(y.rows(), y.cols());
            for (int i = 0; i < y.rows(); ++i) {
                double dot = 0.0;
                for (int j = 0; j < y.cols(); ++j) dot += g(i, j) * y(i, j);
                for (int j = 0; j < y.cols(); ++j) {
                    gx(i, j) = n.factor * y(i, j) * (g(i, j) - dot);
                }
            }
            accumulate(n.a, gx);
            break;
        }
        case Op::Softplus:
            accumulate(n.a, moediff::hadamard(g, sigmoid_mat(nodes_[n.a].value)));
            break;
        case Op::Tanh: {
            Matrix2D d = n.value;
            for (auto& x : d.data()) x = 1.0 - x * x;
            accumulate(n.a, moediff::hadamard(g, d));
            break;
        }
        case Op::AddRowVec: {
            accumulate(n.a, g);
            Matrix2D gv(1, g.cols());
            for (int i = 0; i < g.rows(); ++i) {
                for (int j = 0; j < g.cols(); ++j) gv(0, j) += g(i, j);
            }
            accumulate(n.b, gv);
            break;
        }
        case Op::BroadcastRows: {
            Matrix2D gv(1, g.cols());
            for (int i = 0; i < g.rows(); ++i) {
                for (int j = 0; j < g.cols(); ++j) gv(0, j) += g(i, j);
            }
            accumulate(n.a, gv);
            break;
        }
        case Op::Row: {
            Matrix2D ga(nodes_[n.a].value.rows(), nodes_[n.a].value.cols());
            ga.set_row(n.row_index, g.row_span(0));
            accumulate(n.a, ga);
            break;
        }
        case Op::StackRows: {
            for (std::size_t i = 0; i < n.srcs.size(); ++i) {
                accumulate(n.srcs[i], g.row_copy(static_cast<int>(i)));
            }
            break;
        }
        case Op::GatherCols: {
            Matrix2D ga(1, nodes_[n.a].value.cols());
            for (std::size_t j = 0; j < n.idx.size(); ++j) {
                ga(0, n.idx[j]) += g(0, static_cast<int>(j));
            }
            accumulate(n.a, ga);
            break;
        }
        case Op::SumSq:
            accumulate(n.a, moediff::scale(nodes_[n.a].value, 2.0 * g(0, 0)));
            break;
    }
}

Matrix2D Tape::grad(Id id) const {
    const Node& n = nodes_[id];
    if (n.grad.rows() != 0) return n.grad;
    return Matrix2D(n.value.rows(), n.value.cols());
}

}  // namespace moediff
