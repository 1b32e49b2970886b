#pragma once

#include <cstdint>
#include <vector>

#include "moediff/matrix.hpp"

namespace moediff {

/// Reverse-mode autodiff over Matrix2D values. Forward values are computed
/// eagerly (the router needs them for top-k selection), backward is a single
/// reverse sweep from a 1x1 root. Node ids are topologically ordered by
/// construction, so the sweep is just a descending loop.
///
/// Every forward op calls the same free functions the plain execution path
/// uses, so a value computed through the tape is bit-identical to the same
/// computation done without it.
class Tape {
public:
    using Id = std::int32_t;

    Id constant(Matrix2D v);
    Id param(Matrix2D v);  // leaf that accumulates a gradient

    Id matmul(Id a, Id b);
    Id matmul_nt(Id a, Id b);  // a * b^T
    Id add(Id a, Id b);
    Id sub(Id a, Id b);
    Id scale(Id a, double c);
    Id hadamard(Id a, Id b);
    Id scalar_mul(Id s, Id a);  // s is 1x1
    Id softmax_rows(Id a, double scale);
    Id softplus(Id a);
    Id tanh_act(Id a);
    Id add_rowvec(Id a, Id v);           // v is 1 x cols(a)
    Id broadcast_rows(Id v, int rows);   // v is 1 x c
    Id row(Id a, int r);                 // 1 x cols(a)
    Id stack_rows(const std::vector<Id>& rows);
    Id gather_cols(Id a, std::vector<int> idx);  // a is 1 x n
    Id sum_sq(Id a);                             // 1 x 1

    const Matrix2D& value(Id id) const { return nodes_[id].value; }
    bool needs_grad(Id id) const { return nodes_[id].needs_grad; }
    std::size_t node_count() const noexcept { return nodes_.size(); }

    /// Seeds d(root)/d(root) = 1 and accumulates gradients into every node
    /// with needs_grad. Root must be 1x1.
    void backward(Id root);

    /// Gradient accumulated for `id` by the last backward() call. A zero
    /// matrix of the node's shape when nothing flowed.
    Matrix2D grad(Id id) const;

private:
    enum class Op : std::uint8_t {
        Leaf,
        MatMul,
        MatMulNT,
        Add,
        Sub,
        Scale,
        Hadamard,
        ScalarMul,
        SoftmaxRows,
        Softplus,
        Tanh,
        AddRowVec,
        BroadcastRows,
        Row,
        StackRows,
        GatherCols,
        SumSq,
    };

    struct Node {
        Op op = Op::Leaf;
        Id a = -1;
        Id b = -1;
        std::vector<Id> srcs;   // StackRows
        std::vector<int> idx;   // GatherCols
        int row_index = 0;      // Row
        double factor = 1.0;    // Scale / SoftmaxRows
        Matrix2D value;
        Matrix2D grad;
        bool needs_grad = false;
    };

    Id push(Node n);
    void accumulate(Id id, const Matrix2D& g);
    void backprop_node(Id id);

    std::vector<Node> nodes_;
    bool swept_ = false;
};

}  // namespace moediff
