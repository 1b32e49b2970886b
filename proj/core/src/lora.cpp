#include "moediff/lora.hpp"

namespace moediff {

LoraDelta LoraDelta::init(int d_in, int d_out, int rank, double scaling, SeededRng& rng) {
    LoraDelta d;
    d.down = rng.normal_matrix(d_in, rank, 0.02);
    d.up = Matrix2D(rank, d_out);  // zero: effective == base at step 0
    d.rank = rank;
    d.scaling = scaling;
    return d;
}

Matrix2D LoraLinear::effective() const {
    return add(base, scale(matmul(delta.down, delta.up), delta.scaling));
}

Matrix2D LoraLinear::apply(const Matrix2D& x) const { return matmul(x, effective()); }

}  // namespace moediff
