#pragma once

#include "moediff/engine.hpp"
#include "moediff/matrix.hpp"
#include "moediff/rng.hpp"

namespace moediff {

/// Trainable low-rank residual for a frozen weight. Standard init: up is all
/// zero so the effective weight equals the frozen base exactly at step 0,
/// down is small Gaussian (std 0.02).
struct LoraDelta {
    Matrix2D down;  // d_in x r
    Matrix2D up;    // r x d_out
    int rank = 0;
    double scaling = 1.0;

    static LoraDelta init(int d_in, int d_out, int rank, double scaling, SeededRng& rng);
};

/// A frozen linear weight plus its LoRA residual. The base is never touched
/// by training; only down/up receive gradients.
struct LoraLinear {
    Matrix2D base;  // d_in x d_out, frozen
    LoraDelta delta;

    Matrix2D effective() const;                 // base + scaling * down * up
    Matrix2D apply(const Matrix2D& x) const;    // x * effective
};

/// Effective weight on either execution engine. The frozen base enters as a
/// constant, so it receives no gradient by construction.
template <class E>
typename E::H lora_weight(E& eng, const Matrix2D& base, const LoraDelta& d) {
    auto prod = eng.matmul(eng.use_param(d.down), eng.use_param(d.up));
    return eng.add(eng.use(base), eng.scale(prod, d.scaling));
}

}  // namespace moediff
