#pragma once

#include <functional>
#include <string>
#include <vector>

#include "moediff/attention.hpp"
#include "moediff/router.hpp"

namespace moediff {

struct ModelDims {
    int tokens = 16;  // m, latent grid rows
    int dim = 8;      // d, feature width
    int text_dim = 8;
    int layers = 2;
    int conditions = 2;
    int experts = 4;
    int top_k = 2;
    int lora_rank = 4;
    double lora_scaling = 1.0;
    int expert_hidden = 16;

    void validate() const;
};

/// Text conditioning stand-in: one plain cross-attention over the text
/// embedding (a single key/value token) with frozen base plus one LoRA pair.
struct TextAttnParams {
    Matrix2D wq;  // d x d, frozen
    Matrix2D wk;  // d_txt x d, frozen
    Matrix2D wv;  // d_txt x d, frozen
    LoraDelta k_delta;
    LoraDelta v_delta;
};

/// One denoiser layer: the attention block (fitting self-attention bases +
/// per-condition LoRA, cross streams, inject combine), one gate and expert
/// bank per condition stream, and the text cross-attention.
struct DenoiserLayer {
    AttentionBlockParams attn;
    std::vector<GateParams> gates;
    std::vector<ExpertBank> experts;
    TextAttnParams text;
};

class DenoiserModel {
public:
    ModelDims dims;
    std::vector<DenoiserLayer> layers;
    Matrix2D null_cond;  // 1 x d, learned empty condition token
    Matrix2D null_text;  // 1 x d_txt, learned empty text embedding

    static DenoiserModel init(const ModelDims& dims, SeededRng& rng);

    /// Canonical traversal of trainable matrices (LoRA factors, gate weights,
    /// expert MLPs, null embeddings). Order is fixed; the gradient vectors
    /// produced by the losses align with it.
    void visit_trainable(const std::function<void(const std::string&, Matrix2D&)>& fn);
    void visit_trainable(const std::function<void(const std::string&, const Matrix2D&)>& fn) const;

    /// Frozen matrices: attention bases and text projection bases.
    void visit_frozen(const std::function<void(const std::string&, const Matrix2D&)>& fn) const;

    std::size_t trainable_count() const;
    std::uint64_t trainable_hash() const;
    std::uint64_t frozen_hash() const;
    std::uint64_t full_hash() const;

    std::vector<double> flatten_trainable() const;
    void unflatten_trainable(const std::vector<double>& flat);
};

/// Gradients aligned with DenoiserModel::visit_trainable order.
struct LossGrads {
    double value = 0.0;
    std::vector<Matrix2D> grads;

    double grad_norm() const;
};

/// p <- p - lr * g over all trainable matrices.
void sgd_step(DenoiserModel& model, const std::vector<Matrix2D>& grads, double learning_rate);

}  // namespace moediff
