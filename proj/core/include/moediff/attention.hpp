#pragma once

#include <cmath>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "moediff/engine.hpp"
#include "moediff/lora.hpp"
#include "moediff/matrix.hpp"

namespace moediff {

/// One generation instance's visual conditions plus its text directive.
/// Order is significant: condition i always pairs with per-condition
/// parameter set i.
struct ConditionSet {
    std::vector<Matrix2D> features;      // N maps, each m_i x d
    std::vector<double> text_embedding;  // length d_txt

    int count() const noexcept { return static_cast<int>(features.size()); }
};

struct AttnBase {
    Matrix2D wq, wk, wv;  // frozen projections
};

struct CondSelfLora {
    LoraDelta q, k, v;
};

struct CondCrossLora {
    LoraDelta k, v;  // queries stay frozen in the cross streams
};

/// Parameters of one attention block: a shared frozen self-attention base
/// with per-condition (q,k,v) LoRA triples, and a shared frozen
/// cross-attention base with per-condition (k,v) LoRA pairs. Single-head;
/// softmax scale is 1/sqrt(dim).
struct AttentionBlockParams {
    AttnBase self_base;
    std::vector<CondSelfLora> self_lora;
    AttnBase cross_base;
    std::vector<CondCrossLora> cross_lora;
    int dim = 0;

    int condition_count() const noexcept { return static_cast<int>(self_lora.size()); }
    double inv_sqrt_dim() const { return 1.0 / std::sqrt(static_cast<double>(dim)); }

    static AttentionBlockParams init(int dim, int conditions, int rank, double scaling,
                                     SeededRng& rng);
    void validate() const;  // one LoRA set per condition per projection role
};

// ---- templated cores (shared by plain ops and the training graph) ----------

template <class E>
typename E::H scaled_dot_attention(E& eng, typename E::H q, typename E::H k, typename E::H v,
                                   double inv_sqrt_d) {
    auto scores = eng.matmul_nt(q, k);
    auto probs = eng.softmax_rows(scores, inv_sqrt_d);
    return eng.matmul(probs, v);
}

/// Per-condition isolated self-attention: condition i is projected with the
/// shared frozen base plus its own LoRA triple and attends only to itself.
/// No cross-condition information flow by construction.
template <class E>
std::vector<typename E::H> isolated_self_attention_t(E& eng,
                                                     const std::vector<typename E::H>& features,
                                                     const AttentionBlockParams& p) {
    std::vector<typename E::H> out;
    out.reserve(features.size());
    const double s = p.inv_sqrt_dim();
    for (std::size_t i = 0; i < features.size(); ++i) {
        const auto& f = features[i];
        auto q = eng.matmul(f, lora_weight(eng, p.self_base.wq, p.self_lora[i].q));
        auto k = eng.matmul(f, lora_weight(eng, p.self_base.wk, p.self_lora[i].k));
        auto v = eng.matmul(f, lora_weight(eng, p.self_base.wv, p.self_lora[i].v));
        out.push_back(scaled_dot_attention(eng, q, k, v, s));
    }
    return out;
}

/// Cross-attention stream i: queries come from the latent grid through the
/// frozen W_q (no LoRA on q), keys/values from the condition features through
/// the frozen base plus condition i's LoRA pair.
template <class E>
typename E::H cross_attention_stream_t(E& eng, typename E::H z, typename E::H f_i,
                                       const AttentionBlockParams& p, int i) {
    auto q = eng.matmul(z, eng.use(p.cross_base.wq));
    auto k = eng.matmul(f_i, lora_weight(eng, p.cross_base.wk, p.cross_lora[i].k));
    auto v = eng.matmul(f_i, lora_weight(eng, p.cross_base.wv, p.cross_lora[i].v));
    return scaled_dot_attention(eng, q, k, v, p.inv_sqrt_dim());
}

/// Final combine: frozen self-attention on the latent grid plus the sum of
/// the refined per-condition features.
template <class E>
typename E::H inject_and_combine_t(E& eng, typename E::H z,
                                   const std::vector<typename E::H>& refined,
                                   const AttentionBlockParams& p) {
    auto q = eng.matmul(z, eng.use(p.self_base.wq));
    auto k = eng.matmul(z, eng.use(p.self_base.wk));
    auto v = eng.matmul(z, eng.use(p.self_base.wv));
    auto out = scaled_dot_attention(eng, q, k, v, p.inv_sqrt_dim());
    for (const auto& r : refined) out = eng.add(out, r);
    return out;
}

// ---- plain public operations ------------------------------------------------

std::vector<Matrix2D> isolated_self_attention(const std::vector<Matrix2D>& features,
                                              const AttentionBlockParams& params);
Matrix2D cross_attention_stream(const Matrix2D& z, const Matrix2D& f_i,
                                const AttentionBlockParams& params, int i);
Matrix2D inject_and_combine(const Matrix2D& z, const std::vector<Matrix2D>& refined,
                            const AttentionBlockParams& params);

// ---- serialization (versioned JSON: shapes + row-major values + rank + scaling)

nlohmann::json matrix_to_json(const Matrix2D& m);
Matrix2D matrix_from_json(const nlohmann::json& j);
nlohmann::json lora_delta_to_json(const LoraDelta& d);
LoraDelta lora_delta_from_json(const nlohmann::json& j);
nlohmann::json attention_params_to_json(const AttentionBlockParams& p);
AttentionBlockParams attention_params_from_json(const nlohmann::json& j);

}  // namespace moediff
