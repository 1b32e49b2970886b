#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "moediff/model.hpp"
#include "moediff/numerics.hpp"
#include "moediff/schedule.hpp"

namespace moediff {

/// One noised latent: z = sqrt(ab_t) z0 + sqrt(1 - ab_t) eps.
struct LatentSample {
    Matrix2D z;
    int t = 0;
    Matrix2D eps;
};

/// Deterministic mixing rule (the noise is supplied).
Matrix2D noised_latent(const Matrix2D& z0, int t, const Matrix2D& eps,
                       const DiffusionSchedule& schedule);

/// Draws eps ~ N(0, I) and applies the mixing rule. Throws on t out of range.
LatentSample forward_noise(const Matrix2D& z0, int t, const DiffusionSchedule& schedule,
                           SeededRng& rng);

/// Pre-drawn gate noise for one forward pass: per layer, per condition
/// stream, an m x n matrix. Training draws one per step; replaying the same
/// object reproduces the forward exactly (which is what the gradient oracle
/// needs).
struct RouterNoise {
    std::vector<std::vector<Matrix2D>> per_layer;

    static RouterNoise draw(const ModelDims& dims, SeededRng& rng);
};

/// Which conditions/text get replaced by the learned null embeddings.
struct CondDropMask {
    std::vector<bool> feature_dropped;
    bool text_dropped = false;
};

CondDropMask draw_drop_mask(int n_conditions, double p, SeededRng& rng);

struct ForwardHooks {
    const RouterNoise* noise = nullptr;          // gate noise (training mode)
    std::vector<RoutingTrace>* traces = nullptr; // appended per layer per stream
    const CondDropMask* drop = nullptr;          // training-time condition dropout
};

// ---- the denoiser forward, engine-generic -----------------------------------

template <class E>
struct CondHandles {
    bool conditioned = false;
    std::vector<typename E::H> features;
    typename E::H text_row{};
};

template <class E>
CondHandles<E> bind_condition(E& eng, const DenoiserModel& model, const ConditionSet* cond,
                              const CondDropMask* drop) {
    CondHandles<E> ch;
    if (cond == nullptr || cond->count() == 0) return ch;  // unconditional branch
    if (cond->count() != model.dims.conditions) {
        throw ConfigError("condition count " + std::to_string(cond->count()) +
                          " does not match model (N=" + std::to_string(model.dims.conditions) +
                          ")");
    }
    if (static_cast<int>(cond->text_embedding.size()) != model.dims.text_dim) {
        throw ShapeError("text embedding length " + std::to_string(cond->text_embedding.size()) +
                         " vs d_txt=" + std::to_string(model.dims.text_dim));
    }
    ch.conditioned = true;
    for (int i = 0; i < cond->count(); ++i) {
        const Matrix2D& f = cond->features[i];
        if (f.cols() != model.dims.dim) {
            throw ShapeError("condition " + std::to_string(i) + " feature dim " + f.shape_str() +
                             " vs d=" + std::to_string(model.dims.dim));
        }
        const bool dropped = drop && i < static_cast<int>(drop->feature_dropped.size()) &&
                             drop->feature_dropped[i];
        if (dropped) {
            ch.features.push_back(
                eng.broadcast_rows(eng.use_param(model.null_cond), f.rows()));
        } else {
            ch.features.push_back(eng.use(f));
        }
    }
    if (drop && drop->text_dropped) {
        ch.text_row = eng.use_param(model.null_text);
    } else {
        ch.text_row = eng.use(Matrix2D::row_vector(cond->text_embedding));
    }
    return ch;
}

template <class E>
typename E::H text_attention_t(E& eng, typename E::H z, typename E::H text_row,
                               const TextAttnParams& p, double inv_sqrt_d) {
    auto q = eng.matmul(z, eng.use(p.wq));
    auto k = eng.matmul(text_row, lora_weight(eng, p.wk, p.k_delta));
    auto v = eng.matmul(text_row, lora_weight(eng, p.wv, p.v_delta));
    return scaled_dot_attention(eng, q, k, v, inv_sqrt_d);
}

/// Full pipeline: timestep embedding onto the tokens, then per layer the
/// fitting stack step (isolated self-attention over the condition features),
/// the per-condition cross-attention streams, token routing through the
/// experts, the inject-combine, and the text cross-attention. Fitting layer l
/// feeds denoiser layer l (mirrored depth). Unconditional input runs the
/// frozen self-attention backbone only.
template <class E>
typename E::H predict_noise_t(E& eng, const DenoiserModel& model, typename E::H z_t,
                              CondHandles<E>& ch, int t, const ForwardHooks& hooks = {}) {
    auto z = eng.add_rowvec(z_t, eng.use(timestep_embedding(t, model.dims.dim)));
    auto feats = ch.features;
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        const auto& layer = model.layers[l];
        if (ch.conditioned) {
            feats = isolated_self_attention_t(eng, feats, layer.attn);
            std::vector<typename E::H> refined;
            refined.reserve(feats.size());
            for (std::size_t i = 0; i < feats.size(); ++i) {
                auto u = cross_attention_stream_t(eng, z, feats[i], layer.attn,
                                                  static_cast<int>(i));
                const Matrix2D* gate_noise =
                    hooks.noise ? &hooks.noise->per_layer[l][i] : nullptr;
                RoutingTrace trace;
                trace.layer = static_cast<int>(l);
                auto fp = route_tokens_t(eng, u, layer.gates[i], layer.experts[i], gate_noise,
                                         hooks.traces ? &trace : nullptr);
                if (hooks.traces) hooks.traces->push_back(std::move(trace));
                refined.push_back(fp);
            }
            auto injected = inject_and_combine_t(eng, z, refined, layer.attn);
            auto text_out =
                text_attention_t(eng, z, ch.text_row, layer.text, layer.attn.inv_sqrt_dim());
            z = eng.add(injected, text_out);
        } else {
            z = inject_and_combine_t(eng, z, {}, layer.attn);
        }
    }
    return z;
}

// ---- plain public operations ------------------------------------------------

Matrix2D predict_noise(const DenoiserModel& model, const Matrix2D& z_t,
                       const std::optional<ConditionSet>& cond, int t,
                       const ForwardHooks& hooks = {});

/// MSE training loss at explicit (t, eps) with optional gate noise and
/// dropout mask: ||eps - eps_hat||^2 averaged over entries, with gradients
/// for every trainable matrix (visit order). Frozen bases get zero gradient
/// by construction.
LossGrads mse_loss_at(const DenoiserModel& model, const Matrix2D& z0,
                      const std::optional<ConditionSet>& cond, int t, const Matrix2D& eps,
                      const DiffusionSchedule& schedule, const RouterNoise* gate_noise = nullptr,
                      const CondDropMask* drop = nullptr);

/// Loss value only (no tape); the finite-difference oracle drives this.
double mse_loss_value(const DenoiserModel& model, const Matrix2D& z0,
                      const std::optional<ConditionSet>& cond, int t, const Matrix2D& eps,
                      const DiffusionSchedule& schedule, const RouterNoise* gate_noise = nullptr,
                      const CondDropMask* drop = nullptr);

/// Samples t uniform and eps Gaussian, draws gate noise (training mode), and
/// returns loss + gradients.
LossGrads mse_loss(const DenoiserModel& model, const Matrix2D& z0,
                   const std::optional<ConditionSet>& cond, const DiffusionSchedule& schedule,
                   SeededRng& rng, bool gate_noise = true, const CondDropMask* drop = nullptr);

/// Classifier-free guidance: omega * eps(z,C,P,t) + (1-omega) * eps(z,t).
Matrix2D cfg_predict(const DenoiserModel& model, const Matrix2D& z_t, const ConditionSet& cond,
                     int t, double omega, const ForwardHooks& cond_hooks = {});

/// Descending timestep subsequence for the sampler (hits T-1 and 0).
std::vector<int> ddim_timesteps(int schedule_steps, int sample_steps);

/// Deterministic DDIM update loop from a given start latent, driven by any
/// noise predictor. Exposed for oracle tests with analytic denoisers.
using DenoiseFn = std::function<Matrix2D(const Matrix2D& z, int t)>;
Matrix2D ddim_trajectory(const DenoiseFn& denoise, Matrix2D z_start,
                         const DiffusionSchedule& schedule, int steps);

/// z_T ~ N(0, I) from rng, then the deterministic (eta = 0) DDIM loop with
/// CFG at scale omega. Routing traces of the conditional forwards are
/// appended to hooks.traces when given.
Matrix2D ddim_sample(const DenoiserModel& model, const std::optional<ConditionSet>& cond,
                     const DiffusionSchedule& schedule, int steps, double omega, SeededRng& rng,
                     std::vector<RoutingTrace>* traces = nullptr);

/// Each condition (and the text embedding) is independently replaced by the
/// model's learned null embedding with probability p.
ConditionSet condition_dropout(const ConditionSet& cond, double p, SeededRng& rng,
                               const DenoiserModel& model);

}  // namespace moediff
