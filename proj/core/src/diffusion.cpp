#include "moediff/diffusion.hpp"

#include <cmath>

#include "moediff/error.hpp"

namespace moediff {

Matrix2D noised_latent(const Matrix2D& z0, int t, const Matrix2D& eps,
                       const DiffusionSchedule& schedule) {
    if (t < 0 || t >= schedule.step_count) {
        throw ConfigError("timestep " + std::to_string(t) + " outside [0, T=" +
                          std::to_string(schedule.step_count) + ")");
    }
    if (!z0.same_shape(eps)) {
        throw ShapeError("noised_latent: z0 " + z0.shape_str() + " vs eps " + eps.shape_str());
    }
    const double ab = schedule.alpha_bar[t];
    return add(scale(z0, std::sqrt(ab)), scale(eps, std::sqrt(1.0 - ab)));
}

LatentSample forward_noise(const Matrix2D& z0, int t, const DiffusionSchedule& schedule,
                           SeededRng& rng) {
    LatentSample s;
    s.t = t;
    s.eps = rng.normal_matrix(z0.rows(), z0.cols());
    s.z = noised_latent(z0, t, s.eps, schedule);
    return s;
}

RouterNoise RouterNoise::draw(const ModelDims& dims, SeededRng& rng) {
    RouterNoise n;
    n.per_layer.resize(dims.layers);
    for (int l = 0; l < dims.layers; ++l) {
        for (int i = 0; i < dims.conditions; ++i) {
            n.per_layer[l].push_back(rng.normal_matrix(dims.tokens, dims.experts));
        }
    }
    return n;
}

CondDropMask draw_drop_mask(int n_conditions, double p, SeededRng& rng) {
    CondDropMask m;
    m.feature_dropped.resize(n_conditions);
    for (int i = 0; i < n_conditions; ++i) m.feature_dropped[i] = rng.bernoulli(p);
    m.text_dropped = rng.bernoulli(p);
    return m;
}

Matrix2D predict_noise(const DenoiserModel& model, const Matrix2D& z_t,
                       const std::optional<ConditionSet>& cond, int t,
                       const ForwardHooks& hooks) {
    if (z_t.cols() != model.dims.dim) {
        throw ShapeError("latent " + z_t.shape_str() + " vs model d=" +
                         std::to_string(model.dims.dim));
    }
    PlainEngine eng;
    auto ch = bind_condition(eng, model, cond ? &*cond : nullptr, hooks.drop);
    return predict_noise_t(eng, model, z_t, ch, t, hooks);
}

namespace {

/// Builds the squared-error loss graph on a tape and collects gradients in
/// canonical trainable order.
LossGrads collect_grads(const DenoiserModel& model, Tape& tape, TapeEngine& eng,
                        Tape::Id loss_id) {
    eng.backward(loss_id);
    LossGrads out;
    out.value = tape.value(loss_id)(0, 0);
    model.visit_trainable([&](const std::string&, const Matrix2D& p) {
        out.grads.push_back(eng.grad_of(p));
    });
    return out;
}

}  // namespace

LossGrads mse_loss_at(const DenoiserModel& model, const Matrix2D& z0,
                      const std::optional<ConditionSet>& cond, int t, const Matrix2D& eps,
                      const DiffusionSchedule& schedule, const RouterNoise* gate_noise,
                      const CondDropMask* drop) {
    const Matrix2D z_t = noised_latent(z0, t, eps, schedule);
    Tape tape;
    TapeEngine eng(tape);
    auto ch = bind_condition(eng, model, cond ? &*cond : nullptr, drop);
    ForwardHooks hooks;
    hooks.noise = gate_noise;
    auto pred = predict_noise_t(eng, model, eng.use(z_t), ch, t, hooks);
    auto ss = eng.sum_sq(eng.sub(eng.use(eps), pred));
    auto loss = eng.scale(ss, 1.0 / static_cast<double>(eps.size()));
    return collect_grads(model, tape, eng, loss);
}

double mse_loss_value(const DenoiserModel& model, const Matrix2D& z0,
                      const std::optional<ConditionSet>& cond, int t, const Matrix2D& eps,
                      const DiffusionSchedule& schedule, const RouterNoise* gate_noise,
                      const CondDropMask* drop) {
    const Matrix2D z_t = noised_latent(z0, t, eps, schedule);
    PlainEngine eng;
    auto ch = bind_condition(eng, model, cond ? &*cond : nullptr, drop);
    ForwardHooks hooks;
    hooks.noise = gate_noise;
    const Matrix2D pred = predict_noise_t(eng, model, eng.use(z_t), ch, t, hooks);
    return sum_sq(sub(eps, pred)) / static_cast<double>(eps.size());
}

LossGrads mse_loss(const DenoiserModel& model, const Matrix2D& z0,
                   const std::optional<ConditionSet>& cond, const DiffusionSchedule& schedule,
                   SeededRng& rng, bool gate_noise, const CondDropMask* drop) {
    const int t = static_cast<int>(rng.uniform_int(0, schedule.step_count - 1));
    const Matrix2D eps = rng.normal_matrix(z0.rows(), z0.cols());
    const bool conditioned = cond && cond->count() > 0;
    if (gate_noise && conditioned) {
        const RouterNoise noise = RouterNoise::draw(model.dims, rng);
        return mse_loss_at(model, z0, cond, t, eps, schedule, &noise, drop);
    }
    return mse_loss_at(model, z0, cond, t, eps, schedule, nullptr, drop);
}

Matrix2D cfg_predict(const DenoiserModel& model, const Matrix2D& z_t, const ConditionSet& cond,
                     int t, double omega, const ForwardHooks& cond_hooks) {
    const Matrix2D cond_eps = predict_noise(model, z_t, cond, t, cond_hooks);
    const Matrix2D uncond_eps = predict_noise(model, z_t, std::nullopt, t);
    return add(scale(cond_eps, omega), scale(uncond_eps, 1.0 - omega));
}

std::vector<int> ddim_timesteps(int schedule_steps, int sample_steps) {
    if (sample_steps < 1 || sample_steps > schedule_steps) {
        throw ConfigError("ddim steps " + std::to_string(sample_steps) +
                          " outside [1, T=" + std::to_string(schedule_steps) + "]");
    }
    std::vector<int> ts(sample_steps);
    if (sample_steps == 1) {
        ts[0] = schedule_steps - 1;
        return ts;
    }
    for (int j = 0; j < sample_steps; ++j) {
        const double frac =
            static_cast<double>(sample_steps - 1 - j) / (sample_steps - 1);
        ts[j] = static_cast<int>(std::lround(frac * (schedule_steps - 1)));
    }
    return ts;  // strictly decreasing from T-1 to 0
}

Matrix2D ddim_trajectory(const DenoiseFn& denoise, Matrix2D z_start,
                         const DiffusionSchedule& schedule, int steps) {
    const std::vector<int> ts = ddim_timesteps(schedule.step_count, steps);
    Matrix2D z = std::move(z_start);
    for (std::size_t i = 0; i < ts.size(); ++i) {
        const int t = ts[i];
        const double ab = schedule.alpha_bar[t];
        const Matrix2D eps_hat = denoise(z, t);
        // x0 estimate, then jump to the previous kept timestep (eta = 0).
        Matrix2D x0 = scale(sub(z, scale(eps_hat, std::sqrt(1.0 - ab))), 1.0 / std::sqrt(ab));
        const double ab_prev = (i + 1 < ts.size()) ? schedule.alpha_bar[ts[i + 1]] : 1.0;
        z = add(scale(x0, std::sqrt(ab_prev)), scale(eps_hat, std::sqrt(1.0 - ab_prev)));
    }
    return z;
}

Matrix2D ddim_sample(const DenoiserModel& model, const std::optional<ConditionSet>& cond,
                     const DiffusionSchedule& schedule, int steps, double omega, SeededRng& rng,
                     std::vector<RoutingTrace>* traces) {
    Matrix2D z_start = rng.normal_matrix(model.dims.tokens, model.dims.dim);
    DenoiseFn fn;
    if (cond && cond->count() > 0) {
        fn = [&](const Matrix2D& z, int t) {
            ForwardHooks hooks;
            hooks.traces = traces;
            return cfg_predict(model, z, *cond, t, omega, hooks);
        };
    } else {
        fn = [&](const Matrix2D& z, int t) { return predict_noise(model, z, std::nullopt, t); };
    }
    return ddim_trajectory(fn, std::move(z_start), schedule, steps);
}

ConditionSet condition_dropout(const ConditionSet& cond, double p, SeededRng& rng,
                               const DenoiserModel& model) {
    if (p < 0.0 || p > 1.0) {
        throw ConfigError("dropout probability " + std::to_string(p) + " outside [0,1]");
    }
    const CondDropMask mask = draw_drop_mask(cond.count(), p, rng);
    ConditionSet out = cond;
    for (int i = 0; i < cond.count(); ++i) {
        if (mask.feature_dropped[i]) {
            out.features[i] = broadcast_rows(model.null_cond, cond.features[i].rows());
        }
    }
    if (mask.text_dropped) {
        out.text_embedding = model.null_text.data();
    }
    return out;
}

}  // namespace moediff
