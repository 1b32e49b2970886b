#include "moediff/dpo.hpp"

#include <cmath>

#include "moediff/csv.hpp"
#include "moediff/error.hpp"
#include "moediff/numerics.hpp"

namespace moediff {

void DpoConfig::validate() const {
    if (beta <= 0.0) throw ConfigError("dpo: beta must be positive");
    if (learning_rate < 0.0) throw ConfigError("dpo: learning rate must be >= 0");
    if (schedule_steps < 1) throw ConfigError("dpo: schedule_steps must be >= 1");
    if (grad_accum < 1) throw ConfigError("dpo: grad_accum must be >= 1");
}

double DpoLossResult::grad_norm() const {
    double s = 0.0;
    for (const auto& g : grads) s += sum_sq(g);
    return std::sqrt(s);
}

namespace {

struct SquaredErrors {
    double theta_w = 0.0, ref_w = 0.0, theta_l = 0.0, ref_l = 0.0;
};

double plain_sq_error(const DenoiserModel& ref, const Matrix2D& x_t, const ConditionSet& cond,
                    int t, const Matrix2D& eps) {
    PlainEngine eng;
    auto ch = bind_condition(eng, ref, &cond, nullptr);
    const Matrix2D pred = predict_noise_t(eng, ref, eng.use(x_t), ch, t);
    return sum_sq(sub(eps, pred));
}

void check_item(const DpoBatchItem& item) {
    if (item.pair == nullptr) throw ConfigError("dpo: batch item without pair");
    if (!item.pair->winner.same_shape(item.pair->loser)) {
        throw DataError("dpo: winner " + item.pair->winner.shape_str() + " vs loser " +
                        item.pair->loser.shape_str());
    }
    if (!item.eps.same_shape(item.pair->winner)) {
        throw DataError("dpo: eps " + item.eps.shape_str() + " vs latent " +
                        item.pair->winner.shape_str());
    }
}

}  // namespace

DpoLossResult dpo_loss(const DenoiserModel& theta, const DenoiserModel& ref,
                       const DpoBatchItem& item, const DpoConfig& cfg,
                       const DiffusionSchedule& schedule) {
    cfg.validate();
    check_item(item);
    const PreferencePair& pair = *item.pair;
    const Matrix2D x_tw = noised_latent(pair.winner, item.t, item.eps, schedule);
    const Matrix2D x_tl = noised_latent(pair.loser, item.t, item.eps, schedule);

    const double ref_w = plain_sq_error(ref, x_tw, pair.cond, item.t, item.eps);
    const double ref_l = plain_sq_error(ref, x_tl, pair.cond, item.t, item.eps);

    Tape tape;
    TapeEngine eng(tape);
    auto ch = bind_condition(eng, theta, &pair.cond, nullptr);
    auto eps_id = eng.use(item.eps);
    auto pred_w = predict_noise_t(eng, theta, eng.use(x_tw), ch, item.t);
    auto sq_w = eng.sum_sq(eng.sub(eps_id, pred_w));
    auto pred_l = predict_noise_t(eng, theta, eng.use(x_tl), ch, item.t);
    auto sq_l = eng.sum_sq(eng.sub(eps_id, pred_l));

    Matrix2D ref_w_m(1, 1), ref_l_m(1, 1);
    ref_w_m(0, 0) = ref_w;
    ref_l_m(0, 0) = ref_l;
    auto bracket = eng.sub(eng.sub(sq_w, eng.use(ref_w_m)), eng.sub(sq_l, eng.use(ref_l_m)));
    auto margin_id = eng.scale(bracket, -cfg.beta * cfg.schedule_steps * cfg.weight);
    // -log sigmoid(margin) via the log-sum-exp identity, overflow-safe at
    // beta = 5000.
    auto loss_id = eng.softplus(eng.scale(margin_id, -1.0));

    eng.backward(loss_id);
    DpoLossResult out;
    out.loss = eng.value(loss_id)(0, 0);
    out.margin = eng.value(margin_id)(0, 0);
    theta.visit_trainable([&](const std::string&, const Matrix2D& p) {
        out.grads.push_back(eng.grad_of(p));
    });
    return out;
}

double dpo_loss_value(const DenoiserModel& theta, const DenoiserModel& ref,
                      const DpoBatchItem& item, const DpoConfig& cfg,
                      const DiffusionSchedule& schedule) {
    return neg_log_sigmoid(
        implicit_reward_margin(theta, ref, *item.pair, item.t, item.eps, cfg, schedule));
}

double implicit_reward_margin(const DenoiserModel& theta, const DenoiserModel& ref,
                              const PreferencePair& pair, int t, const Matrix2D& eps,
                              const DpoConfig& cfg, const DiffusionSchedule& schedule) {
    cfg.validate();
    DpoBatchItem item{&pair, t, eps};
    check_item(item);
    const Matrix2D x_tw = noised_latent(pair.winner, t, eps, schedule);
    const Matrix2D x_tl = noised_latent(pair.loser, t, eps, schedule);
    const double theta_w = plain_sq_error(theta, x_tw, pair.cond, t, eps);
    const double theta_l = plain_sq_error(theta, x_tl, pair.cond, t, eps);
    const double rw = plain_sq_error(ref, x_tw, pair.cond, t, eps);
    const double rl = plain_sq_error(ref, x_tl, pair.cond, t, eps);
    const double bracket = (theta_w - rw) - (theta_l - rl);
    return -cfg.beta * cfg.schedule_steps * cfg.weight * bracket;
}

DpoTrainMetrics dpo_train(DenoiserModel& theta, const DenoiserModel& ref,
                          const std::vector<PreferencePair>& dataset, const DpoConfig& cfg,
                          const DiffusionSchedule& schedule, SeededRng& rng,
                          const std::string& metrics_csv_path) {
    cfg.validate();
    if (dataset.empty()) throw ConfigError("dpo_train: empty preference dataset");
    CsvWriter csv(metrics_csv_path, {"step", "loss", "margin", "grad_norm"});

    DpoTrainMetrics metrics;
    std::vector<Matrix2D> accum;
    int in_window = 0;
    for (int step = 0; step < cfg.step_budget; ++step) {
        const PreferencePair& pair = dataset[step % dataset.size()];
        DpoBatchItem item;
        item.pair = &pair;
        item.t = static_cast<int>(rng.uniform_int(0, schedule.step_count - 1));
        item.eps = rng.normal_matrix(pair.winner.rows(), pair.winner.cols());

        DpoLossResult res = dpo_loss(theta, ref, item, cfg, schedule);
        csv.begin_row();
        csv.field(step).field(res.loss).field(res.margin).field(res.grad_norm());
        csv.end_row();
        if (step == 0) metrics.first_loss = res.loss;
        metrics.last_loss = res.loss;
        ++metrics.steps;

        if (cfg.grad_accum == 1) {
            sgd_step(theta, res.grads, cfg.learning_rate);
        } else {
            if (accum.empty()) {
                accum = std::move(res.grads);
            } else {
                for (std::size_t i = 0; i < accum.size(); ++i) {
                    accum[i] = add(accum[i], res.grads[i]);
                }
            }
            if (++in_window == cfg.grad_accum) {
                for (auto& g : accum) g = scale(g, 1.0 / cfg.grad_accum);
                sgd_step(theta, accum, cfg.learning_rate);
                accum.clear();
                in_window = 0;
            }
        }
    }
    return metrics;
}

}  // namespace moediff
