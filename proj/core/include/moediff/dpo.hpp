#pragma once

#include <string>
#include <vector>

#include "moediff/preference.hpp"

namespace moediff {

struct DpoConfig {
    double beta = 5000.0;
    double weight = 1.0;          // omega(lambda_t), fixed constant in practice
    int schedule_steps = 1000;    // the T factor inside the sigmoid argument
    double learning_rate = 8.192e-9;
    int step_budget = 0;
    int grad_accum = 1;           // batch size 1 by default

    void validate() const;
};

/// One optimization item: a preference pair with the shared (t, eps) applied
/// to both winner and loser. `pair` is non-owning.
struct DpoBatchItem {
    const PreferencePair* pair = nullptr;
    int t = 0;
    Matrix2D eps;
};

struct DpoLossResult {
    double loss = 0.0;
    double margin = 0.0;  // the sigmoid argument; loss == -log sigmoid(margin)
    std::vector<Matrix2D> grads;

    double grad_norm() const;
};

/// Diffusion preference loss against the frozen reference:
///   margin = -beta * T * weight * [ (||e-e_th(x_t^w)||^2 - ||e-e_ref(x_t^w)||^2)
///                                 - (||e-e_th(x_t^l)||^2 - ||e-e_ref(x_t^l)||^2) ]
///   loss   = log(1 + exp(-margin))
/// Gradients flow only through the theta terms; the reference forwards enter
/// as constants. Gate noise is off for both models here so the margin is an
/// exact function of the parameters.
DpoLossResult dpo_loss(const DenoiserModel& theta, const DenoiserModel& ref,
                       const DpoBatchItem& item, const DpoConfig& cfg,
                       const DiffusionSchedule& schedule);

/// Loss value only (finite-difference oracle path).
double dpo_loss_value(const DenoiserModel& theta, const DenoiserModel& ref,
                      const DpoBatchItem& item, const DpoConfig& cfg,
                      const DiffusionSchedule& schedule);

/// The diagnostic pre-sigmoid margin. dpo_loss == -log sigmoid(margin) exactly.
double implicit_reward_margin(const DenoiserModel& theta, const DenoiserModel& ref,
                              const PreferencePair& pair, int t, const Matrix2D& eps,
                              const DpoConfig& cfg, const DiffusionSchedule& schedule);

struct DpoTrainMetrics {
    int steps = 0;
    double first_loss = 0.0;
    double last_loss = 0.0;
};

/// Cycles the dataset with fresh (t, eps) per item, descends dpo_loss on the
/// trainable parameters, and writes one metrics row per step:
/// step,loss,margin,grad_norm. The reference model is never touched.
DpoTrainMetrics dpo_train(DenoiserModel& theta, const DenoiserModel& ref,
                          const std::vector<PreferencePair>& dataset, const DpoConfig& cfg,
                          const DiffusionSchedule& schedule, SeededRng& rng,
                          const std::string& metrics_csv_path);

}  // namespace moediff
