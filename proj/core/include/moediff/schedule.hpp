#pragma once

#include <vector>

namespace moediff {

/// Variance schedule of the forward process. alpha_bar is the cumulative
/// product of (1 - beta_t); it starts near 1 and decreases strictly, so the
/// signal-to-noise ratio alpha_bar/(1-alpha_bar) decreases strictly too.
struct DiffusionSchedule {
    int step_count = 0;  // T
    std::vector<double> betas;
    std::vector<double> alpha_bar;

    static DiffusionSchedule linear(int steps, double beta_start = 1e-4, double beta_end = 0.02);
    static DiffusionSchedule from_betas(std::vector<double> betas);

    double snr(int t) const;  // lambda_t
    void validate() const;
};

}  // namespace moediff
