#include "moediff/schedule.hpp"

#include <string>

#include "moediff/error.hpp"

namespace moediff {

DiffusionSchedule DiffusionSchedule::linear(int steps, double beta_start, double beta_end) {
    if (steps < 1) throw ConfigError("schedule: step count must be >= 1");
    std::vector<double> betas(steps);
    for (int t = 0; t < steps; ++t) {
        const double frac = steps == 1 ? 0.0 : static_cast<double>(t) / (steps - 1);
        betas[t] = beta_start + (beta_end - beta_start) * frac;
    }
    return from_betas(std::move(betas));
}

DiffusionSchedule DiffusionSchedule::from_betas(std::vector<double> betas) {
    DiffusionSchedule s;
    s.step_count = static_cast<int>(betas.size());
    s.betas = std::move(betas);
    s.alpha_bar.resize(s.step_count);
    double prod = 1.0;
    for (int t = 0; t < s.step_count; ++t) {
        prod *= 1.0 - s.betas[t];
        s.alpha_bar[t] = prod;
    }
    s.validate();
    return s;
}

double DiffusionSchedule::snr(int t) const {
    const double ab = alpha_bar.at(t);
    return ab / (1.0 - ab);
}

void DiffusionSchedule::validate() const {
    if (step_count < 1) throw ConfigError("schedule: empty");
    double prev = 1.0;
    for (int t = 0; t < step_count; ++t) {
        if (!(betas[t] > 0.0 && betas[t] < 1.0)) {
            throw ConfigError("schedule: beta[" + std::to_string(t) + "]=" +
                              std::to_string(betas[t]) + " outside (0,1)");
        }
        if (!(alpha_bar[t] < prev)) {
            throw ConfigError("schedule: alpha_bar not strictly decreasing at t=" +
                              std::to_string(t));
        }
        prev = alpha_bar[t];
    }
}

}  // namespace moediff
