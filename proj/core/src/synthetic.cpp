#include "moediff/synthetic.hpp"

#include <cmath>
#include <numbers>

namespace moediff {

SyntheticTask::SyntheticTask(const ExperimentConfig& cfg)
    : tokens_(cfg.tokens),
      dim_(cfg.dim),
      text_dim_(cfg.text_dim),
      cond_tokens_(cfg.cond_tokens),
      conditions_(cfg.conditions) {
    // Two antipodal smooth patterns over the token grid.
    Matrix2D pattern(tokens_, dim_);
    for (int r = 0; r < tokens_; ++r) {
        for (int c = 0; c < dim_; ++c) {
            const double u = 2.0 * std::numbers::pi * (r + 1) * (c + 1) /
                             static_cast<double>(tokens_ * dim_);
            pattern(r, c) = std::sin(u) + 0.5 * std::cos(2.0 * u);
        }
    }
    mu_[0] = scale(pattern, mode_scale_);
    mu_[1] = scale(pattern, -mode_scale_);

    text_sig_[0] = Matrix2D(1, text_dim_);
    text_sig_[1] = Matrix2D(1, text_dim_);
    for (int c = 0; c < text_dim_; ++c) {
        const double v = (c < text_dim_ / 2) ? 1.0 : -1.0;
        text_sig_[0](0, c) = v;
        text_sig_[1](0, c) = -v;
    }
}

ConditionSet SyntheticTask::bundle_from_pattern(const Matrix2D& pattern,
                                                const Matrix2D& text_sig, double noise,
                                                SeededRng& rng) const {
    ConditionSet cond;
    const int anchors = std::min(4, cond_tokens_ / 4 + 1);
    for (int i = 0; i < conditions_; ++i) {
        Matrix2D f(cond_tokens_, dim_);
        for (int r = 0; r < cond_tokens_; ++r) {
            if (r >= cond_tokens_ - anchors) {
                for (int c = 0; c < dim_; ++c) f(r, c) = 0.01 * rng.normal();
                continue;
            }
            // Condition i sees the pattern rows at stride i+1: distinct but
            // correlated views across conditions.
            const int src = (r * (i + 1)) % pattern.rows();
            for (int c = 0; c < dim_; ++c) {
                f(r, c) = pattern(src, c) + noise * rng.normal();
            }
        }
        cond.features.push_back(std::move(f));
    }
    Matrix2D txt = add(text_sig, rng.normal_matrix(1, text_dim_, 0.05));
    cond.text_embedding = txt.data();
    return cond;
}

SyntheticTask::Sample SyntheticTask::sample(SeededRng& rng) const {
    Sample s;
    s.mode = rng.bernoulli(0.5) ? 1 : 0;
    s.z0 = add(mu_[s.mode], rng.normal_matrix(tokens_, dim_, within_sigma_));
    s.cond = bundle_from_pattern(s.z0, text_sig_[s.mode], 0.05, rng);
    return s;
}

std::vector<SyntheticTask::Sample> SyntheticTask::dataset(int size, SeededRng& rng) const {
    std::vector<Sample> samples;
    samples.reserve(size);
    for (int i = 0; i < size; ++i) samples.push_back(sample(rng));
    return samples;
}

ConditionSet SyntheticTask::bundle_for_mode(int mode, SeededRng& rng) const {
    return bundle_from_pattern(mu_[mode], text_sig_[mode], 0.05, rng);
}

ConditionSet SyntheticTask::neutral_bundle(SeededRng& rng) const {
    const Matrix2D mid(tokens_, dim_);  // zero pattern between the modes
    Matrix2D txt(1, text_dim_);         // no mode coloring
    ConditionSet cond = bundle_from_pattern(mid, txt, 0.3, rng);
    // keep the text embedding away from zero norm
    Matrix2D jitter = rng.normal_matrix(1, text_dim_, 0.2);
    cond.text_embedding = jitter.data();
    return cond;
}

int SyntheticTask::nearest_mode(const Matrix2D& latent) const {
    const double d0 = frobenius_dist(latent, mu_[0]);
    const double d1 = frobenius_dist(latent, mu_[1]);
    return d0 <= d1 ? 0 : 1;
}

}  // namespace moediff
