#pragma once

#include <vector>

#include "moediff/attention.hpp"
#include "moediff/config.hpp"
#include "moediff/rng.hpp"

namespace moediff {

/// Seeded two-mode latent task for desk-scale experiments. Clean latents are
/// Gaussian perturbations of one of two well-separated token-grid patterns;
/// each sample's condition bundle carries (noisy) views of its own clean
/// latent plus a mode-colored text signature, so conditioning is informative.
/// Condition maps end with a few near-zero "background" rows that give the
/// cross-attention neutral anchors to interpolate against.
class SyntheticTask {
public:
    explicit SyntheticTask(const ExperimentConfig& cfg);

    struct Sample {
        Matrix2D z0;
        ConditionSet cond;
        int mode = 0;
    };

    const Matrix2D& mode_mean(int mode) const { return mu_[mode]; }

    Sample sample(SeededRng& rng) const;
    std::vector<Sample> dataset(int size, SeededRng& rng) const;

    /// Bundle whose conditions describe the given mode's mean pattern.
    ConditionSet bundle_for_mode(int mode, SeededRng& rng) const;

    /// Ambiguous bundle half way between the modes (small noise keeps
    /// embeddings away from zero norm).
    ConditionSet neutral_bundle(SeededRng& rng) const;

    /// 0 if the latent is closer (Frobenius) to mode 0's mean, else 1.
    int nearest_mode(const Matrix2D& latent) const;

private:
    ConditionSet bundle_from_pattern(const Matrix2D& pattern, const Matrix2D& text_sig,
                                     double noise, SeededRng& rng) const;

    int tokens_, dim_, text_dim_, cond_tokens_, conditions_;
    double mode_scale_ = 1.2;
    double within_sigma_ = 0.25;
    Matrix2D mu_[2];
    Matrix2D text_sig_[2];  // 1 x d_txt
};

}  // namespace moediff
