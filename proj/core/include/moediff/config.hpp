#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "moediff/model.hpp"
#include "moediff/schedule.hpp"

namespace moediff {

/// Experiment configuration: flat key = value text file, schema-versioned.
/// Every knob of the two-stage pipeline lives here so a (config, seed) pair
/// pins a run completely.
struct ExperimentConfig {
    int schema_version = 1;
    std::uint64_t seed = 42;

    // model / latent space
    int tokens = 16;
    int dim = 8;
    int text_dim = 8;
    int cond_tokens = 16;
    int layers = 2;
    int conditions = 2;
    int experts = 4;
    int top_k = 2;
    int lora_rank = 4;
    double lora_scaling = 1.0;
    int expert_hidden = 16;

    // diffusion
    int schedule_steps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
    int ddim_steps = 50;
    double omega = 7.5;
    double dropout_p = 0.05;

    // stage 1
    double stage1_lr = 1e-5;
    int stage1_steps = 500;
    int dataset_size = 16;

    // preference construction
    int mpo_m = 2;
    int mpo_h = 3;
    std::string mpo_task = "dressing";
    int embed_dim = 16;
    int scorer_retries = 0;

    // preference optimization
    double dpo_beta = 5000.0;
    double dpo_weight = 1.0;
    double dpo_lr = 8.192e-9;
    int dpo_steps = 200;
    int grad_accum = 1;

    std::string out_dir = "out";

    ModelDims model_dims() const;
    DiffusionSchedule make_schedule() const;

    /// Returns "key: problem" entries; empty means valid.
    std::vector<std::string> validate() const;

    /// Throws ValidationError naming every offending key.
    void validate_or_throw() const;

    static ExperimentConfig from_file(const std::string& path);
    static ExperimentConfig from_text(const std::string& text);
    std::string to_text() const;
};

}  // namespace moediff
