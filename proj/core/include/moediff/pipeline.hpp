#pragma once

#include <string>
#include <vector>

#include "moediff/checkpoint.hpp"
#include "moediff/config.hpp"
#include "moediff/dpo.hpp"
#include "moediff/synthetic.hpp"

namespace moediff {

/// Output root override: when the MOEDIFF_OUT_ROOT environment variable is
/// set, relative output directories are placed under it.
std::string resolve_out_dir(const std::string& out_dir);

struct Stage1Metrics {
    int steps = 0;
    double first_loss = 0.0;
    double last_loss = 0.0;
};

/// Stage-1 loop: cycles the sample set, applies condition dropout, draws
/// (t, eps) and gate noise per step, descends the MSE loss with plain SGD and
/// writes step,loss rows.
Stage1Metrics run_stage1_training(DenoiserModel& model,
                                  const std::vector<SyntheticTask::Sample>& data,
                                  const DiffusionSchedule& schedule, double learning_rate,
                                  int steps, double dropout_p, SeededRng& rng,
                                  const std::string& loss_csv_path);

/// Evaluation probes: fixed (z0, cond, t, eps) tuples; the mean clean MSE
/// over them is a deterministic progress measure (no gate noise, no dropout).
struct EvalProbe {
    Matrix2D z0;
    ConditionSet cond;
    int t = 0;
    Matrix2D eps;
};

std::vector<EvalProbe> make_eval_probes(const SyntheticTask& task,
                                        const DiffusionSchedule& schedule, int count,
                                        SeededRng& rng);
double mean_eval_loss(const DenoiserModel& model, const std::vector<EvalProbe>& probes,
                      const DiffusionSchedule& schedule);

// ---- CLI commands (throw moediff::Error; the CLI maps kinds to exit codes) ----

/// Outputs: stage1.json checkpoint, stage1_loss.csv.
void cmd_train_stage1(const ExperimentConfig& cfg, const std::string& out_dir);

/// Outputs: dataset/ (pair files + manifest.json), scores.csv.
void cmd_mpo(const ExperimentConfig& cfg, const std::string& checkpoint_path,
             const std::string& out_dir);

/// Outputs: dpo.json checkpoint, dpo_metrics.csv.
void cmd_train_dpo(const ExperimentConfig& cfg, const std::string& checkpoint_path,
                   const std::string& dataset_dir, const std::string& out_dir);

/// Outputs: sample.json (latent + metadata), trace.csv when requested.
/// prompt: "a" | "b" | "neutral" condition bundle from the synthetic task.
void cmd_sample(const ExperimentConfig& cfg, const std::string& checkpoint_path,
                const std::string& out_dir, const std::string& prompt = "neutral",
                bool write_trace = false, bool per_step_traces = false);

/// Reads routing-trace CSVs (layer,token,expert,weight) and writes a
/// per-layer entropy report: one column per input file plus the ln(n) bound.
void cmd_entropy(const std::vector<std::string>& trace_csvs, const std::string& out_path);

}  // namespace moediff
