// Experiment driver: wires the library into the two-stage pipeline
// (stage-1 MSE training -> preference construction -> DPO refinement ->
// sampling) plus the routing-entropy analyzer. Every command is fully
// determined by (config file, seed).

#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "moediff/error.hpp"
#include "moediff/pipeline.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    std::uint64_t seed = 0;
    bool seed_set = false;
};

moediff::ExperimentConfig load_config(const CommonArgs& args) {
    moediff::ExperimentConfig cfg = moediff::ExperimentConfig::from_file(args.config_path);
    if (args.seed_set) cfg.seed = args.seed;
    if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
    return cfg;
}

void add_common(CLI::App* cmd, CommonArgs& args, bool config_required = true) {
    auto* copt = cmd->add_option("--config", args.config_path, "experiment config file");
    if (config_required) copt->required();
    cmd->add_option("--seed", args.seed, "seed override")->each([&](const std::string&) {
        args.seed_set = true;
    });
    cmd->add_option("--out", args.out_dir, "output directory (overrides config out_dir)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"token-routing conditional diffusion experiments"};
    app.require_subcommand(1);

    CommonArgs s1_args, mpo_args, dpo_args, sample_args;
    std::string mpo_ckpt, dpo_ckpt, dpo_dataset, sample_ckpt;
    std::string sample_prompt = "neutral";
    bool sample_trace = false, sample_per_step = false;
    std::vector<std::string> entropy_traces;
    std::string entropy_out;

    CLI::App* s1 = app.add_subcommand("train-stage1", "MSE training of the reference model");
    add_common(s1, s1_args);

    CLI::App* mpo = app.add_subcommand(
        "mpo", "sample candidates, score with the evaluators, build preference pairs");
    add_common(mpo, mpo_args);
    mpo->add_option("--checkpoint", mpo_ckpt, "stage-1 checkpoint")->required();

    CLI::App* dpo = app.add_subcommand("train-dpo", "preference optimization against the "
                                                    "frozen reference");
    add_common(dpo, dpo_args);
    dpo->add_option("--checkpoint", dpo_ckpt, "stage-1 checkpoint")->required();
    dpo->add_option("--dataset", dpo_dataset, "preference dataset directory")->required();

    CLI::App* sample = app.add_subcommand("sample", "DDIM sampling with CFG");
    add_common(sample, sample_args);
    sample->add_option("--checkpoint", sample_ckpt, "model checkpoint")->required();
    sample->add_option("--prompt", sample_prompt, "condition bundle: a|b|neutral");
    sample->add_flag("--trace", sample_trace, "export the routing trace CSV");
    sample->add_flag("--per-step", sample_per_step, "additionally split traces per DDIM step");

    CLI::App* entropy = app.add_subcommand("entropy", "per-layer routing entropy report");
    entropy->add_option("traces", entropy_traces, "routing trace CSV files")->required();
    entropy->add_option("--out", entropy_out, "output CSV path")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (s1->parsed()) {
            const auto cfg = load_config(s1_args);
            moediff::cmd_train_stage1(cfg, cfg.out_dir);
        } else if (mpo->parsed()) {
            const auto cfg = load_config(mpo_args);
            moediff::cmd_mpo(cfg, mpo_ckpt, cfg.out_dir);
        } else if (dpo->parsed()) {
            const auto cfg = load_config(dpo_args);
            moediff::cmd_train_dpo(cfg, dpo_ckpt, dpo_dataset, cfg.out_dir);
        } else if (sample->parsed()) {
            const auto cfg = load_config(sample_args);
            moediff::cmd_sample(cfg, sample_ckpt, cfg.out_dir, sample_prompt, sample_trace,
                                sample_per_step);
        } else if (entropy->parsed()) {
            moediff::cmd_entropy(entropy_traces, entropy_out);
        }
    } catch (const moediff::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return moediff::exit_code_for(e.kind());
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return 3;
    }
    return 0;
}
