#include "moediff/pipeline.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "moediff/csv.hpp"
#include "moediff/error.hpp"
#include "moediff/hash.hpp"

namespace moediff {

namespace fs = std::filesystem;

std::string resolve_out_dir(const std::string& out_dir) {
    if (out_dir.empty()) throw ValidationError("output directory must be set");
    if (fs::path(out_dir).is_absolute()) return out_dir;
    const char* root = std::getenv("MOEDIFF_OUT_ROOT");
    if (root != nullptr && *root != '\0') {
        return (fs::path(root) / out_dir).string();
    }
    return out_dir;
}

namespace {

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory " + dir + ": " + ec.message());
}

void check_dims_match(const ExperimentConfig& cfg, const DenoiserModel& model) {
    const ModelDims want = cfg.model_dims();
    const ModelDims& have = model.dims;
    if (want.tokens != have.tokens || want.dim != have.dim || want.text_dim != have.text_dim ||
        want.layers != have.layers || want.conditions != have.conditions ||
        want.experts != have.experts || want.top_k != have.top_k) {
        throw ValidationError(
            "config model dimensions do not match the checkpoint (tokens/dim/text_dim/layers/"
            "conditions/experts/top_k)");
    }
}

constexpr std::uint64_t kMpoTag = 0x4d504f;     // "MPO"
constexpr std::uint64_t kDpoTag = 0x44504f;     // "DPO"
constexpr std::uint64_t kSampleTag = 0x534d50;  // "SMP"

int parse_value_int(const std::string& s, const std::string& path) {
    try {
        std::size_t used = 0;
        const int v = std::stoi(s, &used);
        if (used != s.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ParseError("trace CSV " + path + ": bad integer field '" + s + "'");
    }
}

}  // namespace

Stage1Metrics run_stage1_training(DenoiserModel& model,
                                  const std::vector<SyntheticTask::Sample>& data,
                                  const DiffusionSchedule& schedule, double learning_rate,
                                  int steps, double dropout_p, SeededRng& rng,
                                  const std::string& loss_csv_path) {
    if (data.empty()) throw ConfigError("stage1 training: empty sample set");
    CsvWriter csv(loss_csv_path, {"step", "loss"});
    Stage1Metrics metrics;
    for (int step = 0; step < steps; ++step) {
        const auto& s = data[step % data.size()];
        const CondDropMask mask = draw_drop_mask(s.cond.count(), dropout_p, rng);
        const LossGrads res =
            mse_loss(model, s.z0, s.cond, schedule, rng, /*gate_noise=*/true, &mask);
        csv.begin_row();
        csv.field(step).field(res.value);
        csv.end_row();
        if (step == 0) metrics.first_loss = res.value;
        metrics.last_loss = res.value;
        ++metrics.steps;
        sgd_step(model, res.grads, learning_rate);
    }
    return metrics;
}

std::vector<EvalProbe> make_eval_probes(const SyntheticTask& task,
                                        const DiffusionSchedule& schedule, int count,
                                        SeededRng& rng) {
    std::vector<EvalProbe> probes;
    probes.reserve(count);
    for (int i = 0; i < count; ++i) {
        EvalProbe p;
        auto s = task.sample(rng);
        p.z0 = std::move(s.z0);
        p.cond = std::move(s.cond);
        p.t = static_cast<int>(rng.uniform_int(0, schedule.step_count - 1));
        p.eps = rng.normal_matrix(p.z0.rows(), p.z0.cols());
        probes.push_back(std::move(p));
    }
    return probes;
}

double mean_eval_loss(const DenoiserModel& model, const std::vector<EvalProbe>& probes,
                      const DiffusionSchedule& schedule) {
    if (probes.empty()) throw ConfigError("mean_eval_loss: no probes");
    double acc = 0.0;
    for (const auto& p : probes) {
        acc += mse_loss_value(model, p.z0, p.cond, p.t, p.eps, schedule);
    }
    return acc / static_cast<double>(probes.size());
}

void cmd_train_stage1(const ExperimentConfig& cfg, const std::string& out_dir) {
    cfg.validate_or_throw();
    const std::string out = resolve_out_dir(out_dir);
    ensure_dir(out);

    SeededRng rng(cfg.seed);
    DenoiserModel model = DenoiserModel::init(cfg.model_dims(), rng);
    const DiffusionSchedule schedule = cfg.make_schedule();
    const SyntheticTask task(cfg);
    const auto data = task.dataset(cfg.dataset_size, rng);

    run_stage1_training(model, data, schedule, cfg.stage1_lr, cfg.stage1_steps, cfg.dropout_p,
                        rng, (fs::path(out) / "stage1_loss.csv").string());
    save_checkpoint((fs::path(out) / "stage1.json").string(), model, schedule, cfg.stage1_steps,
                    "stage1");
}

void cmd_mpo(const ExperimentConfig& cfg, const std::string& checkpoint_path,
             const std::string& out_dir) {
    cfg.validate_or_throw();
    const std::string out = resolve_out_dir(out_dir);
    ensure_dir(out);

    const Checkpoint ck = load_checkpoint(checkpoint_path);
    check_dims_match(cfg, ck.model);

    SeededRng base(cfg.seed);
    SeededRng rng(base.derive_seed(kMpoTag));
    const SyntheticTask task(cfg);
    std::vector<ConditionSet> bundles;
    bundles.reserve(cfg.mpo_m);
    for (int b = 0; b < cfg.mpo_m; ++b) bundles.push_back(task.sample(rng).cond);

    SamplerConfig scfg;
    scfg.steps = cfg.ddim_steps;
    scfg.omega = cfg.omega;
    scfg.base_seed = rng.derive_seed(7);
    CandidatePool pool =
        sample_candidates(ck.model, bundles, cfg.mpo_m, cfg.mpo_h, ck.schedule, scfg);

    const HashProjectionEmbedder content_emb("hashproj-content", cfg.embed_dim,
                                             base.derive_seed(1001));
    const HashProjectionEmbedder image_emb("hashproj-image", cfg.embed_dim,
                                           base.derive_seed(1002));
    const HashProjectionEmbedder text_emb("hashproj-text", cfg.embed_dim,
                                          base.derive_seed(1003));
    const TaskSchema& schema = schema_for_task(cfg.mpo_task);
    const RuleBasedScorer scorer(schema, base.derive_seed(1004));
    score_pool(pool, content_emb, image_emb, text_emb, scorer, schema, cfg.scorer_retries);

    const PreferenceDataset ds = build_preference_dataset(pool);
    save_preference_dataset((fs::path(out) / "dataset").string(), ds);
    export_score_csv(pool, (fs::path(out) / "scores.csv").string());
}

void cmd_train_dpo(const ExperimentConfig& cfg, const std::string& checkpoint_path,
                   const std::string& dataset_dir, const std::string& out_dir) {
    cfg.validate_or_throw();
    const std::string out = resolve_out_dir(out_dir);
    ensure_dir(out);

    const Checkpoint ck = load_checkpoint(checkpoint_path);
    check_dims_match(cfg, ck.model);
    const PreferenceDataset ds = load_preference_dataset(dataset_dir);
    if (ds.pairs.empty()) {
        throw ConfigError("train-dpo: preference dataset has no pairs");
    }

    DenoiserModel theta = ck.model;  // trainable copy; ck.model stays the frozen reference
    DpoConfig dcfg;
    dcfg.beta = cfg.dpo_beta;
    dcfg.weight = cfg.dpo_weight;
    dcfg.schedule_steps = ck.schedule.step_count;
    dcfg.learning_rate = cfg.dpo_lr;
    dcfg.step_budget = cfg.dpo_steps;
    dcfg.grad_accum = cfg.grad_accum;

    SeededRng base(cfg.seed);
    SeededRng rng(base.derive_seed(kDpoTag));
    dpo_train(theta, ck.model, ds.pairs, dcfg, ck.schedule, rng,
              (fs::path(out) / "dpo_metrics.csv").string());
    save_checkpoint((fs::path(out) / "dpo.json").string(), theta, ck.schedule, cfg.dpo_steps,
                    "dpo");
}

void cmd_sample(const ExperimentConfig& cfg, const std::string& checkpoint_path,
                const std::string& out_dir, const std::string& prompt, bool write_trace,
                bool per_step_traces) {
    cfg.validate_or_throw();
    const std::string out = resolve_out_dir(out_dir);
    ensure_dir(out);

    const Checkpoint ck = load_checkpoint(checkpoint_path);
    check_dims_match(cfg, ck.model);

    SeededRng base(cfg.seed);
    SeededRng rng(base.derive_seed(kSampleTag));
    const SyntheticTask task(cfg);
    ConditionSet cond;
    if (prompt == "a") {
        cond = task.bundle_for_mode(0, rng);
    } else if (prompt == "b") {
        cond = task.bundle_for_mode(1, rng);
    } else if (prompt == "neutral") {
        cond = task.neutral_bundle(rng);
    } else {
        throw ValidationError("sample: unknown prompt '" + prompt + "' (need a|b|neutral)");
    }

    std::vector<RoutingTrace> traces;
    const Matrix2D latent =
        ddim_sample(ck.model, cond, ck.schedule, cfg.ddim_steps, cfg.omega, rng,
                    write_trace ? &traces : nullptr);

    nlohmann::json j = {{"schema", 1},
                        {"prompt", prompt},
                        {"seed", cfg.seed},
                        {"omega", cfg.omega},
                        {"ddim_steps", cfg.ddim_steps},
                        {"checkpoint_stage", ck.stage},
                        {"latent", matrix_to_json(latent)}};
    std::ofstream sf(fs::path(out) / "sample.json", std::ios::binary | std::ios::trunc);
    if (!sf) throw IoError("cannot write sample output in " + out);
    sf << j.dump(1) << '\n';

    if (write_trace) {
        export_routing_traces_csv((fs::path(out) / "trace.csv").string(), traces);
        if (per_step_traces) {
            // Each DDIM step appended layers x conditions traces; split them
            // back out so entropy can be inspected per sampling step.
            const std::size_t per_step = static_cast<std::size_t>(ck.model.dims.layers) *
                                         ck.model.dims.conditions;
            int step = 0;
            for (std::size_t i = 0; i + per_step <= traces.size(); i += per_step, ++step) {
                std::vector<RoutingTrace> chunk(traces.begin() + i,
                                                traces.begin() + i + per_step);
                char name[32];
                std::snprintf(name, sizeof(name), "trace_step%03d.csv", step);
                export_routing_traces_csv((fs::path(out) / name).string(), chunk);
            }
        }
    }
}

void cmd_entropy(const std::vector<std::string>& trace_csvs, const std::string& out_path) {
    if (trace_csvs.empty()) {
        throw ValidationError("entropy: at least one trace CSV is required");
    }
    struct FileCounts {
        std::string label;
        std::map<int, std::map<int, long>> by_layer;  // layer -> expert -> count
    };
    std::vector<FileCounts> files;
    std::set<int> layers;
    int max_expert = -1;
    std::set<std::string> used_labels;
    for (const auto& path : trace_csvs) {
        const CsvTable table = read_csv(path);
        const int ci_layer = table.column("layer");
        const int ci_expert = table.column("expert");
        if (ci_layer < 0 || ci_expert < 0) {
            throw ParseError("trace CSV " + path + " lacks layer/expert columns");
        }
        if (table.rows.empty()) {
            throw DataError("trace CSV " + path + " has no assignments");
        }
        FileCounts fc;
        std::string label = fs::path(path).stem().string();
        while (used_labels.count(label)) label += "_";
        used_labels.insert(label);
        fc.label = label;
        for (const auto& row : table.rows) {
            const int layer = parse_value_int(row.at(ci_layer), path);
            const int expert = parse_value_int(row.at(ci_expert), path);
            ++fc.by_layer[layer][expert];
            layers.insert(layer);
            max_expert = std::max(max_expert, expert);
        }
        files.push_back(std::move(fc));
    }

    const int n = max_expert + 1;
    std::vector<std::string> header{"layer"};
    for (const auto& f : files) header.push_back("H_" + f.label);
    header.push_back("bound_ln_n");
    CsvWriter csv(out_path, header);
    for (int layer : layers) {
        csv.begin_row();
        csv.field(layer);
        for (const auto& f : files) {
            const auto it = f.by_layer.find(layer);
            if (it == f.by_layer.end()) {
                csv.field("");
                continue;
            }
            long total = 0;
            for (const auto& [e, c] : it->second) total += c;
            std::vector<double> p(n, 0.0);
            for (const auto& [e, c] : it->second) {
                p[e] = static_cast<double>(c) / static_cast<double>(total);
            }
            csv.field(shannon_entropy(p));
        }
        csv.field(std::log(static_cast<double>(n)));
        csv.end_row();
    }
}

}  // namespace moediff
