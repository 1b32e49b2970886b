#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "moediff/csv.hpp"
#include "moediff/error.hpp"
#include "moediff/hash.hpp"
#include "moediff/pipeline.hpp"

using namespace moediff;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny_config(std::uint64_t seed = 42) {
    ExperimentConfig cfg;
    cfg.seed = seed;
    cfg.tokens = 6;
    cfg.dim = 6;
    cfg.text_dim = 4;
    cfg.cond_tokens = 6;
    cfg.layers = 1;
    cfg.conditions = 2;
    cfg.experts = 4;
    cfg.top_k = 2;
    cfg.lora_rank = 2;
    cfg.expert_hidden = 8;
    cfg.schedule_steps = 30;
    cfg.ddim_steps = 4;
    cfg.stage1_lr = 1e-3;
    cfg.stage1_steps = 20;
    cfg.dataset_size = 4;
    cfg.mpo_m = 2;
    cfg.mpo_h = 3;
    cfg.embed_dim = 8;
    cfg.dpo_lr = 1e-5;
    cfg.dpo_beta = 100.0;
    cfg.dpo_steps = 5;
    return cfg;
}

std::string fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / ("moediff_pipe_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir.string();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST_CASE("config parsing: defaults, overrides, unknown keys, bad values") {
    const ExperimentConfig c0 = ExperimentConfig::from_text("");
    CHECK(c0.experts == 4);
    CHECK(c0.top_k == 2);
    CHECK(c0.omega == 7.5);
    CHECK(c0.dropout_p == 0.05);
    CHECK(c0.dpo_beta == 5000.0);
    CHECK(c0.dpo_lr == doctest::Approx(8.192e-9));
    CHECK(c0.ddim_steps == 50);
    CHECK(c0.stage1_lr == doctest::Approx(1e-5));
    CHECK(c0.validate().empty());

    const ExperimentConfig c1 = ExperimentConfig::from_text(
        "# comment\n"
        "seed = 7\n"
        "experts=8\n"
        "top_k = 3   # inline comment\n"
        "mpo_task = garment\n");
    CHECK(c1.seed == 7);
    CHECK(c1.experts == 8);
    CHECK(c1.top_k == 3);
    CHECK(c1.mpo_task == "garment");

    CHECK_THROWS_AS((void)ExperimentConfig::from_text("unknown_key = 1\n"), ValidationError);
    CHECK_THROWS_AS((void)ExperimentConfig::from_text("experts = abc\n"), ValidationError);
    CHECK_THROWS_AS((void)ExperimentConfig::from_text("experts 4\n"), ValidationError);

    // round trip through the text form
    const ExperimentConfig c2 = ExperimentConfig::from_text(c1.to_text());
    CHECK(c2.seed == c1.seed);
    CHECK(c2.experts == c1.experts);
    CHECK(c2.mpo_task == c1.mpo_task);
}

TEST_CASE("config validation lists every offending key") {
    ExperimentConfig cfg = tiny_config();
    cfg.top_k = 9;          // > experts
    cfg.ddim_steps = 1000;  // > schedule_steps
    cfg.dropout_p = 1.5;
    const auto bad = cfg.validate();
    REQUIRE(bad.size() == 3);
    std::string joined;
    for (const auto& b : bad) joined += b + ";";
    CHECK(joined.find("top_k") != std::string::npos);
    CHECK(joined.find("ddim_steps") != std::string::npos);
    CHECK(joined.find("dropout_p") != std::string::npos);
    CHECK_THROWS_AS(cfg.validate_or_throw(), ValidationError);
}

TEST_CASE("synthetic task: informative bundles and separated modes") {
    const ExperimentConfig cfg = tiny_config();
    const SyntheticTask task(cfg);
    CHECK(frobenius_dist(task.mode_mean(0), task.mode_mean(1)) > 1.0);
    SeededRng rng(1);
    for (int i = 0; i < 10; ++i) {
        const auto s = task.sample(rng);
        CHECK(s.z0.rows() == cfg.tokens);
        CHECK(s.z0.cols() == cfg.dim);
        CHECK(s.cond.count() == cfg.conditions);
        CHECK(static_cast<int>(s.cond.text_embedding.size()) == cfg.text_dim);
        CHECK(task.nearest_mode(s.z0) == s.mode);
    }
    const auto neutral = task.neutral_bundle(rng);
    CHECK(neutral.count() == cfg.conditions);
}

TEST_CASE("stage-1 command: outputs, zero-step identity, validation") {
    SUBCASE("writes the loss CSV and a loadable checkpoint") {
        const std::string out = fresh_dir("s1");
        ExperimentConfig cfg = tiny_config();
        cmd_train_stage1(cfg, out);
        const CsvTable loss = read_csv(out + "/stage1_loss.csv");
        CHECK(loss.header == std::vector<std::string>{"step", "loss"});
        REQUIRE(static_cast<int>(loss.rows.size()) == cfg.stage1_steps);
        const Checkpoint ck = load_checkpoint(out + "/stage1.json");
        CHECK(ck.stage == "stage1");
        CHECK(ck.step == cfg.stage1_steps);
        CHECK(ck.schedule.step_count == cfg.schedule_steps);
        fs::remove_all(out);
    }

    SUBCASE("zero steps equals initialization") {
        const std::string out = fresh_dir("s1zero");
        ExperimentConfig cfg = tiny_config();
        cfg.stage1_steps = 0;
        cmd_train_stage1(cfg, out);
        const Checkpoint ck = load_checkpoint(out + "/stage1.json");
        SeededRng rng(cfg.seed);
        const DenoiserModel fresh = DenoiserModel::init(cfg.model_dims(), rng);
        CHECK(ck.model.full_hash() == fresh.full_hash());
        fs::remove_all(out);
    }

    SUBCASE("invalid config fails before side effects, naming the key") {
        const std::string out = fresh_dir("s1bad");
        ExperimentConfig cfg = tiny_config();
        cfg.top_k = 9;
        CHECK_THROWS_WITH_AS(cmd_train_stage1(cfg, out), doctest::Contains("top_k"),
                             ValidationError);
        CHECK_FALSE(fs::exists(out + "/stage1.json"));
        fs::remove_all(out);
    }
}

TEST_CASE("stage-1 with the default config: 500 rows, final below initial") {
    const std::string out = fresh_dir("s1default");
    const ExperimentConfig cfg;  // stock defaults: 500 steps at the default rate
    cmd_train_stage1(cfg, out);
    const CsvTable loss = read_csv(out + "/stage1_loss.csv");
    REQUIRE(loss.rows.size() == 500);
    const int li = loss.column("loss");
    REQUIRE(li >= 0);
    CHECK(std::stod(loss.rows.back()[li]) < std::stod(loss.rows.front()[li]));
    fs::remove_all(out);
}

TEST_CASE("checkpoint save/load round-trips the model exactly") {
    const std::string out = fresh_dir("ckpt");
    SeededRng rng(5);
    ModelDims dims = tiny_config().model_dims();
    const DenoiserModel model = DenoiserModel::init(dims, rng);
    const auto schedule = DiffusionSchedule::linear(30);
    save_checkpoint(out + "/m.json", model, schedule, 17, "stage1");
    const Checkpoint ck = load_checkpoint(out + "/m.json");
    CHECK(ck.model.full_hash() == model.full_hash());
    CHECK(ck.model.frozen_hash() == model.frozen_hash());
    CHECK(ck.step == 17);
    CHECK(ck.schedule.betas == schedule.betas);
    CHECK_THROWS_AS((void)load_checkpoint(out + "/missing.json"), IoError);
    fs::remove_all(out);
}

TEST_CASE("mpo command: pair counts, score table, determinism, degenerate H") {
    const std::string s1 = fresh_dir("mpo_s1");
    ExperimentConfig cfg = tiny_config();
    cmd_train_stage1(cfg, s1);
    const std::string ckpt = s1 + "/stage1.json";

    SUBCASE("M=2, H=3 gives 2 pairs and a 6-row score CSV") {
        const std::string out = fresh_dir("mpo_out");
        cmd_mpo(cfg, ckpt, out);
        const PreferenceDataset ds = load_preference_dataset(out + "/dataset");
        CHECK(ds.pairs.size() == 2);
        CHECK(ds.manifest.skips.empty());
        const CsvTable scores = read_csv(out + "/scores.csv");
        CHECK(scores.rows.size() == 6);
        for (const auto& p : ds.pairs) {
            CHECK(p.winner_seed != p.loser_seed);
            CHECK(p.margin >= 0.0);
        }
        fs::remove_all(out);
    }

    SUBCASE("H=1 yields zero pairs and two recorded skips") {
        ExperimentConfig one = cfg;
        one.mpo_h = 1;
        const std::string out = fresh_dir("mpo_h1");
        cmd_mpo(one, ckpt, out);
        const PreferenceDataset ds = load_preference_dataset(out + "/dataset");
        CHECK(ds.pairs.empty());
        CHECK(ds.manifest.skips.size() == 2);
        fs::remove_all(out);
    }

    SUBCASE("same seed twice gives byte-identical datasets") {
        const std::string o1 = fresh_dir("mpo_d1");
        const std::string o2 = fresh_dir("mpo_d2");
        cmd_mpo(cfg, ckpt, o1);
        cmd_mpo(cfg, ckpt, o2);
        CHECK(slurp(o1 + "/scores.csv") == slurp(o2 + "/scores.csv"));
        CHECK(slurp(o1 + "/dataset/manifest.json") == slurp(o2 + "/dataset/manifest.json"));
        CHECK(slurp(o1 + "/dataset/pair_000000.json") ==
              slurp(o2 + "/dataset/pair_000000.json"));
        fs::remove_all(o1);
        fs::remove_all(o2);
    }

    SUBCASE("missing checkpoint is an I/O error") {
        const std::string out = fresh_dir("mpo_noq");
        CHECK_THROWS_AS(cmd_mpo(cfg, s1 + "/nope.json", out), IoError);
        fs::remove_all(out);
    }
    fs::remove_all(s1);
}

TEST_CASE("dpo command: ln2 first row, zero-lr identity, empty dataset") {
    const std::string s1 = fresh_dir("dpo_s1");
    ExperimentConfig cfg = tiny_config();
    cmd_train_stage1(cfg, s1);
    const std::string ckpt = s1 + "/stage1.json";
    const std::string mpo_out = fresh_dir("dpo_mpo");
    cmd_mpo(cfg, ckpt, mpo_out);
    const std::string dataset = mpo_out + "/dataset";

    SUBCASE("first metrics row is the ln 2 fixed point") {
        const std::string out = fresh_dir("dpo_run");
        cmd_train_dpo(cfg, ckpt, dataset, out);
        const CsvTable m = read_csv(out + "/dpo_metrics.csv");
        REQUIRE(static_cast<int>(m.rows.size()) == cfg.dpo_steps);
        const int li = m.column("loss");
        REQUIRE(li >= 0);
        CHECK(std::stod(m.rows[0][li]) == doctest::Approx(std::log(2.0)).epsilon(1e-6));
        const Checkpoint ck = load_checkpoint(out + "/dpo.json");
        CHECK(ck.stage == "dpo");
        fs::remove_all(out);
    }

    SUBCASE("zero learning rate keeps the stage-1 parameters") {
        ExperimentConfig frozen = cfg;
        frozen.dpo_lr = 0.0;
        const std::string out = fresh_dir("dpo_zero");
        cmd_train_dpo(frozen, ckpt, dataset, out);
        const Checkpoint before = load_checkpoint(ckpt);
        const Checkpoint after = load_checkpoint(out + "/dpo.json");
        CHECK(after.model.full_hash() == before.model.full_hash());
        fs::remove_all(out);
    }

    SUBCASE("empty dataset is a configuration error") {
        ExperimentConfig h1 = cfg;
        h1.mpo_h = 1;
        const std::string empty_out = fresh_dir("dpo_empty_src");
        cmd_mpo(h1, ckpt, empty_out);
        const std::string out = fresh_dir("dpo_empty");
        CHECK_THROWS_AS(cmd_train_dpo(cfg, ckpt, empty_out + "/dataset", out), ConfigError);
        fs::remove_all(empty_out);
        fs::remove_all(out);
    }
    fs::remove_all(mpo_out);
    fs::remove_all(s1);
}

TEST_CASE("sample command: determinism, omega sensitivity, trace export") {
    const std::string s1 = fresh_dir("smp_s1");
    ExperimentConfig cfg = tiny_config();
    cmd_train_stage1(cfg, s1);
    const std::string ckpt = s1 + "/stage1.json";

    SUBCASE("same seed twice gives identical bytes") {
        const std::string o1 = fresh_dir("smp_1");
        const std::string o2 = fresh_dir("smp_2");
        cmd_sample(cfg, ckpt, o1);
        cmd_sample(cfg, ckpt, o2);
        CHECK(slurp(o1 + "/sample.json") == slurp(o2 + "/sample.json"));
        fs::remove_all(o1);
        fs::remove_all(o2);
    }

    SUBCASE("omega=1 and omega=7.5 differ") {
        ExperimentConfig w1 = cfg;
        w1.omega = 1.0;
        const std::string o1 = fresh_dir("smp_w1");
        const std::string o2 = fresh_dir("smp_w75");
        cmd_sample(w1, ckpt, o1);
        cmd_sample(cfg, ckpt, o2);
        CHECK(slurp(o1 + "/sample.json") != slurp(o2 + "/sample.json"));
        fs::remove_all(o1);
        fs::remove_all(o2);
    }

    SUBCASE("steps above the schedule are rejected before any work") {
        ExperimentConfig bad = cfg;
        bad.ddim_steps = cfg.schedule_steps + 1;
        const std::string out = fresh_dir("smp_bad");
        CHECK_THROWS_AS(cmd_sample(bad, ckpt, out), ValidationError);
        fs::remove_all(out);
    }

    SUBCASE("trace export feeds the entropy report") {
        const std::string out = fresh_dir("smp_tr");
        cmd_sample(cfg, ckpt, out, "a", /*write_trace=*/true, /*per_step_traces=*/true);
        CHECK(fs::exists(out + "/trace.csv"));
        CHECK(fs::exists(out + "/trace_step000.csv"));
        const std::string report = out + "/entropy.csv";
        cmd_entropy({out + "/trace.csv"}, report);
        const CsvTable table = read_csv(report);
        REQUIRE_FALSE(table.rows.empty());
        const int hb = table.column("bound_ln_n");
        REQUIRE(hb >= 0);
        for (const auto& row : table.rows) {
            const double h = std::stod(row[1]);
            const double bound = std::stod(row[hb]);
            CHECK(h <= bound + 1e-12);
            CHECK(h >= 0.0);
        }
        fs::remove_all(out);
    }
    fs::remove_all(s1);
}

TEST_CASE("entropy command: uniform and concentrated synthetic traces") {
    const std::string dir = fresh_dir("entropy");

    SUBCASE("uniform assignments hit the ln 4 bound") {
        {
            CsvWriter csv(dir + "/uniform.csv", {"layer", "token", "expert", "weight"});
            int token = 0;
            for (int rep = 0; rep < 8; ++rep) {
                for (int pair = 0; pair < 2; ++pair) {
                    const int e1 = (rep + pair) % 4;
                    const int e2 = (rep + pair + 2) % 4;
                    csv.begin_row();
                    csv.field(0).field(token).field(e1).field(0.5);
                    csv.end_row();
                    csv.begin_row();
                    csv.field(0).field(token).field(e2).field(0.5);
                    csv.end_row();
                    ++token;
                }
            }
        }
        cmd_entropy({dir + "/uniform.csv"}, dir + "/report.csv");
        const CsvTable t = read_csv(dir + "/report.csv");
        REQUIRE(t.rows.size() == 1);
        CHECK(std::stod(t.rows[0][1]) == doctest::Approx(std::log(4.0)).epsilon(1e-9));
        CHECK(std::stod(t.rows[0][2]) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
    }

    SUBCASE("two-expert concentration gives ln 2 and multiple files give columns") {
        {
            CsvWriter csv(dir + "/conc.csv", {"layer", "token", "expert", "weight"});
            for (int token = 0; token < 6; ++token) {
                for (int e : {0, 1}) {
                    csv.begin_row();
                    csv.field(1).field(token).field(e).field(0.5);
                    csv.end_row();
                }
            }
            CsvWriter csv2(dir + "/other.csv", {"layer", "token", "expert", "weight"});
            for (int token = 0; token < 6; ++token) {
                for (int e : {2, 3}) {
                    csv2.begin_row();
                    csv2.field(1).field(token).field(e).field(0.5);
                    csv2.end_row();
                }
            }
        }
        cmd_entropy({dir + "/conc.csv", dir + "/other.csv"}, dir + "/report2.csv");
        const CsvTable t = read_csv(dir + "/report2.csv");
        REQUIRE(t.rows.size() == 1);
        CHECK(t.header.size() == 4);  // layer, two files, bound
        CHECK(std::stod(t.rows[0][1]) == doctest::Approx(std::log(2.0)).epsilon(1e-9));
        CHECK(std::stod(t.rows[0][2]) == doctest::Approx(std::log(2.0)).epsilon(1e-9));
    }

    SUBCASE("empty trace file is insufficient data") {
        { CsvWriter csv(dir + "/empty.csv", {"layer", "token", "expert", "weight"}); }
        CHECK_THROWS_AS(cmd_entropy({dir + "/empty.csv"}, dir + "/r.csv"), DataError);
        CHECK_THROWS_AS(cmd_entropy({}, dir + "/r.csv"), ValidationError);
    }
    fs::remove_all(dir);
}

TEST_CASE("output root environment override") {
    const std::string root = fresh_dir("envroot");
    setenv("MOEDIFF_OUT_ROOT", root.c_str(), 1);
    CHECK(resolve_out_dir("runs") == root + "/runs");
    CHECK(resolve_out_dir("/abs/path") == "/abs/path");
    unsetenv("MOEDIFF_OUT_ROOT");
    CHECK(resolve_out_dir("runs") == "runs");
    fs::remove_all(root);
}
