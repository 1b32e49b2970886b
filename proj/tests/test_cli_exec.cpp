// Drives the real CLI binary (path in MOEDIFF_CLI_BIN) through argv and
// checks the documented exit codes and produced files.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

std::string cli_bin() {
    const char* bin = std::getenv("MOEDIFF_CLI_BIN");
    REQUIRE_MESSAGE(bin != nullptr, "MOEDIFF_CLI_BIN must point at the CLI binary");
    return bin;
}

int run(const std::string& args, const std::string& stderr_file = "/dev/null") {
    const std::string cmd = cli_bin() + " " + args + " 2>" + stderr_file;
    const int status = std::system(cmd.c_str());
    REQUIRE(status != -1);
    return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

const char* kTinyConfig =
    "seed = 11\n"
    "tokens = 6\n"
    "dim = 6\n"
    "text_dim = 4\n"
    "cond_tokens = 6\n"
    "layers = 1\n"
    "conditions = 2\n"
    "experts = 4\n"
    "top_k = 2\n"
    "lora_rank = 2\n"
    "expert_hidden = 8\n"
    "schedule_steps = 30\n"
    "ddim_steps = 4\n"
    "stage1_lr = 0.001\n"
    "stage1_steps = 10\n"
    "dataset_size = 4\n"
    "mpo_m = 2\n"
    "mpo_h = 3\n"
    "embed_dim = 8\n"
    "dpo_lr = 1e-5\n"
    "dpo_beta = 100\n"
    "dpo_steps = 3\n";

}  // namespace

TEST_CASE("full pipeline through the binary: exit 0 and artifacts on disk") {
    const fs::path dir = fs::temp_directory_path() / "moediff_cli_e2e";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const std::string cfg = (dir / "exp.cfg").string();
    std::ofstream(cfg) << kTinyConfig;

    const std::string s1 = (dir / "s1").string();
    CHECK(run("train-stage1 --config " + cfg + " --out " + s1) == 0);
    CHECK(fs::exists(s1 + "/stage1.json"));
    CHECK(fs::exists(s1 + "/stage1_loss.csv"));

    const std::string mpo = (dir / "mpo").string();
    CHECK(run("mpo --config " + cfg + " --checkpoint " + s1 + "/stage1.json --out " + mpo) ==
          0);
    CHECK(fs::exists(mpo + "/dataset/manifest.json"));
    CHECK(fs::exists(mpo + "/scores.csv"));

    const std::string dpo = (dir / "dpo").string();
    CHECK(run("train-dpo --config " + cfg + " --checkpoint " + s1 +
              "/stage1.json --dataset " + mpo + "/dataset --out " + dpo) == 0);
    CHECK(fs::exists(dpo + "/dpo.json"));
    CHECK(fs::exists(dpo + "/dpo_metrics.csv"));

    const std::string smp = (dir / "smp").string();
    CHECK(run("sample --config " + cfg + " --checkpoint " + dpo + "/dpo.json --out " + smp +
              " --prompt a --trace") == 0);
    CHECK(fs::exists(smp + "/sample.json"));
    CHECK(fs::exists(smp + "/trace.csv"));

    const std::string report = (dir / "entropy.csv").string();
    CHECK(run("entropy " + smp + "/trace.csv --out " + report) == 0);
    CHECK(fs::exists(report));

    SUBCASE("seed override changes the sample") {
        const std::string smp2 = (dir / "smp2").string();
        CHECK(run("sample --config " + cfg + " --checkpoint " + dpo + "/dpo.json --out " +
                  smp2 + " --prompt a --seed 999") == 0);
        CHECK(slurp(smp2 + "/sample.json") != slurp(smp + "/sample.json"));
    }

    fs::remove_all(dir);
}

TEST_CASE("exit codes: validation 1, io 2") {
    const fs::path dir = fs::temp_directory_path() / "moediff_cli_codes";
    fs::remove_all(dir);
    fs::create_directories(dir);

    SUBCASE("invalid config key combination exits 1 and names the key") {
        const std::string bad = (dir / "bad.cfg").string();
        std::ofstream(bad) << kTinyConfig << "top_k = 9\n";
        const std::string errfile = (dir / "stderr.txt").string();
        CHECK(run("train-stage1 --config " + bad + " --out " + (dir / "o").string(),
                  errfile) == 1);
        CHECK(slurp(errfile).find("top_k") != std::string::npos);
    }

    SUBCASE("missing config file exits 2") {
        CHECK(run("train-stage1 --config " + (dir / "nope.cfg").string() + " --out " +
                  (dir / "o2").string()) == 2);
    }

    SUBCASE("missing checkpoint exits 2") {
        const std::string cfg = (dir / "ok.cfg").string();
        std::ofstream(cfg) << kTinyConfig;
        CHECK(run("mpo --config " + cfg + " --checkpoint " + (dir / "missing.json").string() +
                  " --out " + (dir / "o3").string()) == 2);
    }

    SUBCASE("unknown subcommand fails") {
        CHECK(run("frobnicate") != 0);
    }

    fs::remove_all(dir);
}
