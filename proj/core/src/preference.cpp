#include "moediff/preference.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "moediff/csv.hpp"
#include "moediff/error.hpp"
#include "moediff/numerics.hpp"
#include "moediff/rng.hpp"

namespace moediff {

namespace {

std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

double unit_from_hash(std::uint64_t h) {
    // [-1, 1) with 53 significant bits
    return static_cast<double>(h >> 11) * 0x1.0p-52 - 1.0;
}

}  // namespace

HashProjectionEmbedder::HashProjectionEmbedder(std::string name, int dim, std::uint64_t seed)
    : name_(std::move(name)), dim_(dim), seed_(seed) {}

std::vector<double> HashProjectionEmbedder::embed(const Matrix2D& input) const {
    std::vector<double> out(dim_, 0.0);
    for (int j = 0; j < dim_; ++j) {
        const std::uint64_t hj = mix64(seed_ ^ mix64(static_cast<std::uint64_t>(j) + 1));
        double acc = 0.0;
        for (int r = 0; r < input.rows(); ++r) {
            for (int c = 0; c < input.cols(); ++c) {
                const std::uint64_t h =
                    mix64(hj ^ mix64((static_cast<std::uint64_t>(r) << 32) |
                                     static_cast<std::uint64_t>(c)));
                acc += input(r, c) * unit_from_hash(h);
            }
        }
        out[j] = acc;
    }
    return out;
}

const TaskSchema& dressing_schema() {
    static const TaskSchema s{
        "dressing",
        {"Human Realism", "Clothing Fit", "Overall Aesthetic Quality and Realism"}};
    return s;
}

const TaskSchema& garment_schema() {
    static const TaskSchema s{
        "garment",
        {"Material and Texture Realism", "Structural Integrity and Drape", "Detail Fidelity"}};
    return s;
}

const TaskSchema& schema_for_task(const std::string& task) {
    if (task == "dressing") return dressing_schema();
    if (task == "garment") return garment_schema();
    throw ConfigError("unknown scoring task '" + task + "' (expected dressing|garment)");
}

std::string build_score_request(const Matrix2D& latent, const TaskSchema& schema,
                                const std::string& candidate_id) {
    double mean = 0.0, sq = 0.0, absmax = 0.0;
    for (double x : latent.data()) {
        mean += x;
        sq += x * x;
        absmax = std::max(absmax, std::fabs(x));
    }
    const double n = static_cast<double>(latent.size());
    mean /= n;
    const double rms = std::sqrt(sq / n);

    char stats[160];
    std::snprintf(stats, sizeof(stats), "mean=%.6f rms=%.6f absmax=%.6f", mean, rms, absmax);

    std::string req;
    req += "candidate " + candidate_id + "\n";
    req += "rows=" + std::to_string(latent.rows()) + " cols=" + std::to_string(latent.cols()) +
           "\n";
    req += std::string(stats) + "\n\n";
    req += "Rate the " + schema.task + " candidate on three aspects, each as an integer from 1 "
           "(worst) to 10 (best), with no explanations:\n";
    for (std::size_t i = 0; i < schema.keys.size(); ++i) {
        req += std::to_string(i + 1) + ". " + schema.keys[i] + "\n";
    }
    req += "Enclose the JSON output within <OUTPUT> and </OUTPUT> tags, for example:\n";
    req += "<OUTPUT>{\"" + schema.keys[0] + "\": 1-10, \"" + schema.keys[1] + "\": 1-10, \"" +
           schema.keys[2] + "\": 1-10}</OUTPUT>\n";
    return req;
}

RuleBasedScorer::RuleBasedScorer(const TaskSchema& schema, std::uint64_t seed)
    : schema_(schema), seed_(seed) {}

std::string RuleBasedScorer::name() const { return "rule-based-scorer-v1/" + schema_.task; }

namespace {

std::string extract_token(const std::string& text, const std::string& marker) {
    const auto pos = text.find(marker);
    if (pos == std::string::npos) return {};
    const auto start = pos + marker.size();
    auto end = text.find_first_of(" \n\t", start);
    if (end == std::string::npos) end = text.size();
    return text.substr(start, end - start);
}

std::uint64_t fnv_str(std::uint64_t h, const std::string& s) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace

std::string RuleBasedScorer::respond(const std::string& request) const {
    // Deterministic sub-scores keyed on the candidate statistics quoted in
    // the request. Pure text in, pure text out: the same boundary a real
    // judge process would have.
    const std::string mean = extract_token(request, "mean=");
    const std::string rms = extract_token(request, "rms=");
    const std::string absmax = extract_token(request, "absmax=");
    nlohmann::json ratings = nlohmann::json::object();
    for (std::size_t i = 0; i < schema_.keys.size(); ++i) {
        std::uint64_t h = mix64(seed_ + i);
        h = fnv_str(h, mean);
        h = fnv_str(h, rms);
        h = fnv_str(h, absmax);
        ratings[schema_.keys[i]] = 1 + static_cast<int>(mix64(h) % 10);
    }
    std::string out;
    out += "Assessment of the candidate follows the requested format.\n";
    out += "<OUTPUT>" + ratings.dump() + "</OUTPUT>\n";
    out += "No further remarks.\n";
    return out;
}

int parse_quality_payload(const std::string& response, const TaskSchema& schema) {
    const std::string open = "<OUTPUT>";
    const std::string close = "</OUTPUT>";
    const auto p0 = response.find(open);
    if (p0 == std::string::npos) throw ParseError("missing <OUTPUT> tag");
    const auto p1 = response.find(close, p0 + open.size());
    if (p1 == std::string::npos) throw ParseError("missing </OUTPUT> tag");
    const std::string payload = response.substr(p0 + open.size(), p1 - p0 - open.size());

    nlohmann::json j;
    try {
        j = nlohmann::json::parse(payload);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("malformed JSON payload: ") + e.what());
    }
    if (!j.is_object()) throw ParseError("payload is not a JSON object");
    if (j.size() != schema.keys.size()) {
        throw ParseError("payload has " + std::to_string(j.size()) + " keys, expected " +
                         std::to_string(schema.keys.size()));
    }
    int sum = 0;
    for (const auto& key : schema.keys) {
        if (!j.contains(key)) throw ParseError("payload missing key '" + key + "'");
        const auto& v = j.at(key);
        if (!v.is_number_integer()) {
            throw ParseError("value for '" + key + "' is not an integer");
        }
        const auto x = v.get<std::int64_t>();
        if (x < 1 || x > 10) {
            throw ParseError("value " + std::to_string(x) + " for '" + key +
                             "' outside [1, 10]");
        }
        sum += static_cast<int>(x);
    }
    return sum;
}

double content_fidelity(const Matrix2D& latent, const ConditionSet& cond,
                        const Embedder& embedder) {
    if (cond.count() < 1) throw DataError("content_fidelity: empty condition set");
    const std::vector<double> cand = embedder.embed(latent);
    double acc = 0.0;
    for (const auto& c : cond.features) {
        const std::vector<double> ce = embedder.embed(c);
        acc += cosine_sim(cand, ce);
    }
    return acc / static_cast<double>(cond.count());
}

double textual_alignment(const Matrix2D& latent, std::span<const double> prompt_embedding,
                         const Embedder& image_embedder, const Embedder& text_embedder) {
    const std::vector<double> img = image_embedder.embed(latent);
    const std::vector<double> txt = text_embedder.embed(Matrix2D::row_vector(prompt_embedding));
    return cosine_sim(img, txt);
}

double perceptual_quality(const Matrix2D& latent, const QualityScorer& scorer,
                          const TaskSchema& schema, const std::string& candidate_id,
                          int retries) {
    const std::string request = build_score_request(latent, schema, candidate_id);
    for (int attempt = 0;; ++attempt) {
        try {
            return static_cast<double>(parse_quality_payload(scorer.respond(request), schema));
        } catch (const ParseError&) {
            if (attempt >= retries) throw;
        }
    }
}

CandidatePool sample_candidates(const DenoiserModel& ref,
                                const std::vector<ConditionSet>& dataset, int M, int H,
                                const DiffusionSchedule& schedule, const SamplerConfig& cfg) {
    if (M > static_cast<int>(dataset.size())) {
        throw ConfigError("sample_candidates: M=" + std::to_string(M) + " exceeds dataset size " +
                          std::to_string(dataset.size()));
    }
    if (H < 1) throw ConfigError("sample_candidates: H must be >= 1");
    CandidatePool pool;
    pool.base_seed = cfg.base_seed;
    SeededRng seed_source(cfg.base_seed);
    for (int b = 0; b < M; ++b) {
        CandidateBundle bundle;
        bundle.cond = dataset[b];
        for (int j = 0; j < H; ++j) {
            Candidate c;
            c.seed = seed_source.derive_seed(static_cast<std::uint64_t>(b) * H + j);
            SeededRng rng(c.seed);
            c.latent = ddim_sample(ref, bundle.cond, schedule, cfg.steps, cfg.omega, rng);
            bundle.candidates.push_back(std::move(c));
        }
        pool.bundles.push_back(std::move(bundle));
    }
    return pool;
}

void score_pool(CandidatePool& pool, const Embedder& content_embedder,
                const Embedder& image_embedder, const Embedder& text_embedder,
                const QualityScorer& scorer, const TaskSchema& schema, int retries) {
    pool.content_evaluator = content_embedder.name();
    pool.perceptual_evaluator = scorer.name();
    pool.textual_evaluator = image_embedder.name() + "+" + text_embedder.name();
    for (std::size_t b = 0; b < pool.bundles.size(); ++b) {
        auto& bundle = pool.bundles[b];
        for (std::size_t j = 0; j < bundle.candidates.size(); ++j) {
            auto& cand = bundle.candidates[j];
            const std::string id = std::to_string(b) + "/" + std::to_string(j);
            try {
                cand.s_c = content_fidelity(cand.latent, bundle.cond, content_embedder);
                cand.s_p = perceptual_quality(cand.latent, scorer, schema, id, retries);
                cand.s_t = textual_alignment(cand.latent, bundle.cond.text_embedding,
                                             image_embedder, text_embedder);
                cand.scored = true;
            } catch (const Error& e) {
                cand.valid = false;
                cand.scored = false;
                cand.invalid_reason = e.what();
            }
        }
    }
}

RankResult composite_rank(CandidatePool& pool, int bundle_index) {
    auto& bundle = pool.bundles.at(bundle_index);
    std::vector<int> valid;
    for (std::size_t j = 0; j < bundle.candidates.size(); ++j) {
        if (bundle.candidates[j].valid && bundle.candidates[j].scored) {
            valid.push_back(static_cast<int>(j));
        }
    }
    if (valid.size() < 2) {
        throw DataError("composite_rank: bundle " + std::to_string(bundle_index) + " has " +
                        std::to_string(valid.size()) + " valid candidates (need >= 2)");
    }
    std::vector<double> sc, sp, st;
    for (int j : valid) {
        sc.push_back(bundle.candidates[j].s_c);
        sp.push_back(bundle.candidates[j].s_p);
        st.push_back(bundle.candidates[j].s_t);
    }
    const std::vector<double> zc = zscore(sc), zp = zscore(sp), zt = zscore(st);
    RankResult res;
    double best = 0.0, worst = 0.0;
    for (std::size_t i = 0; i < valid.size(); ++i) {
        auto& cand = bundle.candidates[valid[i]];
        cand.z_c = zc[i];
        cand.z_p = zp[i];
        cand.z_t = zt[i];
        cand.total = zc[i] + zp[i] + zt[i];
        if (res.winner < 0 || cand.total > best) {
            res.winner = valid[i];
            best = cand.total;
        }
        if (res.loser < 0 || cand.total < worst) {
            res.loser = valid[i];
            worst = cand.total;
        }
    }
    res.margin = best - worst;
    return res;
}

PreferenceDataset build_preference_dataset(CandidatePool& pool) {
    PreferenceDataset ds;
    ds.manifest.bundle_count = static_cast<int>(pool.bundles.size());
    ds.manifest.candidates_per_bundle =
        pool.bundles.empty() ? 0 : static_cast<int>(pool.bundles.front().candidates.size());
    ds.manifest.base_seed = pool.base_seed;
    ds.manifest.content_evaluator = pool.content_evaluator;
    ds.manifest.perceptual_evaluator = pool.perceptual_evaluator;
    ds.manifest.textual_evaluator = pool.textual_evaluator;
    for (std::size_t b = 0; b < pool.bundles.size(); ++b) {
        RankResult rank;
        try {
            rank = composite_rank(pool, static_cast<int>(b));
        } catch (const DataError& e) {
            ds.manifest.skips.emplace_back(static_cast<int>(b), e.what());
            continue;
        }
        if (rank.winner == rank.loser) {
            ds.manifest.skips.emplace_back(static_cast<int>(b),
                                           "degenerate tie: winner equals loser");
            continue;
        }
        const auto& bundle = pool.bundles[b];
        PreferencePair pair;
        pair.cond = bundle.cond;
        pair.winner = bundle.candidates[rank.winner].latent;
        pair.loser = bundle.candidates[rank.loser].latent;
        pair.margin = rank.margin;
        pair.winner_seed = bundle.candidates[rank.winner].seed;
        pair.loser_seed = bundle.candidates[rank.loser].seed;
        pair.bundle_index = static_cast<int>(b);
        pair.winner_index = rank.winner;
        pair.loser_index = rank.loser;
        ds.pairs.push_back(std::move(pair));
    }
    ds.manifest.pair_count = static_cast<int>(ds.pairs.size());
    return ds;
}

namespace {

nlohmann::json cond_to_json(const ConditionSet& c) {
    nlohmann::json feats = nlohmann::json::array();
    for (const auto& f : c.features) feats.push_back(matrix_to_json(f));
    return {{"features", feats}, {"text_embedding", c.text_embedding}};
}

ConditionSet cond_from_json(const nlohmann::json& j) {
    ConditionSet c;
    for (const auto& f : j.at("features")) c.features.push_back(matrix_from_json(f));
    c.text_embedding = j.at("text_embedding").get<std::vector<double>>();
    return c;
}

std::string pair_filename(int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "pair_%06d.json", index);
    return buf;
}

}  // namespace

void save_preference_dataset(const std::string& dir, const PreferenceDataset& ds) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create dataset directory " + dir + ": " + ec.message());

    nlohmann::json skips = nlohmann::json::array();
    for (const auto& [b, reason] : ds.manifest.skips) {
        skips.push_back({{"bundle", b}, {"reason", reason}});
    }
    nlohmann::json manifest = {
        {"schema", ds.manifest.schema},
        {"pair_count", ds.manifest.pair_count},
        {"bundle_count", ds.manifest.bundle_count},
        {"candidates_per_bundle", ds.manifest.candidates_per_bundle},
        {"base_seed", ds.manifest.base_seed},
        {"evaluators",
         {{"content", ds.manifest.content_evaluator},
          {"perceptual", ds.manifest.perceptual_evaluator},
          {"textual", ds.manifest.textual_evaluator}}},
        {"skips", skips}};
    std::ofstream mf(fs::path(dir) / "manifest.json", std::ios::binary | std::ios::trunc);
    if (!mf) throw IoError("cannot write manifest in " + dir);
    mf << manifest.dump(2) << '\n';

    for (std::size_t i = 0; i < ds.pairs.size(); ++i) {
        const auto& p = ds.pairs[i];
        nlohmann::json j = {{"schema", 1},
                            {"cond", cond_to_json(p.cond)},
                            {"winner", matrix_to_json(p.winner)},
                            {"loser", matrix_to_json(p.loser)},
                            {"margin", p.margin},
                            {"winner_seed", p.winner_seed},
                            {"loser_seed", p.loser_seed},
                            {"bundle_index", p.bundle_index},
                            {"winner_index", p.winner_index},
                            {"loser_index", p.loser_index}};
        std::ofstream pf(fs::path(dir) / pair_filename(static_cast<int>(i)),
                         std::ios::binary | std::ios::trunc);
        if (!pf) throw IoError("cannot write pair file in " + dir);
        pf << j.dump(2) << '\n';
    }
}

PreferenceDataset load_preference_dataset(const std::string& dir) {
    namespace fs = std::filesystem;
    std::ifstream mf(fs::path(dir) / "manifest.json", std::ios::binary);
    if (!mf) throw IoError("cannot open manifest in " + dir);
    nlohmann::json manifest;
    try {
        mf >> manifest;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("manifest parse failure: ") + e.what());
    }
    PreferenceDataset ds;
    ds.manifest.schema = manifest.at("schema").get<int>();
    if (ds.manifest.schema != 1) throw ParseError("unsupported dataset schema");
    ds.manifest.pair_count = manifest.at("pair_count").get<int>();
    ds.manifest.bundle_count = manifest.at("bundle_count").get<int>();
    ds.manifest.candidates_per_bundle = manifest.at("candidates_per_bundle").get<int>();
    ds.manifest.base_seed = manifest.at("base_seed").get<std::uint64_t>();
    ds.manifest.content_evaluator = manifest.at("evaluators").at("content").get<std::string>();
    ds.manifest.perceptual_evaluator =
        manifest.at("evaluators").at("perceptual").get<std::string>();
    ds.manifest.textual_evaluator = manifest.at("evaluators").at("textual").get<std::string>();
    for (const auto& s : manifest.at("skips")) {
        ds.manifest.skips.emplace_back(s.at("bundle").get<int>(),
                                       s.at("reason").get<std::string>());
    }
    for (int i = 0; i < ds.manifest.pair_count; ++i) {
        std::ifstream pf(fs::path(dir) / pair_filename(i), std::ios::binary);
        if (!pf) throw IoError("missing pair file " + pair_filename(i) + " in " + dir);
        nlohmann::json j;
        try {
            pf >> j;
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(std::string("pair parse failure: ") + e.what());
        }
        PreferencePair p;
        p.cond = cond_from_json(j.at("cond"));
        p.winner = matrix_from_json(j.at("winner"));
        p.loser = matrix_from_json(j.at("loser"));
        p.margin = j.at("margin").get<double>();
        p.winner_seed = j.at("winner_seed").get<std::uint64_t>();
        p.loser_seed = j.at("loser_seed").get<std::uint64_t>();
        p.bundle_index = j.at("bundle_index").get<int>();
        p.winner_index = j.at("winner_index").get<int>();
        p.loser_index = j.at("loser_index").get<int>();
        ds.pairs.push_back(std::move(p));
    }
    return ds;
}

void export_score_csv(const CandidatePool& pool, const std::string& path) {
    CsvWriter csv(path, {"bundle", "candidate", "s_c", "s_p", "s_t", "z_c", "z_p", "z_t",
                         "total", "valid", "reason"});
    for (std::size_t b = 0; b < pool.bundles.size(); ++b) {
        const auto& bundle = pool.bundles[b];
        for (std::size_t j = 0; j < bundle.candidates.size(); ++j) {
            const auto& c = bundle.candidates[j];
            std::string reason = c.invalid_reason;
            std::replace(reason.begin(), reason.end(), ',', ';');
            csv.begin_row();
            csv.field(static_cast<std::int64_t>(b)).field(static_cast<std::int64_t>(j));
            if (c.scored) {
                csv.field(c.s_c).field(c.s_p).field(c.s_t);
                csv.field(c.z_c).field(c.z_p).field(c.z_t).field(c.total);
            } else {
                csv.field("").field("").field("").field("").field("").field("").field("");
            }
            csv.field(std::string(c.valid ? "1" : "0")).field(reason);
            csv.end_row();
        }
    }
}

}  // namespace moediff
