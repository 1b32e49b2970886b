#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "moediff/diffusion.hpp"
#include "moediff/matrix.hpp"

namespace moediff {

/// Maps an artifact (latent grid, condition feature map or text embedding,
/// all carried as Matrix2D) to a fixed-dimension vector. Deterministic for a
/// fixed input. Stand-in boundary for the pretrained image/text encoders.
class Embedder {
public:
    virtual ~Embedder() = default;
    virtual std::string name() const = 0;
    virtual int dim() const = 0;
    virtual std::vector<double> embed(const Matrix2D& input) const = 0;
};

/// Test double: a fixed pseudo-random linear projection whose coefficients
/// are hashed from (seed, output index, entry position). Works for any input
/// shape and is bit-stable across runs.
class HashProjectionEmbedder : public Embedder {
public:
    HashProjectionEmbedder(std::string name, int dim, std::uint64_t seed);

    std::string name() const override { return name_; }
    int dim() const override { return dim_; }
    std::vector<double> embed(const Matrix2D& input) const override;

private:
    std::string name_;
    int dim_;
    std::uint64_t seed_;
};

/// The three rating dimensions of one scoring task. Key strings are part of
/// the wire protocol and must match the scorer payload exactly.
struct TaskSchema {
    std::string task;  // "dressing" | "garment"
    std::array<std::string, 3> keys;
};

const TaskSchema& dressing_schema();
const TaskSchema& garment_schema();
const TaskSchema& schema_for_task(const std::string& task);

/// Structured-output judge: plain-text request in, plain-text response out.
/// The response must contain a <OUTPUT>{...}</OUTPUT> block with exactly the
/// task's three keys, each an integer in [1, 10]. This is the process
/// boundary where a real VLM judge can be wired in later.
class QualityScorer {
public:
    virtual ~QualityScorer() = default;
    virtual std::string name() const = 0;
    virtual std::string respond(const std::string& request) const = 0;
};

/// Test double: derives the three sub-scores deterministically from the
/// candidate statistics quoted in the request and wraps them in a
/// protocol-conformant response (with surrounding prose).
class RuleBasedScorer : public QualityScorer {
public:
    RuleBasedScorer(const TaskSchema& schema, std::uint64_t seed);

    std::string name() const override;
    std::string respond(const std::string& request) const override;

private:
    TaskSchema schema_;
    std::uint64_t seed_;
};

/// Request text for one candidate: a summary of the latent plus the task's
/// rating instructions (dimensions, 1-10 scale, output tag format).
std::string build_score_request(const Matrix2D& latent, const TaskSchema& schema,
                                const std::string& candidate_id);

/// Extracts the first <OUTPUT>...</OUTPUT> span, parses the flat JSON object
/// against the schema and returns the sum of the three sub-scores (in
/// [3, 30]). Throws ParseError on any deviation: missing tags, malformed
/// JSON, missing/extra keys, non-integer or out-of-range values.
int parse_quality_payload(const std::string& response, const TaskSchema& schema);

// ---- evaluators --------------------------------------------------------------

/// Mean cosine similarity between the candidate embedding and each condition
/// embedding, in [-1, 1]. Throws DataError on zero-norm embeddings.
double content_fidelity(const Matrix2D& latent, const ConditionSet& cond,
                        const Embedder& embedder);

/// Cosine similarity of image-space and text-space embeddings, in [-1, 1].
double textual_alignment(const Matrix2D& latent, std::span<const double> prompt_embedding,
                         const Embedder& image_embedder, const Embedder& text_embedder);

/// Runs the scorer protocol for one candidate; retries a failed parse up to
/// `retries` extra times before giving up.
double perceptual_quality(const Matrix2D& latent, const QualityScorer& scorer,
                          const TaskSchema& schema, const std::string& candidate_id,
                          int retries = 0);

// ---- candidate pool -----------------------------------------------------------

struct Candidate {
    Matrix2D latent;
    std::uint64_t seed = 0;
    bool valid = true;
    std::string invalid_reason;
    bool scored = false;
    double s_c = 0.0, s_p = 0.0, s_t = 0.0;
    double z_c = 0.0, z_p = 0.0, z_t = 0.0, total = 0.0;  // filled by composite_rank
};

struct CandidateBundle {
    ConditionSet cond;
    std::vector<Candidate> candidates;
};

struct CandidatePool {
    std::vector<CandidateBundle> bundles;
    std::uint64_t base_seed = 0;
    std::string content_evaluator, perceptual_evaluator, textual_evaluator;
};

struct SamplerConfig {
    int steps = 50;
    double omega = 7.5;
    std::uint64_t base_seed = 0;
};

/// H DDIM samples per bundle from the frozen reference model, each with its
/// own recorded seed. Throws ConfigError when M exceeds the dataset size.
CandidatePool sample_candidates(const DenoiserModel& ref,
                                const std::vector<ConditionSet>& dataset, int M, int H,
                                const DiffusionSchedule& schedule, const SamplerConfig& cfg);

/// Scores every candidate with the three evaluators. A candidate that fails
/// any evaluator is marked invalid with the reason; the rest keep all three
/// raw scores.
void score_pool(CandidatePool& pool, const Embedder& content_embedder,
                const Embedder& image_embedder, const Embedder& text_embedder,
                const QualityScorer& scorer, const TaskSchema& schema, int retries = 0);

struct RankResult {
    int winner = -1;
    int loser = -1;
    double margin = 0.0;  // total(winner) - total(loser)
};

/// Z-scores each evaluator column over the bundle's valid candidates, sums
/// them into totals, and returns argmax/argmin (ties -> lowest candidate
/// index). Throws DataError with fewer than 2 valid candidates.
RankResult composite_rank(CandidatePool& pool, int bundle_index);

struct PreferencePair {
    ConditionSet cond;
    Matrix2D winner;
    Matrix2D loser;
    double margin = 0.0;
    std::uint64_t winner_seed = 0, loser_seed = 0;
    int bundle_index = -1, winner_index = -1, loser_index = -1;
};

struct DatasetManifest {
    int schema = 1;
    int pair_count = 0;
    int bundle_count = 0;
    int candidates_per_bundle = 0;
    std::uint64_t base_seed = 0;
    std::string content_evaluator, perceptual_evaluator, textual_evaluator;
    std::vector<std::pair<int, std::string>> skips;  // (bundle index, reason)
};

struct PreferenceDataset {
    std::vector<PreferencePair> pairs;
    DatasetManifest manifest;
};

/// One pair per bundle that ranks cleanly; bundles that cannot produce a
/// pair are recorded in the manifest, not fatal.
PreferenceDataset build_preference_dataset(CandidatePool& pool);

void save_preference_dataset(const std::string& dir, const PreferenceDataset& ds);
PreferenceDataset load_preference_dataset(const std::string& dir);

/// bundle,candidate,s_c,s_p,s_t,z_c,z_p,z_t,total,valid,reason
void export_score_csv(const CandidatePool& pool, const std::string& path);

}  // namespace moediff
