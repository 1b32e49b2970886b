#include "moediff/attention.hpp"

#include "moediff/error.hpp"

namespace moediff {

AttentionBlockParams AttentionBlockParams::init(int dim, int conditions, int rank, double scaling,
                                                SeededRng& rng) {
    AttentionBlockParams p;
    p.dim = dim;
    // Frozen bases stand in for a pretrained backbone: gain-scaled identity
    // queries/keys make attention self-focused (content matching for the
    // cross streams), identity-leaning values pass token content through.
    // Small perturbations keep the heads off the exact diagonal.
    auto qk_base = [&]() {
        return add(scale(Matrix2D::identity(dim), 2.5), rng.normal_matrix(dim, dim, 0.02));
    };
    auto v_base = [&]() {
        return add(Matrix2D::identity(dim), rng.normal_matrix(dim, dim, 0.02));
    };
    p.self_base = {qk_base(), qk_base(), v_base()};
    p.cross_base = {qk_base(), qk_base(), v_base()};
    for (int i = 0; i < conditions; ++i) {
        p.self_lora.push_back({LoraDelta::init(dim, dim, rank, scaling, rng),
                               LoraDelta::init(dim, dim, rank, scaling, rng),
                               LoraDelta::init(dim, dim, rank, scaling, rng)});
        p.cross_lora.push_back({LoraDelta::init(dim, dim, rank, scaling, rng),
                                LoraDelta::init(dim, dim, rank, scaling, rng)});
    }
    return p;
}

void AttentionBlockParams::validate() const {
    if (self_lora.size() != cross_lora.size()) {
        throw ConfigError("attention params: self/cross LoRA set counts differ (" +
                          std::to_string(self_lora.size()) + " vs " +
                          std::to_string(cross_lora.size()) + ")");
    }
    if (dim <= 0) throw ConfigError("attention params: dim must be positive");
}

namespace {

void check_feature_dim(const Matrix2D& f, int dim, const char* what) {
    if (f.cols() != dim) {
        throw ShapeError(std::string(what) + " feature dim mismatch: " + f.shape_str() +
                         " vs d=" + std::to_string(dim));
    }
}

}  // namespace

std::vector<Matrix2D> isolated_self_attention(const std::vector<Matrix2D>& features,
                                              const AttentionBlockParams& params) {
    if (static_cast<int>(features.size()) != params.condition_count()) {
        throw ConfigError("isolated_self_attention: " + std::to_string(features.size()) +
                          " features for " + std::to_string(params.condition_count()) +
                          " condition parameter sets");
    }
    PlainEngine eng;
    std::vector<Matrix2D> handles;
    handles.reserve(features.size());
    for (const auto& f : features) {
        check_feature_dim(f, params.dim, "isolated_self_attention");
        handles.push_back(f);
    }
    return isolated_self_attention_t(eng, handles, params);
}

Matrix2D cross_attention_stream(const Matrix2D& z, const Matrix2D& f_i,
                                const AttentionBlockParams& params, int i) {
    if (i < 0 || i >= params.condition_count()) {
        throw ConfigError("cross_attention_stream: condition index " + std::to_string(i) +
                          " out of range (N=" + std::to_string(params.condition_count()) + ")");
    }
    check_feature_dim(z, params.dim, "cross_attention_stream latent");
    check_feature_dim(f_i, params.dim, "cross_attention_stream condition");
    PlainEngine eng;
    return cross_attention_stream_t(eng, z, f_i, params, i);
}

Matrix2D inject_and_combine(const Matrix2D& z, const std::vector<Matrix2D>& refined,
                            const AttentionBlockParams& params) {
    check_feature_dim(z, params.dim, "inject_and_combine latent");
    for (const auto& r : refined) {
        if (!r.same_shape(z)) {
            throw ShapeError("inject_and_combine: refined feature " + r.shape_str() +
                             " does not match latent " + z.shape_str());
        }
    }
    PlainEngine eng;
    return inject_and_combine_t(eng, z, refined, params);
}

// ---- serialization ----------------------------------------------------------

nlohmann::json matrix_to_json(const Matrix2D& m) {
    return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", m.data()}};
}

Matrix2D matrix_from_json(const nlohmann::json& j) {
    return Matrix2D(j.at("rows").get<int>(), j.at("cols").get<int>(),
                    j.at("data").get<std::vector<double>>());
}

nlohmann::json lora_delta_to_json(const LoraDelta& d) {
    return {{"down", matrix_to_json(d.down)},
            {"up", matrix_to_json(d.up)},
            {"rank", d.rank},
            {"scaling", d.scaling}};
}

LoraDelta lora_delta_from_json(const nlohmann::json& j) {
    LoraDelta d;
    d.down = matrix_from_json(j.at("down"));
    d.up = matrix_from_json(j.at("up"));
    d.rank = j.at("rank").get<int>();
    d.scaling = j.at("scaling").get<double>();
    return d;
}

namespace {

nlohmann::json base_to_json(const AttnBase& b) {
    return {{"wq", matrix_to_json(b.wq)}, {"wk", matrix_to_json(b.wk)},
            {"wv", matrix_to_json(b.wv)}};
}

AttnBase base_from_json(const nlohmann::json& j) {
    return {matrix_from_json(j.at("wq")), matrix_from_json(j.at("wk")),
            matrix_from_json(j.at("wv"))};
}

}  // namespace

nlohmann::json attention_params_to_json(const AttentionBlockParams& p) {
    nlohmann::json self_lora = nlohmann::json::array();
    for (const auto& c : p.self_lora) {
        self_lora.push_back({{"q", lora_delta_to_json(c.q)},
                             {"k", lora_delta_to_json(c.k)},
                             {"v", lora_delta_to_json(c.v)}});
    }
    nlohmann::json cross_lora = nlohmann::json::array();
    for (const auto& c : p.cross_lora) {
        cross_lora.push_back(
            {{"k", lora_delta_to_json(c.k)}, {"v", lora_delta_to_json(c.v)}});
    }
    return {{"schema", 1},
            {"dim", p.dim},
            {"self_base", base_to_json(p.self_base)},
            {"self_lora", self_lora},
            {"cross_base", base_to_json(p.cross_base)},
            {"cross_lora", cross_lora}};
}

AttentionBlockParams attention_params_from_json(const nlohmann::json& j) {
    if (j.at("schema").get<int>() != 1) {
        throw ParseError("attention params: unsupported schema version");
    }
    AttentionBlockParams p;
    p.dim = j.at("dim").get<int>();
    p.self_base = base_from_json(j.at("self_base"));
    p.cross_base = base_from_json(j.at("cross_base"));
    for (const auto& c : j.at("self_lora")) {
        p.self_lora.push_back({lora_delta_from_json(c.at("q")), lora_delta_from_json(c.at("k")),
                               lora_delta_from_json(c.at("v"))});
    }
    for (const auto& c : j.at("cross_lora")) {
        p.cross_lora.push_back(
            {lora_delta_from_json(c.at("k")), lora_delta_from_json(c.at("v"))});
    }
    p.validate();
    return p;
}

}  // namespace moediff
