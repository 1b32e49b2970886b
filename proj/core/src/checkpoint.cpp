#include "moediff/checkpoint.hpp"

#include <nlohmann/json.hpp>

#include <fstream>

#include "moediff/attention.hpp"
#include "moediff/error.hpp"

namespace moediff {

namespace {

using nlohmann::json;

json gate_to_json(const GateParams& g) {
    return {{"w_g", matrix_to_json(g.w_g)},
            {"w_noise", matrix_to_json(g.w_noise)},
            {"experts", g.expert_count},
            {"top_k", g.top_k},
            {"noise_enabled", g.noise_enabled}};
}

GateParams gate_from_json(const json& j) {
    GateParams g;
    g.w_g = matrix_from_json(j.at("w_g"));
    g.w_noise = matrix_from_json(j.at("w_noise"));
    g.expert_count = j.at("experts").get<int>();
    g.top_k = j.at("top_k").get<int>();
    g.noise_enabled = j.at("noise_enabled").get<bool>();
    g.validate();
    return g;
}

json bank_to_json(const ExpertBank& b) {
    json experts = json::array();
    for (const auto& e : b.experts) {
        experts.push_back({{"w1", matrix_to_json(e.w1)},
                           {"b1", matrix_to_json(e.b1)},
                           {"w2", matrix_to_json(e.w2)},
                           {"b2", matrix_to_json(e.b2)}});
    }
    return experts;
}

ExpertBank bank_from_json(const json& j) {
    ExpertBank b;
    for (const auto& e : j) {
        b.experts.push_back({matrix_from_json(e.at("w1")), matrix_from_json(e.at("b1")),
                             matrix_from_json(e.at("w2")), matrix_from_json(e.at("b2"))});
    }
    return b;
}

json text_to_json(const TextAttnParams& t) {
    return {{"wq", matrix_to_json(t.wq)},
            {"wk", matrix_to_json(t.wk)},
            {"wv", matrix_to_json(t.wv)},
            {"k_delta", lora_delta_to_json(t.k_delta)},
            {"v_delta", lora_delta_to_json(t.v_delta)}};
}

TextAttnParams text_from_json(const json& j) {
    TextAttnParams t;
    t.wq = matrix_from_json(j.at("wq"));
    t.wk = matrix_from_json(j.at("wk"));
    t.wv = matrix_from_json(j.at("wv"));
    t.k_delta = lora_delta_from_json(j.at("k_delta"));
    t.v_delta = lora_delta_from_json(j.at("v_delta"));
    return t;
}

json dims_to_json(const ModelDims& d) {
    return {{"tokens", d.tokens},
            {"dim", d.dim},
            {"text_dim", d.text_dim},
            {"layers", d.layers},
            {"conditions", d.conditions},
            {"experts", d.experts},
            {"top_k", d.top_k},
            {"lora_rank", d.lora_rank},
            {"lora_scaling", d.lora_scaling},
            {"expert_hidden", d.expert_hidden}};
}

ModelDims dims_from_json(const json& j) {
    ModelDims d;
    d.tokens = j.at("tokens").get<int>();
    d.dim = j.at("dim").get<int>();
    d.text_dim = j.at("text_dim").get<int>();
    d.layers = j.at("layers").get<int>();
    d.conditions = j.at("conditions").get<int>();
    d.experts = j.at("experts").get<int>();
    d.top_k = j.at("top_k").get<int>();
    d.lora_rank = j.at("lora_rank").get<int>();
    d.lora_scaling = j.at("lora_scaling").get<double>();
    d.expert_hidden = j.at("expert_hidden").get<int>();
    d.validate();
    return d;
}

}  // namespace

void save_checkpoint(const std::string& path, const DenoiserModel& model,
                     const DiffusionSchedule& schedule, int step, const std::string& stage) {
    json layers = json::array();
    for (const auto& layer : model.layers) {
        json gates = json::array();
        for (const auto& g : layer.gates) gates.push_back(gate_to_json(g));
        json banks = json::array();
        for (const auto& b : layer.experts) banks.push_back(bank_to_json(b));
        layers.push_back({{"attn", attention_params_to_json(layer.attn)},
                          {"gates", gates},
                          {"experts", banks},
                          {"text", text_to_json(layer.text)}});
    }
    json j = {{"schema", 1},
              {"stage", stage},
              {"step", step},
              {"dims", dims_to_json(model.dims)},
              {"layers", layers},
              {"null_cond", matrix_to_json(model.null_cond)},
              {"null_text", matrix_to_json(model.null_text)},
              {"schedule", {{"betas", schedule.betas}}}};
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint: " + path);
    out << j.dump(1) << '\n';
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint: " + path);
    json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("checkpoint parse failure: " + std::string(e.what()));
    }
    if (j.at("schema").get<int>() != 1) throw ParseError("unsupported checkpoint schema");
    Checkpoint ck;
    ck.stage = j.at("stage").get<std::string>();
    ck.step = j.at("step").get<int>();
    ck.model.dims = dims_from_json(j.at("dims"));
    for (const auto& lj : j.at("layers")) {
        DenoiserLayer layer;
        layer.attn = attention_params_from_json(lj.at("attn"));
        for (const auto& g : lj.at("gates")) layer.gates.push_back(gate_from_json(g));
        for (const auto& b : lj.at("experts")) layer.experts.push_back(bank_from_json(b));
        layer.text = text_from_json(lj.at("text"));
        ck.model.layers.push_back(std::move(layer));
    }
    ck.model.null_cond = matrix_from_json(j.at("null_cond"));
    ck.model.null_text = matrix_from_json(j.at("null_text"));
    ck.schedule =
        DiffusionSchedule::from_betas(j.at("schedule").at("betas").get<std::vector<double>>());
    return ck;
}

}  // namespace moediff
