#include "moediff/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "moediff/csv.hpp"
#include "moediff/error.hpp"

namespace moediff {

ModelDims ExperimentConfig::model_dims() const {
    ModelDims d;
    d.tokens = tokens;
    d.dim = dim;
    d.text_dim = text_dim;
    d.layers = layers;
    d.conditions = conditions;
    d.experts = experts;
    d.top_k = top_k;
    d.lora_rank = lora_rank;
    d.lora_scaling = lora_scaling;
    d.expert_hidden = expert_hidden;
    return d;
}

DiffusionSchedule ExperimentConfig::make_schedule() const {
    return DiffusionSchedule::linear(schedule_steps, beta_start, beta_end);
}

std::vector<std::string> ExperimentConfig::validate() const {
    std::vector<std::string> bad;
    auto require = [&](bool ok, const std::string& key, const std::string& why) {
        if (!ok) bad.push_back(key + ": " + why);
    };
    require(schema_version == 1, "schema_version", "must be 1");
    require(tokens >= 1, "tokens", "must be >= 1");
    require(dim >= 1, "dim", "must be >= 1");
    require(text_dim >= 1, "text_dim", "must be >= 1");
    require(cond_tokens >= 1, "cond_tokens", "must be >= 1");
    require(layers >= 1, "layers", "must be >= 1");
    require(conditions >= 1, "conditions", "must be >= 1");
    require(experts >= 1, "experts", "must be >= 1");
    require(top_k >= 1 && top_k <= experts, "top_k", "must be in [1, experts]");
    require(lora_rank >= 1, "lora_rank", "must be >= 1");
    require(expert_hidden >= 1, "expert_hidden", "must be >= 1");
    require(schedule_steps >= 1, "schedule_steps", "must be >= 1");
    require(beta_start > 0.0 && beta_start < 1.0, "beta_start", "must be in (0,1)");
    require(beta_end > 0.0 && beta_end < 1.0, "beta_end", "must be in (0,1)");
    require(ddim_steps >= 1 && ddim_steps <= schedule_steps, "ddim_steps",
            "must be in [1, schedule_steps]");
    require(dropout_p >= 0.0 && dropout_p <= 1.0, "dropout_p", "must be in [0,1]");
    require(stage1_lr >= 0.0, "stage1_lr", "must be >= 0");
    require(stage1_steps >= 0, "stage1_steps", "must be >= 0");
    require(dataset_size >= 1, "dataset_size", "must be >= 1");
    require(mpo_m >= 1, "mpo_m", "must be >= 1");
    require(mpo_h >= 1, "mpo_h", "must be >= 1");
    require(mpo_task == "dressing" || mpo_task == "garment", "mpo_task",
            "must be dressing or garment");
    require(embed_dim >= 1, "embed_dim", "must be >= 1");
    require(scorer_retries >= 0, "scorer_retries", "must be >= 0");
    require(dpo_beta > 0.0, "dpo_beta", "must be > 0");
    require(dpo_lr >= 0.0, "dpo_lr", "must be >= 0");
    require(dpo_steps >= 0, "dpo_steps", "must be >= 0");
    require(grad_accum >= 1, "grad_accum", "must be >= 1");
    require(!out_dir.empty(), "out_dir", "must be set");
    return bad;
}

void ExperimentConfig::validate_or_throw() const {
    const auto bad = validate();
    if (bad.empty()) return;
    std::string msg = "invalid config:";
    for (const auto& b : bad) msg += " [" + b + "]";
    throw ValidationError(msg);
}

namespace {

struct FieldBinder {
    std::map<std::string, std::function<void(ExperimentConfig&, const std::string&)>> setters;

    template <class T>
    void bind(const std::string& key, T ExperimentConfig::* member);
};

template <class T>
T parse_value(const std::string& key, const std::string& text);

template <>
int parse_value<int>(const std::string& key, const std::string& text) {
    try {
        std::size_t used = 0;
        const int v = std::stoi(text, &used);
        if (used != text.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ValidationError("config key '" + key + "': not an integer: '" + text + "'");
    }
}

template <>
std::uint64_t parse_value<std::uint64_t>(const std::string& key, const std::string& text) {
    try {
        std::size_t used = 0;
        const unsigned long long v = std::stoull(text, &used);
        if (used != text.size()) throw std::invalid_argument("trailing");
        return static_cast<std::uint64_t>(v);
    } catch (const std::exception&) {
        throw ValidationError("config key '" + key + "': not an unsigned integer: '" + text +
                              "'");
    }
}

template <>
double parse_value<double>(const std::string& key, const std::string& text) {
    try {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        if (used != text.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw ValidationError("config key '" + key + "': not a number: '" + text + "'");
    }
}

template <>
std::string parse_value<std::string>(const std::string&, const std::string& text) {
    return text;
}

template <class T>
void FieldBinder::bind(const std::string& key, T ExperimentConfig::* member) {
    setters[key] = [key, member](ExperimentConfig& cfg, const std::string& text) {
        cfg.*member = parse_value<T>(key, text);
    };
}

FieldBinder make_binder() {
    FieldBinder b;
    b.bind("schema_version", &ExperimentConfig::schema_version);
    b.bind("seed", &ExperimentConfig::seed);
    b.bind("tokens", &ExperimentConfig::tokens);
    b.bind("dim", &ExperimentConfig::dim);
    b.bind("text_dim", &ExperimentConfig::text_dim);
    b.bind("cond_tokens", &ExperimentConfig::cond_tokens);
    b.bind("layers", &ExperimentConfig::layers);
    b.bind("conditions", &ExperimentConfig::conditions);
    b.bind("experts", &ExperimentConfig::experts);
    b.bind("top_k", &ExperimentConfig::top_k);
    b.bind("lora_rank", &ExperimentConfig::lora_rank);
    b.bind("lora_scaling", &ExperimentConfig::lora_scaling);
    b.bind("expert_hidden", &ExperimentConfig::expert_hidden);
    b.bind("schedule_steps", &ExperimentConfig::schedule_steps);
    b.bind("beta_start", &ExperimentConfig::beta_start);
    b.bind("beta_end", &ExperimentConfig::beta_end);
    b.bind("ddim_steps", &ExperimentConfig::ddim_steps);
    b.bind("omega", &ExperimentConfig::omega);
    b.bind("dropout_p", &ExperimentConfig::dropout_p);
    b.bind("stage1_lr", &ExperimentConfig::stage1_lr);
    b.bind("stage1_steps", &ExperimentConfig::stage1_steps);
    b.bind("dataset_size", &ExperimentConfig::dataset_size);
    b.bind("mpo_m", &ExperimentConfig::mpo_m);
    b.bind("mpo_h", &ExperimentConfig::mpo_h);
    b.bind("mpo_task", &ExperimentConfig::mpo_task);
    b.bind("embed_dim", &ExperimentConfig::embed_dim);
    b.bind("scorer_retries", &ExperimentConfig::scorer_retries);
    b.bind("dpo_beta", &ExperimentConfig::dpo_beta);
    b.bind("dpo_weight", &ExperimentConfig::dpo_weight);
    b.bind("dpo_lr", &ExperimentConfig::dpo_lr);
    b.bind("dpo_steps", &ExperimentConfig::dpo_steps);
    b.bind("grad_accum", &ExperimentConfig::grad_accum);
    b.bind("out_dir", &ExperimentConfig::out_dir);
    return b;
}

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return {};
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace

ExperimentConfig ExperimentConfig::from_text(const std::string& text) {
    static const FieldBinder binder = make_binder();
    ExperimentConfig cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ValidationError("config line " + std::to_string(lineno) +
                                  ": expected key = value");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const auto it = binder.setters.find(key);
        if (it == binder.setters.end()) {
            throw ValidationError("config line " + std::to_string(lineno) + ": unknown key '" +
                                  key + "'");
        }
        it->second(cfg, value);
    }
    return cfg;
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open config file: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return from_text(ss.str());
}

std::string ExperimentConfig::to_text() const {
    std::ostringstream out;
    out << "schema_version = " << schema_version << "\n";
    out << "seed = " << seed << "\n";
    out << "tokens = " << tokens << "\n";
    out << "dim = " << dim << "\n";
    out << "text_dim = " << text_dim << "\n";
    out << "cond_tokens = " << cond_tokens << "\n";
    out << "layers = " << layers << "\n";
    out << "conditions = " << conditions << "\n";
    out << "experts = " << experts << "\n";
    out << "top_k = " << top_k << "\n";
    out << "lora_rank = " << lora_rank << "\n";
    out << "lora_scaling = " << format_double(lora_scaling) << "\n";
    out << "expert_hidden = " << expert_hidden << "\n";
    out << "schedule_steps = " << schedule_steps << "\n";
    out << "beta_start = " << format_double(beta_start) << "\n";
    out << "beta_end = " << format_double(beta_end) << "\n";
    out << "ddim_steps = " << ddim_steps << "\n";
    out << "omega = " << format_double(omega) << "\n";
    out << "dropout_p = " << format_double(dropout_p) << "\n";
    out << "stage1_lr = " << format_double(stage1_lr) << "\n";
    out << "stage1_steps = " << stage1_steps << "\n";
    out << "dataset_size = " << dataset_size << "\n";
    out << "mpo_m = " << mpo_m << "\n";
    out << "mpo_h = " << mpo_h << "\n";
    out << "mpo_task = " << mpo_task << "\n";
    out << "embed_dim = " << embed_dim << "\n";
    out << "scorer_retries = " << scorer_retries << "\n";
    out << "dpo_beta = " << format_double(dpo_beta) << "\n";
    out << "dpo_weight = " << format_double(dpo_weight) << "\n";
    out << "dpo_lr = " << format_double(dpo_lr) << "\n";
    out << "dpo_steps = " << dpo_steps << "\n";
    out << "grad_accum = " << grad_accum << "\n";
    out << "out_dir = " << out_dir << "\n";
    return out.str();
}

}  // namespace moediff
