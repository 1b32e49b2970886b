#include "moediff/router.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "moediff/csv.hpp"
#include "moediff/error.hpp"

namespace moediff {

GateParams GateParams::init(int dim, int experts, int top_k, bool noise_enabled, SeededRng& rng) {
    GateParams p;
    p.w_g = rng.normal_matrix(dim, experts, 1.0 / std::sqrt(static_cast<double>(dim)));
    p.w_noise = rng.normal_matrix(dim, experts, 1.0 / std::sqrt(static_cast<double>(dim)));
    p.expert_count = experts;
    p.top_k = top_k;
    p.noise_enabled = noise_enabled;
    p.validate();
    return p;
}

void GateParams::validate() const {
    if (top_k < 1 || top_k > expert_count) {
        throw ConfigError("gate: top_k=" + std::to_string(top_k) + " must be in [1, n=" +
                          std::to_string(expert_count) + "]");
    }
    if (w_g.cols() != expert_count || w_noise.cols() != expert_count ||
        w_g.rows() != w_noise.rows()) {
        throw ConfigError("gate: weight shapes " + w_g.shape_str() + " / " +
                          w_noise.shape_str() + " inconsistent with n=" +
                          std::to_string(expert_count));
    }
}

ExpertBank ExpertBank::init(int dim, int hidden, int experts, SeededRng& rng) {
    ExpertBank bank;
    bank.experts.reserve(experts);
    const double s1 = 1.0 / std::sqrt(static_cast<double>(dim));
    const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden));
    for (int e = 0; e < experts; ++e) {
        ExpertMlp m;
        m.w1 = rng.normal_matrix(dim, hidden, s1);
        m.b1 = Matrix2D(1, hidden);
        m.w2 = rng.normal_matrix(hidden, dim, s2);
        m.b2 = Matrix2D(1, dim);
        bank.experts.push_back(std::move(m));
    }
    return bank;
}

std::vector<int> top_k_indices(std::span<const double> values, int k) {
    if (k < 1 || k > static_cast<int>(values.size())) {
        throw ConfigError("top_k_indices: k=" + std::to_string(k) + " out of range for n=" +
                          std::to_string(values.size()));
    }
    std::vector<int> order(values.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return values[a] > values[b];  // stable: equal logits keep lower index first
    });
    order.resize(k);
    std::sort(order.begin(), order.end());
    return order;
}

namespace {

TokenRouting to_token_routing(const GateRowResult<PlainEngine>& g, int n) {
    TokenRouting tr;
    tr.selected = g.selected;
    tr.logits = g.logits;
    tr.weights.assign(n, 0.0);
    for (std::size_t j = 0; j < g.selected.size(); ++j) {
        tr.weights[g.selected[j]] = g.selected_weights(0, static_cast<int>(j));
    }
    return tr;
}

}  // namespace

TokenRouting gate(std::span<const double> x, const GateParams& params, SeededRng& rng) {
    if (params.noise_enabled) {
        std::vector<double> eps(params.expert_count);
        for (auto& e : eps) e = rng.normal();
        return gate_with_noise(x, params, eps);
    }
    return gate_with_noise(x, params, {});
}

TokenRouting gate_with_noise(std::span<const double> x, const GateParams& params,
                             std::span<const double> eps) {
    params.validate();
    if (static_cast<int>(x.size()) != params.w_g.rows()) {
        throw ShapeError("gate: token length " + std::to_string(x.size()) + " vs d=" +
                         std::to_string(params.w_g.rows()));
    }
    if (!eps.empty() && static_cast<int>(eps.size()) != params.expert_count) {
        throw ShapeError("gate: noise length " + std::to_string(eps.size()) + " vs n=" +
                         std::to_string(params.expert_count));
    }
    PlainEngine eng;
    auto res = gate_row_t(eng, Matrix2D::row_vector(x), params, eps.empty() ? nullptr : eps.data());
    return to_token_routing(res, params.expert_count);
}

std::vector<double> mixture(std::span<const double> x, const TokenRouting& routing,
                            const ExpertBank& bank) {
    PlainEngine eng;
    const Matrix2D x_row = Matrix2D::row_vector(x);
    Matrix2D acc(1, static_cast<int>(x.size()));
    for (std::size_t j = 0; j < routing.selected.size(); ++j) {
        const int e = routing.selected[j];
        if (e < 0 || e >= bank.count()) {
            throw ConfigError("mixture: expert index " + std::to_string(e) + " out of range");
        }
        const Matrix2D out = expert_forward_t(eng, x_row, bank.experts[e]);
        const Matrix2D term = scale(out, routing.weights[e]);
        acc = (j == 0) ? term : add(acc, term);
    }
    return acc.data();
}

std::pair<Matrix2D, RoutingTrace> route_feature_map(const Matrix2D& u, const GateParams& params,
                                                    const ExpertBank& bank, SeededRng& rng) {
    params.validate();
    Matrix2D noise;
    const Matrix2D* noise_ptr = nullptr;
    if (params.noise_enabled) {
        // Fixed serial draw order (token-major) keeps runs reproducible.
        noise = rng.normal_matrix(u.rows(), params.expert_count);
        noise_ptr = &noise;
    }
    PlainEngine eng;
    RoutingTrace trace;
    Matrix2D out = route_tokens_t(eng, u, params, bank, noise_ptr, &trace);
    return {std::move(out), std::move(trace)};
}

double shannon_entropy(std::span<const double> p) {
    double h = 0.0;
    for (double x : p) {
        if (x > 0.0) h -= x * std::log(x);
    }
    return h;
}

double routing_entropy(const std::vector<RoutingTrace>& traces, int layer) {
    std::map<int, long> counts;
    long total = 0;
    int max_expert = -1;
    for (const auto& t : traces) {
        if (t.layer != layer) continue;
        for (const auto& tok : t.tokens) {
            for (int e : tok.selected) {
                ++counts[e];
                ++total;
                max_expert = std::max(max_expert, e);
            }
            max_expert = std::max(max_expert, static_cast<int>(tok.weights.size()) - 1);
        }
    }
    if (total == 0) {
        throw DataError("routing_entropy: no token assignments at layer " +
                        std::to_string(layer));
    }
    std::vector<double> p(static_cast<std::size_t>(max_expert) + 1, 0.0);
    for (const auto& [e, c] : counts) {
        p[e] = static_cast<double>(c) / static_cast<double>(total);
    }
    return shannon_entropy(p);
}

void export_routing_traces_csv(const std::string& path,
                               const std::vector<RoutingTrace>& traces) {
    CsvWriter csv(path, {"layer", "token", "expert", "weight"});
    std::map<int, int> next_token_at_layer;
    for (const auto& t : traces) {
        int& tok_idx = next_token_at_layer[t.layer];
        for (const auto& tok : t.tokens) {
            for (int e : tok.selected) {
                csv.begin_row();
                csv.field(t.layer).field(tok_idx).field(e).field(tok.weights[e]);
                csv.end_row();
            }
            ++tok_idx;
        }
    }
}

}  // namespace moediff
