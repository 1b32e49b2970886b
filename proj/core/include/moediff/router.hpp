#pragma once

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "moediff/engine.hpp"
#include "moediff/matrix.hpp"
#include "moediff/rng.hpp"

namespace moediff {

/// Noisy top-k gate parameters. Logits are W_g^T x plus, when noise is
/// enabled, per-expert Gaussian noise scaled by Softplus(W_noise^T x).
struct GateParams {
    Matrix2D w_g;      // d x n
    Matrix2D w_noise;  // d x n
    int expert_count = 0;
    int top_k = 0;
    bool noise_enabled = false;

    static GateParams init(int dim, int experts, int top_k, bool noise_enabled, SeededRng& rng);
    void validate() const;
};

/// Two affine layers with tanh in between, d -> hidden -> d.
struct ExpertMlp {
    Matrix2D w1;  // d x hidden
    Matrix2D b1;  // 1 x hidden
    Matrix2D w2;  // hidden x d
    Matrix2D b2;  // 1 x d
};

struct ExpertBank {
    std::vector<ExpertMlp> experts;

    int count() const noexcept { return static_cast<int>(experts.size()); }
    static ExpertBank init(int dim, int hidden, int experts, SeededRng& rng);
};

/// Routing record for one token: the k selected expert indices (ascending),
/// the full n-vector of weights (zeros outside the selection, nonzeros sum
/// to 1) and the raw logits.
struct TokenRouting {
    std::vector<int> selected;
    std::vector<double> weights;
    std::vector<double> logits;
};

struct RoutingTrace {
    int layer = -1;
    std::vector<TokenRouting> tokens;
};

/// Indices of the k largest values; boundary ties go to the lowest index.
/// Returned ascending.
std::vector<int> top_k_indices(std::span<const double> values, int k);

// ---- templated cores --------------------------------------------------------

template <class E>
typename E::H expert_forward_t(E& eng, typename E::H x_row, const ExpertMlp& m) {
    auto h = eng.tanh_act(eng.add(eng.matmul(x_row, eng.use_param(m.w1)), eng.use_param(m.b1)));
    return eng.add(eng.matmul(h, eng.use_param(m.w2)), eng.use_param(m.b2));
}

template <class E>
struct GateRowResult {
    typename E::H selected_weights;  // 1 x k, softmax over the selected logits
    std::vector<int> selected;       // ascending
    std::vector<double> logits;      // raw logit values (length n)
};

/// Gate one token. `noise_row` holds n pre-drawn N(0,1) values, or is null
/// when noise is off (training draws them; inference and analysis run clean).
template <class E>
GateRowResult<E> gate_row_t(E& eng, typename E::H x_row, const GateParams& p,
                            const double* noise_row) {
    p.validate();
    auto logits = eng.matmul(x_row, eng.use_param(p.w_g));
    if (noise_row != nullptr) {
        Matrix2D eps(1, p.expert_count);
        for (int j = 0; j < p.expert_count; ++j) eps(0, j) = noise_row[j];
        auto sp = eng.softplus(eng.matmul(x_row, eng.use_param(p.w_noise)));
        logits = eng.add(logits, eng.hadamard(eng.use(eps), sp));
    }
    GateRowResult<E> out;
    const Matrix2D& lv = eng.value(logits);
    out.logits.assign(lv.data().begin(), lv.data().end());
    out.selected = top_k_indices(out.logits, p.top_k);
    out.selected_weights = eng.softmax_rows(eng.gather_cols(logits, out.selected), 1.0);
    return out;
}

/// Weighted aggregation of the selected experts only (sparse activation).
template <class E>
typename E::H mixture_row_t(E& eng, typename E::H x_row, const GateRowResult<E>& gate,
                            const ExpertBank& bank) {
    typename E::H acc{};
    for (std::size_t j = 0; j < gate.selected.size(); ++j) {
        auto w = eng.gather_cols(gate.selected_weights, {static_cast<int>(j)});
        auto e = expert_forward_t(eng, x_row, bank.experts[gate.selected[j]]);
        auto term = eng.scalar_mul(w, e);
        acc = (j == 0) ? term : eng.add(acc, term);
    }
    return acc;
}

/// Route every token row of `u` through gate + mixture. `noise` is an
/// optional m x n matrix of pre-drawn gate noise (row per token). Records the
/// per-token routing into `trace` when given.
template <class E>
typename E::H route_tokens_t(E& eng, typename E::H u, const GateParams& p, const ExpertBank& bank,
                             const Matrix2D* noise, RoutingTrace* trace) {
    const int m = eng.value(u).rows();
    if (noise && (noise->rows() < m || noise->cols() != p.expert_count)) {
        throw ShapeError("route_tokens: gate noise " + noise->shape_str() +
                         " too small for feature map with " + std::to_string(m) + " tokens");
    }
    std::vector<typename E::H> rows;
    rows.reserve(m);
    for (int r = 0; r < m; ++r) {
        auto x = eng.row(u, r);
        const double* noise_row = noise ? noise->row_span(r).data() : nullptr;
        auto gate = gate_row_t(eng, x, p, noise_row);
        rows.push_back(mixture_row_t(eng, x, gate, bank));
        if (trace) {
            TokenRouting tr;
            tr.selected = gate.selected;
            tr.logits = gate.logits;
            tr.weights.assign(p.expert_count, 0.0);
            const Matrix2D& w = eng.value(gate.selected_weights);
            for (std::size_t j = 0; j < gate.selected.size(); ++j) {
                tr.weights[gate.selected[j]] = w(0, static_cast<int>(j));
            }
            trace->tokens.push_back(std::move(tr));
        }
    }
    return eng.stack_rows(rows);
}

// ---- plain public operations ------------------------------------------------

/// Gate one token; draws gate noise from `rng` when enabled.
TokenRouting gate(std::span<const double> x, const GateParams& params, SeededRng& rng);

/// Gate with explicit pre-drawn noise (empty span = no noise).
TokenRouting gate_with_noise(std::span<const double> x, const GateParams& params,
                             std::span<const double> eps);

/// x' = sum_{j in selected} R_j E_j(x); only selected experts are evaluated.
std::vector<double> mixture(std::span<const double> x, const TokenRouting& routing,
                            const ExpertBank& bank);

std::pair<Matrix2D, RoutingTrace> route_feature_map(const Matrix2D& u, const GateParams& params,
                                                    const ExpertBank& bank, SeededRng& rng);

/// Shannon entropy of the expert-assignment frequencies at `layer`, pooled
/// over every token of every trace: p_i = (count of i in selections) / (k*T),
/// H = -sum p ln p, in [0, ln n].
double routing_entropy(const std::vector<RoutingTrace>& traces, int layer);

double shannon_entropy(std::span<const double> p);

/// Trace export, one row per assignment: layer,token,expert,weight.
/// Token numbering continues across traces that share a layer.
void export_routing_traces_csv(const std::string& path,
                               const std::vector<RoutingTrace>& traces);

}  // namespace moediff
