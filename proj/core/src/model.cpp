#include "moediff/model.hpp"

#include <cmath>

#include "moediff/error.hpp"
#include "moediff/hash.hpp"

namespace moediff {

void ModelDims::validate() const {
    if (tokens < 1 || dim < 1 || text_dim < 1 || layers < 1) {
        throw ConfigError("model dims: tokens/dim/text_dim/layers must be positive");
    }
    if (conditions < 1) throw ConfigError("model dims: conditions must be >= 1");
    if (top_k < 1 || top_k > experts) {
        throw ConfigError("model dims: top_k must be in [1, experts]");
    }
    if (lora_rank < 1 || expert_hidden < 1) {
        throw ConfigError("model dims: lora_rank/expert_hidden must be positive");
    }
}

DenoiserModel DenoiserModel::init(const ModelDims& dims, SeededRng& rng) {
    dims.validate();
    DenoiserModel m;
    m.dims = dims;
    for (int l = 0; l < dims.layers; ++l) {
        DenoiserLayer layer;
        layer.attn = AttentionBlockParams::init(dims.dim, dims.conditions, dims.lora_rank,
                                                dims.lora_scaling, rng);
        for (int i = 0; i < dims.conditions; ++i) {
            layer.gates.push_back(GateParams::init(dims.dim, dims.experts, dims.top_k,
                                                   /*noise_enabled=*/true, rng));
            layer.experts.push_back(ExpertBank::init(dims.dim, dims.expert_hidden,
                                                     dims.experts, rng));
        }
        const double s = 1.0 / std::sqrt(static_cast<double>(dims.dim));
        const double st = 1.0 / std::sqrt(static_cast<double>(dims.text_dim));
        layer.text.wq = rng.normal_matrix(dims.dim, dims.dim, s);
        layer.text.wk = rng.normal_matrix(dims.text_dim, dims.dim, st);
        layer.text.wv = rng.normal_matrix(dims.text_dim, dims.dim, st);
        layer.text.k_delta =
            LoraDelta::init(dims.text_dim, dims.dim, dims.lora_rank, dims.lora_scaling, rng);
        layer.text.v_delta =
            LoraDelta::init(dims.text_dim, dims.dim, dims.lora_rank, dims.lora_scaling, rng);
        m.layers.push_back(std::move(layer));
    }
    m.null_cond = rng.normal_matrix(1, dims.dim, 0.02);
    m.null_text = rng.normal_matrix(1, dims.text_dim, 0.02);
    return m;
}

namespace {

template <class Model, class Fn>
void visit_trainable_impl(Model& m, const Fn& fn) {
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
        auto& layer = m.layers[l];
        const std::string lp = "layer" + std::to_string(l) + ".";
        for (std::size_t i = 0; i < layer.attn.self_lora.size(); ++i) {
            auto& sl = layer.attn.self_lora[i];
            const std::string p = lp + "self_lora" + std::to_string(i) + ".";
            fn(p + "q.down", sl.q.down);
            fn(p + "q.up", sl.q.up);
            fn(p + "k.down", sl.k.down);
            fn(p + "k.up", sl.k.up);
            fn(p + "v.down", sl.v.down);
            fn(p + "v.up", sl.v.up);
        }
        for (std::size_t i = 0; i < layer.attn.cross_lora.size(); ++i) {
            auto& cl = layer.attn.cross_lora[i];
            const std::string p = lp + "cross_lora" + std::to_string(i) + ".";
            fn(p + "k.down", cl.k.down);
            fn(p + "k.up", cl.k.up);
            fn(p + "v.down", cl.v.down);
            fn(p + "v.up", cl.v.up);
        }
        fn(lp + "text.k.down", layer.text.k_delta.down);
        fn(lp + "text.k.up", layer.text.k_delta.up);
        fn(lp + "text.v.down", layer.text.v_delta.down);
        fn(lp + "text.v.up", layer.text.v_delta.up);
        for (std::size_t i = 0; i < layer.gates.size(); ++i) {
            const std::string p = lp + "gate" + std::to_string(i) + ".";
            fn(p + "w_g", layer.gates[i].w_g);
            fn(p + "w_noise", layer.gates[i].w_noise);
        }
        for (std::size_t i = 0; i < layer.experts.size(); ++i) {
            for (std::size_t e = 0; e < layer.experts[i].experts.size(); ++e) {
                auto& ex = layer.experts[i].experts[e];
                const std::string p =
                    lp + "experts" + std::to_string(i) + ".e" + std::to_string(e) + ".";
                fn(p + "w1", ex.w1);
                fn(p + "b1", ex.b1);
                fn(p + "w2", ex.w2);
                fn(p + "b2", ex.b2);
            }
        }
    }
    fn("null_cond", m.null_cond);
    fn("null_text", m.null_text);
}

}  // namespace

void DenoiserModel::visit_trainable(
    const std::function<void(const std::string&, Matrix2D&)>& fn) {
    visit_trainable_impl(*this, fn);
}

void DenoiserModel::visit_trainable(
    const std::function<void(const std::string&, const Matrix2D&)>& fn) const {
    visit_trainable_impl(*this, fn);
}

void DenoiserModel::visit_frozen(
    const std::function<void(const std::string&, const Matrix2D&)>& fn) const {
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const auto& layer = layers[l];
        const std::string lp = "layer" + std::to_string(l) + ".";
        fn(lp + "self_base.wq", layer.attn.self_base.wq);
        fn(lp + "self_base.wk", layer.attn.self_base.wk);
        fn(lp + "self_base.wv", layer.attn.self_base.wv);
        fn(lp + "cross_base.wq", layer.attn.cross_base.wq);
        fn(lp + "cross_base.wk", layer.attn.cross_base.wk);
        fn(lp + "cross_base.wv", layer.attn.cross_base.wv);
        fn(lp + "text.wq", layer.text.wq);
        fn(lp + "text.wk", layer.text.wk);
        fn(lp + "text.wv", layer.text.wv);
    }
}

std::size_t DenoiserModel::trainable_count() const {
    std::size_t n = 0;
    visit_trainable([&](const std::string&, const Matrix2D&) { ++n; });
    return n;
}

std::uint64_t DenoiserModel::trainable_hash() const {
    Fnv1a h;
    visit_trainable([&](const std::string& name, const Matrix2D& m) {
        h.update(name);
        h.update(m);
    });
    return h.digest();
}

std::uint64_t DenoiserModel::frozen_hash() const {
    Fnv1a h;
    visit_frozen([&](const std::string& name, const Matrix2D& m) {
        h.update(name);
        h.update(m);
    });
    return h.digest();
}

std::uint64_t DenoiserModel::full_hash() const {
    Fnv1a h;
    h.update(trainable_hash());
    h.update(frozen_hash());
    return h.digest();
}

std::vector<double> DenoiserModel::flatten_trainable() const {
    std::vector<double> flat;
    visit_trainable([&](const std::string&, const Matrix2D& m) {
        flat.insert(flat.end(), m.data().begin(), m.data().end());
    });
    return flat;
}

void DenoiserModel::unflatten_trainable(const std::vector<double>& flat) {
    std::size_t pos = 0;
    visit_trainable([&](const std::string&, Matrix2D& m) {
        if (pos + m.size() > flat.size()) {
            throw ShapeError("unflatten_trainable: vector too short");
        }
        std::copy(flat.begin() + pos, flat.begin() + pos + m.size(), m.data().begin());
        pos += m.size();
    });
    if (pos != flat.size()) {
        throw ShapeError("unflatten_trainable: vector length mismatch");
    }
}

double LossGrads::grad_norm() const {
    double s = 0.0;
    for (const auto& g : grads) s += sum_sq(g);
    return std::sqrt(s);
}

void sgd_step(DenoiserModel& model, const std::vector<Matrix2D>& grads, double learning_rate) {
    std::size_t i = 0;
    model.visit_trainable([&](const std::string&, Matrix2D& p) {
        if (i >= grads.size()) throw ShapeError("sgd_step: gradient list too short");
        const Matrix2D& g = grads[i++];
        for (std::size_t j = 0; j < p.size(); ++j) {
            p.data()[j] -= learning_rate * g.data()[j];
        }
    });
    if (i != grads.size()) throw ShapeError("sgd_step: gradient list length mismatch");
}

}  // namespace moediff
