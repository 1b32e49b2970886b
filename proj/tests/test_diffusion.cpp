#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <vector>

#include "moediff/diffusion.hpp"
#include "moediff/error.hpp"

using namespace moediff;

namespace {

ConditionSet make_cond(int n, int cond_tokens, int dim, int text_dim, SeededRng& rng) {
    ConditionSet cond;
    for (int i = 0; i < n; ++i) cond.features.push_back(rng.normal_matrix(cond_tokens, dim));
    const Matrix2D t = rng.normal_matrix(1, text_dim);
    cond.text_embedding = t.data();
    return cond;
}

DenoiserModel zero_output_model(const ModelDims& dims) {
    SeededRng rng(0);
    DenoiserModel m = DenoiserModel::init(dims, rng);
    for (auto& layer : m.layers) {
        auto zero = [](Matrix2D& w) { w = Matrix2D(w.rows(), w.cols()); };
        zero(layer.attn.self_base.wq);
        zero(layer.attn.self_base.wk);
        zero(layer.attn.self_base.wv);
        zero(layer.attn.cross_base.wq);
        zero(layer.attn.cross_base.wk);
        zero(layer.attn.cross_base.wv);
        zero(layer.text.wq);
        zero(layer.text.wk);
        zero(layer.text.wv);
        for (auto& bank : layer.experts) {
            for (auto& e : bank.experts) {
                zero(e.w1);
                zero(e.b1);
                zero(e.w2);
                zero(e.b2);
            }
        }
        for (auto& g : layer.gates) {
            zero(g.w_g);
            zero(g.w_noise);
        }
    }
    return m;
}

double rel_err(double a, double b) {
    return std::fabs(a - b) / std::max(1e-5, std::fabs(a) + std::fabs(b));
}

}  // namespace

TEST_CASE("schedule invariants and validation") {
    const DiffusionSchedule s = DiffusionSchedule::linear(1000);
    CHECK(s.alpha_bar[0] == doctest::Approx(1.0 - 1e-4).epsilon(1e-12));
    double prev_ab = 1.0;
    double prev_snr = HUGE_VAL;
    for (int t = 0; t < s.step_count; ++t) {
        CHECK(s.alpha_bar[t] < prev_ab);
        CHECK(s.snr(t) < prev_snr);
        prev_ab = s.alpha_bar[t];
        prev_snr = s.snr(t);
    }
    CHECK_THROWS_AS((void)DiffusionSchedule::from_betas({0.0, 0.1}), ConfigError);
    CHECK_THROWS_AS((void)DiffusionSchedule::from_betas({0.1, 1.0}), ConfigError);
    CHECK_THROWS_AS((void)DiffusionSchedule::linear(0), ConfigError);
}

TEST_CASE("forward_noise limits and formula oracle") {
    SeededRng rng(21);
    const Matrix2D z0 = rng.normal_matrix(4, 6);

    SUBCASE("near-zero beta keeps z approximately z0") {
        const auto s = DiffusionSchedule::from_betas({1e-12});
        SeededRng r(1);
        const LatentSample ls = forward_noise(z0, 0, s, r);
        CHECK(max_abs_diff(ls.z, z0) < 1e-5);
    }

    SUBCASE("alpha_bar -> 0 gives approximately pure noise") {
        std::vector<double> betas(60, 0.5);  // alpha_bar = 2^-60
        const auto s = DiffusionSchedule::from_betas(std::move(betas));
        SeededRng r(2);
        const LatentSample ls = forward_noise(z0, 59, s, r);
        CHECK(max_abs_diff(ls.z, ls.eps) < 1e-4);
    }

    SUBCASE("mid-t matches the mixing rule computed by hand") {
        const auto s = DiffusionSchedule::linear(100);
        SeededRng r(3);
        const int t = 40;
        const LatentSample ls = forward_noise(z0, t, s, r);
        const double ab = s.alpha_bar[t];
        for (int i = 0; i < z0.rows(); ++i) {
            for (int j = 0; j < z0.cols(); ++j) {
                const double want =
                    std::sqrt(ab) * z0(i, j) + std::sqrt(1.0 - ab) * ls.eps(i, j);
                CHECK(ls.z(i, j) == doctest::Approx(want).epsilon(1e-14));
            }
        }
    }

    SUBCASE("t out of range") {
        const auto s = DiffusionSchedule::linear(10);
        SeededRng r(4);
        CHECK_THROWS_AS((void)forward_noise(z0, 10, s, r), ConfigError);
        CHECK_THROWS_AS((void)forward_noise(z0, -1, s, r), ConfigError);
    }
}

TEST_CASE("predict_noise: unconditional reduction and N=0 equivalence") {
    ModelDims dims;
    dims.tokens = 5;
    dims.dim = 6;
    dims.text_dim = 4;
    dims.layers = 2;
    dims.conditions = 2;
    SeededRng rng(22);
    const DenoiserModel model = DenoiserModel::init(dims, rng);
    const Matrix2D z = rng.normal_matrix(5, 6);
    const int t = 7;

    const Matrix2D uncond = predict_noise(model, z, std::nullopt, t);

    SUBCASE("reduces to the frozen self-attention backbone") {
        Matrix2D expect = add_rowvec(z, timestep_embedding(t, 6));
        for (const auto& layer : model.layers) {
            expect = inject_and_combine(expect, {}, layer.attn);
        }
        CHECK(bit_equal(uncond, expect));
    }

    SUBCASE("empty condition set behaves exactly like null") {
        ConditionSet empty;
        const Matrix2D out = predict_noise(model, z, empty, t);
        CHECK(bit_equal(out, uncond));
    }

    SUBCASE("conditioned output has the latent shape and is finite") {
        ConditionSet cond = make_cond(2, 7, 6, 4, rng);
        const Matrix2D out = predict_noise(model, z, cond, t);
        CHECK(out.rows() == 5);
        CHECK(out.cols() == 6);
        CHECK(out.is_finite());
        CHECK_FALSE(bit_equal(out, uncond));
    }

    SUBCASE("condition count mismatch and latent dim mismatch") {
        ConditionSet one = make_cond(1, 7, 6, 4, rng);
        CHECK_THROWS_AS((void)predict_noise(model, z, one, t), ConfigError);
        const Matrix2D bad = rng.normal_matrix(5, 7);
        CHECK_THROWS_AS((void)predict_noise(model, bad, std::nullopt, t), ShapeError);
    }
}

TEST_CASE("mse_loss: perfect predictor, null predictor, rng variant") {
    ModelDims dims;
    dims.tokens = 4;
    dims.dim = 6;
    dims.text_dim = 4;
    dims.layers = 2;
    dims.conditions = 2;
    const DenoiserModel zero_model = zero_output_model(dims);
    const auto schedule = DiffusionSchedule::linear(50);
    SeededRng rng(23);
    const Matrix2D z0 = rng.normal_matrix(4, 6);
    ConditionSet cond = make_cond(2, 5, 6, 4, rng);

    SUBCASE("model that outputs eps exactly (zero model, eps = 0) has loss 0") {
        const Matrix2D eps(4, 6);
        const auto res = mse_loss_at(zero_model, z0, cond, 10, eps, schedule);
        CHECK(res.value == 0.0);
    }

    SUBCASE("null predictor: loss equals mean of eps^2") {
        const Matrix2D eps = rng.normal_matrix(4, 6);
        const auto res = mse_loss_at(zero_model, z0, cond, 10, eps, schedule);
        CHECK(res.value == doctest::Approx(sum_sq(eps) / eps.size()).epsilon(1e-14));
        CHECK(res.value > 0.4);
        CHECK(res.value < 2.0);
    }

    SUBCASE("sampled variant is finite and grads align with trainables") {
        SeededRng r(5);
        DenoiserModel model = DenoiserModel::init(dims, r);
        const auto res = mse_loss(model, z0, cond, schedule, r);
        CHECK(std::isfinite(res.value));
        CHECK(res.grads.size() == model.trainable_count());
    }
}

TEST_CASE("mse_loss analytic gradient matches finite differences") {
    ModelDims dims;
    dims.tokens = 3;
    dims.dim = 4;
    dims.text_dim = 4;
    dims.layers = 1;
    dims.conditions = 1;
    dims.experts = 4;
    dims.top_k = 2;
    dims.lora_rank = 2;
    dims.expert_hidden = 8;
    SeededRng rng(24);
    DenoiserModel model = DenoiserModel::init(dims, rng);
    // make LoRA active so its gradient is nonzero
    model.visit_trainable([&](const std::string& name, Matrix2D& p) {
        if (name.find(".up") != std::string::npos) {
            p = rng.normal_matrix(p.rows(), p.cols(), 0.1);
        }
    });
    const auto schedule = DiffusionSchedule::linear(20);
    const Matrix2D z0 = rng.normal_matrix(3, 4);
    ConditionSet cond = make_cond(1, 4, 4, 4, rng);
    const Matrix2D eps = rng.normal_matrix(3, 4);
    const int t = 11;
    const RouterNoise noise = RouterNoise::draw(dims, rng);
    CondDropMask mask;
    mask.feature_dropped = {true};  // exercise the null-embedding gradient
    mask.text_dropped = true;

    const auto res = mse_loss_at(model, z0, cond, t, eps, schedule, &noise, &mask);

    const std::vector<double> x0 = model.flatten_trainable();
    DenoiserModel scratch = model;
    auto f = [&](const std::vector<double>& flat) {
        scratch.unflatten_trainable(flat);
        return mse_loss_value(scratch, z0, cond, t, eps, schedule, &noise, &mask);
    };
    const auto fd = finite_diff_grad(f, x0, 1e-5);

    std::vector<double> analytic;
    for (const auto& g : res.grads) {
        analytic.insert(analytic.end(), g.data().begin(), g.data().end());
    }
    REQUIRE(analytic.size() == fd.size());
    double worst = 0.0;
    double max_grad = 0.0;
    for (std::size_t i = 0; i < fd.size(); ++i) {
        worst = std::max(worst, rel_err(analytic[i], fd[i]));
        max_grad = std::max(max_grad, std::fabs(analytic[i]));
    }
    CHECK(worst < 1e-4);
    CHECK(max_grad > 0.0);  // gradients actually flow
}

TEST_CASE("frozen matrices never move under training steps") {
    ModelDims dims;
    dims.tokens = 4;
    dims.dim = 6;
    dims.text_dim = 4;
    SeededRng rng(25);
    DenoiserModel model = DenoiserModel::init(dims, rng);
    const auto schedule = DiffusionSchedule::linear(30);
    const std::uint64_t frozen0 = model.frozen_hash();
    const Matrix2D z0 = rng.normal_matrix(4, 6);
    ConditionSet cond = make_cond(2, 5, 6, 4, rng);
    for (int step = 0; step < 5; ++step) {
        const auto res = mse_loss(model, z0, cond, schedule, rng);
        sgd_step(model, res.grads, 1e-2);
    }
    CHECK(model.frozen_hash() == frozen0);
    CHECK(model.trainable_hash() != 0);
}

TEST_CASE("cfg identities and affine structure") {
    ModelDims dims;
    dims.tokens = 4;
    dims.dim = 6;
    dims.text_dim = 4;
    SeededRng rng(26);
    const DenoiserModel model = DenoiserModel::init(dims, rng);
    const auto z = rng.normal_matrix(4, 6);
    ConditionSet cond = make_cond(2, 5, 6, 4, rng);
    const int t = 3;

    const Matrix2D c = predict_noise(model, z, cond, t);
    const Matrix2D u = predict_noise(model, z, std::nullopt, t);

    SUBCASE("omega = 1 returns the conditional prediction exactly") {
        const Matrix2D blend = cfg_predict(model, z, cond, t, 1.0);
        CHECK(max_abs_diff(blend, c) == 0.0);
    }
    SUBCASE("omega = 0 returns the unconditional prediction exactly") {
        const Matrix2D blend = cfg_predict(model, z, cond, t, 0.0);
        CHECK(max_abs_diff(blend, u) == 0.0);
    }
    SUBCASE("omega = 7.5 equals the element-wise affine oracle") {
        const Matrix2D blend = cfg_predict(model, z, cond, t, 7.5);
        for (int i = 0; i < blend.rows(); ++i) {
            for (int j = 0; j < blend.cols(); ++j) {
                CHECK(blend(i, j) ==
                      doctest::Approx(7.5 * c(i, j) - 6.5 * u(i, j)).epsilon(1e-12));
            }
        }
    }
    SUBCASE("affine in omega: two-point extrapolation predicts a third omega") {
        const Matrix2D b1 = cfg_predict(model, z, cond, t, 2.0);
        const Matrix2D b2 = cfg_predict(model, z, cond, t, 5.0);
        const Matrix2D b3 = cfg_predict(model, z, cond, t, 11.0);
        // 11 = 5 + 2*(5-2): b3 == b2 + 2*(b2-b1)
        const Matrix2D extrap = add(b2, scale(sub(b2, b1), 2.0));
        CHECK(max_abs_diff(b3, extrap) < 1e-9);
    }
}

TEST_CASE("ddim: analytic-denoiser roundtrip, one-step jump, determinism") {
    const auto schedule = DiffusionSchedule::linear(100);
    SeededRng rng(27);
    const Matrix2D z0 = rng.normal_matrix(4, 6);
    const Matrix2D eps_star = rng.normal_matrix(4, 6);

    SUBCASE("denoiser that returns the trajectory's true eps recovers z0") {
        const double ab_top = schedule.alpha_bar[99];
        const Matrix2D z_start =
            add(scale(z0, std::sqrt(ab_top)), scale(eps_star, std::sqrt(1.0 - ab_top)));
        const auto oracle = [&](const Matrix2D&, int) { return eps_star; };
        for (int steps : {100, 50, 7, 1}) {
            const Matrix2D out = ddim_trajectory(oracle, z_start, schedule, steps);
            CHECK(max_abs_diff(out, z0) < 1e-8);
        }
    }

    SUBCASE("steps = 1 is the single-jump x0 estimate") {
        const Matrix2D z_start = rng.normal_matrix(4, 6);
        const Matrix2D eps_hat = rng.normal_matrix(4, 6);
        const auto fixed = [&](const Matrix2D&, int) { return eps_hat; };
        const Matrix2D out = ddim_trajectory(fixed, z_start, schedule, 1);
        const double ab = schedule.alpha_bar[99];
        for (int i = 0; i < 4; ++i) {
            for (int j = 0; j < 6; ++j) {
                const double want =
                    (z_start(i, j) - std::sqrt(1.0 - ab) * eps_hat(i, j)) / std::sqrt(ab);
                CHECK(out(i, j) == doctest::Approx(want).epsilon(1e-12));
            }
        }
    }

    SUBCASE("fixed seed gives identical samples; steps > T rejected") {
        ModelDims dims;
        dims.tokens = 4;
        dims.dim = 6;
        dims.text_dim = 4;
        SeededRng mr(28);
        const DenoiserModel model = DenoiserModel::init(dims, mr);
        ConditionSet cond = make_cond(2, 5, 6, 4, mr);
        SeededRng s1(99), s2(99);
        const Matrix2D a = ddim_sample(model, cond, schedule, 10, 7.5, s1);
        const Matrix2D b = ddim_sample(model, cond, schedule, 10, 7.5, s2);
        CHECK(bit_equal(a, b));
        SeededRng s3(99);
        CHECK_THROWS_AS((void)ddim_sample(model, cond, schedule, 101, 7.5, s3), ConfigError);
    }

    SUBCASE("timestep grid is strictly decreasing and hits both ends") {
        for (int steps : {1, 2, 7, 50, 100}) {
            const auto ts = ddim_timesteps(100, steps);
            REQUIRE(static_cast<int>(ts.size()) == steps);
            CHECK(ts.front() == 99);
            if (steps > 1) CHECK(ts.back() == 0);
            for (std::size_t i = 1; i < ts.size(); ++i) CHECK(ts[i] < ts[i - 1]);
        }
    }
}

TEST_CASE("condition_dropout: p=0 identity, p=1 full null, empirical rate") {
    ModelDims dims;
    dims.tokens = 4;
    dims.dim = 6;
    dims.text_dim = 4;
    SeededRng rng(29);
    const DenoiserModel model = DenoiserModel::init(dims, rng);
    ConditionSet cond = make_cond(2, 5, 6, 4, rng);

    SUBCASE("p = 0 returns the input unchanged") {
        const ConditionSet out = condition_dropout(cond, 0.0, rng, model);
        for (int i = 0; i < 2; ++i) CHECK(bit_equal(out.features[i], cond.features[i]));
        CHECK(out.text_embedding == cond.text_embedding);
    }

    SUBCASE("p = 1 nulls every condition and the text") {
        const ConditionSet out = condition_dropout(cond, 1.0, rng, model);
        for (int i = 0; i < 2; ++i) {
            CHECK(bit_equal(out.features[i], broadcast_rows(model.null_cond, 5)));
        }
        CHECK(out.text_embedding == model.null_text.data());
    }

    SUBCASE("p = 0.5 empirical drop rate over 10^4 trials") {
        SeededRng r(31);
        long dropped = 0, total = 0;
        for (int trial = 0; trial < 10000; ++trial) {
            const CondDropMask m = draw_drop_mask(2, 0.5, r);
            for (bool b : m.feature_dropped) {
                dropped += b ? 1 : 0;
                ++total;
            }
            dropped += m.text_dropped ? 1 : 0;
            ++total;
        }
        const double rate = static_cast<double>(dropped) / total;
        CHECK(rate > 0.48);
        CHECK(rate < 0.52);
    }

    SUBCASE("p outside [0,1] rejected") {
        CHECK_THROWS_AS((void)condition_dropout(cond, 1.5, rng, model), ConfigError);
    }
}

TEST_CASE("router noise replay reproduces the forward exactly") {
    ModelDims dims;
    dims.tokens = 4;
    dims.dim = 6;
    dims.text_dim = 4;
    SeededRng rng(32);
    const DenoiserModel model = DenoiserModel::init(dims, rng);
    const Matrix2D z = rng.normal_matrix(4, 6);
    ConditionSet cond = make_cond(2, 5, 6, 4, rng);
    const RouterNoise noise = RouterNoise::draw(dims, rng);
    ForwardHooks hooks;
    hooks.noise = &noise;
    const Matrix2D a = predict_noise(model, z, cond, 3, hooks);
    const Matrix2D b = predict_noise(model, z, cond, 3, hooks);
    CHECK(bit_equal(a, b));
    const Matrix2D clean = predict_noise(model, z, cond, 3);
    CHECK_FALSE(bit_equal(a, clean));
}
