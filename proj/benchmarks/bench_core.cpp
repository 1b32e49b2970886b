#include <benchmark/benchmark.h>

#include <optional>
#include <vector>

#include "moediff/diffusion.hpp"
#include "moediff/dpo.hpp"

using namespace moediff;

namespace {

struct Fixture {
    ModelDims dims;
    DenoiserModel model;
    DiffusionSchedule schedule;
    ConditionSet cond;
    Matrix2D z;

    static Fixture make() {
        ModelDims dims;
        dims.tokens = 16;
        dims.dim = 8;
        dims.text_dim = 8;
        dims.layers = 2;
        dims.conditions = 2;
        SeededRng rng(1);
        Fixture f{dims, DenoiserModel::init(dims, rng), DiffusionSchedule::linear(1000), {},
                  rng.normal_matrix(16, 8)};
        f.cond.features = {rng.normal_matrix(16, 8), rng.normal_matrix(16, 8)};
        const Matrix2D txt = rng.normal_matrix(1, 8);
        f.cond.text_embedding = txt.data();
        return f;
    }
};

}  // namespace

static void BM_Gate(benchmark::State& state) {
    SeededRng rng(2);
    GateParams params = GateParams::init(8, 4, 2, true, rng);
    std::vector<double> x(8);
    for (auto& v : x) v = rng.normal();
    for (auto _ : state) {
        benchmark::DoNotOptimize(gate(x, params, rng));
    }
}
BENCHMARK(BM_Gate);

static void BM_RouteFeatureMap(benchmark::State& state) {
    SeededRng rng(3);
    GateParams params = GateParams::init(8, 4, 2, false, rng);
    const ExpertBank bank = ExpertBank::init(8, 16, 4, rng);
    const Matrix2D u = rng.normal_matrix(static_cast<int>(state.range(0)), 8);
    for (auto _ : state) {
        benchmark::DoNotOptimize(route_feature_map(u, params, bank, rng));
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_RouteFeatureMap)->Arg(16)->Arg(64);

static void BM_IsolatedSelfAttention(benchmark::State& state) {
    SeededRng rng(4);
    AttentionBlockParams p = AttentionBlockParams::init(8, 2, 4, 1.0, rng);
    const std::vector<Matrix2D> feats{rng.normal_matrix(16, 8), rng.normal_matrix(16, 8)};
    for (auto _ : state) {
        benchmark::DoNotOptimize(isolated_self_attention(feats, p));
    }
}
BENCHMARK(BM_IsolatedSelfAttention);

static void BM_PredictNoiseConditional(benchmark::State& state) {
    const Fixture f = Fixture::make();
    for (auto _ : state) {
        benchmark::DoNotOptimize(predict_noise(f.model, f.z, f.cond, 500));
    }
}
BENCHMARK(BM_PredictNoiseConditional);

static void BM_PredictNoiseUnconditional(benchmark::State& state) {
    const Fixture f = Fixture::make();
    for (auto _ : state) {
        benchmark::DoNotOptimize(predict_noise(f.model, f.z, std::nullopt, 500));
    }
}
BENCHMARK(BM_PredictNoiseUnconditional);

static void BM_MseLossWithGradients(benchmark::State& state) {
    const Fixture f = Fixture::make();
    SeededRng rng(5);
    const Matrix2D z0 = rng.normal_matrix(16, 8);
    const Matrix2D eps = rng.normal_matrix(16, 8);
    const RouterNoise noise = RouterNoise::draw(f.dims, rng);
    for (auto _ : state) {
        benchmark::DoNotOptimize(
            mse_loss_at(f.model, z0, f.cond, 500, eps, f.schedule, &noise));
    }
}
BENCHMARK(BM_MseLossWithGradients);

static void BM_DpoLossWithGradients(benchmark::State& state) {
    const Fixture f = Fixture::make();
    SeededRng rng(6);
    PreferencePair pair;
    pair.cond = f.cond;
    pair.winner = rng.normal_matrix(16, 8);
    pair.loser = rng.normal_matrix(16, 8);
    DpoConfig cfg;
    cfg.schedule_steps = f.schedule.step_count;
    DpoBatchItem item{&pair, 500, rng.normal_matrix(16, 8)};
    for (auto _ : state) {
        benchmark::DoNotOptimize(dpo_loss(f.model, f.model, item, cfg, f.schedule));
    }
}
BENCHMARK(BM_DpoLossWithGradients);

static void BM_DdimSample(benchmark::State& state) {
    const Fixture f = Fixture::make();
    for (auto _ : state) {
        SeededRng rng(7);
        benchmark::DoNotOptimize(
            ddim_sample(f.model, f.cond, f.schedule, static_cast<int>(state.range(0)), 7.5,
                        rng));
    }
    state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_DdimSample)->Arg(10)->Arg(50);

BENCHMARK_MAIN();
