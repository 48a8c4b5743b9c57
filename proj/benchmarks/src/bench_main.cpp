#include <benchmark/benchmark.h>

#include "dmz/denoiser.hpp"
#include "dmz/diffusion.hpp"
#include "dmz/rng.hpp"
#include "dmz/sampler.hpp"
#include "dmz/trainer.hpp"

using namespace dmz;

static void BM_BuildSchedule(benchmark::State& state) {
    for (auto _ : state) {
        auto s = diffusion::build_schedule(diffusion::ScheduleKind::cosine,
                                           static_cast<int>(state.range(0)));
        benchmark::DoNotOptimize(s.alpha_bars.data());
    }
}
BENCHMARK(BM_BuildSchedule)->Arg(1000)->Arg(4000);

namespace {

train::TrainConfig bench_config() {
    train::TrainConfig cfg;
    cfg.T = 100;
    cfg.n_bits = 8;
    cfg.height = cfg.width = 8;
    cfg.base_channels = 12;
    cfg.channel_multipliers = {1, 2};
    cfg.attention_resolutions = {4};
    cfg.cross_attention_resolutions = {4};
    cfg.z_embed_dim = 32;
    cfg.z_tokens = 2;
    cfg.time_embed_dim = 32;
    cfg.norm_groups = 4;
    cfg.encoder_blocks = 2;
    cfg.encoder_channels = {8, 16};
    return cfg;
}

}  // namespace

static void BM_DenoiserForward(benchmark::State& state) {
    auto model = train::init_model(bench_config());
    Rng rng(1);
    Tensor x = rng.normal_tensor({state.range(0), 1, 8, 8});
    Tensor z = latent::sample_prior_bernoulli_batch(state.range(0), 8, rng);
    for (auto _ : state) {
        Tensor y = model->net->predict(x, 50, &z);
        benchmark::DoNotOptimize(y.data.data());
    }
}
BENCHMARK(BM_DenoiserForward)->Arg(1)->Arg(16);

static void BM_TrainStep(benchmark::State& state) {
    auto model = train::init_model(bench_config());
    Rng rng(2);
    Tensor batch = rng.normal_tensor({16, 1, 8, 8});
    for (auto _ : state) {
        double loss = train::train_step(batch, *model, rng);
        benchmark::DoNotOptimize(loss);
    }
}
BENCHMARK(BM_TrainStep);

static void BM_SampleChain(benchmark::State& state) {
    auto model = train::init_model(bench_config());
    Rng rng(3);
    Tensor z = latent::sample_prior_bernoulli_batch(1, 8, rng);
    for (auto _ : state) {
        Tensor out = sampler::sample_batch(*model, z, 1,
                                           static_cast<int>(state.range(0)), rng);
        benchmark::DoNotOptimize(out.data.data());
    }
}
BENCHMARK(BM_SampleChain)->Arg(10)->Arg(100);

BENCHMARK_MAIN();
