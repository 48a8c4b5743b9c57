#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dmz/denoiser.hpp"
#include "dmz/diffusion.hpp"
#include "dmz/latent.hpp"
#include "dmz/params.hpp"

namespace dmz::train {

struct TrainConfig {
    int T = 100;
    int n_bits = 8;
    int batch_size = 16;
    double learning_rate = 1e-4;
    double weight_decay = 0.0;
    int64_t total_iterations = 1000;
    double ema_decay = 0.9999;
    double gamma_ip = 0.1;  // input perturbation strength
    double temperature_start = 1.0;
    double temperature_end = 0.3;
    int64_t temperature_anneal_iters = 10000;
    denoiser::ConditioningMode conditioning_mode =
        denoiser::ConditioningMode::cross_attention;
    diffusion::ScheduleKind schedule_kind = diffusion::ScheduleKind::cosine;
    latent::LatentKind latent_kind = latent::LatentKind::binary;
    uint64_t seed = 0;

    // model shape
    int64_t channels = 1;
    int64_t height = 16;
    int64_t width = 16;
    int64_t base_channels = 32;
    std::vector<int> channel_multipliers = {1, 2, 2};
    int blocks_per_resolution = 1;
    std::vector<int64_t> attention_resolutions = {8, 4};
    std::vector<int64_t> cross_attention_resolutions = {8};
    bool mid_block_cross_attention = true;
    int64_t z_embed_dim = 64;
    int z_tokens = 4;
    int64_t time_embed_dim = 64;
    int norm_groups = 8;
    double dropout = 0.0;
    int encoder_blocks = 3;
    std::vector<int64_t> encoder_channels = {16, 32, 32};

    int64_t checkpoint_every = 0;  // 0: only final
    int64_t log_every = 50;

    void validate() const;
    denoiser::DenoiserSpec denoiser_spec() const;
    latent::EncoderSpec encoder_spec() const;
};

// Everything the training loop mutates: live parameters for denoiser and
// encoder, EMA shadows, optimizer moments (inside ParamStore), step counter.
struct ModelState {
    TrainConfig cfg;
    diffusion::Schedule sched;
    nn::ParamStore params;
    nn::EmaShadow ema;
    int64_t step = 0;

    std::unique_ptr<denoiser::Denoiser> net;
    std::unique_ptr<latent::Encoder> encoder;

    bool conditional() const { return cfg.conditioning_mode !=
                                      denoiser::ConditioningMode::unconditional; }
    // Store populated with EMA values, for sampling/eval.
    nn::ParamStore ema_params() const;
};

// Fresh state with initialized parameters.
std::unique_ptr<ModelState> init_model(const TrainConfig& cfg);

// One Algorithm-1 step: sample (t, eps) per element, noise with optional
// input perturbation, encode a relaxed z, take a joint AdamW step on the
// eps-prediction MSE, then update the EMA shadows. Returns the loss.
double train_step(const Tensor& batch, ModelState& state, Rng& rng);

struct FitResult {
    std::vector<double> losses;
    std::string checkpoint_path;
};

// Runs train_step over shuffled batches for cfg.total_iterations; writes the
// metrics log and periodic + final checkpoints under out_dir (empty out_dir
// skips all file output).
FitResult fit(const Tensor& images, ModelState& state, const std::string& out_dir);

enum class FinetuneMode { all_params, new_params_only };

// Builds a conditional model from an unconditional checkpoint: shared weights
// are copied, z-specific and encoder weights start fresh (cross-attention
// output projections zeroed), and in new_params_only mode everything
// pre-existing is frozen.
std::unique_ptr<ModelState> prepare_finetune(const ModelState& base,
                                             const TrainConfig& cfg,
                                             FinetuneMode mode);

// Linear temperature anneal.
double temperature_at(const TrainConfig& cfg, int64_t step);

}  // namespace dmz::train
