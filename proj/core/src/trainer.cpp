#include "dmz/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

#include "dmz/checkpoint.hpp"
#include "dmz/errors.hpp"

namespace dmz::train {

using denoiser::ConditioningMode;

void TrainConfig::validate() const {
    if (T < 1) throw ConfigError("train: T must be >= 1");
    if (n_bits < 1) throw ConfigError("train: n_bits must be >= 1");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (learning_rate < 0.0) throw ConfigError("train: learning_rate must be >= 0");
    if (ema_decay < 0.0 || ema_decay >= 1.0)
        throw ConfigError("train: ema_decay must lie in [0,1)");
    if (gamma_ip < 0.0) throw ConfigError("train: gamma_ip must be >= 0");
    if (temperature_end <= 0.0 || temperature_start < temperature_end)
        throw ConfigError("train: need temperature start >= end > 0");
}

denoiser::DenoiserSpec TrainConfig::denoiser_spec() const {
    denoiser::DenoiserSpec d;
    d.channels = channels;
    d.height = height;
    d.width = width;
    d.base_channels = base_channels;
    d.channel_multipliers = channel_multipliers;
    d.blocks_per_resolution = blocks_per_resolution;
    d.attention_resolutions = attention_resolutions;
    d.cross_attention_resolutions =
        conditioning_mode == ConditioningMode::cross_attention
            ? cross_attention_resolutions
            : std::vector<int64_t>{};
    d.conditioning_mode = conditioning_mode;
    d.n_bits = n_bits;
    d.z_embed_dim = z_embed_dim;
    d.z_tokens = z_tokens;
    d.mid_block_cross_attention = mid_block_cross_attention;
    d.time_embed_dim = time_embed_dim;
    d.norm_groups = norm_groups;
    d.dropout = dropout;
    d.validate();
    return d;
}

latent::EncoderSpec TrainConfig::encoder_spec() const {
    latent::EncoderSpec e;
    e.channels = channels;
    e.height = height;
    e.width = width;
    e.n_bits = n_bits;
    e.n_blocks = encoder_blocks;
    e.channels_per_block = encoder_channels;
    e.latent = latent_kind;
    e.validate();
    return e;
}

nn::ParamStore ModelState::ema_params() const {
    nn::ParamStore out;
    for (const std::string& name : params.names()) {
        nn::Param& p = out.get_or_create(name, params.at(name).value.shape);
        p.value = ema.at(name);
    }
    return out;
}

std::unique_ptr<ModelState> init_model(const TrainConfig& cfg) {
    cfg.validate();
    auto st = std::make_unique<ModelState>();
    st->cfg = cfg;
    st->sched = diffusion::build_schedule(cfg.schedule_kind, cfg.T);
    st->net = std::make_unique<denoiser::Denoiser>(cfg.denoiser_spec(), st->params);
    if (cfg.conditioning_mode != ConditioningMode::unconditional)
        st->encoder = std::make_unique<latent::Encoder>(cfg.encoder_spec(), st->params);
    Rng rng(cfg.seed);
    st->net->init_params(rng);
    if (st->encoder) st->encoder->init_params(rng);
    st->ema.init_from(st->params);
    return st;
}

double temperature_at(const TrainConfig& cfg, int64_t step) {
    if (cfg.temperature_anneal_iters <= 0) return cfg.temperature_end;
    double f = std::min(1.0, static_cast<double>(step) /
                                 static_cast<double>(cfg.temperature_anneal_iters));
    return cfg.temperature_start + f * (cfg.temperature_end - cfg.temperature_start);
}

double train_step(const Tensor& batch, ModelState& state, Rng& rng) {
    const TrainConfig& cfg = state.cfg;
    if (batch.shape.size() != 4 || batch.shape[1] != cfg.channels ||
        batch.shape[2] != cfg.height || batch.shape[3] != cfg.width)
        throw ConfigError("train_step: batch " + batch.shape_str() +
                          " does not match config");
    int64_t B = batch.shape[0];
    int64_t D = batch.size() / B;

    std::vector<int> ts(static_cast<size_t>(B));
    for (auto& t : ts) t = rng.uniform_int(1, cfg.T);
    Tensor eps = rng.normal_tensor(batch.shape);
    Tensor x_t(batch.shape);
    for (int64_t b = 0; b < B; ++b) {
        int t = ts[static_cast<size_t>(b)];
        double sa = std::sqrt(state.sched.alpha_bar(t));
        double sn = std::sqrt(1.0 - state.sched.alpha_bar(t));
        for (int64_t i = 0; i < D; ++i) {
            double e = eps[b * D + i];
            if (cfg.gamma_ip > 0.0) e += cfg.gamma_ip * rng.normal();
            x_t[b * D + i] = sa * batch[b * D + i] + sn * e;
        }
    }

    nn::Graph g;
    state.params.zero_grads();
    nn::V z{-1};
    if (state.conditional()) {
        nn::V logits = state.encoder->forward(g, g.constant(batch), true);
        if (cfg.latent_kind == latent::LatentKind::binary) {
            double temp = temperature_at(cfg, state.step);
            Tensor u = rng.uniform_open_tensor({B, static_cast<int64_t>(cfg.n_bits)});
            z = latent::relax_sample_node(g, logits, temp, u);
        } else {
            // reparameterized Gaussian: mean + exp(0.5*logvar) * noise
            int64_t n = cfg.n_bits;
            nn::V mean = g.slice_cols(logits, 0, n);
            nn::V logvar = g.slice_cols(logits, n, n);
            nn::V std_n = g.exp(g.scale(logvar, 0.5));
            Tensor noise = rng.normal_tensor({B, n});
            z = g.add(mean, g.mul(std_n, g.constant(std::move(noise))));
        }
    }
    nn::V eps_hat = state.net->forward(g, g.constant(x_t), ts, z, true, &rng);
    nn::V loss = g.mse(eps_hat, g.constant(eps));
    double loss_v = g.value(loss)[0];
    if (!std::isfinite(loss_v)) {
        std::ostringstream os;
        os << "train_step: non-finite loss at step " << state.step << "; t = [";
        for (size_t i = 0; i < ts.size(); ++i) os << (i ? "," : "") << ts[i];
        os << "]";
        throw NumericError(os.str());
    }
    g.backward(loss);

    nn::AdamConfig ac;
    ac.lr = cfg.learning_rate;
    ac.weight_decay = cfg.weight_decay;
    adamw_step(state.params, ac, state.step + 1);
    state.ema.update(state.params, cfg.ema_decay);
    state.step += 1;
    return loss_v;
}

FitResult fit(const Tensor& images, ModelState& state, const std::string& out_dir) {
    const TrainConfig& cfg = state.cfg;
    if (images.shape.size() != 4 || images.shape[0] < 1)
        throw ConfigError("fit: dataset must be a nonempty (N,C,H,W) tensor");
    if (images.shape[1] != cfg.channels || images.shape[2] != cfg.height ||
        images.shape[3] != cfg.width)
        throw ConfigError("fit: dataset " + images.shape_str() +
                          " does not match config");
    int64_t N = images.shape[0];
    int64_t D = images.size() / N;

    namespace fs = std::filesystem;
    std::ofstream log;
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        log.open(fs::path(out_dir) / "metrics.jsonl", std::ios::app);
    }

    Rng rng(cfg.seed);
    std::vector<int64_t> order(static_cast<size_t>(N));
    std::iota(order.begin(), order.end(), 0);
    int64_t cursor = N;  // force shuffle on first use

    FitResult result;
    auto t0 = std::chrono::steady_clock::now();
    Tensor batch({cfg.batch_size, cfg.channels, cfg.height, cfg.width});
    for (int64_t it = 0; it < cfg.total_iterations; ++it) {
        for (int64_t b = 0; b < cfg.batch_size; ++b) {
            if (cursor >= N) {
                std::shuffle(order.begin(), order.end(), rng.engine());
                cursor = 0;
            }
            std::copy_n(images.data.data() + order[static_cast<size_t>(cursor++)] * D,
                        D, batch.data.data() + b * D);
        }
        double loss = train_step(batch, state, rng);
        result.losses.push_back(loss);
        if (log.is_open() &&
            (state.step % std::max<int64_t>(cfg.log_every, 1) == 0 ||
             it + 1 == cfg.total_iterations)) {
            double elapsed =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                    .count();
            log << "{\"iteration\":" << state.step << ",\"loss\":" << loss
                << ",\"temperature\":" << temperature_at(cfg, state.step)
                << ",\"elapsed_seconds\":" << elapsed << "}\n";
            log.flush();
        }
        if (!out_dir.empty() && cfg.checkpoint_every > 0 &&
            state.step % cfg.checkpoint_every == 0) {
            io::save_checkpoint(state,
                                (fs::path(out_dir) /
                                 ("checkpoint_" + std::to_string(state.step) + ".dmz"))
                                    .string());
        }
    }
    if (!out_dir.empty()) {
        result.checkpoint_path = (fs::path(out_dir) / "checkpoint.dmz").string();
        io::save_checkpoint(state, result.checkpoint_path);
    }
    return result;
}

std::unique_ptr<ModelState> prepare_finetune(const ModelState& base,
                                             const TrainConfig& cfg,
                                             FinetuneMode mode) {
    if (base.conditional())
        throw ConfigError("finetune: base checkpoint must be unconditional");
    if (cfg.conditioning_mode == ConditioningMode::unconditional)
        throw ConfigError("finetune: target config must be conditional");
    const TrainConfig& b = base.cfg;
    if (b.channels != cfg.channels || b.height != cfg.height ||
        b.width != cfg.width || b.base_channels != cfg.base_channels ||
        b.channel_multipliers != cfg.channel_multipliers ||
        b.blocks_per_resolution != cfg.blocks_per_resolution ||
        b.attention_resolutions != cfg.attention_resolutions || b.T != cfg.T ||
        b.schedule_kind != cfg.schedule_kind)
        throw ConfigError("finetune: base checkpoint incompatible with config");

    auto st = init_model(cfg);
    for (const std::string& name : base.params.names()) {
        if (!st->params.contains(name)) continue;
        nn::Param& dst = st->params.at(name);
        dst.value = base.params.at(name).value;
        if (mode == FinetuneMode::new_params_only) dst.trainable = false;
    }
    st->ema.init_from(st->params);
    return st;
}

}  // namespace dmz::train
