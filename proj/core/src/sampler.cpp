#include "dmz/sampler.hpp"

#include <cmath>

#include "dmz/errors.hpp"

namespace dmz::sampler {

Stride make_stride(const diffusion::Schedule& full, int T_sub) {
    if (T_sub < 1 || T_sub > full.T)
        throw ConfigError("make_stride: need 1 <= T_sub <= T_full");
    Stride s;
    if (T_sub == full.T) {
        s.schedule = full;
        s.timesteps.resize(static_cast<size_t>(full.T));
        for (int i = 0; i < full.T; ++i) s.timesteps[static_cast<size_t>(i)] = full.T - i;
        return s;
    }
    // Uniform spacing in timestep index; the last selected step is T_full.
    std::vector<int> ts(static_cast<size_t>(T_sub));
    for (int k = 1; k <= T_sub; ++k)
        ts[static_cast<size_t>(k - 1)] =
            static_cast<int>(static_cast<int64_t>(k) * full.T / T_sub);

    diffusion::Schedule& sub = s.schedule;
    sub.kind = full.kind;
    sub.T = T_sub;
    sub.betas.resize(static_cast<size_t>(T_sub));
    sub.alphas.resize(static_cast<size_t>(T_sub));
    sub.alpha_bars.resize(static_cast<size_t>(T_sub));
    sub.sigmas.resize(static_cast<size_t>(T_sub));
    double prev_ab = 1.0;
    for (int k = 0; k < T_sub; ++k) {
        double ab = full.alpha_bar(ts[static_cast<size_t>(k)]);
        sub.alpha_bars[static_cast<size_t>(k)] = ab;  // matches the full table exactly
        sub.betas[static_cast<size_t>(k)] = 1.0 - ab / prev_ab;
        sub.alphas[static_cast<size_t>(k)] = ab / prev_ab;
        prev_ab = ab;
    }
    sub.sigmas[0] = 0.0;
    for (int k = 2; k <= T_sub; ++k) {
        double ab_prev = sub.alpha_bars[static_cast<size_t>(k - 2)];
        double ab = sub.alpha_bars[static_cast<size_t>(k - 1)];
        sub.sigmas[static_cast<size_t>(k - 1)] = std::sqrt(
            (1.0 - ab_prev) / (1.0 - ab) * sub.betas[static_cast<size_t>(k - 1)]);
    }
    s.timesteps.assign(ts.rbegin(), ts.rend());
    return s;
}

Tensor sample(denoiser::Denoiser& net, const Stride& stride, const Tensor* z,
              const Tensor& x_T, Rng& rng) {
    const diffusion::Schedule& sched = stride.schedule;
    if (static_cast<int>(stride.timesteps.size()) != sched.T)
        throw ConfigError("sample: stride timesteps inconsistent with schedule");
    Tensor x = x_T;
    for (int k = sched.T; k >= 1; --k) {
        int t_model = stride.timesteps[static_cast<size_t>(sched.T - k)];
        Tensor eps_hat = net.predict(x, t_model, z);
        Tensor v = k > 1 ? rng.normal_tensor(x.shape) : Tensor::zeros(x.shape);
        x = diffusion::posterior_step(x, eps_hat, k, sched, v);
        if (!x.all_finite())
            throw NumericError("sample: non-finite state at timestep " +
                               std::to_string(t_model));
    }
    for (auto& v : x.data) v = std::clamp(v, -1.0, 1.0);
    return x;
}

std::vector<Tensor> encode_then_generate(train::ModelState& state,
                                         const Tensor& x0, int n_seeds,
                                         int T_sub, Rng& rng) {
    if (!state.conditional())
        throw ConfigError("encode_then_generate: model has no encoder");
    latent::LatentCode z = state.encoder->encode_hard(x0);
    nn::ParamStore ema = state.ema_params();
    denoiser::Denoiser net(state.net->spec(), ema);
    Stride stride = make_stride(state.sched, T_sub);
    std::vector<Tensor> out;
    for (int i = 0; i < n_seeds; ++i) {
        Tensor x_T = rng.normal_tensor(x0.shape);
        out.push_back(sample(net, stride, &z.values, x_T, rng));
    }
    return out;
}

Tensor sample_batch(train::ModelState& state, const Tensor& z_or_empty,
                    int64_t batch, int T_sub, Rng& rng) {
    nn::ParamStore ema = state.ema_params();
    denoiser::Denoiser net(state.net->spec(), ema);
    Stride stride = make_stride(state.sched, T_sub);
    const Tensor* z = nullptr;
    if (state.conditional()) {
        if (z_or_empty.shape.empty() || z_or_empty.shape[0] != batch)
            throw ConfigError("sample_batch: conditional model needs (B,n) codes");
        z = &z_or_empty;
    }
    Tensor x_T = rng.normal_tensor(
        {batch, state.cfg.channels, state.cfg.height, state.cfg.width});
    return sample(net, stride, z, x_T, rng);
}

}  // namespace dmz::sampler
