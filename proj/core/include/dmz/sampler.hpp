#pragma once

#include <vector>

#include "dmz/denoiser.hpp"
#include "dmz/diffusion.hpp"
#include "dmz/latent.hpp"
#include "dmz/trainer.hpp"

namespace dmz::sampler {

using dmz::Rng;
using dmz::Tensor;

struct Stride {
    std::vector<int> timesteps;   // original timesteps, descending
    diffusion::Schedule schedule; // sub-schedule; alpha_bars match the full
                                  // schedule at the selected timesteps exactly
};

// Evenly spaced timestep subsequence of T_sub steps out of T_full.
// T_sub == T_full returns the full schedule untouched.
Stride make_stride(const diffusion::Schedule& full, int T_sub);

// Algorithm-2 ancestral chain: iterate posterior steps from the largest
// timestep down, v = 0 at the final step; output clamped to [-1,1] once.
// z is ignored for unconditional specs.
Tensor sample(denoiser::Denoiser& net, const Stride& stride, const Tensor* z,
              const Tensor& x_T, Rng& rng);

// Hard posterior code of x0, then n_seeds chains sharing that z.
std::vector<Tensor> encode_then_generate(train::ModelState& state,
                                         const Tensor& x0, int n_seeds,
                                         int T_sub, Rng& rng);

// Convenience: sample a batch with EMA parameters from a model state.
Tensor sample_batch(train::ModelState& state, const Tensor& z_or_empty,
                    int64_t batch, int T_sub, Rng& rng);

}  // namespace dmz::sampler
