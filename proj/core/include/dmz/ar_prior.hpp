#pragma once

#include <vector>

#include "dmz/latent.hpp"
#include "dmz/rng.hpp"
#include "dmz/tensor.hpp"

namespace dmz::latent {

// Causal per-bit model: p(z_i = 1 | z_{<i}) = sigmoid(w_i . z_{<i} + b_i).
// A linear masked autoregressor is enough to act as a density over codes.
struct ARPrior {
    int n_bits = 0;
    std::vector<std::vector<double>> weights;  // weights[i] has i entries
    std::vector<double> bias;

    double conditional_p1(const double* prefix, int i) const;
    // Average log-likelihood (nats per code) of a hard code set.
    double log_likelihood(const Tensor& codes) const;
};

struct ARFitOptions {
    int iterations = 400;
    double lr = 0.5;
    double l2 = 1e-4;
};

ARPrior fit_ar_prior(const Tensor& codes, const ARFitOptions& opts = {});
LatentCode sample_ar_prior(const ARPrior& prior, Rng& rng);
Tensor sample_ar_prior_batch(const ARPrior& prior, int64_t batch, Rng& rng);

}  // namespace dmz::latent
