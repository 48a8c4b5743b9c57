#pragma once

#include <functional>
#include <vector>

#include "dmz/rng.hpp"
#include "dmz/tensor.hpp"
#include "dmz/trainer.hpp"

namespace dmz::metrics {

// Fréchet distance between the Gaussian moment fits of two sample sets,
// ||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2}). Default features are
// the raw flattened pixels; not comparable to Inception-feature FID numbers.
using FeatureFn = std::function<Tensor(const Tensor&)>;  // (B,...) -> (B,D)
double frechet_proxy(const Tensor& samples_a, const Tensor& samples_b,
                     const FeatureFn& feature_fn = nullptr);

// Mean squared error between images and their posterior-code regenerations.
double reconstruction_mse(train::ModelState& model, const Tensor& dataset,
                          int T_sub, Rng& rng);

struct LatentUsage {
    std::vector<double> marginals;            // P(bit = 1)
    std::vector<double> entropies;            // bits, in [0,1]
    Tensor correlations;                      // (n,n), unit diagonal
};
LatentUsage latent_usage_stats(const Tensor& codes);

}  // namespace dmz::metrics
