#pragma once

#include <memory>
#include <vector>

#include "dmz/params.hpp"
#include "dmz/rng.hpp"
#include "dmz/tensor.hpp"
#include "dmz/trainer.hpp"

namespace dmz::translate {

// Feed-forward map between two binary latent spaces; outputs logits over the
// target code's bits.
struct LatentMap {
    int n_src = 0;
    int n_tgt = 0;
    int hidden_layers = 6;
    int hidden_width = 128;
    nn::ParamStore params;

    Tensor forward_logits(const Tensor& z_src) const;  // (B,n_src) -> (B,n_tgt)
    Tensor map_hard(const Tensor& z_src) const;        // thresholded at 0.5
};

struct MapFitOptions {
    int iterations = 2000;
    double learning_rate = 1e-3;
    double validation_fraction = 0.1;
    uint64_t seed = 0;
};

struct MapFitResult {
    double train_loss = 0.0;       // final BCE, nats per bit
    double validation_loss = 0.0;
    double validation_bit_accuracy = 0.0;
};

std::unique_ptr<LatentMap> fit_latent_map(const Tensor& src_codes,
                                          const Tensor& tgt_codes, int L,
                                          const MapFitOptions& opt,
                                          MapFitResult* result = nullptr);

// Validation loss per depth, for sweep reports.
std::vector<std::pair<int, double>> depth_sweep(const Tensor& src_codes,
                                                const Tensor& tgt_codes,
                                                const std::vector<int>& depths,
                                                const MapFitOptions& opt);

// Encode x_src under the source model, map the hard code, then run the
// target model's reverse chain from fresh noise conditioned on the mapped
// code.
Tensor translate_image(const Tensor& x_src, train::ModelState& model_src,
                       train::ModelState& model_tgt, const LatentMap& map,
                       int T_sub, Rng& rng);

}  // namespace dmz::translate
