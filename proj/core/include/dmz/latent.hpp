#pragma once

#include <string>
#include <vector>

#include "dmz/graph.hpp"
#include "dmz/params.hpp"
#include "dmz/rng.hpp"
#include "dmz/tensor.hpp"

namespace dmz::latent {

using dmz::Rng;
using dmz::Tensor;

enum class LatentMode { relaxed, hard };
enum class LatentKind { binary, normal };

std::string to_string(LatentKind k);
LatentKind latent_kind_from_string(const std::string& s);

// Rows are per-sample codes; relaxed values live in (0,1), hard in {0,1}.
struct LatentCode {
    Tensor values;  // (B, n)
    LatentMode mode = LatentMode::hard;
    int64_t n_bits() const { return values.shape.back(); }
};

struct EncoderSpec {
    int64_t channels = 1;
    int64_t height = 8;
    int64_t width = 8;
    int n_bits = 8;
    int n_blocks = 3;  // each block halves the spatial size
    std::vector<int64_t> channels_per_block = {16, 32, 32};
    LatentKind latent = LatentKind::binary;

    void validate() const;
    // binary -> n_bits logits; normal -> mean and log-variance stacked
    int64_t output_dim() const {
        return latent == LatentKind::binary ? n_bits : 2 * n_bits;
    }
};

// Conv / batch-norm / LeakyReLU blocks with a final linear projection.
// Parameters live in the shared store under the "enc." prefix; batch-norm
// running stats are registered non-trainable.
class Encoder {
public:
    Encoder(EncoderSpec spec, nn::ParamStore& store);

    void init_params(Rng& rng);  // final projection is zero-initialized
    nn::V forward(nn::Graph& g, nn::V x, bool training);

    // Convenience eval-mode pass on plain tensors.
    Tensor encode_logits(const Tensor& x0);
    // Hard posterior code: threshold logits at zero (binary) or the mean
    // channel at zero (normal variant uses the mean directly, not thresholded).
    LatentCode encode_hard(const Tensor& x0);

    const EncoderSpec& spec() const { return spec_; }

private:
    EncoderSpec spec_;
    nn::ParamStore& store_;
};

// Binary-concrete sample: sigmoid((logits + log u - log(1-u)) / temperature).
LatentCode relax_sample(const Tensor& logits, double temperature, const Tensor& u);
// Graph version used inside the training step; `u` is caller-supplied noise.
nn::V relax_sample_node(nn::Graph& g, nn::V logits, double temperature,
                        const Tensor& u);

// Threshold at 0.5 for relaxed values (ties map to 0) or at 0 for logits.
LatentCode binarize_relaxed(const LatentCode& relaxed);
LatentCode binarize_logits(const Tensor& logits);

LatentCode sample_prior_bernoulli(int n, Rng& rng);
Tensor sample_prior_bernoulli_batch(int64_t batch, int n, Rng& rng);

// Gaussian statistics of a set of continuous codes; the prior for the
// Normal-latent ablation is fit over training-set codes.
struct NormalPrior {
    std::vector<double> mean;
    std::vector<double> stddev;
};
NormalPrior fit_normal_prior(const Tensor& codes);  // codes (N, n)
Tensor sample_normal_prior(const NormalPrior& prior, int64_t batch, Rng& rng);

}  // namespace dmz::latent
