#pragma once

#include <string>
#include <vector>

#include "dmz/graph.hpp"
#include "dmz/params.hpp"
#include "dmz/rng.hpp"
#include "dmz/tensor.hpp"

namespace dmz::denoiser {

using dmz::Rng;
using dmz::Tensor;

enum class ConditioningMode { unconditional, concat_with_t, cross_attention };

std::string to_string(ConditioningMode m);
ConditioningMode conditioning_mode_from_string(const std::string& s);

struct DenoiserSpec {
    int64_t channels = 1;
    int64_t height = 16;
    int64_t width = 16;
    int64_t base_channels = 32;
    std::vector<int> channel_multipliers = {1, 2, 2};
    int blocks_per_resolution = 1;
    std::vector<int64_t> attention_resolutions = {8, 4};
    std::vector<int64_t> cross_attention_resolutions = {8};
    ConditioningMode conditioning_mode = ConditioningMode::cross_attention;
    int n_bits = 8;          // latent length the z pathways are built for
    int64_t z_embed_dim = 64;  // per-token dimension of the z tokens
    int z_tokens = 4;
    bool mid_block_cross_attention = true;
    int64_t time_embed_dim = 64;
    int norm_groups = 8;
    double dropout = 0.0;

    void validate() const;
    bool conditional() const {
        return conditioning_mode != ConditioningMode::unconditional;
    }
};

// Raw sinusoidal embedding with geometric frequencies; first half sines,
// second half cosines.
Tensor time_embed(int t, int dim);
Tensor time_embed_batch(const std::vector<int>& ts, int dim);

// Residual cross-attention: out = x + Wo * Attention(Wq x, Wk z, Wv z) with
// softmax over the z tokens. Zero output projection makes it an identity.
nn::V cross_attention(nn::Graph& g, nn::V features /*(B,T,C)*/,
                      nn::V z_tokens /*(B,m,dz)*/, nn::V wq, nn::V wk, nn::V wv,
                      nn::V wo);

// U-Net epsilon predictor. Parameters live in the given store under "unet.";
// two constructions from the same spec register identical names and shapes.
class Denoiser {
public:
    Denoiser(DenoiserSpec spec, nn::ParamStore& store);

    void init_params(Rng& rng);  // residual/attention output convs start at zero

    // x: (B,C,H,W); ts: one timestep per batch element (or a single broadcast
    // value); z: (B,n_bits) node, ignored in unconditional mode.
    nn::V forward(nn::Graph& g, nn::V x, const std::vector<int>& ts, nn::V z,
                  bool training = false, Rng* dropout_rng = nullptr);

    // Plain-tensor eval pass.
    Tensor predict(const Tensor& x_t, int t, const Tensor* z);

    const DenoiserSpec& spec() const { return spec_; }

    // Parameters that exist only for z conditioning (cross-attention stacks,
    // z embeddings); the finetune path initializes and/or trains just these.
    static bool is_z_param(const std::string& name);

private:
    struct Level {
        int64_t res;
        int64_t ch;
    };
    DenoiserSpec spec_;
    nn::ParamStore& store_;
    std::vector<Level> levels_;

    void register_params();
    nn::V resblock(nn::Graph& g, nn::V h, const std::string& prefix, int64_t cin,
                   int64_t cout, nn::V cond_emb, bool training, Rng* rng);
    nn::V self_attn(nn::Graph& g, nn::V h, const std::string& prefix, int64_t ch);
    nn::V cross_attn_block(nn::Graph& g, nn::V h, const std::string& prefix,
                           int64_t ch, nn::V z_tokens);
    nn::V pv(nn::Graph& g, const std::string& name);
    bool has_attn(int64_t res) const;
    bool has_cross(int64_t res) const;
};

}  // namespace dmz::denoiser
