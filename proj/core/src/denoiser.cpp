#include "dmz/denoiser.hpp"

#include <algorithm>
#include <cmath>

#include "dmz/errors.hpp"

namespace dmz::denoiser {

using nn::Graph;
using nn::V;

std::string to_string(ConditioningMode m) {
    switch (m) {
        case ConditioningMode::unconditional: return "unconditional";
        case ConditioningMode::concat_with_t: return "concat_with_t";
        case ConditioningMode::cross_attention: return "cross_attention";
    }
    return "?";
}

ConditioningMode conditioning_mode_from_string(const std::string& s) {
    if (s == "unconditional") return ConditioningMode::unconditional;
    if (s == "concat_with_t") return ConditioningMode::concat_with_t;
    if (s == "cross_attention") return ConditioningMode::cross_attention;
    throw ConfigError("unknown conditioning mode: " + s);
}

void DenoiserSpec::validate() const {
    if (base_channels < 1 || channel_multipliers.empty())
        throw ConfigError("denoiser: bad channel configuration");
    if (time_embed_dim % 2 != 0)
        throw ConfigError("denoiser: time_embed_dim must be even");
    for (int64_t r : cross_attention_resolutions)
        if (std::find(attention_resolutions.begin(), attention_resolutions.end(),
                      r) == attention_resolutions.end())
            throw ConfigError(
                "denoiser: cross_attention_resolutions must be a subset of "
                "attention_resolutions");
    if (conditioning_mode != ConditioningMode::cross_attention &&
        !cross_attention_resolutions.empty())
        throw ConfigError(
            "denoiser: cross_attention_resolutions require cross_attention mode");
    int levels = static_cast<int>(channel_multipliers.size());
    if (height % (1 << (levels - 1)) != 0 || width % (1 << (levels - 1)) != 0)
        throw ConfigError("denoiser: resolution not divisible across levels");
    for (int m : channel_multipliers)
        if ((base_channels * m) % norm_groups != 0)
            throw ConfigError("denoiser: channel count not divisible by norm_groups");
}

Tensor time_embed(int t, int dim) {
    if (dim < 2 || dim % 2 != 0)
        throw ConfigError("time_embed: dim must be even and >= 2");
    Tensor out({static_cast<int64_t>(dim)});
    int half = dim / 2;
    for (int k = 0; k < half; ++k) {
        double freq =
            std::exp(-std::log(10000.0) * static_cast<double>(k) / half);
        out[k] = std::sin(t * freq);
        out[half + k] = std::cos(t * freq);
    }
    return out;
}

Tensor time_embed_batch(const std::vector<int>& ts, int dim) {
    Tensor out({static_cast<int64_t>(ts.size()), static_cast<int64_t>(dim)});
    for (size_t b = 0; b < ts.size(); ++b) {
        Tensor e = time_embed(ts[b], dim);
        std::copy(e.data.begin(), e.data.end(), out.data.begin() + b * dim);
    }
    return out;
}

V cross_attention(Graph& g, V features, V z_tokens, V wq, V wk, V wv, V wo) {
    const Tensor& F = g.value(features);
    if (F.shape.size() != 3) throw ShapeError("cross_attention: features must be (B,T,C)");
    int64_t B = F.shape[0], T = F.shape[1], C = F.shape[2];
    const Tensor& Z = g.value(z_tokens);
    if (Z.shape.size() != 3 || Z.shape[0] != B)
        throw ShapeError("cross_attention: z_tokens must be (B,m,dz)");
    int64_t m = Z.shape[1], dz = Z.shape[2];

    V q = g.reshape(g.matmul(g.reshape(features, {B * T, C}), wq), {B, T, C});
    V k = g.reshape(g.matmul(g.reshape(z_tokens, {B * m, dz}), wk), {B, m, C});
    V v = g.reshape(g.matmul(g.reshape(z_tokens, {B * m, dz}), wv), {B, m, C});
    V scores = g.scale(g.bmm(q, g.transpose12(k)), 1.0 / std::sqrt(static_cast<double>(C)));
    V attn = g.softmax_lastdim(scores);        // (B,T,m)
    V ctx = g.bmm(attn, v);                    // (B,T,C)
    V proj = g.reshape(g.matmul(g.reshape(ctx, {B * T, C}), wo), {B, T, C});
    return g.add(features, proj);
}

Denoiser::Denoiser(DenoiserSpec spec, nn::ParamStore& store)
    : spec_(std::move(spec)), store_(store) {
    spec_.validate();
    int64_t res = spec_.height;
    for (int m : spec_.channel_multipliers) {
        levels_.push_back({res, spec_.base_channels * m});
        res /= 2;
    }
    register_params();
}

bool Denoiser::has_attn(int64_t res) const {
    return std::find(spec_.attention_resolutions.begin(),
                     spec_.attention_resolutions.end(),
                     res) != spec_.attention_resolutions.end();
}

bool Denoiser::has_cross(int64_t res) const {
    return spec_.conditioning_mode == ConditioningMode::cross_attention &&
           std::find(spec_.cross_attention_resolutions.begin(),
                     spec_.cross_attention_resolutions.end(),
                     res) != spec_.cross_attention_resolutions.end();
}

void Denoiser::register_params() {
    auto& s = store_;
    int64_t de = spec_.time_embed_dim;
    s.get_or_create("unet.in.w", {spec_.base_channels, spec_.channels, 3, 3});
    s.get_or_create("unet.in.b", {spec_.base_channels});
    s.get_or_create("unet.temb.w1", {de, de});
    s.get_or_create("unet.temb.b1", {de});
    s.get_or_create("unet.temb.w2", {de, de});
    s.get_or_create("unet.temb.b2", {de});
    if (spec_.conditioning_mode == ConditioningMode::concat_with_t) {
        s.get_or_create("unet.zemb.w", {static_cast<int64_t>(spec_.n_bits), de});
        s.get_or_create("unet.zemb.b", {de});
    }
    if (spec_.conditioning_mode == ConditioningMode::cross_attention) {
        s.get_or_create("unet.ztok.w", {static_cast<int64_t>(spec_.n_bits),
                                        spec_.z_tokens * spec_.z_embed_dim});
        s.get_or_create("unet.ztok.b", {spec_.z_tokens * spec_.z_embed_dim});
    }

    auto reg_res = [&](const std::string& p, int64_t cin, int64_t cout) {
        s.get_or_create(p + "norm1.gamma", {cin});
        s.get_or_create(p + "norm1.beta", {cin});
        s.get_or_create(p + "conv1.w", {cout, cin, 3, 3});
        s.get_or_create(p + "conv1.b", {cout});
        s.get_or_create(p + "emb.w", {de, cout});
        s.get_or_create(p + "emb.b", {cout});
        s.get_or_create(p + "norm2.gamma", {cout});
        s.get_or_create(p + "norm2.beta", {cout});
        s.get_or_create(p + "conv2.w", {cout, cout, 3, 3});
        s.get_or_create(p + "conv2.b", {cout});
        if (cin != cout) {
            s.get_or_create(p + "skip.w", {cout, cin, 1, 1});
            s.get_or_create(p + "skip.b", {cout});
        }
    };
    auto reg_self = [&](const std::string& p, int64_t ch) {
        s.get_or_create(p + "norm.gamma", {ch});
        s.get_or_create(p + "norm.beta", {ch});
        s.get_or_create(p + "wq", {ch, ch});
        s.get_or_create(p + "wk", {ch, ch});
        s.get_or_create(p + "wv", {ch, ch});
        s.get_or_create(p + "wo", {ch, ch});
    };
    auto reg_cross = [&](const std::string& p, int64_t ch) {
        s.get_or_create(p + "norm.gamma", {ch});
        s.get_or_create(p + "norm.beta", {ch});
        s.get_or_create(p + "wq", {ch, ch});
        s.get_or_create(p + "wk", {spec_.z_embed_dim, ch});
        s.get_or_create(p + "wv", {spec_.z_embed_dim, ch});
        s.get_or_create(p + "wo", {ch, ch});
    };

    int L = static_cast<int>(levels_.size());
    int64_t cin = spec_.base_channels;
    for (int i = 0; i < L; ++i) {
        std::string lp = "unet.down" + std::to_string(i) + ".";
        for (int b = 0; b < spec_.blocks_per_resolution; ++b) {
            reg_res(lp + "res" + std::to_string(b) + ".", cin, levels_[i].ch);
            cin = levels_[i].ch;
        }
        if (has_attn(levels_[i].res)) reg_self(lp + "selfattn.", cin);
        if (has_cross(levels_[i].res)) reg_cross(lp + "crossattn.", cin);
        if (i < L - 1) {
            s.get_or_create(lp + "down.w", {cin, cin, 3, 3});
            s.get_or_create(lp + "down.b", {cin});
        }
    }
    int64_t mid_ch = levels_.back().ch;
    reg_res("unet.mid.res0.", mid_ch, mid_ch);
    reg_self("unet.mid.selfattn.", mid_ch);
    if (spec_.conditioning_mode == ConditioningMode::cross_attention &&
        spec_.mid_block_cross_attention)
        reg_cross("unet.mid.crossattn.", mid_ch);
    reg_res("unet.mid.res1.", mid_ch, mid_ch);

    cin = mid_ch;
    for (int i = L - 1; i >= 0; --i) {
        std::string lp = "unet.up" + std::to_string(i) + ".";
        for (int b = 0; b < spec_.blocks_per_resolution; ++b) {
            int64_t block_cin = b == 0 ? cin + levels_[i].ch : levels_[i].ch;
            reg_res(lp + "res" + std::to_string(b) + ".", block_cin, levels_[i].ch);
        }
        cin = levels_[i].ch;
        if (has_attn(levels_[i].res)) reg_self(lp + "selfattn.", cin);
        if (has_cross(levels_[i].res)) reg_cross(lp + "crossattn.", cin);
        if (i > 0) {
            s.get_or_create(lp + "up.w", {cin, cin, 3, 3});
            s.get_or_create(lp + "up.b", {cin});
        }
    }
    s.get_or_create("unet.out.norm.gamma", {spec_.base_channels});
    s.get_or_create("unet.out.norm.beta", {spec_.base_channels});
    s.get_or_create("unet.out.w", {spec_.channels, spec_.base_channels, 3, 3});
    s.get_or_create("unet.out.b", {spec_.channels});
}

void Denoiser::init_params(Rng& rng) {
    for (const std::string& name : store_.names()) {
        if (name.rfind("unet.", 0) != 0) continue;
        Tensor& t = store_.at(name).value;
        auto ends_with = [&](const char* suf) {
            std::string s(suf);
            return name.size() >= s.size() &&
                   name.compare(name.size() - s.size(), s.size(), s) == 0;
        };
        if (ends_with(".gamma")) {
            std::fill(t.data.begin(), t.data.end(), 1.0);
        } else if (ends_with(".beta") || ends_with(".b") || ends_with(".b1") ||
                   ends_with(".b2")) {
            std::fill(t.data.begin(), t.data.end(), 0.0);
        } else if (ends_with("conv2.w") || ends_with(".wo") ||
                   name == "unet.out.w") {
            // residual branches start as identities
            std::fill(t.data.begin(), t.data.end(), 0.0);
        } else {
            int64_t fan_in = t.shape.size() == 4
                                 ? t.shape[1] * t.shape[2] * t.shape[3]
                                 : t.shape[0];
            nn::init_uniform_fan_in(t, fan_in, rng);
        }
    }
}

bool Denoiser::is_z_param(const std::string& name) {
    return name.find(".crossattn.") != std::string::npos ||
           name.rfind("unet.ztok.", 0) == 0 || name.rfind("unet.zemb.", 0) == 0;
}

V Denoiser::pv(Graph& g, const std::string& name) {
    auto& p = store_.at(name);
    return g.param(p.value, &p.grad);
}

V Denoiser::resblock(Graph& g, V h, const std::string& p, int64_t cin,
                     int64_t cout, V cond_emb, bool training, Rng* rng) {
    V x = h;
    h = g.group_norm(h, pv(g, p + "norm1.gamma"), pv(g, p + "norm1.beta"),
                     spec_.norm_groups);
    h = g.silu(h);
    h = g.conv2d(h, pv(g, p + "conv1.w"), pv(g, p + "conv1.b"), 1, 1);
    V emb = g.add_rowvec(g.matmul(cond_emb, pv(g, p + "emb.w")), pv(g, p + "emb.b"));
    h = g.add_channel_bias(h, emb);
    h = g.group_norm(h, pv(g, p + "norm2.gamma"), pv(g, p + "norm2.beta"),
                     spec_.norm_groups);
    h = g.silu(h);
    if (training && spec_.dropout > 0.0 && rng) {
        Tensor mask(g.value(h).shape);
        double keep = 1.0 - spec_.dropout;
        for (auto& v : mask.data)
            v = rng->uniform_open() < keep ? 1.0 / keep : 0.0;
        h = g.mul(h, g.constant(std::move(mask)));
    }
    h = g.conv2d(h, pv(g, p + "conv2.w"), pv(g, p + "conv2.b"), 1, 1);
    if (cin != cout)
        x = g.conv2d(x, pv(g, p + "skip.w"), pv(g, p + "skip.b"), 1, 0);
    return g.add(x, h);
}

V Denoiser::self_attn(Graph& g, V h, const std::string& p, int64_t ch) {
    const Tensor& H = g.value(h);
    int64_t B = H.shape[0], hw = H.shape[2] * H.shape[3];
    V n = g.group_norm(h, pv(g, p + "norm.gamma"), pv(g, p + "norm.beta"),
                       spec_.norm_groups);
    V tok = g.transpose12(g.reshape(n, {B, ch, hw}));  // (B,hw,ch)
    V res = cross_attention(g, tok, tok, pv(g, p + "wq"), pv(g, p + "wk"),
                            pv(g, p + "wv"), pv(g, p + "wo"));
    // keep only the attention delta; the residual base is the unnormalized h
    V delta = g.sub(res, tok);
    V back = g.reshape(g.transpose12(delta), {B, ch, H.shape[2], H.shape[3]});
    return g.add(h, back);
}

V Denoiser::cross_attn_block(Graph& g, V h, const std::string& p, int64_t ch,
                             V z_tokens) {
    const Tensor& H = g.value(h);
    int64_t B = H.shape[0], hw = H.shape[2] * H.shape[3];
    V n = g.group_norm(h, pv(g, p + "norm.gamma"), pv(g, p + "norm.beta"),
                       spec_.norm_groups);
    V tok = g.transpose12(g.reshape(n, {B, ch, hw}));
    V res = cross_attention(g, tok, z_tokens, pv(g, p + "wq"), pv(g, p + "wk"),
                            pv(g, p + "wv"), pv(g, p + "wo"));
    V delta = g.sub(res, tok);
    V back = g.reshape(g.transpose12(delta), {B, ch, H.shape[2], H.shape[3]});
    return g.add(h, back);
}

V Denoiser::forward(Graph& g, V x, const std::vector<int>& ts, V z,
                    bool training, Rng* dropout_rng) {
    const Tensor& X = g.value(x);
    if (X.shape.size() != 4 || X.shape[1] != spec_.channels ||
        X.shape[2] != spec_.height || X.shape[3] != spec_.width)
        throw ShapeError("denoiser: input " + X.shape_str() + " does not match spec");
    int64_t B = X.shape[0];
    std::vector<int> tvec = ts;
    if (tvec.size() == 1) tvec.assign(static_cast<size_t>(B), ts[0]);
    if (static_cast<int64_t>(tvec.size()) != B)
        throw ShapeError("denoiser: need one timestep per batch element");

    bool use_z = spec_.conditional();
    if (use_z) {
        if (z.id < 0) throw ConfigError("denoiser: conditional spec requires z");
        const Tensor& Z = g.value(z);
        if (Z.shape.size() != 2 || Z.shape[0] != B || Z.shape[1] != spec_.n_bits)
            throw ShapeError("denoiser: z must be (B, n_bits)");
    }

    int64_t de = spec_.time_embed_dim;
    V sin_emb = g.constant(time_embed_batch(tvec, static_cast<int>(de)));
    V temb = g.add_rowvec(g.matmul(sin_emb, pv(g, "unet.temb.w1")),
                          pv(g, "unet.temb.b1"));
    temb = g.silu(temb);
    temb = g.add_rowvec(g.matmul(temb, pv(g, "unet.temb.w2")),
                        pv(g, "unet.temb.b2"));
    V cond = temb;
    if (spec_.conditioning_mode == ConditioningMode::concat_with_t) {
        V zemb = g.add_rowvec(g.matmul(z, pv(g, "unet.zemb.w")),
                              pv(g, "unet.zemb.b"));
        cond = g.add(temb, zemb);
    }
    V ztok{-1};
    if (spec_.conditioning_mode == ConditioningMode::cross_attention) {
        V flat = g.add_rowvec(g.matmul(z, pv(g, "unet.ztok.w")),
                              pv(g, "unet.ztok.b"));
        ztok = g.reshape(flat, {B, static_cast<int64_t>(spec_.z_tokens),
                                spec_.z_embed_dim});
    }

    int L = static_cast<int>(levels_.size());
    V h = g.conv2d(x, pv(g, "unet.in.w"), pv(g, "unet.in.b"), 1, 1);
    std::vector<V> skips;
    int64_t cin = spec_.base_channels;
    for (int i = 0; i < L; ++i) {
        std::string lp = "unet.down" + std::to_string(i) + ".";
        for (int b = 0; b < spec_.blocks_per_resolution; ++b) {
            h = resblock(g, h, lp + "res" + std::to_string(b) + ".", cin,
                         levels_[i].ch, cond, training, dropout_rng);
            cin = levels_[i].ch;
        }
        if (has_attn(levels_[i].res)) h = self_attn(g, h, lp + "selfattn.", cin);
        if (has_cross(levels_[i].res))
            h = cross_attn_block(g, h, lp + "crossattn.", cin, ztok);
        skips.push_back(h);
        if (i < L - 1)
            h = g.conv2d(h, pv(g, lp + "down.w"), pv(g, lp + "down.b"), 2, 1);
    }

    int64_t mid_ch = levels_.back().ch;
    h = resblock(g, h, "unet.mid.res0.", mid_ch, mid_ch, cond, training,
                 dropout_rng);
    h = self_attn(g, h, "unet.mid.selfattn.", mid_ch);
    if (spec_.conditioning_mode == ConditioningMode::cross_attention &&
        spec_.mid_block_cross_attention)
        h = cross_attn_block(g, h, "unet.mid.crossattn.", mid_ch, ztok);
    h = resblock(g, h, "unet.mid.res1.", mid_ch, mid_ch, cond, training,
                 dropout_rng);

    cin = mid_ch;
    for (int i = L - 1; i >= 0; --i) {
        std::string lp = "unet.up" + std::to_string(i) + ".";
        h = g.concat_channels(h, skips[static_cast<size_t>(i)]);
        int64_t block_cin = cin + levels_[i].ch;
        for (int b = 0; b < spec_.blocks_per_resolution; ++b) {
            h = resblock(g, h, lp + "res" + std::to_string(b) + ".", block_cin,
                         levels_[i].ch, cond, training, dropout_rng);
            block_cin = levels_[i].ch;
        }
        cin = levels_[i].ch;
        if (has_attn(levels_[i].res)) h = self_attn(g, h, lp + "selfattn.", cin);
        if (has_cross(levels_[i].res))
            h = cross_attn_block(g, h, lp + "crossattn.", cin, ztok);
        if (i > 0) {
            h = g.upsample2x(h);
            h = g.conv2d(h, pv(g, lp + "up.w"), pv(g, lp + "up.b"), 1, 1);
        }
    }

    h = g.group_norm(h, pv(g, "unet.out.norm.gamma"), pv(g, "unet.out.norm.beta"),
                     spec_.norm_groups);
    h = g.silu(h);
    return g.conv2d(h, pv(g, "unet.out.w"), pv(g, "unet.out.b"), 1, 1);
}

Tensor Denoiser::predict(const Tensor& x_t, int t, const Tensor* z) {
    Graph g;
    V zv{-1};
    if (spec_.conditional()) {
        if (!z) throw ConfigError("denoiser: conditional spec requires z");
        zv = g.constant(*z);
    }
    V out = forward(g, g.constant(x_t), {t}, zv);
    return g.value(out);
}

}  // namespace dmz::denoiser
