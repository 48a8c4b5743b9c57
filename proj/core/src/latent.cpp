#include "dmz/latent.hpp"

#include <cmath>

#include "dmz/errors.hpp"

namespace dmz::latent {

using nn::Graph;
using nn::V;

std::string to_string(LatentKind k) {
    return k == LatentKind::binary ? "binary" : "normal";
}

LatentKind latent_kind_from_string(const std::string& s) {
    if (s == "binary") return LatentKind::binary;
    if (s == "normal") return LatentKind::normal;
    throw ConfigError("unknown latent kind: " + s);
}

void EncoderSpec::validate() const {
    if (n_bits < 1) throw ConfigError("encoder: n_bits must be >= 1");
    if (n_blocks < 1) throw ConfigError("encoder: n_blocks must be >= 1");
    if (static_cast<int>(channels_per_block.size()) != n_blocks)
        throw ConfigError("encoder: channels_per_block size != n_blocks");
    int64_t h = height, w = width;
    for (int i = 0; i < n_blocks; ++i) {
        h = (h + 1) / 2;
        w = (w + 1) / 2;
    }
    if (h < 1 || w < 1)
        throw ConfigError("encoder: too many blocks for input resolution");
}

Encoder::Encoder(EncoderSpec spec, nn::ParamStore& store)
    : spec_(std::move(spec)), store_(store) {
    spec_.validate();
    int64_t cin = spec_.channels;
    int64_t h = spec_.height, w = spec_.width;
    for (int i = 0; i < spec_.n_blocks; ++i) {
        int64_t cout = spec_.channels_per_block[static_cast<size_t>(i)];
        std::string p = "enc.block" + std::to_string(i) + ".";
        store_.get_or_create(p + "conv.w", {cout, cin, 3, 3});
        store_.get_or_create(p + "conv.b", {cout});
        store_.get_or_create(p + "bn.gamma", {cout});
        store_.get_or_create(p + "bn.beta", {cout});
        auto& rm = store_.get_or_create(p + "bn.running_mean", {cout});
        auto& rv = store_.get_or_create(p + "bn.running_var", {cout});
        rm.trainable = false;
        rv.trainable = false;
        cin = cout;
        h = (h + 1) / 2;
        w = (w + 1) / 2;
    }
    store_.get_or_create("enc.proj.w", {cin * h * w, spec_.output_dim()});
    store_.get_or_create("enc.proj.b", {spec_.output_dim()});
}

void Encoder::init_params(Rng& rng) {
    int64_t cin = spec_.channels;
    for (int i = 0; i < spec_.n_blocks; ++i) {
        std::string p = "enc.block" + std::to_string(i) + ".";
        int64_t cout = spec_.channels_per_block[static_cast<size_t>(i)];
        nn::init_uniform_fan_in(store_.at(p + "conv.w").value, cin * 9, rng);
        std::fill(store_.at(p + "bn.gamma").value.data.begin(),
                  store_.at(p + "bn.gamma").value.data.end(), 1.0);
        std::fill(store_.at(p + "bn.running_var").value.data.begin(),
                  store_.at(p + "bn.running_var").value.data.end(), 1.0);
        cin = cout;
    }
    // final projection stays zero: all logits start at 0 (sigmoid 0.5)
}

V Encoder::forward(Graph& g, V x, bool training) {
    const Tensor& X = g.value(x);
    if (X.shape.size() != 4 || X.shape[1] != spec_.channels ||
        X.shape[2] != spec_.height || X.shape[3] != spec_.width)
        throw ShapeError("encoder: input " + X.shape_str() +
                         " does not match spec");
    V h = x;
    for (int i = 0; i < spec_.n_blocks; ++i) {
        std::string p = "enc.block" + std::to_string(i) + ".";
        auto& cw = store_.at(p + "conv.w");
        auto& cb = store_.at(p + "conv.b");
        h = g.conv2d(h, g.param(cw.value, &cw.grad), g.param(cb.value, &cb.grad),
                     2, 1);
        auto& ga = store_.at(p + "bn.gamma");
        auto& be = store_.at(p + "bn.beta");
        h = g.batch_norm2d(h, g.param(ga.value, &ga.grad),
                           g.param(be.value, &be.grad),
                           &store_.at(p + "bn.running_mean").value,
                           &store_.at(p + "bn.running_var").value, training);
        h = g.leaky_relu(h, 0.2);
    }
    const Tensor& hv = g.value(h);
    int64_t flat = hv.size() / hv.shape[0];
    h = g.reshape(h, {hv.shape[0], flat});
    auto& pw = store_.at("enc.proj.w");
    auto& pb = store_.at("enc.proj.b");
    return g.add_rowvec(g.matmul(h, g.param(pw.value, &pw.grad)),
                        g.param(pb.value, &pb.grad));
}

Tensor Encoder::encode_logits(const Tensor& x0) {
    Graph g;
    V out = forward(g, g.constant(x0), /*training=*/false);
    return g.value(out);
}

LatentCode Encoder::encode_hard(const Tensor& x0) {
    Tensor logits = encode_logits(x0);
    if (spec_.latent == LatentKind::normal) {
        // mean channel only; continuous codes stay real-valued
        int64_t B = logits.shape[0];
        Tensor mean({B, static_cast<int64_t>(spec_.n_bits)});
        for (int64_t b = 0; b < B; ++b)
            for (int i = 0; i < spec_.n_bits; ++i)
                mean[b * spec_.n_bits + i] = logits[b * 2 * spec_.n_bits + i];
        return {std::move(mean), LatentMode::hard};
    }
    return binarize_logits(logits);
}

LatentCode relax_sample(const Tensor& logits, double temperature, const Tensor& u) {
    if (temperature <= 0.0)
        throw ConfigError("relax_sample: temperature must be positive");
    check_same_shape(logits, u, "relax_sample");
    Tensor z(logits.shape);
    for (int64_t i = 0; i < z.size(); ++i) {
        double un = u[i];
        if (un <= 0.0 || un >= 1.0)
            throw ConfigError("relax_sample: u must lie in the open interval (0,1)");
        double a = (logits[i] + std::log(un) - std::log1p(-un)) / temperature;
        z[i] = 1.0 / (1.0 + std::exp(-a));
    }
    return {std::move(z), LatentMode::relaxed};
}

V relax_sample_node(Graph& g, V logits, double temperature, const Tensor& u) {
    if (temperature <= 0.0)
        throw ConfigError("relax_sample: temperature must be positive");
    Tensor gumbel(u.shape);
    for (int64_t i = 0; i < u.size(); ++i)
        gumbel[i] = std::log(u[i]) - std::log1p(-u[i]);
    return g.sigmoid(g.scale(g.add(logits, g.constant(std::move(gumbel))),
                             1.0 / temperature));
}

LatentCode binarize_relaxed(const LatentCode& relaxed) {
    Tensor out(relaxed.values.shape);
    for (int64_t i = 0; i < out.size(); ++i)
        out[i] = relaxed.values[i] > 0.5 ? 1.0 : 0.0;
    return {std::move(out), LatentMode::hard};
}

LatentCode binarize_logits(const Tensor& logits) {
    Tensor out(logits.shape);
    for (int64_t i = 0; i < out.size(); ++i) out[i] = logits[i] > 0.0 ? 1.0 : 0.0;
    return {std::move(out), LatentMode::hard};
}

LatentCode sample_prior_bernoulli(int n, Rng& rng) {
    Tensor v({static_cast<int64_t>(n)});
    for (auto& x : v.data) x = rng.uniform_open() < 0.5 ? 0.0 : 1.0;
    return {std::move(v), LatentMode::hard};
}

Tensor sample_prior_bernoulli_batch(int64_t batch, int n, Rng& rng) {
    Tensor v({batch, static_cast<int64_t>(n)});
    for (auto& x : v.data) x = rng.uniform_open() < 0.5 ? 0.0 : 1.0;
    return v;
}

NormalPrior fit_normal_prior(const Tensor& codes) {
    if (codes.shape.size() != 2 || codes.shape[0] < 1)
        throw DataError("fit_normal_prior: need a nonempty (N,n) code matrix");
    int64_t N = codes.shape[0], n = codes.shape[1];
    NormalPrior p;
    p.mean.assign(static_cast<size_t>(n), 0.0);
    p.stddev.assign(static_cast<size_t>(n), 0.0);
    for (int64_t i = 0; i < N; ++i)
        for (int64_t j = 0; j < n; ++j) p.mean[static_cast<size_t>(j)] += codes[i * n + j];
    for (auto& m : p.mean) m /= static_cast<double>(N);
    for (int64_t i = 0; i < N; ++i)
        for (int64_t j = 0; j < n; ++j) {
            double d = codes[i * n + j] - p.mean[static_cast<size_t>(j)];
            p.stddev[static_cast<size_t>(j)] += d * d;
        }
    for (auto& s : p.stddev) s = std::sqrt(s / static_cast<double>(N));
    return p;
}

Tensor sample_normal_prior(const NormalPrior& prior, int64_t batch, Rng& rng) {
    int64_t n = static_cast<int64_t>(prior.mean.size());
    Tensor out({batch, n});
    for (int64_t b = 0; b < batch; ++b)
        for (int64_t j = 0; j < n; ++j)
            out[b * n + j] = prior.mean[static_cast<size_t>(j)] +
                             prior.stddev[static_cast<size_t>(j)] * rng.normal();
    return out;
}

}  // namespace dmz::latent
