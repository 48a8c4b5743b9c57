#include "dmz/translate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "dmz/errors.hpp"
#include "dmz/graph.hpp"
#include "dmz/latent.hpp"
#include "dmz/sampler.hpp"

namespace dmz::translate {

namespace {

std::string layer_w(int i) { return "map.l" + std::to_string(i) + ".w"; }
std::string layer_b(int i) { return "map.l" + std::to_string(i) + ".b"; }

std::vector<int64_t> layer_dims(const LatentMap& m) {
    std::vector<int64_t> dims;
    dims.push_back(m.n_src);
    for (int i = 0; i < m.hidden_layers; ++i) dims.push_back(m.hidden_width);
    dims.push_back(m.n_tgt);
    return dims;
}

// Forward through the MLP on the tape; used for both training and (with a
// throwaway graph) evaluation.
nn::V mlp_forward(nn::Graph& g, const LatentMap& m, nn::V x, bool with_grads) {
    auto dims = layer_dims(m);
    nn::V h = x;
    for (int i = 0; i + 1 < static_cast<int>(dims.size()); ++i) {
        auto& pw = const_cast<nn::ParamStore&>(m.params).at(layer_w(i));
        auto& pb = const_cast<nn::ParamStore&>(m.params).at(layer_b(i));
        nn::V w = with_grads ? g.param(pw.value, &pw.grad) : g.constant(pw.value);
        nn::V b = with_grads ? g.param(pb.value, &pb.grad) : g.constant(pb.value);
        h = g.add_rowvec(g.matmul(h, w), b);
        if (i + 2 < static_cast<int>(dims.size())) h = g.leaky_relu(h, 0.2);
    }
    return h;
}

// softplus(l) - y*l, averaged: binary cross-entropy with logits.
nn::V bce_with_logits(nn::Graph& g, nn::V logits, nn::V targets) {
    return g.mean_all(g.sub(g.softplus(logits), g.mul(targets, logits)));
}

Tensor take_rows(const Tensor& t, const std::vector<int64_t>& rows) {
    Tensor out = Tensor::zeros({static_cast<int64_t>(rows.size()), t.shape[1]});
    for (size_t r = 0; r < rows.size(); ++r)
        std::copy_n(t.data.begin() + rows[r] * t.shape[1], t.shape[1],
                    out.data.begin() + static_cast<int64_t>(r) * t.shape[1]);
    return out;
}

}  // namespace

Tensor LatentMap::forward_logits(const Tensor& z_src) const {
    if (z_src.shape.size() != 2 || z_src.shape[1] != n_src)
        throw ShapeError("latent map: expected (B," + std::to_string(n_src) +
                         "), got " + z_src.shape_str());
    nn::Graph g;
    return g.value(mlp_forward(g, *this, g.constant(z_src), false));
}

Tensor LatentMap::map_hard(const Tensor& z_src) const {
    Tensor logits = forward_logits(z_src);
    for (auto& v : logits.data) v = v > 0.0 ? 1.0 : 0.0;
    return logits;
}

std::unique_ptr<LatentMap> fit_latent_map(const Tensor& src_codes,
                                          const Tensor& tgt_codes, int L,
                                          const MapFitOptions& opt,
                                          MapFitResult* result) {
    if (src_codes.shape.size() != 2 || tgt_codes.shape.size() != 2)
        throw ShapeError("fit_latent_map: codes must be 2-D");
    if (src_codes.shape[0] != tgt_codes.shape[0])
        throw ShapeError("fit_latent_map: source/target pair count mismatch");
    if (src_codes.shape[0] == 0) throw DataError("fit_latent_map: no pairs");
    if (L < 0) throw ConfigError("fit_latent_map: need L >= 0");

    auto map = std::make_unique<LatentMap>();
    map->n_src = static_cast<int>(src_codes.shape[1]);
    map->n_tgt = static_cast<int>(tgt_codes.shape[1]);
    map->hidden_layers = L;

    Rng rng(opt.seed);
    auto dims = layer_dims(*map);
    for (int i = 0; i + 1 < static_cast<int>(dims.size()); ++i) {
        auto& w = map->params.get_or_create(layer_w(i), {dims[i], dims[i + 1]});
        nn::init_uniform_fan_in(w.value, dims[static_cast<size_t>(i)], rng);
        map->params.get_or_create(layer_b(i), {dims[i + 1]});
    }

    // Held-out rows for the validation report.
    int64_t n = src_codes.shape[0];
    std::vector<int64_t> perm(static_cast<size_t>(n));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng.engine());
    int64_t n_val = std::min<int64_t>(
        n - 1, static_cast<int64_t>(std::llround(
                   static_cast<double>(n) * opt.validation_fraction)));
    std::vector<int64_t> val_rows(perm.begin(), perm.begin() + n_val);
    std::vector<int64_t> train_rows(perm.begin() + n_val, perm.end());

    Tensor x_train = take_rows(src_codes, train_rows);
    Tensor y_train = take_rows(tgt_codes, train_rows);

    nn::AdamConfig adam;
    adam.lr = opt.learning_rate;
    double train_loss = 0.0;
    for (int it = 0; it < opt.iterations; ++it) {
        map->params.zero_grads();
        nn::Graph g;
        nn::V logits = mlp_forward(g, *map, g.constant(x_train), true);
        nn::V loss = bce_with_logits(g, logits, g.constant(y_train));
        train_loss = g.value(loss).data[0];
        g.backward(loss);
        nn::adamw_step(map->params, adam, it + 1);
    }

    if (result) {
        result->train_loss = train_loss;
        result->validation_loss = 0.0;
        result->validation_bit_accuracy = 0.0;
        if (n_val > 0) {
            Tensor x_val = take_rows(src_codes, val_rows);
            Tensor y_val = take_rows(tgt_codes, val_rows);
            Tensor logits = map->forward_logits(x_val);
            double loss = 0.0;
            int64_t correct = 0;
            for (size_t i = 0; i < logits.data.size(); ++i) {
                double l = logits.data[i];
                double y = y_val.data[i];
                loss += std::log1p(std::exp(-std::abs(l))) +
                        std::max(l, 0.0) - y * l;
                if ((l > 0.0 ? 1.0 : 0.0) == y) ++correct;
            }
            result->validation_loss = loss / static_cast<double>(logits.data.size());
            result->validation_bit_accuracy =
                static_cast<double>(correct) /
                static_cast<double>(logits.data.size());
        }
    }
    return map;
}

std::vector<std::pair<int, double>> depth_sweep(const Tensor& src_codes,
                                                const Tensor& tgt_codes,
                                                const std::vector<int>& depths,
                                                const MapFitOptions& opt) {
    std::vector<std::pair<int, double>> out;
    for (int L : depths) {
        MapFitResult res;
        fit_latent_map(src_codes, tgt_codes, L, opt, &res);
        out.emplace_back(L, res.validation_loss);
    }
    return out;
}

Tensor translate_image(const Tensor& x_src, train::ModelState& model_src,
                       train::ModelState& model_tgt, const LatentMap& map,
                       int T_sub, Rng& rng) {
    if (!model_src.conditional() || !model_tgt.conditional())
        throw ConfigError("translate_image: both models need encoders");
    if (map.n_src != model_src.cfg.n_bits || map.n_tgt != model_tgt.cfg.n_bits)
        throw ConfigError("translate_image: map dimensions do not match models");
    latent::LatentCode z_src = model_src.encoder->encode_hard(x_src);
    Tensor z_tgt = map.map_hard(z_src.values);
    int64_t batch = x_src.shape[0];
    return sampler::sample_batch(model_tgt, z_tgt, batch, T_sub, rng);
}

}  // namespace dmz::translate
