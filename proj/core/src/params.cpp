#include "dmz/params.hpp"

#include <cmath>

#include "dmz/errors.hpp"

namespace dmz::nn {

Param& ParamStore::get_or_create(const std::string& name,
                                 std::vector<int64_t> shape) {
    auto it = params_.find(name);
    if (it != params_.end()) {
        if (it->second.value.shape != shape)
            throw ShapeError("param " + name + " re-registered with different shape");
        return it->second;
    }
    Param p;
    p.value = Tensor(shape);
    p.grad = Tensor(shape);
    p.adam_m = Tensor(shape);
    p.adam_v = Tensor(std::move(shape));
    order_.push_back(name);
    return params_.emplace(name, std::move(p)).first->second;
}

Param& ParamStore::at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("unknown param: " + name);
    return it->second;
}

const Param& ParamStore::at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ConfigError("unknown param: " + name);
    return it->second;
}

bool ParamStore::contains(const std::string& name) const {
    return params_.count(name) > 0;
}

int64_t ParamStore::total_elements() const {
    int64_t n = 0;
    for (const auto& [k, p] : params_) n += p.value.size();
    return n;
}

void ParamStore::zero_grads() {
    for (auto& [k, p] : params_)
        std::fill(p.grad.data.begin(), p.grad.data.end(), 0.0);
}

void ParamStore::set_trainable(const std::string& prefix, bool trainable) {
    for (auto& [k, p] : params_)
        if (k.rfind(prefix, 0) == 0) p.trainable = trainable;
}

void adamw_step(ParamStore& store, const AdamConfig& cfg, int64_t step) {
    double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
    double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
    for (const std::string& name : store.names()) {
        Param& p = store.at(name);
        if (!p.trainable) continue;
        for (int64_t i = 0; i < p.value.size(); ++i) {
            double gd = p.grad[i];
            p.adam_m[i] = cfg.beta1 * p.adam_m[i] + (1.0 - cfg.beta1) * gd;
            p.adam_v[i] = cfg.beta2 * p.adam_v[i] + (1.0 - cfg.beta2) * gd * gd;
            double mhat = p.adam_m[i] / bc1;
            double vhat = p.adam_v[i] / bc2;
            p.value[i] -= cfg.lr * (mhat / (std::sqrt(vhat) + cfg.eps) +
                                    cfg.weight_decay * p.value[i]);
        }
    }
}

void EmaShadow::init_from(const ParamStore& store) {
    shadow_.clear();
    for (const std::string& name : store.names())
        shadow_[name] = store.at(name).value;
}

void EmaShadow::update(const ParamStore& store, double decay) {
    for (const std::string& name : store.names()) {
        const Tensor& v = store.at(name).value;
        auto it = shadow_.find(name);
        if (it == shadow_.end()) {
            shadow_[name] = v;
            continue;
        }
        Tensor& s = it->second;
        for (int64_t i = 0; i < v.size(); ++i)
            s[i] = decay * s[i] + (1.0 - decay) * v[i];
    }
}

const Tensor& EmaShadow::at(const std::string& name) const {
    auto it = shadow_.find(name);
    if (it == shadow_.end()) throw ConfigError("unknown ema tensor: " + name);
    return it->second;
}

void init_uniform_fan_in(Tensor& t, int64_t fan_in, Rng& rng) {
    double bound = 1.0 / std::sqrt(static_cast<double>(std::max<int64_t>(fan_in, 1)));
    for (auto& v : t.data) v = (2.0 * rng.uniform_open() - 1.0) * bound;
}

}  // namespace dmz::nn
