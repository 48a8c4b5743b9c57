#pragma once

#include <map>
#include <string>
#include <vector>

#include "dmz/rng.hpp"
#include "dmz/tensor.hpp"

namespace dmz::nn {

struct Param {
    Tensor value;
    Tensor grad;
    Tensor adam_m;
    Tensor adam_v;
    bool trainable = true;
};

// Named parameter tensors in deterministic (registration) order.
class ParamStore {
public:
    // Registers the tensor if absent, otherwise returns the existing one.
    Param& get_or_create(const std::string& name, std::vector<int64_t> shape);
    Param& at(const std::string& name);
    const Param& at(const std::string& name) const;
    bool contains(const std::string& name) const;

    const std::vector<std::string>& names() const { return order_; }
    size_t count() const { return order_.size(); }
    int64_t total_elements() const;

    void zero_grads();
    // Non-trainable tensors (e.g. batch-norm running stats) are skipped by
    // the optimizer but still serialized.
    void set_trainable(const std::string& prefix, bool trainable);

private:
    std::map<std::string, Param> params_;
    std::vector<std::string> order_;
};

struct AdamConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

// One decoupled-weight-decay adaptive-moment step over all trainable params.
void adamw_step(ParamStore& store, const AdamConfig& cfg, int64_t step);

// shadow <- decay * shadow + (1 - decay) * param
class EmaShadow {
public:
    void init_from(const ParamStore& store);
    void update(const ParamStore& store, double decay);
    const Tensor& at(const std::string& name) const;
    bool empty() const { return shadow_.empty(); }
    std::map<std::string, Tensor>& tensors() { return shadow_; }
    const std::map<std::string, Tensor>& tensors() const { return shadow_; }

private:
    std::map<std::string, Tensor> shadow_;
};

// Kaiming-style uniform init, deterministic given the rng.
void init_uniform_fan_in(Tensor& t, int64_t fan_in, Rng& rng);

}  // namespace dmz::nn
