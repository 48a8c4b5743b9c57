#pragma once

#include <cstdint>
#include <random>

#include "dmz/tensor.hpp"

namespace dmz {

// All stochastic operations take one of these explicitly; nothing in the
// library touches global random state.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : gen_(seed) {}

    double normal() { return normal_(gen_); }
    // Uniform on the open interval (0,1).
    double uniform_open() {
        double u;
        do {
            u = uniform_(gen_);
        } while (u <= 0.0 || u >= 1.0);
        return u;
    }
    uint64_t next_u64() { return gen_(); }
    int uniform_int(int lo, int hi) {  // inclusive bounds
        return std::uniform_int_distribution<int>(lo, hi)(gen_);
    }

    Tensor normal_tensor(std::vector<int64_t> shape) {
        Tensor t(std::move(shape));
        for (auto& v : t.data) v = normal();
        return t;
    }
    Tensor uniform_open_tensor(std::vector<int64_t> shape) {
        Tensor t(std::move(shape));
        for (auto& v : t.data) v = uniform_open();
        return t;
    }

    std::mt19937_64& engine() { return gen_; }

private:
    std::mt19937_64 gen_;
    std::normal_distribution<double> normal_{0.0, 1.0};
    std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace dmz
