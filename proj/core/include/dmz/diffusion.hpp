#pragma once

#include <functional>
#include <string>
#include <vector>

#include "dmz/rng.hpp"
#include "dmz/tensor.hpp"

namespace dmz::diffusion {

using dmz::Rng;
using dmz::Tensor;

enum class ScheduleKind { linear, cosine };

std::string to_string(ScheduleKind k);
ScheduleKind schedule_kind_from_string(const std::string& s);

// Per-timestep constants of the forward process. Index 0 holds timestep 1;
// accessors below take 1-based timesteps.
struct Schedule {
    ScheduleKind kind = ScheduleKind::cosine;
    int T = 0;
    std::vector<double> betas;
    std::vector<double> alphas;
    std::vector<double> alpha_bars;
    std::vector<double> sigmas;  // posterior std; sigmas[0] == 0 by convention

    double beta(int t) const { return betas[static_cast<size_t>(t - 1)]; }
    double alpha(int t) const { return alphas[static_cast<size_t>(t - 1)]; }
    double alpha_bar(int t) const { return alpha_bars[static_cast<size_t>(t - 1)]; }
    double sigma(int t) const { return sigmas[static_cast<size_t>(t - 1)]; }
    void check_t(int t) const;
};

Schedule build_schedule(ScheduleKind kind, int T);

// x_t = sqrt(abar_t) x0 + sqrt(1-abar_t) (eps + gamma_ip * eps_extra).
// Pass gamma_ip = 0 and an arbitrary eps_extra to disable input perturbation.
Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const Schedule& sched,
                double gamma_ip = 0.0, const Tensor* eps_extra = nullptr);

// One reverse transition:
// x_{t-1} = (x_t - (1-a_t)/sqrt(1-abar_t) * eps_hat) / sqrt(a_t) + sigma_t * v
Tensor posterior_step(const Tensor& x_t, const Tensor& eps_hat, int t,
                      const Schedule& sched, const Tensor& v);

using DenoiserFn = std::function<Tensor(const Tensor& x_t, int t)>;

// Variational bound in bits per dimension, Monte Carlo over the supplied rng.
double nll_bpd(const Tensor& x0, const DenoiserFn& eps_hat_fn,
               const Schedule& sched, Rng& rng);

}  // namespace dmz::diffusion
