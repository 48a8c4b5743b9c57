#include "dmz/diffusion.hpp"

#include <cmath>

#include "dmz/errors.hpp"

namespace dmz::diffusion {

std::string to_string(ScheduleKind k) {
    return k == ScheduleKind::linear ? "linear" : "cosine";
}

ScheduleKind schedule_kind_from_string(const std::string& s) {
    if (s == "linear") return ScheduleKind::linear;
    if (s == "cosine") return ScheduleKind::cosine;
    throw ConfigError("unknown schedule kind: " + s);
}

void Schedule::check_t(int t) const {
    if (t < 1 || t > T)
        throw IndexError("timestep " + std::to_string(t) + " out of range [1," +
                         std::to_string(T) + "]");
}

Schedule build_schedule(ScheduleKind kind, int T) {
    if (T < 1) throw ConfigError("schedule requires T >= 1");
    Schedule s;
    s.kind = kind;
    s.T = T;
    s.betas.resize(static_cast<size_t>(T));

    if (kind == ScheduleKind::linear) {
        const double b0 = 1e-4, b1 = 0.02;
        if (T == 1) {
            s.betas[0] = b1;
        } else {
            for (int t = 0; t < T; ++t)
                s.betas[static_cast<size_t>(t)] = b0 + (b1 - b0) * t / (T - 1);
        }
    } else {
        const double off = 0.008;
        auto f = [&](double t) {
            double a = (t / T + off) / (1.0 + off) * M_PI / 2.0;
            return std::cos(a) * std::cos(a);
        };
        double f0 = f(0.0);
        double prev = 1.0;
        for (int t = 1; t <= T; ++t) {
            double abar = f(static_cast<double>(t)) / f0;
            double beta = 1.0 - abar / prev;
            s.betas[static_cast<size_t>(t - 1)] = std::min(beta, 0.999);
            prev = abar;
        }
    }

    s.alphas.resize(static_cast<size_t>(T));
    s.alpha_bars.resize(static_cast<size_t>(T));
    s.sigmas.resize(static_cast<size_t>(T));
    double prod = 1.0;
    for (int t = 0; t < T; ++t) {
        s.alphas[static_cast<size_t>(t)] = 1.0 - s.betas[static_cast<size_t>(t)];
        prod *= s.alphas[static_cast<size_t>(t)];
        s.alpha_bars[static_cast<size_t>(t)] = prod;
    }
    s.sigmas[0] = 0.0;  // v is zero at t=1, so this value is never used
    for (int t = 2; t <= T; ++t) {
        double ab_prev = s.alpha_bars[static_cast<size_t>(t - 2)];
        double ab = s.alpha_bars[static_cast<size_t>(t - 1)];
        s.sigmas[static_cast<size_t>(t - 1)] =
            std::sqrt((1.0 - ab_prev) / (1.0 - ab) * s.betas[static_cast<size_t>(t - 1)]);
    }
    return s;
}

Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const Schedule& sched,
                double gamma_ip, const Tensor* eps_extra) {
    sched.check_t(t);
    check_same_shape(x0, eps, "q_sample");
    if (gamma_ip != 0.0) {
        if (!eps_extra) throw ConfigError("q_sample: gamma_ip > 0 needs eps_extra");
        check_same_shape(x0, *eps_extra, "q_sample(eps_extra)");
    }
    double sa = std::sqrt(sched.alpha_bar(t));
    double sn = std::sqrt(1.0 - sched.alpha_bar(t));
    Tensor out(x0.shape);
    for (int64_t i = 0; i < out.size(); ++i) {
        double e = eps[i];
        if (gamma_ip != 0.0) e += gamma_ip * (*eps_extra)[i];
        out[i] = sa * x0[i] + sn * e;
    }
    return out;
}

Tensor posterior_step(const Tensor& x_t, const Tensor& eps_hat, int t,
                      const Schedule& sched, const Tensor& v) {
    sched.check_t(t);
    check_same_shape(x_t, eps_hat, "posterior_step");
    check_same_shape(x_t, v, "posterior_step(v)");
    double a = sched.alpha(t);
    double coef = (1.0 - a) / std::sqrt(1.0 - sched.alpha_bar(t));
    double inv_sqrt_a = 1.0 / std::sqrt(a);
    double sig = sched.sigma(t);
    Tensor out(x_t.shape);
    for (int64_t i = 0; i < out.size(); ++i)
        out[i] = inv_sqrt_a * (x_t[i] - coef * eps_hat[i]) + sig * v[i];
    return out;
}

namespace {

double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Discretized Gaussian log-likelihood over 256 levels on [-1,1].
double discretized_gaussian_logp(double x, double mu, double sigma) {
    const double half_bin = 1.0 / 255.0;
    double hi = x > 0.999 ? 1.0 : norm_cdf((x + half_bin - mu) / sigma);
    double lo = x < -0.999 ? 0.0 : norm_cdf((x - half_bin - mu) / sigma);
    return std::log(std::max(hi - lo, 1e-12));
}

}  // namespace

double nll_bpd(const Tensor& x0, const DenoiserFn& eps_hat_fn,
               const Schedule& sched, Rng& rng) {
    int64_t D = x0.size();
    double nats = 0.0;

    // L_T: KL(q(x_T|x0) || N(0,1)) per dimension
    {
        double ab = sched.alpha_bar(sched.T);
        double var = 1.0 - ab;
        for (int64_t i = 0; i < D; ++i) {
            double mu = std::sqrt(ab) * x0[i];
            nats += 0.5 * (var + mu * mu - 1.0 - std::log(var));
        }
    }

    // Sum of per-step KL terms, single Monte Carlo draw of x_t per t.
    for (int t = sched.T; t >= 2; --t) {
        Tensor eps = rng.normal_tensor(x0.shape);
        Tensor x_t = q_sample(x0, t, eps, sched);
        Tensor eps_hat = eps_hat_fn(x_t, t);
        check_same_shape(x0, eps_hat, "nll_bpd(eps_hat)");

        double ab = sched.alpha_bar(t);
        double ab_prev = sched.alpha_bar(t - 1);
        double beta = sched.beta(t);
        double alpha = sched.alpha(t);
        double sig2 = sched.sigma(t) * sched.sigma(t);
        // q posterior mean coefficients on (x0, x_t)
        double c0 = std::sqrt(ab_prev) * beta / (1.0 - ab);
        double ct = std::sqrt(alpha) * (1.0 - ab_prev) / (1.0 - ab);
        double coef = (1.0 - alpha) / std::sqrt(1.0 - ab);
        double inv_sqrt_a = 1.0 / std::sqrt(alpha);
        double term = 0.0;
        for (int64_t i = 0; i < D; ++i) {
            double mu_q = c0 * x0[i] + ct * x_t[i];
            double mu_p = inv_sqrt_a * (x_t[i] - coef * eps_hat[i]);
            double d = mu_q - mu_p;
            term += d * d / (2.0 * sig2);
        }
        if (!std::isfinite(term))
            throw NumericError("nll_bpd: non-finite KL at timestep " +
                               std::to_string(t));
        nats += term;
    }

    // L_0: discretized decoder from a draw of x_1.
    {
        Tensor eps = rng.normal_tensor(x0.shape);
        Tensor x1 = q_sample(x0, 1, eps, sched);
        Tensor eps_hat = eps_hat_fn(x1, 1);
        double coef = (1.0 - sched.alpha(1)) / std::sqrt(1.0 - sched.alpha_bar(1));
        double inv_sqrt_a = 1.0 / std::sqrt(sched.alpha(1));
        double dec_sigma = std::sqrt(sched.beta(1));
        double term = 0.0;
        for (int64_t i = 0; i < D; ++i) {
            double mu = inv_sqrt_a * (x1[i] - coef * eps_hat[i]);
            term -= discretized_gaussian_logp(x0[i], mu, dec_sigma);
        }
        if (!std::isfinite(term))
            throw NumericError("nll_bpd: non-finite decoder term at timestep 1");
        nats += term;
    }

    double bpd = nats / (static_cast<double>(D) * std::log(2.0));
    if (!std::isfinite(bpd)) throw NumericError("nll_bpd: non-finite total");
    return bpd;
}

}  // namespace dmz::diffusion
