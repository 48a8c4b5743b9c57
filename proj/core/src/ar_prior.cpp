#include "dmz/ar_prior.hpp"

#include <cmath>

#include "dmz/errors.hpp"

namespace dmz::latent {

namespace {
double sigm(double x) { return 1.0 / (1.0 + std::exp(-x)); }
}  // namespace

double ARPrior::conditional_p1(const double* prefix, int i) const {
    double a = bias[static_cast<size_t>(i)];
    const auto& w = weights[static_cast<size_t>(i)];
    for (int j = 0; j < i; ++j) a += w[static_cast<size_t>(j)] * prefix[j];
    return sigm(a);
}

double ARPrior::log_likelihood(const Tensor& codes) const {
    if (codes.shape.size() != 2 || codes.shape[1] != n_bits)
        throw ShapeError("ar log_likelihood: codes must be (N, n_bits)");
    int64_t N = codes.shape[0];
    double ll = 0.0;
    for (int64_t r = 0; r < N; ++r) {
        const double* z = codes.data.data() + r * n_bits;
        for (int i = 0; i < n_bits; ++i) {
            double p = conditional_p1(z, i);
            ll += z[i] > 0.5 ? std::log(std::max(p, 1e-12))
                             : std::log(std::max(1.0 - p, 1e-12));
        }
    }
    return ll / static_cast<double>(N);
}

ARPrior fit_ar_prior(const Tensor& codes, const ARFitOptions& opts) {
    if (codes.shape.size() != 2 || codes.shape[0] < 1)
        throw DataError("fit_ar_prior: need a nonempty (N,n) code matrix");
    int64_t N = codes.shape[0];
    int n = static_cast<int>(codes.shape[1]);
    for (double v : codes.data)
        if (v != 0.0 && v != 1.0)
            throw DataError("fit_ar_prior: codes must contain only 0/1 entries");

    ARPrior prior;
    prior.n_bits = n;
    prior.bias.assign(static_cast<size_t>(n), 0.0);
    prior.weights.resize(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i)
        prior.weights[static_cast<size_t>(i)].assign(static_cast<size_t>(i), 0.0);

    // Full-batch logistic regression per bit on its prefix.
    std::vector<double> gw;
    for (int i = 0; i < n; ++i) {
        auto& w = prior.weights[static_cast<size_t>(i)];
        double& b = prior.bias[static_cast<size_t>(i)];
        gw.assign(static_cast<size_t>(i), 0.0);
        for (int it = 0; it < opts.iterations; ++it) {
            std::fill(gw.begin(), gw.end(), 0.0);
            double gb = 0.0;
            for (int64_t r = 0; r < N; ++r) {
                const double* z = codes.data.data() + r * n;
                double err = sigm([&] {
                                 double a = b;
                                 for (int j = 0; j < i; ++j)
                                     a += w[static_cast<size_t>(j)] * z[j];
                                 return a;
                             }()) -
                             z[i];
                gb += err;
                for (int j = 0; j < i; ++j) gw[static_cast<size_t>(j)] += err * z[j];
            }
            double inv_n = 1.0 / static_cast<double>(N);
            b -= opts.lr * gb * inv_n;
            for (int j = 0; j < i; ++j)
                w[static_cast<size_t>(j)] -=
                    opts.lr * (gw[static_cast<size_t>(j)] * inv_n +
                               opts.l2 * w[static_cast<size_t>(j)]);
        }
    }
    return prior;
}

LatentCode sample_ar_prior(const ARPrior& prior, Rng& rng) {
    Tensor z({static_cast<int64_t>(prior.n_bits)});
    for (int i = 0; i < prior.n_bits; ++i) {
        double p = prior.conditional_p1(z.data.data(), i);
        z[i] = rng.uniform_open() < p ? 1.0 : 0.0;
    }
    return {std::move(z), LatentMode::hard};
}

Tensor sample_ar_prior_batch(const ARPrior& prior, int64_t batch, Rng& rng) {
    Tensor out({batch, static_cast<int64_t>(prior.n_bits)});
    for (int64_t b = 0; b < batch; ++b) {
        double* z = out.data.data() + b * prior.n_bits;
        for (int i = 0; i < prior.n_bits; ++i) {
            double p = prior.conditional_p1(z, i);
            z[i] = rng.uniform_open() < p ? 1.0 : 0.0;
        }
    }
    return out;
}

}  // namespace dmz::latent
