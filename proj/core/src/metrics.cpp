#include "dmz/metrics.hpp"

#include <cmath>

#include <Eigen/Dense>

#include "dmz/errors.hpp"
#include "dmz/sampler.hpp"

namespace dmz::metrics {

namespace {

Eigen::MatrixXd feature_matrix(const Tensor& samples, const FeatureFn& fn) {
    Tensor feats;
    if (fn) {
        feats = fn(samples);
        if (feats.shape.size() != 2)
            throw ShapeError("frechet_proxy: feature_fn must return (B,D)");
    } else {
        if (samples.shape.empty())
            throw ShapeError("frechet_proxy: empty sample tensor");
        int64_t b = samples.shape[0];
        int64_t d = Tensor::numel(samples.shape) / std::max<int64_t>(b, 1);
        feats = samples;
        feats.shape = {b, d};
    }
    return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                          Eigen::RowMajor>>(
        feats.data.data(), feats.shape[0], feats.shape[1]);
}

// Symmetric PSD square root via eigendecomposition, negative modes clipped.
Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
    if (es.info() != Eigen::Success)
        throw NumericError("frechet_proxy: eigendecomposition failed");
    Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double frechet_proxy(const Tensor& samples_a, const Tensor& samples_b,
                     const FeatureFn& feature_fn) {
    Eigen::MatrixXd fa = feature_matrix(samples_a, feature_fn);
    Eigen::MatrixXd fb = feature_matrix(samples_b, feature_fn);
    if (fa.rows() < 2 || fb.rows() < 2)
        throw DataError("frechet_proxy: need at least 2 samples per side");
    if (fa.cols() != fb.cols())
        throw ShapeError("frechet_proxy: feature dimension mismatch");

    Eigen::VectorXd mu_a = fa.colwise().mean();
    Eigen::VectorXd mu_b = fb.colwise().mean();
    Eigen::MatrixXd ca = fa.rowwise() - mu_a.transpose();
    Eigen::MatrixXd cb = fb.rowwise() - mu_b.transpose();
    double shrink = 1e-6;
    Eigen::MatrixXd sa =
        ca.transpose() * ca / static_cast<double>(fa.rows() - 1) +
        shrink * Eigen::MatrixXd::Identity(fa.cols(), fa.cols());
    Eigen::MatrixXd sb =
        cb.transpose() * cb / static_cast<double>(fb.rows() - 1) +
        shrink * Eigen::MatrixXd::Identity(fb.cols(), fb.cols());

    // tr((S_a S_b)^{1/2}) computed as tr((S_a^{1/2} S_b S_a^{1/2})^{1/2}),
    // which keeps the argument symmetric PSD.
    Eigen::MatrixXd ra = psd_sqrt(sa);
    Eigen::MatrixXd inner = ra * sb * ra;
    inner = 0.5 * (inner + inner.transpose());
    double tr_cross = psd_sqrt(inner).trace();

    double d = (mu_a - mu_b).squaredNorm() + sa.trace() + sb.trace() -
               2.0 * tr_cross;
    if (!std::isfinite(d))
        throw NumericError("frechet_proxy: non-finite distance");
    return std::max(d, 0.0);
}

double reconstruction_mse(train::ModelState& model, const Tensor& dataset,
                          int T_sub, Rng& rng) {
    if (!model.conditional())
        throw ConfigError("reconstruction_mse: model has no encoder");
    if (dataset.shape.size() != 4 || dataset.shape[0] == 0)
        throw ShapeError("reconstruction_mse: dataset must be (B,C,H,W)");
    latent::LatentCode z = model.encoder->encode_hard(dataset);
    Tensor x_hat =
        sampler::sample_batch(model, z.values, dataset.shape[0], T_sub, rng);
    double se = 0.0;
    for (size_t i = 0; i < dataset.data.size(); ++i) {
        double d = dataset.data[i] - x_hat.data[i];
        se += d * d;
    }
    return se / static_cast<double>(dataset.data.size());
}

LatentUsage latent_usage_stats(const Tensor& codes) {
    if (codes.shape.size() != 2 || codes.shape[0] == 0)
        throw ShapeError("latent_usage_stats: codes must be nonempty (B,n)");
    const int64_t b = codes.shape[0];
    const int64_t n = codes.shape[1];
    LatentUsage out;
    out.marginals.resize(static_cast<size_t>(n));
    out.entropies.resize(static_cast<size_t>(n));
    for (int64_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (int64_t i = 0; i < b; ++i)
            s += codes.data[static_cast<size_t>(i * n + j)];
        double p = s / static_cast<double>(b);
        out.marginals[static_cast<size_t>(j)] = p;
        double h = 0.0;
        if (p > 0.0 && p < 1.0)
            h = -(p * std::log2(p) + (1.0 - p) * std::log2(1.0 - p));
        out.entropies[static_cast<size_t>(j)] = h;
    }
    out.correlations = Tensor::zeros({n, n});
    std::vector<double> sd(static_cast<size_t>(n));
    for (int64_t j = 0; j < n; ++j) {
        double p = out.marginals[static_cast<size_t>(j)];
        sd[static_cast<size_t>(j)] = std::sqrt(p * (1.0 - p));
    }
    for (int64_t j = 0; j < n; ++j) {
        for (int64_t k = j; k < n; ++k) {
            double r;
            if (j == k) {
                r = 1.0;
            } else if (sd[static_cast<size_t>(j)] == 0.0 ||
                       sd[static_cast<size_t>(k)] == 0.0) {
                r = 0.0;  // constant column: correlation undefined, report 0
            } else {
                double cov = 0.0;
                for (int64_t i = 0; i < b; ++i)
                    cov += (codes.data[static_cast<size_t>(i * n + j)] -
                            out.marginals[static_cast<size_t>(j)]) *
                           (codes.data[static_cast<size_t>(i * n + k)] -
                            out.marginals[static_cast<size_t>(k)]);
                cov /= static_cast<double>(b);
                r = cov / (sd[static_cast<size_t>(j)] * sd[static_cast<size_t>(k)]);
            }
            out.correlations.data[static_cast<size_t>(j * n + k)] = r;
            out.correlations.data[static_cast<size_t>(k * n + j)] = r;
        }
    }
    return out;
}

}  // namespace dmz::metrics
