#include "dmz/latent_tools.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <Eigen/Dense>

#include "dmz/errors.hpp"

namespace dmz::tools {

namespace {

void check_code(const Tensor& z, const char* where) {
    if (z.shape.size() != 1)
        throw ShapeError(std::string(where) + ": code must be 1-D, got " +
                         z.shape_str());
}

void check_binary(const Tensor& z, const char* where) {
    for (double v : z.data)
        if (v != 0.0 && v != 1.0)
            throw DataError(std::string(where) + ": code entries must be 0/1");
}

Eigen::MatrixXd as_matrix(const Tensor& codes) {
    if (codes.shape.size() != 2)
        throw ShapeError("probe: codes must be (count, n_bits), got " +
                         codes.shape_str());
    return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                          Eigen::RowMajor>>(
        codes.data.data(), codes.shape[0], codes.shape[1]);
}

double fit_gd(const Eigen::MatrixXd& X, const std::vector<int>& y, int k,
              const ProbeFitOptions& opt, Eigen::MatrixXd& W,
              Eigen::VectorXd& b) {
    const auto n = X.rows();
    const auto d = X.cols();
    W = Eigen::MatrixXd::Zero(d, k);
    b = Eigen::VectorXd::Zero(k);
    Eigen::MatrixXd Y = Eigen::MatrixXd::Zero(n, k);
    for (Eigen::Index i = 0; i < n; ++i) Y(i, y[static_cast<size_t>(i)]) = 1.0;
    double loss = 0.0;
    for (int it = 0; it < opt.iterations; ++it) {
        Eigen::MatrixXd logits = (X * W).rowwise() + b.transpose();
        Eigen::VectorXd rowmax = logits.rowwise().maxCoeff();
        Eigen::MatrixXd p = (logits.colwise() - rowmax).array().exp();
        Eigen::VectorXd rowsum = p.rowwise().sum();
        p.array().colwise() /= rowsum.array();
        loss = -((p.array() * Y.array()).rowwise().sum().max(1e-300)).log().mean();
        Eigen::MatrixXd diff = (p - Y) / static_cast<double>(n);
        W -= opt.learning_rate * (X.transpose() * diff + opt.l2 * W);
        b -= opt.learning_rate * diff.colwise().sum().transpose();
    }
    return loss;
}

int argmax_row(const Eigen::MatrixXd& logits, Eigen::Index i) {
    Eigen::Index j;
    logits.row(i).maxCoeff(&j);
    return static_cast<int>(j);
}

}  // namespace

std::vector<double> LinearProbe::logits(const Tensor& z) const {
    check_code(z, "probe");
    if (z.shape[0] != W.shape[0])
        throw ShapeError("probe: code length " + std::to_string(z.shape[0]) +
                         " != probe input " + std::to_string(W.shape[0]));
    std::vector<double> out(static_cast<size_t>(n_classes));
    for (int c = 0; c < n_classes; ++c) {
        double s = b.data[static_cast<size_t>(c)];
        for (int64_t i = 0; i < z.shape[0]; ++i)
            s += z.data[static_cast<size_t>(i)] *
                 W.data[static_cast<size_t>(i * n_classes + c)];
        out[static_cast<size_t>(c)] = s;
    }
    return out;
}

int LinearProbe::predict(const Tensor& z) const {
    auto l = logits(z);
    return static_cast<int>(std::max_element(l.begin(), l.end()) - l.begin());
}

double LinearProbe::decision_value(const Tensor& z) const {
    if (n_classes != 2)
        throw ConfigError("decision_value: binary probe required");
    auto l = logits(z);
    return l[0] - l[1];
}

LinearProbe fit_probe_gd(const Tensor& codes, const std::vector<int>& labels,
                         int n_classes, const ProbeFitOptions& opt) {
    Eigen::MatrixXd X = as_matrix(codes);
    if (static_cast<Eigen::Index>(labels.size()) != X.rows())
        throw ShapeError("probe: label count != code count");
    if (n_classes < 2) throw ConfigError("probe: need k >= 2 classes");
    for (int y : labels)
        if (y < 0 || y >= n_classes) throw DataError("probe: label out of range");
    Eigen::MatrixXd W;
    Eigen::VectorXd b;
    fit_gd(X, labels, n_classes, opt, W, b);
    LinearProbe probe;
    probe.n_classes = n_classes;
    probe.W = Tensor::zeros({X.cols(), n_classes});
    probe.b = Tensor::zeros({n_classes});
    for (Eigen::Index i = 0; i < X.cols(); ++i)
        for (int c = 0; c < n_classes; ++c)
            probe.W.data[static_cast<size_t>(i * n_classes + c)] = W(i, c);
    for (int c = 0; c < n_classes; ++c) probe.b.data[static_cast<size_t>(c)] = b(c);
    return probe;
}

double auroc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size())
        throw ShapeError("auroc: score/label length mismatch");
    std::vector<size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(),
              [&](size_t a, size_t b) { return scores[a] < scores[b]; });
    // Midranks for ties.
    std::vector<double> rank(scores.size());
    size_t i = 0;
    while (i < idx.size()) {
        size_t j = i;
        while (j + 1 < idx.size() && scores[idx[j + 1]] == scores[idx[i]]) ++j;
        double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (size_t k = i; k <= j; ++k) rank[idx[k]] = r;
        i = j + 1;
    }
    double rank_sum_pos = 0.0;
    int64_t n_pos = 0, n_neg = 0;
    for (size_t s = 0; s < labels.size(); ++s) {
        if (labels[s] == 1) {
            rank_sum_pos += rank[s];
            ++n_pos;
        } else {
            ++n_neg;
        }
    }
    if (n_pos == 0 || n_neg == 0)
        throw DataError("auroc: need both classes present");
    double u = rank_sum_pos - 0.5 * static_cast<double>(n_pos) *
                                  static_cast<double>(n_pos + 1);
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

std::pair<LinearProbe, ProbeMetrics> fit_linear_probe(
    const Tensor& codes, const std::vector<int>& labels, uint64_t split_seed,
    const ProbeFitOptions& opt) {
    Eigen::MatrixXd X = as_matrix(codes);
    if (static_cast<Eigen::Index>(labels.size()) != X.rows())
        throw ShapeError("probe: label count != code count");
    int k = 0;
    for (int y : labels) k = std::max(k, y + 1);
    if (k < 2) throw DataError("probe: labels contain a single class");
    const auto n = X.rows();
    if (n < 10) throw DataError("probe: need at least 10 rows to split 8:1:1");

    ProbeMetrics metrics;
    std::vector<double> aurocs;
    for (int s = 0; s < opt.n_splits; ++s) {
        Rng rng(split_seed + static_cast<uint64_t>(s));
        std::vector<Eigen::Index> perm(static_cast<size_t>(n));
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), rng.engine());
        Eigen::Index n_train = n * 8 / 10;
        Eigen::Index n_val = n / 10;
        Eigen::Index n_test = n - n_train - n_val;

        Eigen::MatrixXd Xtr(n_train, X.cols());
        std::vector<int> ytr(static_cast<size_t>(n_train));
        for (Eigen::Index r = 0; r < n_train; ++r) {
            Xtr.row(r) = X.row(perm[static_cast<size_t>(r)]);
            ytr[static_cast<size_t>(r)] =
                labels[static_cast<size_t>(perm[static_cast<size_t>(r)])];
        }
        bool multi_class = false;
        for (int y : ytr)
            if (y != ytr[0]) multi_class = true;
        if (!multi_class)
            throw DataError("probe: split train fold has a single class");

        Eigen::MatrixXd W;
        Eigen::VectorXd b;
        fit_gd(Xtr, ytr, k, opt, W, b);

        Eigen::Index correct = 0;
        std::vector<double> scores;
        std::vector<int> score_labels;
        Eigen::MatrixXd logits = (X * W).rowwise() + b.transpose();
        for (Eigen::Index r = n_train + n_val; r < n; ++r) {
            Eigen::Index row = perm[static_cast<size_t>(r)];
            int y = labels[static_cast<size_t>(row)];
            if (argmax_row(logits, row) == y) ++correct;
            if (k == 2) {
                scores.push_back(logits(row, 1) - logits(row, 0));
                score_labels.push_back(y);
            }
        }
        metrics.split_accuracies.push_back(static_cast<double>(correct) /
                                           static_cast<double>(n_test));
        if (k == 2) {
            bool both = false;
            for (int y : score_labels)
                if (y != score_labels[0]) both = true;
            if (both) aurocs.push_back(auroc(scores, score_labels));
        }
    }
    metrics.accuracy =
        std::accumulate(metrics.split_accuracies.begin(),
                        metrics.split_accuracies.end(), 0.0) /
        static_cast<double>(metrics.split_accuracies.size());
    metrics.auroc = aurocs.empty()
                        ? std::numeric_limits<double>::quiet_NaN()
                        : std::accumulate(aurocs.begin(), aurocs.end(), 0.0) /
                              static_cast<double>(aurocs.size());
    return {fit_probe_gd(codes, labels, k, opt), metrics};
}

std::vector<Tensor> interpolate_discrete(const Tensor& z_src,
                                         const Tensor& z_tgt, Rng& rng) {
    check_code(z_src, "interpolate");
    check_code(z_tgt, "interpolate");
    check_binary(z_src, "interpolate");
    check_binary(z_tgt, "interpolate");
    check_same_shape(z_src, z_tgt, "interpolate");
    std::vector<int64_t> disagree;
    for (int64_t i = 0; i < z_src.shape[0]; ++i)
        if (z_src.data[static_cast<size_t>(i)] !=
            z_tgt.data[static_cast<size_t>(i)])
            disagree.push_back(i);
    std::shuffle(disagree.begin(), disagree.end(), rng.engine());
    std::vector<Tensor> path;
    path.push_back(z_src);
    Tensor cur = z_src;
    for (int64_t i : disagree) {
        cur.data[static_cast<size_t>(i)] = z_tgt.data[static_cast<size_t>(i)];
        path.push_back(cur);
    }
    return path;
}

std::vector<Tensor> classifier_translate(const Tensor& z,
                                         const LinearProbe& probe,
                                         const std::vector<double>& deltas,
                                         bool binarize) {
    check_code(z, "translate");
    if (probe.n_classes != 2)
        throw ConfigError("classifier_translate: binary probe required");
    if (z.shape[0] != probe.W.shape[0])
        throw ShapeError("classifier_translate: code/probe size mismatch");
    const int64_t n = z.shape[0];
    std::vector<double> normal(static_cast<size_t>(n));
    double norm_sq = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        double d = probe.W.data[static_cast<size_t>(2 * i)] -
                   probe.W.data[static_cast<size_t>(2 * i + 1)];
        normal[static_cast<size_t>(i)] = d;
        norm_sq += d * d;
    }
    if (norm_sq == 0.0)
        throw NumericError("classifier_translate: degenerate classifier "
                           "(zero normal vector)");
    double g = probe.decision_value(z);
    double scale = g / norm_sq;
    std::vector<Tensor> out;
    out.reserve(deltas.size());
    for (double delta : deltas) {
        Tensor p = z;
        for (int64_t i = 0; i < n; ++i)
            p.data[static_cast<size_t>(i)] +=
                delta * scale * normal[static_cast<size_t>(i)];
        if (binarize)
            for (auto& v : p.data) v = v > 0.5 ? 1.0 : 0.0;
        out.push_back(std::move(p));
    }
    return out;
}

}  // namespace dmz::tools
