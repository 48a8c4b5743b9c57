#pragma once

#include <utility>
#include <vector>

#include "dmz/rng.hpp"
#include "dmz/tensor.hpp"

namespace dmz::tools {

// Multinomial logistic classifier over hard codes.
struct LinearProbe {
    Tensor W;  // (n_bits, k)
    Tensor b;  // (k,)
    int n_classes = 2;

    std::vector<double> logits(const Tensor& z) const;  // z: (n_bits,)
    int predict(const Tensor& z) const;
    // g(z) = (w_1 - w_2)·z + b_1 - b_2; binary probes only.
    double decision_value(const Tensor& z) const;
};

struct ProbeMetrics {
    double accuracy = 0.0;          // test accuracy, mean over splits
    double auroc = 0.0;             // binary only, else NaN
    std::vector<double> split_accuracies;
};

struct ProbeFitOptions {
    int iterations = 500;
    double learning_rate = 0.5;
    double l2 = 1e-4;
    int n_splits = 5;
};

// Gradient-descent fit on the given rows only (no splitting).
LinearProbe fit_probe_gd(const Tensor& codes, const std::vector<int>& labels,
                         int n_classes, const ProbeFitOptions& opt = {});

// Five 8:1:1 splits seeded from split_seed; reports mean test accuracy (and
// AUROC when binary); the returned probe is refit on all rows.
std::pair<LinearProbe, ProbeMetrics> fit_linear_probe(
    const Tensor& codes, const std::vector<int>& labels, uint64_t split_seed,
    const ProbeFitOptions& opt = {});

// Flip the disagreeing bits one at a time in random order; returns the full
// path including both endpoints (length = Hamming distance + 1).
std::vector<Tensor> interpolate_discrete(const Tensor& z_src,
                                         const Tensor& z_tgt, Rng& rng);

// Move z along the normal of a binary probe's decision boundary: one output
// per delta, delta = -1 lands exactly on the boundary. binarize thresholds
// the pre-threshold points at 0.5.
std::vector<Tensor> classifier_translate(const Tensor& z,
                                         const LinearProbe& probe,
                                         const std::vector<double>& deltas,
                                         bool binarize);

// Rank-based AUROC of scores against binary labels.
double auroc(const std::vector<double>& scores, const std::vector<int>& labels);

}  // namespace dmz::tools
