#pragma once

#include <deque>
#include <functional>
#include <vector>

#include "dmz/tensor.hpp"

namespace dmz::nn {

using dmz::Tensor;

// Handle to a node in a Graph. Valid only for the graph that produced it.
struct V {
    int id = -1;
};

// Eager tape: each op computes its value immediately and records a backward
// closure. One Graph per training step; cheap to rebuild.
class Graph {
public:
    // Leaves --------------------------------------------------------------
    V constant(Tensor t);                       // no gradient tracked
    V param(const Tensor& value, Tensor* grad); // gradient accumulated into *grad

    // Elementwise ----------------------------------------------------------
    V add(V a, V b);
    V sub(V a, V b);
    V mul(V a, V b);
    V scale(V a, double s);
    V add_scalar(V a, double s);
    V sigmoid(V a);
    V silu(V a);
    V leaky_relu(V a, double slope);
    V softplus(V a);
    V exp(V a);
    V square(V a);
    V slice_cols(V a, int64_t start, int64_t len);  // a is (N, M)

    // Linear algebra --------------------------------------------------------
    V matmul(V a, V b);               // (M,K) x (K,N)
    V add_rowvec(V x, V b);           // (N,M) + (M,)
    V bmm(V a, V b);                  // (B,M,K) x (B,K,N)
    V transpose12(V a);               // (B,M,N) -> (B,N,M)
    V reshape(V a, std::vector<int64_t> shape);
    V softmax_lastdim(V a);

    // Conv / image ----------------------------------------------------------
    V conv2d(V x, V w, V b, int stride, int pad);  // x (B,C,H,W), w (O,C,k,k)
    V upsample2x(V x);                             // nearest neighbour
    V concat_channels(V a, V b);
    V add_channel_bias(V x, V v);                  // x (B,C,H,W) + v (B,C)
    V group_norm(V x, V gamma, V beta, int groups, double eps = 1e-5);
    // Batch norm over (B,H,W) per channel. In training mode uses batch
    // statistics and updates the running tensors in place.
    V batch_norm2d(V x, V gamma, V beta, Tensor* running_mean, Tensor* running_var,
                   bool training, double momentum = 0.1, double eps = 1e-5);

    // Reductions ------------------------------------------------------------
    V mean_all(V a);
    V mse(V a, V b);

    // Hard threshold with straight-through (identity) backward.
    V binarize_st(V a, double threshold);

    // Execution -------------------------------------------------------------
    void backward(V loss);
    const Tensor& value(V v) const { return nodes_[v.id].value; }
    const Tensor& grad(V v) const { return nodes_[v.id].grad; }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        std::function<void()> back;
        Tensor* external_grad = nullptr;
        bool needs_grad = false;
    };
    // deque keeps node references stable while new ops are recorded
    std::deque<Node> nodes_;

    int push(Tensor value, bool needs_grad);
    Tensor& g(int id);  // grad of node, allocated on first touch
    bool ng(V v) const { return nodes_[v.id].needs_grad; }
    const Tensor& val(int id) const { return nodes_[id].value; }
};

// Central-difference gradient of f at x; for gradient tests.
double finite_diff(const std::function<double(double)>& f, double x0, double h);

}  // namespace dmz::nn
