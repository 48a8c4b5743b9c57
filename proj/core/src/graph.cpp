#include "dmz/graph.hpp"

#include <Eigen/Dense>

#include <cmath>

namespace dmz::nn {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<EMat>;
using MapC = Eigen::Map<const EMat>;

int Graph::push(Tensor value, bool needs_grad) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

Tensor& Graph::g(int id) {
    Node& n = nodes_[id];
    if (n.grad.shape.empty()) n.grad = Tensor::zeros(n.value.shape);
    return n.grad;
}

V Graph::constant(Tensor t) { return {push(std::move(t), false)}; }

V Graph::param(const Tensor& value, Tensor* grad) {
    int id = push(value, grad != nullptr);
    nodes_[id].external_grad = grad;
    return {id};
}

// ---------------------------------------------------------------- elementwise

V Graph::add(V a, V b) {
    check_same_shape(val(a.id), val(b.id), "add");
    Tensor out = val(a.id);
    for (int64_t i = 0; i < out.size(); ++i) out[i] += val(b.id)[i];
    bool needs = ng(a) || ng(b);
    int id = push(std::move(out), needs);
    if (needs)
        nodes_[id].back = [this, a, b, id] {
            const Tensor& go = nodes_[id].grad;
            if (ng(a)) {
                Tensor& ga = g(a.id);
                for (int64_t i = 0; i < go.size(); ++i) ga[i] += go[i];
            }
            if (ng(b)) {
                Tensor& gb = g(b.id);
                for (int64_t i = 0; i < go.size(); ++i) gb[i] += go[i];
            }
        };
    return {id};
}

V Graph::sub(V a, V b) { return add(a, scale(b, -1.0)); }

V Graph::mul(V a, V b) {
    check_same_shape(val(a.id), val(b.id), "mul");
    Tensor out = val(a.id);
    for (int64_t i = 0; i < out.size(); ++i) out[i] *= val(b.id)[i];
    bool needs = ng(a) || ng(b);
    int id = push(std::move(out), needs);
    if (needs)
        nodes_[id].back = [this, a, b, id] {
            const Tensor& go = nodes_[id].grad;
            if (ng(a)) {
                Tensor& ga = g(a.id);
                const Tensor& bv = val(b.id);
                for (int64_t i = 0; i < go.size(); ++i) ga[i] += go[i] * bv[i];
            }
            if (ng(b)) {
                Tensor& gb = g(b.id);
                const Tensor& av = val(a.id);
                for (int64_t i = 0; i < go.size(); ++i) gb[i] += go[i] * av[i];
            }
        };
    return {id};
}

V Graph::scale(V a, double s) {
    Tensor out = val(a.id);
    for (auto& v : out.data) v *= s;
    bool needs = ng(a);
    int id = push(std::move(out), needs);
    if (needs)
        nodes_[id].back = [this, a, s, id] {
            const Tensor& go = nodes_[id].grad;
            Tensor& ga = g(a.id);
            for (int64_t i = 0; i < go.size(); ++i) ga[i] += s * go[i];
        };
    return {id};
}

V Graph::add_scalar(V a, double s) {
    Tensor out = val(a.id);
    for (auto& v : out.data) v += s;
    bool needs = ng(a);
    int id = push(std::move(out), needs);
    if (needs)
        nodes_[id].back = [this, a, id] {
            const Tensor& go = nodes_[id].grad;
            Tensor& ga = g(a.id);
            for (int64_t i = 0; i < go.size(); ++i) ga[i] += go[i];
        };
    return {id};
}

V Graph::sigmoid(V a) {
    Tensor out = val(a.id);
    for (auto& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
    bool needs = ng(a);
    int id = push(std::move(out), needs);
    if (needs)
        nodes_[id].back = [this, a, id] {
            const Tensor& go = nodes_[id].grad;
            const Tensor& y = nodes_[id].value;
            Tensor& ga = g(a.id);
            for (int64_t i = 0; i < go.size(); ++i)
                ga[i] += go[i] * y[i] * (1.0 - y[i]);
        };
    return {id};
}

V Graph::silu(V a) {
    Tensor out = val(a.id);
    for (auto& v : out.data) v = v / (1.0 + std::exp(-v));
    bool needs = ng(a);
    int id = push(std::move(out), needs);
    if (needs)
        nodes_[id].back = [this, a, id] {
            const Tensor& go = nodes_[id].grad;
            const Tensor& x = val(a.id);
            Tensor& ga = g(a.id);
            for (int64_t i = 0; i < go.size(); ++i) {
                double s = 1.0 / (1.0 + std::exp(-x[i]));
                ga[i] += go[i] * s * (1.0 + x[i] * (1.0 - s));
            }
        };
    return {id};
}

V Graph::leaky_relu(V a, double slope) {
    Tensor out = val(a.id);
    for (auto& v : out.data) v = v > 0.0 ? v : slope * v;
    bool needs = ng(a);
    int id = push(std::move(out), needs);
    if (needs)
        nodes_[id].back = [this, a, slope, id] {
            const Tensor& go = nodes_[id].grad;
            const Tensor& x = val(a.id);
            Tensor& ga = g(a.id);
            for (int64_t i = 0; i < go.size(); ++i)
                ga[i] += go[i] * (x[i] > 0.0 ? 1.0 : slope);
        };
    return {id};
}

V Graph::softplus(V a) {
    Tensor out = val(a.id);
    for (auto& v : out.data)
        v = v > 30.0 ? v : std::log1p(std::exp(v));
    bool needs = ng(a);
    int id = push(std::move(out), needs);
    if (needs)
        nodes_[id].back = [this, a, id] {
            const Tensor& go = nodes_[id].grad;
            const Tensor& x = val(a.id);
            Tensor& ga = g(a.id);
            for (int64_t i = 0; i < go.size(); ++i)
                ga[i] += go[i] / (1.0 + std::exp(-x[i]));
        };
    return {id};
}

V Graph::exp(V a) {
    Tensor out = val(a.id);
    for (auto& v : out.data) v = std::exp(v);
    bool needs = ng(a);
    int id = push(std::move(out), needs);
    if (needs)
        nodes_[id].back = [this, a, id] {
            const Tensor& go = nodes_[id].grad;
            const Tensor& y = nodes_[id].value;
            Tensor& ga = g(a.id);
            for (int64_t i = 0; i < go.size(); ++i) ga[i] += go[i] * y[i];
        };
    return {id};
}

V Graph::square(V a) { return mul(a, a); }

V Graph::slice_cols(V a, int64_t start, int64_t len) {
    const Tensor& A = val(a.id);
    if (A.shape.size() != 2 || start < 0 || start + len > A.shape[1])
        throw ShapeError("slice_cols: bad range for " + A.shape_str());
    int64_t N = A.shape[0], M = A.shape[1];
    Tensor out({N, len});
    for (int64_t i = 0; i < N; ++i)
        std::copy_n(A.data.data() + i * M + start, len, out.data.data() + i * len);
    bool needs = ng(a);
    int id = push(std::move(out), needs);
    if (needs)
        nodes_[id].back = [this, a, id, N, M, start, len] {
            const Tensor& go = nodes_[id].grad;
            Tensor& ga = g(a.id);
            for (int64_t i = 0; i < N; ++i)
                for (int64_t j = 0; j < len; ++j)
                    ga[i * M + start + j] += go[i * len + j];
        };
    return {id};
}

// ------------------------------------------------------------- linear algebra

V Graph::matmul(V a, V b) {
    const Tensor& A = val(a.id);
    const Tensor& B = val(b.id);
    if (A.shape.size() != 2 || B.shape.size() != 2 || A.shape[1] != B.shape[0])
        throw ShapeError("matmul: incompatible shapes " + A.shape_str() + " x " +
                         B.shape_str());
    int64_t M = A.shape[0], K = A.shape[1], N = B.shape[1];
    Tensor out({M, N});
    MapM(out.data.data(), M, N).noalias() =
        MapC(A.data.data(), M, K) * MapC(B.data.data(), K, N);
    bool needs = ng(a) || ng(b);
    int id = push(std::move(out), needs);
    if (needs)
        nodes_[id].back = [this, a, b, id, M, K, N] {
            MapC go(nodes_[id].grad.data.data(), M, N);
            if (ng(a)) {
                MapM ga(g(a.id).data.data(), M, K);
                ga.noalias() += go * MapC(val(b.id).data.data(), K, N).transpose();
            }
            if (ng(b)) {
                MapM gb(g(b.id).data.data(), K, N);
                gb.noalias() += MapC(val(a.id).data.data(), M, K).transpose() * go;
            }
        };
    return {id};
}

V Graph::add_rowvec(V x, V b) {
    const Tensor& X = val(x.id);
    const Tensor& B = val(b.id);
    if (X.shape.size() != 2 || B.size() != X.shape[1])
        throw ShapeError("add_rowvec: " + X.shape_str() + " + " + B.shape_str());
    int64_t N = X.shape[0], M = X.shape[1];
    Tensor out = X;
    for (int64_t i = 0; i < N; ++i)
        for (int64_t j = 0; j < M; ++j) out[i * M + j] += B[j];
    bool needs = ng(x) || ng(b);
    int id = push(std::move(out), needs);
    if (needs)
        nodes_[id].back = [this, x, b, id, N, M] {
            const Tensor& go = nodes_[id].grad;
            if (ng(x)) {
                Tensor& gx = g(x.id);
                for (int64_t i = 0; i < go.size(); ++i) gx[i] += go[i];
            }
            if (ng(b)) {
                Tensor& gb = g(b.id);
                for (int64_t i = 0; i < N; ++i)
                    for (int64_t j = 0; j < M; ++j) gb[j] += go[i * M + j];
            }
        };
    return {id};
}

V Graph::bmm(V a, V b) {
    const Tensor& A = val(a.id);
    const Tensor& B = val(b.id);
    if (A.shape.size() != 3 || B.shape.size() != 3 || A.shape[0] != B.shape[0] ||
        A.shape[2] != B.shape[1])
        throw ShapeError("bmm: incompatible shapes " + A.shape_str() + " x " +
                         B.shape_str());
    int64_t Bt = A.shape[0], M = A.shape[1], K = A.shape[2], N = B.shape[2];
    Tensor out({Bt, M, N});
    for (int64_t i = 0; i < Bt; ++i)
        MapM(out.data.data() + i * M * N, M, N).noalias() =
            MapC(A.data.data() + i * M * K, M, K) *
            MapC(B.data.data() + i * K * N, K, N);
    bool needs = ng(a) || ng(b);
    int id = push(std::move(out), needs);
    if (needs)
        nodes_[id].back = [this, a, b, id, Bt, M, K, N] {
            const Tensor& GO = nodes_[id].grad;
            for (int64_t i = 0; i < Bt; ++i) {
                MapC go(GO.data.data() + i * M * N, M, N);
                if (ng(a)) {
                    MapM ga(g(a.id).data.data() + i * M * K, M, K);
                    ga.noalias() +=
                        go * MapC(val(b.id).data.data() + i * K * N, K, N).transpose();
                }
                if (ng(b)) {
                    MapM gb(g(b.id).data.data() + i * K * N, K, N);
                    gb.noalias() +=
                        MapC(val(a.id).data.data() + i * M * K, M, K).transpose() * go;
                }
            }
        };
    return {id};
}

V Graph::transpose12(V a) {
    const Tensor& A = val(a.id);
    if (A.shape.size() != 3) throw ShapeError("transpose12: need rank-3 tensor");
    int64_t B = A.shape[0], M = A.shape[1], N = A.shape[2];
    Tensor out({B, N, M});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t i = 0; i < M; ++i)
            for (int64_t j = 0; j < N; ++j)
                out[b * N * M + j * M + i] = A[b * M * N + i * N + j];
    bool needs = ng(a);
    int id = push(std::move(out), needs);
    if (needs)
        nodes_[id].back = [this, a, id, B, M, N] {
            const Tensor& go = nodes_[id].grad;
            Tensor& ga = g(a.id);
            for (int64_t b = 0; b < B; ++b)
                for (int64_t i = 0; i < M; ++i)
                    for (int64_t j = 0; j < N; ++j)
                        ga[b * M * N + i * N + j] += go[b * N * M + j * M + i];
        };
    return {id};
}

V Graph::reshape(V a, std::vector<int64_t> shape) {
    const Tensor& A = val(a.id);
    if (Tensor::numel(shape) != A.size())
        throw ShapeError("reshape: element count mismatch");
    Tensor out(std::move(shape), A.data);
    bool needs = ng(a);
    int id = push(std::move(out), needs);
    if (needs)
        nodes_[id].back = [this, a, id] {
            const Tensor& go = nodes_[id].grad;
            Tensor& ga = g(a.id);
            for (int64_t i = 0; i < go.size(); ++i) ga[i] += go[i];
        };
    return {id};
}

V Graph::softmax_lastdim(V a) {
    const Tensor& A = val(a.id);
    int64_t N = A.shape.back();
    int64_t rows = A.size() / N;
    Tensor out = A;
    for (int64_t r = 0; r < rows; ++r) {
        double* p = out.data.data() + r * N;
        double mx = *std::max_element(p, p + N);
        double sum = 0.0;
        for (int64_t j = 0; j < N; ++j) {
            p[j] = std::exp(p[j] - mx);
            sum += p[j];
        }
        for (int64_t j = 0; j < N; ++j) p[j] /= sum;
    }
    bool needs = ng(a);
    int id = push(std::move(out), needs);
    if (needs)
        nodes_[id].back = [this, a, id, rows, N] {
            const Tensor& go = nodes_[id].grad;
            const Tensor& y = nodes_[id].value;
            Tensor& ga = g(a.id);
            for (int64_t r = 0; r < rows; ++r) {
                double dot = 0.0;
                for (int64_t j = 0; j < N; ++j)
                    dot += go[r * N + j] * y[r * N + j];
                for (int64_t j = 0; j < N; ++j)
                    ga[r * N + j] += y[r * N + j] * (go[r * N + j] - dot);
            }
        };
    return {id};
}

// -------------------------------------------------------------- conv / image

namespace {

void im2col(const double* x, int64_t C, int64_t H, int64_t W, int k, int stride,
            int pad, int64_t Ho, int64_t Wo, double* col) {
    // col is (C*k*k) x (Ho*Wo)
    for (int64_t c = 0; c < C; ++c)
        for (int ki = 0; ki < k; ++ki)
            for (int kj = 0; kj < k; ++kj) {
                double* row = col + ((c * k + ki) * k + kj) * Ho * Wo;
                for (int64_t i = 0; i < Ho; ++i) {
                    int64_t src_i = i * stride + ki - pad;
                    for (int64_t j = 0; j < Wo; ++j) {
                        int64_t src_j = j * stride + kj - pad;
                        row[i * Wo + j] =
                            (src_i >= 0 && src_i < H && src_j >= 0 && src_j < W)
                                ? x[(c * H + src_i) * W + src_j]
                                : 0.0;
                    }
                }
            }
}

void col2im_add(const double* col, int64_t C, int64_t H, int64_t W, int k,
                int stride, int pad, int64_t Ho, int64_t Wo, double* x) {
    for (int64_t c = 0; c < C; ++c)
        for (int ki = 0; ki < k; ++ki)
            for (int kj = 0; kj < k; ++kj) {
                const double* row = col + ((c * k + ki) * k + kj) * Ho * Wo;
                for (int64_t i = 0; i < Ho; ++i) {
                    int64_t src_i = i * stride + ki - pad;
                    if (src_i < 0 || src_i >= H) continue;
                    for (int64_t j = 0; j < Wo; ++j) {
                        int64_t src_j = j * stride + kj - pad;
                        if (src_j < 0 || src_j >= W) continue;
                        x[(c * H + src_i) * W + src_j] += row[i * Wo + j];
                    }
                }
            }
}

}  // namespace

V Graph::conv2d(V x, V w, V b, int stride, int pad) {
    const Tensor& X = val(x.id);
    const Tensor& Wt = val(w.id);
    const Tensor& Bt = val(b.id);
    if (X.shape.size() != 4 || Wt.shape.size() != 4)
        throw ShapeError("conv2d: x must be BCHW and w OCkk");
    int64_t Bn = X.shape[0], C = X.shape[1], H = X.shape[2], W = X.shape[3];
    int64_t O = Wt.shape[0];
    int k = static_cast<int>(Wt.shape[2]);
    if (Wt.shape[1] != C || Wt.shape[3] != k || Bt.size() != O)
        throw ShapeError("conv2d: weight/bias shapes inconsistent with input");
    int64_t Ho = (H + 2 * pad - k) / stride + 1;
    int64_t Wo = (W + 2 * pad - k) / stride + 1;
    int64_t ckk = C * k * k, hw = Ho * Wo;

    Tensor out({Bn, O, Ho, Wo});
    std::vector<double> col(static_cast<size_t>(ckk * hw));
    MapC wm(Wt.data.data(), O, ckk);
    for (int64_t n = 0; n < Bn; ++n) {
        im2col(X.data.data() + n * C * H * W, C, H, W, k, stride, pad, Ho, Wo,
               col.data());
        MapM om(out.data.data() + n * O * hw, O, hw);
        om.noalias() = wm * MapC(col.data(), ckk, hw);
        for (int64_t o = 0; o < O; ++o) om.row(o).array() += Bt[o];
    }
    bool needs = ng(x) || ng(w) || ng(b);
    int id = push(std::move(out), needs);
    if (needs)
        nodes_[id].back = [this, x, w, b, id, Bn, C, H, W, O, k, stride, pad, Ho,
                           Wo, ckk, hw] {
            const Tensor& GO = nodes_[id].grad;
            const Tensor& Wt = val(w.id);
            const Tensor& X = val(x.id);
            std::vector<double> col(static_cast<size_t>(ckk * hw));
            std::vector<double> dcol(static_cast<size_t>(ckk * hw));
            for (int64_t n = 0; n < Bn; ++n) {
                MapC go(GO.data.data() + n * O * hw, O, hw);
                if (ng(w) || ng(x))
                    im2col(X.data.data() + n * C * H * W, C, H, W, k, stride, pad,
                           Ho, Wo, col.data());
                if (ng(w)) {
                    MapM gw(g(w.id).data.data(), O, ckk);
                    gw.noalias() += go * MapC(col.data(), ckk, hw).transpose();
                }
                if (ng(b)) {
                    Tensor& gb = g(b.id);
                    for (int64_t o = 0; o < O; ++o) gb[o] += go.row(o).sum();
                }
                if (ng(x)) {
                    MapM dc(dcol.data(), ckk, hw);
                    dc.noalias() = MapC(Wt.data.data(), O, ckk).transpose() * go;
                    col2im_add(dcol.data(), C, H, W, k, stride, pad, Ho, Wo,
                               g(x.id).data.data() + n * C * H * W);
                }
            }
        };
    return {id};
}

V Graph::upsample2x(V x) {
    const Tensor& X = val(x.id);
    if (X.shape.size() != 4) throw ShapeError("upsample2x: need BCHW");
    int64_t B = X.shape[0], C = X.shape[1], H = X.shape[2], W = X.shape[3];
    Tensor out({B, C, H * 2, W * 2});
    for (int64_t bc = 0; bc < B * C; ++bc)
        for (int64_t i = 0; i < H; ++i)
            for (int64_t j = 0; j < W; ++j) {
                double v = X[bc * H * W + i * W + j];
                int64_t base = bc * 4 * H * W;
                out[base + (2 * i) * 2 * W + 2 * j] = v;
                out[base + (2 * i) * 2 * W + 2 * j + 1] = v;
                out[base + (2 * i + 1) * 2 * W + 2 * j] = v;
                out[base + (2 * i + 1) * 2 * W + 2 * j + 1] = v;
            }
    bool needs = ng(x);
    int id = push(std::move(out), needs);
    if (needs)
        nodes_[id].back = [this, x, id, B, C, H, W] {
            const Tensor& go = nodes_[id].grad;
            Tensor& gx = g(x.id);
            for (int64_t bc = 0; bc < B * C; ++bc)
                for (int64_t i = 0; i < H; ++i)
                    for (int64_t j = 0; j < W; ++j) {
                        int64_t base = bc * 4 * H * W;
                        gx[bc * H * W + i * W + j] +=
                            go[base + (2 * i) * 2 * W + 2 * j] +
                            go[base + (2 * i) * 2 * W + 2 * j + 1] +
                            go[base + (2 * i + 1) * 2 * W + 2 * j] +
                            go[base + (2 * i + 1) * 2 * W + 2 * j + 1];
                    }
        };
    return {id};
}

V Graph::concat_channels(V a, V b) {
    const Tensor& A = val(a.id);
    const Tensor& B = val(b.id);
    if (A.shape.size() != 4 || B.shape.size() != 4 || A.shape[0] != B.shape[0] ||
        A.shape[2] != B.shape[2] || A.shape[3] != B.shape[3])
        throw ShapeError("concat_channels: " + A.shape_str() + " vs " +
                         B.shape_str());
    int64_t Bn = A.shape[0], Ca = A.shape[1], Cb = B.shape[1], hw = A.shape[2] * A.shape[3];
    Tensor out({Bn, Ca + Cb, A.shape[2], A.shape[3]});
    for (int64_t n = 0; n < Bn; ++n) {
        std::copy_n(A.data.data() + n * Ca * hw, Ca * hw,
                    out.data.data() + n * (Ca + Cb) * hw);
        std::copy_n(B.data.data() + n * Cb * hw, Cb * hw,
                    out.data.data() + n * (Ca + Cb) * hw + Ca * hw);
    }
    bool needs = ng(a) || ng(b);
    int id = push(std::move(out), needs);
    if (needs)
        nodes_[id].back = [this, a, b, id, Bn, Ca, Cb, hw] {
            const Tensor& go = nodes_[id].grad;
            for (int64_t n = 0; n < Bn; ++n) {
                if (ng(a)) {
                    Tensor& ga = g(a.id);
                    for (int64_t i = 0; i < Ca * hw; ++i)
                        ga[n * Ca * hw + i] += go[n * (Ca + Cb) * hw + i];
                }
                if (ng(b)) {
                    Tensor& gb = g(b.id);
                    for (int64_t i = 0; i < Cb * hw; ++i)
                        gb[n * Cb * hw + i] += go[n * (Ca + Cb) * hw + Ca * hw + i];
                }
            }
        };
    return {id};
}

V Graph::add_channel_bias(V x, V v) {
    const Tensor& X = val(x.id);
    const Tensor& Vv = val(v.id);
    if (X.shape.size() != 4 || Vv.shape.size() != 2 || Vv.shape[0] != X.shape[0] ||
        Vv.shape[1] != X.shape[1])
        throw ShapeError("add_channel_bias: " + X.shape_str() + " + " +
                         Vv.shape_str());
    int64_t B = X.shape[0], C = X.shape[1], hw = X.shape[2] * X.shape[3];
    Tensor out = X;
    for (int64_t n = 0; n < B; ++n)
        for (int64_t c = 0; c < C; ++c) {
            double bias = Vv[n * C + c];
            double* p = out.data.data() + (n * C + c) * hw;
            for (int64_t i = 0; i < hw; ++i) p[i] += bias;
        }
    bool needs = ng(x) || ng(v);
    int id = push(std::move(out), needs);
    if (needs)
        nodes_[id].back = [this, x, v, id, B, C, hw] {
            const Tensor& go = nodes_[id].grad;
            if (ng(x)) {
                Tensor& gx = g(x.id);
                for (int64_t i = 0; i < go.size(); ++i) gx[i] += go[i];
            }
            if (ng(v)) {
                Tensor& gv = g(v.id);
                for (int64_t n = 0; n < B; ++n)
                    for (int64_t c = 0; c < C; ++c) {
                        double s = 0.0;
                        const double* p = go.data.data() + (n * C + c) * hw;
                        for (int64_t i = 0; i < hw; ++i) s += p[i];
                        gv[n * C + c] += s;
                    }
            }
        };
    return {id};
}

namespace {

// Shared normalization backward: given xhat, upstream grad, gamma/scale and
// 1/std over a normalization set of size n, accumulate input grads.
// dx = (gamma * inv_std) * (go - mean(go) - xhat * mean(go * xhat))
struct NormSet {
    int64_t n;
};

}  // namespace

V Graph::group_norm(V x, V gamma, V beta, int groups, double eps) {
    const Tensor& X = val(x.id);
    if (X.shape.size() != 4) throw ShapeError("group_norm: need BCHW");
    int64_t B = X.shape[0], C = X.shape[1], hw = X.shape[2] * X.shape[3];
    if (C % groups != 0) throw ConfigError("group_norm: C not divisible by groups");
    if (val(gamma.id).size() != C || val(beta.id).size() != C)
        throw ShapeError("group_norm: gamma/beta must have C entries");
    int64_t cg = C / groups;
    int64_t n = cg * hw;

    Tensor out(X.shape);
    Tensor xhat(X.shape);
    Tensor inv_std({B, static_cast<int64_t>(groups)});
    const Tensor& G = val(gamma.id);
    const Tensor& Bt = val(beta.id);
    for (int64_t b = 0; b < B; ++b)
        for (int64_t gr = 0; gr < groups; ++gr) {
            const double* p = X.data.data() + (b * C + gr * cg) * hw;
            double mean = 0.0;
            for (int64_t i = 0; i < n; ++i) mean += p[i];
            mean /= static_cast<double>(n);
            double var = 0.0;
            for (int64_t i = 0; i < n; ++i) var += (p[i] - mean) * (p[i] - mean);
            var /= static_cast<double>(n);
            double is = 1.0 / std::sqrt(var + eps);
            inv_std[b * groups + gr] = is;
            for (int64_t c = 0; c < cg; ++c) {
                double ga = G[gr * cg + c], be = Bt[gr * cg + c];
                for (int64_t i = 0; i < hw; ++i) {
                    int64_t idx = (b * C + gr * cg + c) * hw + i;
                    double xh = (X[idx] - mean) * is;
                    xhat[idx] = xh;
                    out[idx] = ga * xh + be;
                }
            }
        }
    bool needs = ng(x) || ng(gamma) || ng(beta);
    int id = push(std::move(out), needs);
    if (needs)
        nodes_[id].back = [this, x, gamma, beta, id, B, C, hw, groups, cg, n,
                           xhat = std::move(xhat), inv_std = std::move(inv_std)] {
            const Tensor& go = nodes_[id].grad;
            const Tensor& G = val(gamma.id);
            for (int64_t b = 0; b < B; ++b)
                for (int64_t gr = 0; gr < groups; ++gr) {
                    // accumulate per-group sums of gamma-scaled upstream grad
                    double sum_d = 0.0, sum_dx = 0.0;
                    for (int64_t c = 0; c < cg; ++c) {
                        double ga = G[gr * cg + c];
                        for (int64_t i = 0; i < hw; ++i) {
                            int64_t idx = (b * C + gr * cg + c) * hw + i;
                            double d = go[idx] * ga;
                            sum_d += d;
                            sum_dx += d * xhat[idx];
                        }
                    }
                    double is = inv_std[b * groups + gr];
                    double inv_n = 1.0 / static_cast<double>(n);
                    for (int64_t c = 0; c < cg; ++c) {
                        double ga = G[gr * cg + c];
                        for (int64_t i = 0; i < hw; ++i) {
                            int64_t idx = (b * C + gr * cg + c) * hw + i;
                            if (ng(x))
                                g(x.id)[idx] +=
                                    is * (go[idx] * ga - inv_n * sum_d -
                                          xhat[idx] * inv_n * sum_dx);
                            if (ng(gamma)) g(gamma.id)[gr * cg + c] += go[idx] * xhat[idx];
                            if (ng(beta)) g(beta.id)[gr * cg + c] += go[idx];
                        }
                    }
                }
        };
    return {id};
}

V Graph::batch_norm2d(V x, V gamma, V beta, Tensor* running_mean,
                      Tensor* running_var, bool training, double momentum,
                      double eps) {
    const Tensor& X = val(x.id);
    if (X.shape.size() != 4) throw ShapeError("batch_norm2d: need BCHW");
    int64_t B = X.shape[0], C = X.shape[1], hw = X.shape[2] * X.shape[3];
    if (val(gamma.id).size() != C || val(beta.id).size() != C)
        throw ShapeError("batch_norm2d: gamma/beta must have C entries");
    int64_t n = B * hw;

    Tensor mean({C}), var({C});
    if (training) {
        for (int64_t c = 0; c < C; ++c) {
            double m = 0.0;
            for (int64_t b = 0; b < B; ++b) {
                const double* p = X.data.data() + (b * C + c) * hw;
                for (int64_t i = 0; i < hw; ++i) m += p[i];
            }
            m /= static_cast<double>(n);
            double v = 0.0;
            for (int64_t b = 0; b < B; ++b) {
                const double* p = X.data.data() + (b * C + c) * hw;
                for (int64_t i = 0; i < hw; ++i) v += (p[i] - m) * (p[i] - m);
            }
            v /= static_cast<double>(n);
            mean[c] = m;
            var[c] = v;
        }
        if (running_mean && running_var)
            for (int64_t c = 0; c < C; ++c) {
                (*running_mean)[c] = (1 - momentum) * (*running_mean)[c] + momentum * mean[c];
                (*running_var)[c] = (1 - momentum) * (*running_var)[c] + momentum * var[c];
            }
    } else {
        if (!running_mean || !running_var)
            throw ConfigError("batch_norm2d: eval mode needs running stats");
        mean = *running_mean;
        var = *running_var;
    }

    Tensor out(X.shape);
    Tensor xhat(X.shape);
    const Tensor& G = val(gamma.id);
    const Tensor& Bt = val(beta.id);
    std::vector<double> is(static_cast<size_t>(C));
    for (int64_t c = 0; c < C; ++c) is[static_cast<size_t>(c)] = 1.0 / std::sqrt(var[c] + eps);
    for (int64_t b = 0; b < B; ++b)
        for (int64_t c = 0; c < C; ++c)
            for (int64_t i = 0; i < hw; ++i) {
                int64_t idx = (b * C + c) * hw + i;
                double xh = (X[idx] - mean[c]) * is[static_cast<size_t>(c)];
                xhat[idx] = xh;
                out[idx] = G[c] * xh + Bt[c];
            }
    bool needs = ng(x) || ng(gamma) || ng(beta);
    int id = push(std::move(out), needs);
    if (needs)
        nodes_[id].back = [this, x, gamma, beta, id, B, C, hw, n, training,
                           xhat = std::move(xhat), is = std::move(is)] {
            const Tensor& go = nodes_[id].grad;
            const Tensor& G = val(gamma.id);
            for (int64_t c = 0; c < C; ++c) {
                double sum_d = 0.0, sum_dx = 0.0;
                for (int64_t b = 0; b < B; ++b)
                    for (int64_t i = 0; i < hw; ++i) {
                        int64_t idx = (b * C + c) * hw + i;
                        sum_d += go[idx];
                        sum_dx += go[idx] * xhat[idx];
                    }
                if (ng(gamma)) g(gamma.id)[c] += sum_dx;
                if (ng(beta)) g(beta.id)[c] += sum_d;
                if (ng(x)) {
                    double inv_n = 1.0 / static_cast<double>(n);
                    for (int64_t b = 0; b < B; ++b)
                        for (int64_t i = 0; i < hw; ++i) {
                            int64_t idx = (b * C + c) * hw + i;
                            double d = training
                                           ? (go[idx] - inv_n * sum_d -
                                              xhat[idx] * inv_n * sum_dx)
                                           : go[idx];
                            g(x.id)[idx] += G[c] * is[static_cast<size_t>(c)] * d;
                        }
                }
            }
        };
    return {id};
}

// ---------------------------------------------------------------- reductions

V Graph::mean_all(V a) {
    const Tensor& A = val(a.id);
    double m = 0.0;
    for (double v : A.data) m += v;
    m /= static_cast<double>(A.size());
    bool needs = ng(a);
    int id = push(Tensor::scalar(m), needs);
    if (needs)
        nodes_[id].back = [this, a, id] {
            double go = nodes_[id].grad[0];
            Tensor& ga = g(a.id);
            double s = go / static_cast<double>(ga.size());
            for (auto& v : ga.data) v += s;
        };
    return {id};
}

V Graph::mse(V a, V b) { return mean_all(square(sub(a, b))); }

V Graph::binarize_st(V a, double threshold) {
    Tensor out = val(a.id);
    for (auto& v : out.data) v = v > threshold ? 1.0 : 0.0;
    bool needs = ng(a);
    int id = push(std::move(out), needs);
    if (needs)
        nodes_[id].back = [this, a, id] {
            const Tensor& go = nodes_[id].grad;
            Tensor& ga = g(a.id);
            for (int64_t i = 0; i < go.size(); ++i) ga[i] += go[i];
        };
    return {id};
}

void Graph::backward(V loss) {
    if (val(loss.id).size() != 1)
        throw ShapeError("backward: loss must be scalar");
    g(loss.id)[0] = 1.0;
    for (int i = loss.id; i >= 0; --i) {
        Node& n = nodes_[i];
        if (n.back && !n.grad.shape.empty()) n.back();
    }
    for (Node& n : nodes_) {
        if (n.external_grad && !n.grad.shape.empty()) {
            Tensor& eg = *n.external_grad;
            if (eg.shape.empty()) eg = Tensor::zeros(n.value.shape);
            for (int64_t i = 0; i < n.grad.size(); ++i) eg[i] += n.grad[i];
        }
    }
}

double finite_diff(const std::function<double(double)>& f, double x0, double h) {
    return (f(x0 + h) - f(x0 - h)) / (2.0 * h);
}

}  // namespace dmz::nn
