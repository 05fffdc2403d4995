#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "forensim/tensor.hpp"

namespace forensim::ad {

struct Node;
using Var = std::shared_ptr<Node>;

/// One vertex of the reverse-mode tape. Ops allocate a Node holding the
/// forward value plus a closure that routes the incoming gradient to the
/// parents. Graphs are per-forward-pass and thread-confined.
struct Node {
    Tensor val;
    Tensor grad;
    bool requires_grad = false;
    std::vector<Var> parents;
    std::function<void(Node&)> backprop;

    Tensor& ensure_grad() {
        if (grad.size() != val.size()) grad = zeros_like(val);
        return grad;
    }
};

Var constant(Tensor v);
/// Leaf with requires_grad set; parameters and checked inputs enter here.
Var leaf(Tensor v);

/// Runs reverse accumulation from a scalar root (size-1 tensor).
void backward(const Var& root);

// ---- elementwise (shape-agnostic) ----
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_const(const Var& a, double c);
Var elu(const Var& a);
Var silu(const Var& a);
Var sigmoid(const Var& a);
Var exp_of(const Var& a);
Var log_of(const Var& a);
Var pow_const(const Var& a, double p);
/// max(a, c) elementwise; gradient passes only where a > c.
Var clamp_min_const(const Var& a, double c);

// ---- 2D matrix ops (rows = positions/tokens) ----
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
Var softmax_rows(const Var& a);
Var sum_rows(const Var& a);        // N x C -> N x 1
Var mean_over_rows(const Var& a);  // N x C -> 1 x C
Var add_row_bias(const Var& m, const Var& bias);  // bias 1 x C
Var mul_cols(const Var& m, const Var& col);       // col N x 1, scales each row
Var div_cols(const Var& m, const Var& col);
Var concat_cols(const Var& a, const Var& b);
Var concat_rows(const Var& a, const Var& b);
Var slice_cols(const Var& a, int lo, int hi);
Var slice_rows(const Var& a, int lo, int hi);
Var gather_rows(const Var& a, std::vector<int> idx);
Var l2_normalize_rows(const Var& a);
/// Per row, mean of the k largest entries (indices frozen for backward).
Var topk_rows_mean(const Var& a, int k);

// ---- reductions ----
Var sum_all(const Var& a);   // -> shape {1}
Var mean_all(const Var& a);  // -> shape {1}

// ---- shape ----
Var reshape(const Var& a, Shape s);
/// N x C tokens -> C x g x g grid (N = g*g, raster order).
Var grid_from_tokens(const Var& a);
Var tokens_from_grid(const Var& a);  // C x h x w -> (h*w) x C

// ---- positional / normalization ----
/// Rotary embedding over consecutive channel pairs; one angle set per row.
Var rope(const Var& a, const std::vector<int>& positions, double base = 10000.0);
Var layer_norm_rows(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-6);

// ---- image-shaped ops (C x H x W) ----
/// Non-overlapping p x p patches in raster order -> (H/p * W/p) x (C*p*p).
Var patches_from_image(const Var& x, int patch);
Var conv2d(const Var& x, const Var& w, const Var& b, int groups = 1);
Var bilinear_upsample(const Var& x, int out_h, int out_w);
Var global_avg_pool(const Var& x);  // -> 1 x C
Var softmax_channels(const Var& x);
Var log_softmax_channels(const Var& x);
Var sum_channels(const Var& x);      // C x H x W -> 1 x H x W
Var slice_channel(const Var& x, int c);

/// Streaming causal kernel: y_k = (Cb_k . h_k)/(Cb_k . n_k + eps) + d x_k
/// with h_k = sum_{j<=k} Bb_j^T x_j and n_k = sum_{j<=k} Bb_j.
Var causal_normalized_attention(const Var& cb, const Var& bb, const Var& x,
                                double d_residual, double eps);

}  // namespace forensim::ad
