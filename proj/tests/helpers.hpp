#pragma once

#include <cmath>
#include <vector>

#include "forensim/rng.hpp"
#include "forensim/tensor.hpp"

namespace forensim::testing {

/// Unrolled SSM oracle: y_k = sum_{j<=k} Cbar Abar^{k-j} Bbar x_j + Dbar x_k.
/// Deliberately quadratic in L; the implementation under test must agree.
inline Tensor ssm_unrolled_oracle(const Tensor& abar, const Tensor& bbar, const Tensor& cbar,
                                  const Tensor& dbar, const Tensor& xs) {
    const int n = abar.dim(0), m = bbar.dim(1), p = cbar.dim(0), L = xs.dim(0);
    const bool scalar_d = dbar.size() == 1;
    auto matvec = [&](const Tensor& M, const std::vector<double>& v) {
        std::vector<double> out(M.dim(0), 0.0);
        for (int i = 0; i < M.dim(0); ++i)
            for (int j = 0; j < M.dim(1); ++j) out[i] += M.at(i, j) * v[j];
        return out;
    };
    Tensor ys({L, p});
    for (int k = 0; k < L; ++k) {
        std::vector<double> acc(p, 0.0);
        for (int j = 0; j <= k; ++j) {
            std::vector<double> v(m);
            for (int t = 0; t < m; ++t) v[t] = xs.at(j, t);
            std::vector<double> h = matvec(bbar, v);
            for (int e = 0; e < k - j; ++e) h = matvec(abar, h);
            std::vector<double> y(p, 0.0);
            for (int i = 0; i < p; ++i)
                for (int t = 0; t < n; ++t) y[i] += cbar.at(i, t) * h[t];
            for (int i = 0; i < p; ++i) acc[i] += y[i];
        }
        for (int i = 0; i < p; ++i) {
            double res = 0.0;
            if (scalar_d) {
                res = dbar[0] * xs.at(k, i);
            } else {
                for (int t = 0; t < m; ++t) res += dbar.at(i, t) * xs.at(k, t);
            }
            ys.at(k, i) = acc[i] + res;
        }
    }
    return ys;
}

/// Explicit L x L weight-matrix oracle for the normalized linear kernel.
/// Also exposes the weights so convexity properties can be asserted.
struct QuadraticAttention {
    Tensor y;
    Tensor weights;  // L x L, row-normalized, includes eps in the denominator
};

inline QuadraticAttention quadratic_attention_oracle(const Tensor& cb, const Tensor& bb,
                                                     const Tensor& x, double d_residual,
                                                     bool causal, double eps) {
    const int L = cb.dim(0), d = cb.dim(1), C = x.dim(1);
    QuadraticAttention out;
    out.y = Tensor({L, C});
    out.weights = Tensor({L, L});
    for (int k = 0; k < L; ++k) {
        const int hi = causal ? k : L - 1;
        double denom = eps;
        for (int j = 0; j <= hi; ++j) {
            double w = 0.0;
            for (int t = 0; t < d; ++t) w += cb.at(k, t) * bb.at(j, t);
            out.weights.at(k, j) = w;
            denom += w;
        }
        for (int j = 0; j <= hi; ++j) out.weights.at(k, j) /= denom;
        for (int c = 0; c < C; ++c) {
            double acc = 0.0;
            for (int j = 0; j <= hi; ++j) acc += out.weights.at(k, j) * x.at(j, c);
            out.y.at(k, c) = acc + d_residual * x.at(k, c);
        }
    }
    return out;
}

inline Tensor random_positive_features(Rng& rng, int rows, int cols, double lo = 0.1,
                                       double hi = 2.0) {
    return rng.uniform_tensor({rows, cols}, lo, hi);
}

}  // namespace forensim::testing
