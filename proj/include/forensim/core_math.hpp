#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "forensim/autodiff.hpp"
#include "forensim/tensor.hpp"

namespace forensim::core {

/// Continuous-time state-space parameters. The discretized pair (Abar, Bbar)
/// is the reference semantics for the attention kernels; it is not on the
/// trained forward path.
struct SsmParams {
    Tensor a;      // n x n state matrix
    Tensor b;      // n x m input projection
    Tensor c;      // p x n output projection
    Tensor d;      // p x m residual (may be {1} scalar, broadcast)
    double delta = 1.0;
};

/// Zero-order-hold discretization: Abar = exp(delta A),
/// Bbar = (delta A)^{-1} (exp(delta A) - I) delta B, falling back to the
/// first-order Taylor form Bbar = delta B when A is singular or
/// ||delta A||_inf is below `taylor_threshold`.
std::pair<Tensor, Tensor> ssm_discretize(const SsmParams& params, double taylor_threshold = 1e-4);

/// Left-to-right recurrence h_k = Abar h_{k-1} + Bbar x_k,
/// y_k = Cbar h_k + Dbar x_k with h_0 = 0. xs is L x m, output L x p.
Tensor ssm_scan(const Tensor& abar, const Tensor& bbar, const Tensor& cbar, const Tensor& dbar,
                const Tensor& xs);

/// Normalized linear attention over positive features.
/// causal: y_k = (sum_{j<=k} (cb_k . bb_j) x_j) / (sum_{j<=k} cb_k . bb_j + eps) + d x_k.
/// non-causal sums over all j. Streaming, O(L d C); never materializes L x L.
ad::Var normalized_linear_attention(const ad::Var& cb, const ad::Var& bb, const ad::Var& x,
                                    double d_residual, bool causal, double eps = 1e-6);
Tensor normalized_linear_attention(const Tensor& cb, const Tensor& bb, const Tensor& x,
                                   double d_residual, bool causal, double eps = 1e-6);

/// Rotary embedding on raster-flattened positions, base 10000.
Tensor rope_apply(const Tensor& x, const std::vector<int>& positions, double base = 10000.0);

/// Rotary embedding restricted to the leading `fraction` of channel pairs
/// (at least one); the remaining channels pass through unrotated. Full-band
/// rotation at raster distances erases exact-duplicate affinity, so the
/// attention modules rotate a subband only.
ad::Var rope_partial(const ad::Var& x, const std::vector<int>& positions, double fraction,
                     double base = 10000.0);

/// ELU(x W + b) + 1; strictly positive for finite inputs.
ad::Var positive_feature_map(const ad::Var& x, const ad::Var& w, const ad::Var& b);
Tensor positive_feature_map(const Tensor& x, const Tensor& w, const Tensor& b);

/// Central-difference gradient verification. Returns
/// max_i |analytic_i - fd_i| / (|analytic_i| + 1e-8).
double finite_diff_check(const std::function<double(const std::vector<double>&)>& fn,
                         const std::vector<double>& point, const std::vector<double>& analytic,
                         double step = 1e-5);

/// Convenience: builds leaves from `point`, runs `make_loss`, backpropagates,
/// and checks the collected gradient against central differences.
double finite_diff_check_var(
    const std::function<ad::Var(const std::vector<ad::Var>&)>& make_loss,
    const std::vector<Tensor>& points, double step = 1e-5);

}  // namespace forensim::core
