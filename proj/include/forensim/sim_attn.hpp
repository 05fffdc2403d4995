#pragma once

#include <string>
#include <utility>

#include "forensim/core_math.hpp"
#include "forensim/nn.hpp"

namespace forensim::sim {

struct SimAttnConfig {
    int channels = 0;   // backbone embedding width C
    int feat_dim = 0;   // projected width d; 0 means "same as channels"
    double alpha = 5.0;
    double sigma = 3.0;  // distance-kernel softening, patch units
    int top_k = 8;
    int conv_channels = 16;
    double eps = 1e-6;
    double init_noise = 0.0;   // noise added to the identity-initialized projections
    double rope_fraction = 0.125;
    double rope_base = 10000.0;

    int d() const { return feat_dim > 0 ? feat_dim : channels; }
};

/// Patch-to-patch distance weighting K = d^2 / (d^2 + sigma^2) over the
/// raster-flattened grid; zero on the diagonal, symmetric, increasing in
/// squared grid distance.
struct DistanceKernel {
    Tensor k;  // N x N
    double sigma = 0.0;
};

DistanceKernel distance_kernel(int side, double sigma);

struct SimilarityOutput {
    ad::Var aff_raw;    // N x N, entries in [-1, 1]
    ad::Var aff_final;  // N x N, bisoftmax, entries in (0, 1]
    ad::Var norm_map;   // N x N, each row a probability vector
    ad::Var sim_map;    // 1 x g x g refined top-k map
};

/// Duplication-exposing attention: positive features with rotary encoding,
/// unit-normalized, dotted into an explicit affinity matrix, distance-masked
/// and bisoftmax-sharpened, with the derived per-pixel maps.
class SimilarityAttention {
public:
    SimilarityAttention(std::string name, SimAttnConfig cfg);

    void init(nn::ParamStore& ps, Rng& rng) const;

    /// Positive feature maps through two projections, rotary-encoded, then
    /// L2-normalized per row. Every output row has unit norm.
    std::pair<ad::Var, ad::Var> project_cb(nn::Workspace& ws, const ad::Var& v) const;

    static ad::Var affinity(const ad::Var& cb, const ad::Var& bb);
    static ad::Var mask_affinity(const ad::Var& aff, const DistanceKernel& k);
    /// Elementwise product of row- and column-softmax of alpha * aff_masked.
    static ad::Var bisoftmax(const ad::Var& aff_masked, double alpha);
    static ad::Var norm_map(const ad::Var& aff_final);
    ad::Var sim_map(nn::Workspace& ws, const ad::Var& aff_final) const;

    SimilarityOutput forward(nn::Workspace& ws, const ad::Var& v) const;

    const SimAttnConfig& config() const { return cfg_; }

private:
    std::string name_;
    SimAttnConfig cfg_;
    nn::Linear proj_c_, proj_b_;
    nn::Conv2d conv_[4];
};

}  // namespace forensim::sim
