#include "forensim/sim_attn.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace forensim::sim {

DistanceKernel distance_kernel(int side, double sigma) {
    if (side < 1) throw std::invalid_argument("distance_kernel: side must be >= 1");
    if (!(sigma > 0.0)) throw std::invalid_argument("distance_kernel: sigma must be positive");
    const int n = side * side;
    DistanceKernel out{Tensor({n, n}), sigma};
    for (int p = 0; p < n; ++p) {
        const int py = p / side, px = p % side;
        for (int q = 0; q < n; ++q) {
            const int qy = q / side, qx = q % side;
            const double d2 = static_cast<double>((py - qy) * (py - qy) + (px - qx) * (px - qx));
            out.k.at(p, q) = d2 / (d2 + sigma * sigma);
        }
    }
    return out;
}

SimilarityAttention::SimilarityAttention(std::string name, SimAttnConfig cfg)
    : name_(std::move(name)), cfg_(cfg) {
    proj_c_ = nn::Linear{name_ + ".proj_c", cfg_.channels, cfg_.d()};
    proj_b_ = nn::Linear{name_ + ".proj_b", cfg_.channels, cfg_.d()};
    const int cc = cfg_.conv_channels;
    conv_[0] = nn::Conv2d{name_ + ".conv1", 1, cc, 3};
    conv_[1] = nn::Conv2d{name_ + ".conv2", cc, cc, 3};
    conv_[2] = nn::Conv2d{name_ + ".conv3", cc, cc, 3};
    conv_[3] = nn::Conv2d{name_ + ".conv4", cc, 1, 3};
}

void SimilarityAttention::init(nn::ParamStore& ps, Rng& rng) const {
    // identity-seeded projections: the starting affinity is raw feature
    // similarity, which already exposes exact duplicates
    proj_c_.init_identity(ps, rng, cfg_.init_noise);
    proj_b_.init_identity(ps, rng, cfg_.init_noise);
    for (const auto& c : conv_) c.init(ps, rng);
}

std::pair<ad::Var, ad::Var> SimilarityAttention::project_cb(nn::Workspace& ws,
                                                            const ad::Var& v) const {
    const int n = v->val.dim(0);
    std::vector<int> positions(n);
    std::iota(positions.begin(), positions.end(), 0);
    auto lift = [&](const nn::Linear& proj) {
        ad::Var feats = ad::add_const(ad::elu(proj(ws, v)), 1.0);
        return ad::l2_normalize_rows(
            core::rope_partial(feats, positions, cfg_.rope_fraction, cfg_.rope_base));
    };
    return {lift(proj_c_), lift(proj_b_)};
}

ad::Var SimilarityAttention::affinity(const ad::Var& cb, const ad::Var& bb) {
    if (cb->val.dim(1) != bb->val.dim(1))
        throw std::invalid_argument("affinity: feature width mismatch");
    return ad::matmul(cb, ad::transpose(bb));
}

ad::Var SimilarityAttention::mask_affinity(const ad::Var& aff, const DistanceKernel& k) {
    if (!aff->val.same_shape(k.k)) throw std::invalid_argument("mask_affinity: shape mismatch");
    return ad::mul(aff, ad::constant(k.k));
}

ad::Var SimilarityAttention::bisoftmax(const ad::Var& aff_masked, double alpha) {
    if (!(alpha > 0.0)) throw std::invalid_argument("bisoftmax: alpha must be positive");
    ad::Var scaled = ad::scale(aff_masked, alpha);
    ad::Var row = ad::softmax_rows(scaled);
    ad::Var col = ad::transpose(ad::softmax_rows(ad::transpose(scaled)));
    return ad::mul(row, col);
}

ad::Var SimilarityAttention::norm_map(const ad::Var& aff_final) {
    ad::Var sums = ad::sum_rows(aff_final);
    for (int i = 0; i < sums->val.dim(0); ++i)
        if (sums->val.at(i, 0) <= 0.0)
            throw std::domain_error("norm_map: nonpositive row sum");
    return ad::div_cols(aff_final, sums);
}

ad::Var SimilarityAttention::sim_map(nn::Workspace& ws, const ad::Var& aff_final) const {
    const int n = aff_final->val.dim(0);
    if (cfg_.top_k < 1 || cfg_.top_k > n)
        throw std::invalid_argument("sim_map: top_k out of range");
    ad::Var scores = ad::topk_rows_mean(aff_final, cfg_.top_k);  // N x 1
    ad::Var x = ad::grid_from_tokens(scores);                    // 1 x g x g
    for (const auto& c : conv_) x = ad::silu(c(ws, x));
    return x;
}

SimilarityOutput SimilarityAttention::forward(nn::Workspace& ws, const ad::Var& v) const {
    const int n = v->val.dim(0);
    const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
    if (side * side != n)
        throw std::invalid_argument("similarity forward: token count must be a perfect square");
    auto [cb, bb] = project_cb(ws, v);
    ad::Var aff = affinity(cb, bb);
    DistanceKernel k = distance_kernel(side, cfg_.sigma);
    ad::Var masked = mask_affinity(aff, k);
    ad::Var final_aff = bisoftmax(masked, cfg_.alpha);
    SimilarityOutput out;
    out.aff_raw = aff;
    out.aff_final = final_aff;
    out.norm_map = norm_map(final_aff);
    out.sim_map = sim_map(ws, final_aff);
    return out;
}

}  // namespace forensim::sim
