#include "forensim/fusion.hpp"

#include <cmath>
#include <stdexcept>

namespace forensim::fusion {

ad::Var nlr(const ad::Var& features, const ad::Var& s_logits) {
    const int n = features->val.dim(0);
    if (s_logits->val.dim(0) != n || s_logits->val.dim(1) != n)
        throw std::invalid_argument("nlr: similarity must be N x N for N feature rows");
    return ad::matmul(ad::softmax_rows(s_logits), features);
}

ad::Var nlr_weighted(const ad::Var& features, const ad::Var& row_stochastic) {
    const int n = features->val.dim(0);
    if (row_stochastic->val.dim(0) != n || row_stochastic->val.dim(1) != n)
        throw std::invalid_argument("nlr_weighted: weights must be N x N");
    return ad::matmul(row_stochastic, features);
}

ad::Var fuse(const ad::Var& mssa_map, const ad::Var& sim_map, const ad::Var& norm_map,
             const ad::Var& aff_final) {
    const int g = mssa_map->val.dim(1);
    if (mssa_map->val.dim(2) != g || sim_map->val.dim(1) != g || sim_map->val.dim(2) != g ||
        sim_map->val.dim(0) != 1)
        throw std::invalid_argument("fuse: maps must share one g x g grid");
    const int n = g * g;
    if (norm_map->val.dim(0) != n || norm_map->val.dim(1) != n || aff_final->val.dim(0) != n ||
        aff_final->val.dim(1) != n)
        throw std::invalid_argument("fuse: affinity shapes must be N x N");

    ad::Var m_tok = ad::tokens_from_grid(mssa_map);  // N x C_f
    ad::Var s_tok = ad::tokens_from_grid(sim_map);   // N x 1
    ad::Var gated = ad::mul_cols(m_tok, s_tok);      // sim broadcast over channels
    ad::Var mani = nlr(gated, aff_final);
    ad::Var sim_attn = nlr_weighted(mani, norm_map);
    return ad::concat_cols(ad::concat_cols(mani, sim_attn), s_tok);
}

FusionHead::FusionHead(std::string name, int fused_channels, int decode_channels)
    : name_(std::move(name)), fused_channels_(fused_channels), decode_channels_(decode_channels) {
    const int d = decode_channels_;
    conv_[0] = nn::Conv2d{name_ + ".conv1", fused_channels_, d, 3};
    conv_[1] = nn::Conv2d{name_ + ".conv2", d, d, 3};
    conv_[2] = nn::Conv2d{name_ + ".conv3", d, d, 3};
    conv_[3] = nn::Conv2d{name_ + ".conv4", d, 3, 3};
    det_ = nn::Linear{name_ + ".det", 2, 1};
}

void FusionHead::init(nn::ParamStore& ps, Rng& rng) const {
    for (const auto& c : conv_) c.init(ps, rng);
    det_.init(ps, rng);
}

DecodeOutput FusionHead::decode(nn::Workspace& ws, const ad::Var& fused_tokens, int out_h,
                                int out_w, bool detection_head) const {
    if (fused_tokens->val.dim(1) != fused_channels_)
        throw std::invalid_argument("decode: fused channel mismatch");
    ad::Var x = ad::grid_from_tokens(fused_tokens);
    x = ad::silu(conv_[0](ws, x));
    x = ad::silu(conv_[1](ws, x));
    x = ad::silu(conv_[2](ws, x));
    ad::Var logits = conv_[3](ws, x);  // 3 x g x g

    DecodeOutput out;
    out.logits_grid = logits;
    out.mask_logits = ad::bilinear_upsample(logits, out_h, out_w);
    if (detection_head) {
        ad::Var pooled = ad::global_avg_pool(logits);             // 1 x 3
        ad::Var non_pristine = ad::slice_cols(pooled, 1, 3);      // source, target
        out.det_score = ad::sigmoid(det_(ws, non_pristine));
    } else {
        // averaged segmentation confidence: mean non-pristine probability
        ad::Var probs = ad::softmax_channels(logits);
        ad::Var pooled = ad::global_avg_pool(probs);
        ad::Var p_np = ad::add(ad::slice_cols(pooled, 1, 2), ad::slice_cols(pooled, 2, 3));
        out.det_score = p_np;
    }
    return out;
}

}  // namespace forensim::fusion
