#pragma once

#include <string>

#include "forensim/nn.hpp"

namespace forensim::fusion {

/// Softmax-weighted non-local aggregation: rows of softmax(S) mix the
/// feature rows. features is N x C (rows are positions), s_logits is N x N.
ad::Var nlr(const ad::Var& features, const ad::Var& s_logits);

/// Same aggregation with weights that are already row-stochastic.
ad::Var nlr_weighted(const ad::Var& features, const ad::Var& row_stochastic);

/// Hadamard-gates the manipulation map with the similarity map, refines it
/// non-locally under the affinity, aggregates under the per-pixel norm-map
/// distributions, and concatenates [mani, sim_attn, sim_map].
/// mssa_map: C_f x g x g, sim_map: 1 x g x g, norm_map/aff_final: N x N.
/// Result: N x (2 C_f + 1) token features.
ad::Var fuse(const ad::Var& mssa_map, const ad::Var& sim_map, const ad::Var& norm_map,
             const ad::Var& aff_final);

struct DecodeOutput {
    ad::Var mask_logits;  // 3 x H x W
    ad::Var det_score;    // {1,1} in (0,1), absent head -> derived from mask
    ad::Var logits_grid;  // 3 x g x g pre-upsampling
};

/// Four-layer conv head over the fused grid producing three-class logits,
/// bilinearly upsampled to the output size, plus the pooled detection score.
class FusionHead {
public:
    FusionHead(std::string name, int fused_channels, int decode_channels = 32);

    void init(nn::ParamStore& ps, Rng& rng) const;
    DecodeOutput decode(nn::Workspace& ws, const ad::Var& fused_tokens, int out_h, int out_w,
                        bool detection_head = true) const;

    int fused_channels() const { return fused_channels_; }

private:
    std::string name_;
    int fused_channels_ = 0, decode_channels_ = 0;
    nn::Conv2d conv_[4];
    nn::Linear det_;
};

}  // namespace forensim::fusion
