#pragma once

#include <string>
#include <vector>

#include "forensim/nn.hpp"

namespace forensim::backbone {

struct BackboneConfig {
    int image_size = 64;
    int patch = 4;
    int channels = 48;
    int layers = 4;
    int heads = 4;
    double mlp_ratio = 4.0;

    int grid() const { return image_size / patch; }
    int tokens() const { return grid() * grid(); }
};

/// Small trainable patch-embedding encoder producing N x C token features.
/// Stands behind the same interface as an externally supplied pretrained
/// feature extractor: forward_features() accepts precomputed tokens.
class PatchBackbone {
public:
    PatchBackbone(std::string name, BackboneConfig cfg);

    void init(nn::ParamStore& ps, Rng& rng) const;

    /// image is 3 x H x W with H = W = image_size.
    ad::Var forward(nn::Workspace& ws, const ad::Var& image) const;

    /// Adapter entry for cached external features of shape N x C.
    ad::Var forward_features(nn::Workspace& ws, const ad::Var& tokens) const;

    const BackboneConfig& config() const { return cfg_; }

private:
    ad::Var encoder(nn::Workspace& ws, ad::Var x) const;
    ad::Var self_attention(nn::Workspace& ws, const ad::Var& x, int layer) const;

    std::string name_;
    BackboneConfig cfg_;
    nn::Linear embed_;
    std::vector<nn::LayerNorm> ln1_, ln2_;
    std::vector<nn::Linear> qkv_, proj_;
    std::vector<nn::Mlp> mlp_;
    nn::LayerNorm ln_final_;
};

}  // namespace forensim::backbone
