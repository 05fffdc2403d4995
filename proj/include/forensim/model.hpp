#pragma once

#include <string>

#include "forensim/backbone.hpp"
#include "forensim/fusion.hpp"
#include "forensim/mssa.hpp"
#include "forensim/sim_attn.hpp"

namespace forensim::model {

struct ModelConfig {
    int image_size = 64;
    int patch = 4;
    int channels = 48;
    int backbone_layers = 4;
    int backbone_heads = 4;
    double backbone_mlp_ratio = 4.0;

    double alpha = 5.0;
    double sigma = 3.0;
    int top_k = 8;
    int sim_conv_channels = 16;
    double sim_init_noise = 0.01;

    std::array<int, 3> heads_per_block{1, 2, 4};
    double mssa_mlp_ratio = 4.0;
    double drop_path_rate = 0.1;
    int map_channels = 16;

    int decode_channels = 32;
    double rope_fraction = 0.125;
    double eps = 1e-6;

    bool no_sim_attn = false;
    bool no_mssa = false;
    bool no_detection = false;

    int grid() const { return image_size / patch; }
    int tokens() const { return grid() * grid(); }
    int fused_channels() const { return 2 * map_channels + 1; }

    std::string to_json() const;
    static ModelConfig from_json(const std::string& text);
};

struct ModelForward {
    ad::Var mask_logits;   // 3 x H x W
    ad::Var det_score;     // {1,1}
    ad::Var fused_tokens;  // N x (2 C_f + 1), contrastive embedding source
    ad::Var sim_map;       // 1 x g x g (constant ones under no_sim_attn)
    ad::Var mssa_map;      // C_f x g x g (constant ones under no_mssa)
    ad::Var aff_final;     // null under no_sim_attn
};

class ForensimModel {
public:
    explicit ForensimModel(ModelConfig cfg);

    void init(nn::ParamStore& ps, Rng& rng) const;
    ModelForward forward(nn::Workspace& ws, const Tensor& image) const;
    /// Differentiable entry used by the end-to-end gradient checks.
    ModelForward forward_var(nn::Workspace& ws, const ad::Var& image) const;

    const ModelConfig& config() const { return cfg_; }
    const backbone::PatchBackbone& encoder() const { return backbone_; }
    const sim::SimilarityAttention& similarity() const { return sim_; }
    const mssa::MssaModule& manipulation() const { return mssa_; }
    const fusion::FusionHead& head() const { return fusion_; }

private:
    ModelConfig cfg_;
    backbone::PatchBackbone backbone_;
    sim::SimilarityAttention sim_;
    mssa::MssaModule mssa_;
    fusion::FusionHead fusion_;
};

struct Checkpoint {
    ModelConfig config;
    nn::ParamStore params;
    int epoch = 0;
    double best_val = 0.0;
    std::string rng_state;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace forensim::model
