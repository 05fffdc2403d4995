#pragma once

#include <array>
#include <string>

#include "forensim/core_math.hpp"
#include "forensim/nn.hpp"

namespace forensim::mssa {

struct MssaConfig {
    int channels = 0;  // C, divisible by every head count
    std::array<int, 3> heads_per_block{1, 2, 4};
    double mlp_ratio = 4.0;
    double drop_path_rate = 0.1;
    int map_channels = 16;  // C_f of the produced map
    double eps = 1e-6;
    double rope_fraction = 0.125;
    double rope_base = 10000.0;
};

/// Depthwise 3x3 convolution over the token grid; the positional bias added
/// to attention output.
ad::Var lepe(nn::Workspace& ws, const nn::Conv2d& conv, const ad::Var& v);

/// One multi-head block of the manipulation attention stack.
class MssaBlock {
public:
    MssaBlock(std::string name, const MssaConfig& cfg, int heads);

    void init(nn::ParamStore& ps, Rng& rng) const;

    /// Linear-complexity kernel: positive features, rotary-modulated keys,
    /// factored (Bbar^T N^-1/2)(V N^-1/2) aggregation, per-query
    /// normalization, LePE bias, head concat and output mix. Never forms NxN.
    ad::Var attention(nn::Workspace& ws, const ad::Var& v) const;

    /// CPE residual -> LN -> attention -> drop-path residual -> LN -> MLP ->
    /// drop-path residual.
    ad::Var forward(nn::Workspace& ws, const ad::Var& v) const;

    int heads() const { return heads_; }

private:
    std::string name_;
    MssaConfig cfg_;
    int heads_ = 1;
    nn::Conv2d cpe_, lepe_;
    nn::LayerNorm ln1_, ln2_;
    nn::Linear proj_c_, proj_b_, out_;
    nn::Mlp mlp_;
};

/// Three parallel blocks with different head counts, averaged, reshaped and
/// mapped to map_channels.
class MssaModule {
public:
    MssaModule(std::string name, MssaConfig cfg);

    void init(nn::ParamStore& ps, Rng& rng) const;
    /// Returns the map as map_channels x g x g.
    ad::Var forward(nn::Workspace& ws, const ad::Var& v) const;

    const MssaConfig& config() const { return cfg_; }
    const MssaBlock& block(int i) const { return blocks_[i]; }

private:
    std::string name_;
    MssaConfig cfg_;
    std::vector<MssaBlock> blocks_;
    nn::Conv2d head_conv_;
};

}  // namespace forensim::mssa
