#include "forensim/backbone.hpp"

#include <cmath>
#include <stdexcept>

namespace forensim::backbone {

PatchBackbone::PatchBackbone(std::string name, BackboneConfig cfg)
    : name_(std::move(name)), cfg_(cfg) {
    if (cfg_.image_size % cfg_.patch != 0)
        throw std::invalid_argument("backbone: image size must be divisible by patch size");
    if (cfg_.channels % cfg_.heads != 0)
        throw std::invalid_argument("backbone: channels not divisible by heads");
    embed_ = nn::Linear{name_ + ".embed", 3 * cfg_.patch * cfg_.patch, cfg_.channels};
    for (int l = 0; l < cfg_.layers; ++l) {
        const std::string p = name_ + ".l" + std::to_string(l);
        ln1_.push_back(nn::LayerNorm{p + ".ln1", cfg_.channels});
        ln2_.push_back(nn::LayerNorm{p + ".ln2", cfg_.channels});
        qkv_.push_back(nn::Linear{p + ".qkv", cfg_.channels, 3 * cfg_.channels});
        proj_.push_back(nn::Linear{p + ".proj", cfg_.channels, cfg_.channels});
        mlp_.push_back(nn::Mlp{p + ".mlp", cfg_.channels, cfg_.mlp_ratio});
    }
    ln_final_ = nn::LayerNorm{name_ + ".ln_f", cfg_.channels};
}

void PatchBackbone::init(nn::ParamStore& ps, Rng& rng) const {
    embed_.init(ps, rng);
    ps.add(name_ + ".pos", rng.normal_tensor({cfg_.tokens(), cfg_.channels}, 0.0, 0.02));
    for (int l = 0; l < cfg_.layers; ++l) {
        ln1_[l].init(ps);
        ln2_[l].init(ps);
        qkv_[l].init(ps, rng);
        proj_[l].init(ps, rng);
        mlp_[l].init(ps, rng);
    }
    ln_final_.init(ps);
}

ad::Var PatchBackbone::self_attention(nn::Workspace& ws, const ad::Var& x, int layer) const {
    const int c = cfg_.channels, heads = cfg_.heads, hw = c / heads;
    ad::Var qkv = qkv_[layer](ws, x);
    ad::Var merged;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hw));
    for (int h = 0; h < heads; ++h) {
        ad::Var q = ad::slice_cols(qkv, h * hw, (h + 1) * hw);
        ad::Var k = ad::slice_cols(qkv, c + h * hw, c + (h + 1) * hw);
        ad::Var v = ad::slice_cols(qkv, 2 * c + h * hw, 2 * c + (h + 1) * hw);
        ad::Var attn = ad::softmax_rows(ad::scale(ad::matmul(q, ad::transpose(k)), scale));
        ad::Var o = ad::matmul(attn, v);
        merged = merged ? ad::concat_cols(merged, o) : o;
    }
    return proj_[layer](ws, merged);
}

ad::Var PatchBackbone::encoder(nn::Workspace& ws, ad::Var x) const {
    x = ad::add(x, ws.p(name_ + ".pos"));
    for (int l = 0; l < cfg_.layers; ++l) {
        x = ad::add(x, self_attention(ws, ln1_[l](ws, x), l));
        x = ad::add(x, mlp_[l](ws, ln2_[l](ws, x)));
    }
    return ln_final_(ws, x);
}

ad::Var PatchBackbone::forward(nn::Workspace& ws, const ad::Var& image) const {
    if (image->val.ndim() != 3 || image->val.dim(0) != 3 ||
        image->val.dim(1) != cfg_.image_size || image->val.dim(2) != cfg_.image_size)
        throw std::invalid_argument("backbone: expected 3 x " + std::to_string(cfg_.image_size) +
                                    " x " + std::to_string(cfg_.image_size) + " image, got " +
                                    shape_str(image->val.shape()));
    ad::Var patches = ad::patches_from_image(image, cfg_.patch);
    return encoder(ws, embed_(ws, patches));
}

ad::Var PatchBackbone::forward_features(nn::Workspace& ws, const ad::Var& tokens) const {
    if (tokens->val.dim(0) != cfg_.tokens() || tokens->val.dim(1) != cfg_.channels)
        throw std::invalid_argument("backbone: cached features must be N x C");
    return encoder(ws, tokens);
}

}  // namespace forensim::backbone
