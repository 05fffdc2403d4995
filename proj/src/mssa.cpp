#include "forensim/mssa.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

namespace forensim::mssa {

ad::Var lepe(nn::Workspace& ws, const nn::Conv2d& conv, const ad::Var& v) {
    const int n = v->val.dim(0);
    const int g = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
    if (g * g != n) throw std::invalid_argument("lepe: token count must be a perfect square");
    return ad::tokens_from_grid(conv(ws, ad::grid_from_tokens(v)));
}

MssaBlock::MssaBlock(std::string name, const MssaConfig& cfg, int heads)
    : name_(std::move(name)), cfg_(cfg), heads_(heads) {
    const int c = cfg_.channels;
    if (c % heads_ != 0) throw std::invalid_argument("mssa: channels not divisible by heads");
    if ((c / heads_) % 2 != 0) throw std::invalid_argument("mssa: head width must be even");
    cpe_ = nn::Conv2d{name_ + ".cpe", c, c, 3, /*groups=*/c, /*bias=*/false};
    lepe_ = nn::Conv2d{name_ + ".lepe", c, c, 3, /*groups=*/c, /*bias=*/false};
    ln1_ = nn::LayerNorm{name_ + ".ln1", c};
    ln2_ = nn::LayerNorm{name_ + ".ln2", c};
    proj_c_ = nn::Linear{name_ + ".proj_c", c, c};
    proj_b_ = nn::Linear{name_ + ".proj_b", c, c};
    out_ = nn::Linear{name_ + ".out", c, c};
    mlp_ = nn::Mlp{name_ + ".mlp", c, cfg_.mlp_ratio};
}

void MssaBlock::init(nn::ParamStore& ps, Rng& rng) const {
    cpe_.init(ps, rng);
    lepe_.init(ps, rng);
    ln1_.init(ps);
    ln2_.init(ps);
    proj_c_.init(ps, rng);
    proj_b_.init(ps, rng);
    out_.init(ps, rng);
    mlp_.init(ps, rng);
}

ad::Var MssaBlock::attention(nn::Workspace& ws, const ad::Var& v) const {
    const int n = v->val.dim(0), c = v->val.dim(1);
    if (c != cfg_.channels) throw std::invalid_argument("mssa attention: channel mismatch");
    const int hw = c / heads_;
    std::vector<int> positions(n);
    std::iota(positions.begin(), positions.end(), 0);
    const double inv_sqrt_n = 1.0 / std::sqrt(static_cast<double>(n));

    ad::Var cb = ad::add_const(ad::elu(proj_c_(ws, v)), 1.0);
    ad::Var bb = ad::add_const(ad::elu(proj_b_(ws, v)), 1.0);

    ad::Var merged;
    for (int h = 0; h < heads_; ++h) {
        ad::Var cb_h = ad::slice_cols(cb, h * hw, (h + 1) * hw);
        ad::Var bb_h = ad::slice_cols(bb, h * hw, (h + 1) * hw);
        ad::Var v_h = ad::slice_cols(v, h * hw, (h + 1) * hw);
        ad::Var rb_h = core::rope_partial(bb_h, positions, cfg_.rope_fraction, cfg_.rope_base);
        // factored aggregation; both factors carry N^-1/2 so the kernel and
        // its normalizer share one scale
        ad::Var kv = ad::matmul(ad::transpose(ad::scale(rb_h, inv_sqrt_n)),
                                ad::scale(v_h, inv_sqrt_n));          // hw x hw
        ad::Var key_mean = ad::mean_over_rows(rb_h);                  // 1 x hw
        ad::Var denom = ad::add_const(ad::matmul(cb_h, ad::transpose(key_mean)), cfg_.eps);
        ad::Var y_h = ad::div_cols(ad::matmul(cb_h, kv), denom);
        merged = merged ? ad::concat_cols(merged, y_h) : y_h;
    }
    merged = ad::add(merged, lepe(ws, lepe_, v));
    return out_(ws, merged);
}

ad::Var MssaBlock::forward(nn::Workspace& ws, const ad::Var& v) const {
    ad::Var x = ad::add(v, ad::tokens_from_grid(cpe_(ws, ad::grid_from_tokens(v))));
    ad::Var a = attention(ws, ln1_(ws, x));
    x = ad::add(x, nn::drop_path(ws, a, cfg_.drop_path_rate));
    ad::Var m = mlp_(ws, ln2_(ws, x));
    return ad::add(x, nn::drop_path(ws, m, cfg_.drop_path_rate));
}

MssaModule::MssaModule(std::string name, MssaConfig cfg) : name_(std::move(name)), cfg_(cfg) {
    for (int i = 0; i < 3; ++i)
        blocks_.emplace_back(name_ + ".block" + std::to_string(i), cfg_, cfg_.heads_per_block[i]);
    head_conv_ = nn::Conv2d{name_ + ".map_conv", cfg_.channels, cfg_.map_channels, 3};
}

void MssaModule::init(nn::ParamStore& ps, Rng& rng) const {
    for (const auto& b : blocks_) b.init(ps, rng);
    head_conv_.init(ps, rng);
}

ad::Var MssaModule::forward(nn::Workspace& ws, const ad::Var& v) const {
    ad::Var avg;
    for (const auto& b : blocks_) {
        ad::Var o = b.forward(ws, v);
        avg = avg ? ad::add(avg, o) : o;
    }
    avg = ad::scale(avg, 1.0 / 3.0);
    return ad::silu(head_conv_(ws, ad::grid_from_tokens(avg)));
}

}  // namespace forensim::mssa
