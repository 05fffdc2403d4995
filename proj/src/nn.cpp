#include "forensim/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace forensim::nn {

Tensor& ParamStore::add(const std::string& name, Tensor init) {
    auto [it, inserted] = values_.emplace(name, std::move(init));
    if (!inserted) throw std::invalid_argument("parameter already registered: " + name);
    return it->second;
}

const Tensor& ParamStore::at(const std::string& name) const {
    auto it = values_.find(name);
    if (it == values_.end()) throw std::out_of_range("unknown parameter: " + name);
    return it->second;
}

Tensor& ParamStore::at(const std::string& name) {
    auto it = values_.find(name);
    if (it == values_.end()) throw std::out_of_range("unknown parameter: " + name);
    return it->second;
}

ad::Var Workspace::p(const std::string& name) {
    auto it = leaves.find(name);
    if (it != leaves.end()) return it->second;
    ad::Var v = ad::leaf(params->at(name));
    leaves.emplace(name, v);
    return v;
}

void Linear::init(ParamStore& ps, Rng& rng) const {
    const double s = std::sqrt(2.0 / (in + out));
    ps.add(name + ".w", rng.normal_tensor({in, out}, 0.0, s));
    if (bias) ps.add(name + ".b", Tensor({1, out}));
}

void Linear::init_zero(ParamStore& ps) const {
    ps.add(name + ".w", Tensor({in, out}));
    if (bias) ps.add(name + ".b", Tensor({1, out}));
}

void Linear::init_identity(ParamStore& ps, Rng& rng, double noise) const {
    Tensor w({in, out});
    for (int i = 0; i < std::min(in, out); ++i) w.at(i, i) = 1.0;
    if (noise > 0.0)
        for (std::size_t i = 0; i < w.size(); ++i) w[i] += rng.normal(0.0, noise);
    ps.add(name + ".w", std::move(w));
    if (bias) ps.add(name + ".b", Tensor({1, out}));
}

ad::Var Linear::operator()(Workspace& ws, const ad::Var& x) const {
    ad::Var y = ad::matmul(x, ws.p(name + ".w"));
    if (bias) y = ad::add_row_bias(y, ws.p(name + ".b"));
    return y;
}

void Conv2d::init(ParamStore& ps, Rng& rng) const {
    const int fan_in = (cin / groups) * k * k;
    const double s = std::sqrt(2.0 / fan_in);
    ps.add(name + ".w", rng.normal_tensor({cout, cin / groups, k, k}, 0.0, s));
    if (bias) ps.add(name + ".b", Tensor({cout}));
}

void Conv2d::init_zero(ParamStore& ps) const {
    ps.add(name + ".w", Tensor({cout, cin / groups, k, k}));
    if (bias) ps.add(name + ".b", Tensor({cout}));
}

ad::Var Conv2d::operator()(Workspace& ws, const ad::Var& x) const {
    return ad::conv2d(x, ws.p(name + ".w"), bias ? ws.p(name + ".b") : nullptr, groups);
}

void LayerNorm::init(ParamStore& ps) const {
    ps.add(name + ".g", Tensor({dim}, 1.0));
    ps.add(name + ".b", Tensor({dim}));
}

ad::Var LayerNorm::operator()(Workspace& ws, const ad::Var& x) const {
    return ad::layer_norm_rows(x, ws.p(name + ".g"), ws.p(name + ".b"));
}

void Mlp::init(ParamStore& ps, Rng& rng) const {
    const int hidden = static_cast<int>(dim * ratio);
    Linear{name + ".fc1", dim, hidden}.init(ps, rng);
    Linear{name + ".fc2", hidden, dim}.init(ps, rng);
}

ad::Var Mlp::operator()(Workspace& ws, const ad::Var& x) const {
    const int hidden = static_cast<int>(dim * ratio);
    ad::Var h = Linear{name + ".fc1", dim, hidden}(ws, x);
    return Linear{name + ".fc2", hidden, dim}(ws, ad::silu(h));
}

ad::Var drop_path(Workspace& ws, const ad::Var& branch, double rate) {
    if (!ws.training || rate <= 0.0) return branch;
    if (rate >= 1.0) throw std::invalid_argument("drop_path: rate must be < 1");
    const bool keep = !ws.rng.bernoulli(rate);
    return ad::scale(branch, keep ? 1.0 / (1.0 - rate) : 0.0);
}

}  // namespace forensim::nn
