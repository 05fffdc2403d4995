#pragma once

#include <map>
#include <string>

#include "forensim/autodiff.hpp"
#include "forensim/rng.hpp"
#include "forensim/tensor.hpp"

namespace forensim::nn {

/// Named parameter tensors. Values are written by init and the optimizer
/// only; forward passes read them through per-pass leaves so concurrent
/// inference stays race-free.
class ParamStore {
public:
    Tensor& add(const std::string& name, Tensor init);
    const Tensor& at(const std::string& name) const;
    Tensor& at(const std::string& name);
    bool has(const std::string& name) const { return values_.count(name) > 0; }
    const std::map<std::string, Tensor>& all() const { return values_; }
    std::map<std::string, Tensor>& all() { return values_; }

private:
    std::map<std::string, Tensor> values_;
};

/// Per-forward-pass context: owns the leaves created for each parameter so
/// their gradients can be read back by name after backward().
struct Workspace {
    const ParamStore* params = nullptr;
    bool training = false;
    Rng rng{0};  // drop-path and any other stochastic regularizer draws

    std::map<std::string, ad::Var> leaves;

    explicit Workspace(const ParamStore& p, bool train = false, std::uint64_t seed = 0)
        : params(&p), training(train), rng(seed) {}

    ad::Var p(const std::string& name);
};

struct Linear {
    std::string name;
    int in = 0, out = 0;
    bool bias = true;

    void init(ParamStore& ps, Rng& rng) const;
    void init_zero(ParamStore& ps) const;
    /// Identity-like init (truncated identity when in != out) plus optional noise.
    void init_identity(ParamStore& ps, Rng& rng, double noise = 0.0) const;
    ad::Var operator()(Workspace& ws, const ad::Var& x) const;
};

struct Conv2d {
    std::string name;
    int cin = 0, cout = 0, k = 3;
    int groups = 1;
    bool bias = true;

    void init(ParamStore& ps, Rng& rng) const;
    void init_zero(ParamStore& ps) const;
    ad::Var operator()(Workspace& ws, const ad::Var& x) const;
};

struct LayerNorm {
    std::string name;
    int dim = 0;

    void init(ParamStore& ps) const;
    ad::Var operator()(Workspace& ws, const ad::Var& x) const;
};

/// Two affine layers with SiLU, hidden = ratio * dim.
struct Mlp {
    std::string name;
    int dim = 0;
    double ratio = 4.0;

    void init(ParamStore& ps, Rng& rng) const;
    ad::Var operator()(Workspace& ws, const ad::Var& x) const;
};

/// Stochastic depth on a residual branch. Identity at eval time or rate 0;
/// during training drops the branch with probability `rate` and rescales
/// survivors by 1/(1-rate).
ad::Var drop_path(Workspace& ws, const ad::Var& branch, double rate);

}  // namespace forensim::nn
