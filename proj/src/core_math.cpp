#include "forensim/core_math.hpp"

#include <Eigen/Dense>
#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <stdexcept>

namespace forensim::core {

namespace {

Eigen::MatrixXd to_eigen(const Tensor& t) {
    Eigen::MatrixXd m(t.dim(0), t.dim(1));
    for (int i = 0; i < t.dim(0); ++i)
        for (int j = 0; j < t.dim(1); ++j) m(i, j) = t.at(i, j);
    return m;
}

Tensor from_eigen(const Eigen::MatrixXd& m) {
    Tensor t({static_cast<int>(m.rows()), static_cast<int>(m.cols())});
    for (int i = 0; i < m.rows(); ++i)
        for (int j = 0; j < m.cols(); ++j) t.at(i, j) = m(i, j);
    return t;
}

}  // namespace

std::pair<Tensor, Tensor> ssm_discretize(const SsmParams& params, double taylor_threshold) {
    check_finite(params.a, "ssm_discretize A");
    check_finite(params.b, "ssm_discretize B");
    if (!std::isfinite(params.delta) || params.delta <= 0.0)
        throw std::invalid_argument("ssm_discretize: delta must be positive and finite");
    if (params.a.ndim() != 2 || params.a.dim(0) != params.a.dim(1))
        throw std::invalid_argument("ssm_discretize: A must be square");
    if (params.b.ndim() != 2 || params.b.dim(0) != params.a.dim(0))
        throw std::invalid_argument("ssm_discretize: B rows must match A");

    const Eigen::MatrixXd a = to_eigen(params.a);
    const Eigen::MatrixXd b = to_eigen(params.b);
    const Eigen::MatrixXd da = params.delta * a;
    const Eigen::MatrixXd abar = da.exp();

    const double inf_norm = da.cwiseAbs().rowwise().sum().maxCoeff();
    Eigen::FullPivLU<Eigen::MatrixXd> lu(da);
    Eigen::MatrixXd bbar;
    if (!lu.isInvertible() || inf_norm < taylor_threshold) {
        bbar = params.delta * b;
    } else {
        const int n = static_cast<int>(a.rows());
        bbar = lu.solve((abar - Eigen::MatrixXd::Identity(n, n)) * (params.delta * b));
    }
    return {from_eigen(abar), from_eigen(bbar)};
}

Tensor ssm_scan(const Tensor& abar, const Tensor& bbar, const Tensor& cbar, const Tensor& dbar,
                const Tensor& xs) {
    const int n = abar.dim(0);
    if (abar.dim(1) != n) throw std::invalid_argument("ssm_scan: Abar must be square");
    const int m = bbar.dim(1);
    const int p = cbar.dim(0);
    if (bbar.dim(0) != n || cbar.dim(1) != n)
        throw std::invalid_argument("ssm_scan: inconsistent shapes");
    const int L = xs.ndim() == 0 ? 0 : xs.dim(0);
    if (L > 0 && xs.dim(1) != m) throw std::invalid_argument("ssm_scan: xs columns must match Bbar");
    const bool scalar_d = dbar.size() == 1;
    if (!scalar_d && (dbar.dim(0) != p || dbar.dim(1) != m))
        throw std::invalid_argument("ssm_scan: Dbar must be p x m or scalar");
    if (scalar_d && p != m && dbar[0] != 0.0)
        throw std::invalid_argument("ssm_scan: scalar Dbar requires p == m");

    Tensor ys({L, p});
    if (L == 0) return ys;
    const Eigen::MatrixXd A = to_eigen(abar), B = to_eigen(bbar), Cm = to_eigen(cbar);
    Eigen::VectorXd h = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd xk(m);
    for (int k = 0; k < L; ++k) {
        for (int j = 0; j < m; ++j) xk(j) = xs.at(k, j);
        h = A * h + B * xk;
        Eigen::VectorXd yk = Cm * h;
        for (int i = 0; i < p; ++i) {
            double res = 0.0;
            if (scalar_d) {
                if (p == m) res = dbar[0] * xk(i);
            } else {
                for (int j = 0; j < m; ++j) res += dbar.at(i, j) * xk(j);
            }
            ys.at(k, i) = yk(i) + res;
        }
    }
    return ys;
}

ad::Var normalized_linear_attention(const ad::Var& cb, const ad::Var& bb, const ad::Var& x,
                                    double d_residual, bool causal, double eps) {
    if (causal) return ad::causal_normalized_attention(cb, bb, x, d_residual, eps);
    // non-causal: one d x C summary plus per-query normalization
    ad::Var num = ad::matmul(cb, ad::matmul(ad::transpose(bb), x));
    ad::Var colsums = ad::scale(ad::mean_over_rows(bb), static_cast<double>(bb->val.dim(0)));
    ad::Var denom = ad::add_const(ad::matmul(cb, ad::transpose(colsums)), eps);
    for (int i = 0; i < denom->val.dim(0); ++i)
        if (denom->val.at(i, 0) <= eps)
            throw std::domain_error("normalized_linear_attention: nonpositive denominator");
    ad::Var y = ad::div_cols(num, denom);
    if (d_residual != 0.0) y = ad::add(y, ad::scale(x, d_residual));
    return y;
}

Tensor normalized_linear_attention(const Tensor& cb, const Tensor& bb, const Tensor& x,
                                   double d_residual, bool causal, double eps) {
    return normalized_linear_attention(ad::constant(cb), ad::constant(bb), ad::constant(x),
                                       d_residual, causal, eps)
        ->val;
}

Tensor rope_apply(const Tensor& x, const std::vector<int>& positions, double base) {
    return ad::rope(ad::constant(x), positions, base)->val;
}

ad::Var rope_partial(const ad::Var& x, const std::vector<int>& positions, double fraction,
                     double base) {
    const int d = x->val.dim(1);
    if (d % 2 != 0) throw std::invalid_argument("rope_partial: channel count must be even");
    if (fraction < 0.0 || fraction > 1.0)
        throw std::invalid_argument("rope_partial: fraction must be in [0,1]");
    if (fraction == 0.0) return x;
    int pairs = std::max(1, static_cast<int>(std::lround(fraction * d / 2.0)));
    if (2 * pairs >= d) return ad::rope(x, positions, base);
    ad::Var rotated = ad::rope(ad::slice_cols(x, 0, 2 * pairs), positions, base);
    return ad::concat_cols(rotated, ad::slice_cols(x, 2 * pairs, d));
}

ad::Var positive_feature_map(const ad::Var& x, const ad::Var& w, const ad::Var& b) {
    return ad::add_const(ad::elu(ad::add_row_bias(ad::matmul(x, w), b)), 1.0);
}

Tensor positive_feature_map(const Tensor& x, const Tensor& w, const Tensor& b) {
    return positive_feature_map(ad::constant(x), ad::constant(w), ad::constant(b))->val;
}

double finite_diff_check(const std::function<double(const std::vector<double>&)>& fn,
                         const std::vector<double>& point, const std::vector<double>& analytic,
                         double step) {
    if (point.size() != analytic.size())
        throw std::invalid_argument("finite_diff_check: gradient size mismatch");
    std::vector<double> p = point;
    double worst = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double orig = p[i];
        p[i] = orig + step;
        const double fp = fn(p);
        p[i] = orig - step;
        const double fm = fn(p);
        p[i] = orig;
        if (!std::isfinite(fp) || !std::isfinite(fm))
            throw std::runtime_error("finite_diff_check: non-finite function value");
        const double fd = (fp - fm) / (2.0 * step);
        const double err = std::abs(analytic[i] - fd) / (std::abs(analytic[i]) + 1e-8);
        worst = std::max(worst, err);
    }
    return worst;
}

double finite_diff_check_var(
    const std::function<ad::Var(const std::vector<ad::Var>&)>& make_loss,
    const std::vector<Tensor>& points, double step) {
    // flatten all inputs into one coordinate vector
    std::vector<double> flat;
    for (const auto& t : points)
        for (std::size_t i = 0; i < t.size(); ++i) flat.push_back(t[i]);

    auto rebuild = [&](const std::vector<double>& coords) {
        std::vector<ad::Var> vars;
        std::size_t off = 0;
        for (const auto& t : points) {
            Tensor c = t;
            for (std::size_t i = 0; i < c.size(); ++i) c[i] = coords[off + i];
            off += c.size();
            vars.push_back(ad::leaf(std::move(c)));
        }
        return vars;
    };

    auto vars = rebuild(flat);
    ad::Var loss = make_loss(vars);
    if (loss->val.size() != 1) throw std::invalid_argument("finite_diff_check_var: loss must be scalar");
    ad::backward(loss);
    std::vector<double> analytic;
    for (const auto& v : vars) {
        const Tensor& g = v->grad.size() == v->val.size() ? v->grad : zeros_like(v->val);
        for (std::size_t i = 0; i < g.size(); ++i) analytic.push_back(g[i]);
    }

    auto fn = [&](const std::vector<double>& coords) {
        auto vs = rebuild(coords);
        return make_loss(vs)->val[0];
    };
    return finite_diff_check(fn, flat, analytic, step);
}

}  // namespace forensim::core
