#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "forensim/mssa.hpp"
#include "helpers.hpp"

using namespace forensim;
using namespace forensim::mssa;

namespace {

MssaConfig tiny_cfg(int channels = 8) {
    MssaConfig cfg;
    cfg.channels = channels;
    cfg.heads_per_block = {1, 2, 4};
    cfg.mlp_ratio = 2.0;
    cfg.drop_path_rate = 0.0;
    cfg.map_channels = 4;
    return cfg;
}

/// Explicit N x N oracle for one attention head, mirroring the factored
/// kernel's eps placement (denominator sum + N*eps).
Tensor head_oracle(const Tensor& cb, const Tensor& rb, const Tensor& v, double eps) {
    const int n = cb.dim(0), d = cb.dim(1), c = v.dim(1);
    Tensor w({n, n});
    for (int k = 0; k < n; ++k)
        for (int j = 0; j < n; ++j) {
            double s = 0.0;
            for (int t = 0; t < d; ++t) s += cb.at(k, t) * rb.at(j, t);
            w.at(k, j) = s;
        }
    Tensor y({n, c});
    for (int k = 0; k < n; ++k) {
        double denom = n * eps;
        for (int j = 0; j < n; ++j) denom += w.at(k, j);
        for (int ch = 0; ch < c; ++ch) {
            double acc = 0.0;
            for (int j = 0; j < n; ++j) acc += w.at(k, j) * v.at(j, ch);
            y.at(k, ch) = acc / denom;
        }
    }
    return y;
}

}  // namespace

TEST_CASE("lepe") {
    Rng rng(61);
    nn::Conv2d conv{"lepe", 3, 3, 3, /*groups=*/3, /*bias=*/false};
    nn::ParamStore ps;
    conv.init_zero(ps);
    SUBCASE("identity kernel passes tokens through") {
        for (int c = 0; c < 3; ++c) ps.at("lepe.w").at(c, 0, 1, 1) = 1.0;
        nn::Workspace ws(ps);
        Tensor v = rng.normal_tensor({16, 3});
        ad::Var out = lepe(ws, conv, ad::constant(v));
        CHECK(max_abs_diff(out->val, v) < 1e-15);
    }
    SUBCASE("zero kernel gives zero") {
        nn::Workspace ws(ps);
        ad::Var out = lepe(ws, conv, ad::constant(rng.normal_tensor({16, 3})));
        for (std::size_t i = 0; i < out->val.size(); ++i) CHECK(out->val[i] == 0.0);
    }
    SUBCASE("random kernel equals the sliding-window loop on a 4x4 grid") {
        nn::ParamStore rps;
        conv.init(rps, rng);
        nn::Workspace ws(rps);
        Tensor v = rng.normal_tensor({16, 3});
        ad::Var out = lepe(ws, conv, ad::constant(v));
        const Tensor& w = rps.at("lepe.w");
        for (int c = 0; c < 3; ++c)
            for (int y = 0; y < 4; ++y)
                for (int x = 0; x < 4; ++x) {
                    double want = 0.0;
                    for (int ky = 0; ky < 3; ++ky)
                        for (int kx = 0; kx < 3; ++kx) {
                            int sy = y + ky - 1, sx = x + kx - 1;
                            if (sy < 0 || sy >= 4 || sx < 0 || sx >= 4) continue;
                            want += v.at(sy * 4 + sx, c) * w.at(c, 0, ky, kx);
                        }
                    CHECK(out->val.at(y * 4 + x, c) == doctest::Approx(want).epsilon(1e-12));
                }
    }
    SUBCASE("non-square token count is rejected") {
        nn::Workspace ws(ps);
        CHECK_THROWS_AS(lepe(ws, conv, ad::constant(Tensor({15, 3}, 0.0))), std::invalid_argument);
    }
}

TEST_CASE("mssa attention kernel") {
    Rng rng(62);
    SUBCASE("factored computation equals the explicit quadratic oracle") {
        // composition identical to the block's per-head kernel
        for (int n : {16, 64}) {
            for (int trial = 0; trial < 3; ++trial) {
                const int d = 6, c = 4;
                Tensor cb = rng.uniform_tensor({n, d}, 0.1, 2.0);
                Tensor rb = rng.uniform_tensor({n, d}, 0.1, 2.0);
                Tensor v = rng.normal_tensor({n, c});
                const double inv_sqrt_n = 1.0 / std::sqrt(static_cast<double>(n));
                ad::Var kv = ad::matmul(ad::transpose(ad::scale(ad::constant(rb), inv_sqrt_n)),
                                        ad::scale(ad::constant(v), inv_sqrt_n));
                ad::Var denom = ad::add_const(
                    ad::matmul(ad::constant(cb), ad::transpose(ad::mean_over_rows(ad::constant(rb)))),
                    1e-6);
                ad::Var y = ad::div_cols(ad::matmul(ad::constant(cb), kv), denom);
                Tensor want = head_oracle(cb, rb, v, 1e-6);
                CHECK(max_rel_diff(y->val, want, 1e-5) < 1e-5);
            }
        }
    }
    SUBCASE("single token is returned unchanged when mixing is identity") {
        MssaConfig cfg = tiny_cfg(4);
        cfg.heads_per_block = {1, 1, 1};
        MssaBlock block("b", cfg, 1);
        nn::ParamStore ps;
        Rng r2(99);
        block.init(ps, r2);
        // identity output mix, no positional bias
        ps.at("b.out.w").fill(0.0);
        for (int i = 0; i < 4; ++i) ps.at("b.out.w").at(i, i) = 1.0;
        ps.at("b.out.b").fill(0.0);
        ps.at("b.lepe.w").fill(0.0);
        nn::Workspace ws(ps);
        Tensor v = r2.normal_tensor({1, 4});
        ad::Var out = block.attention(ws, ad::constant(v));
        CHECK(max_rel_diff(out->val, v, 1e-5) < 1e-5);
    }
    SUBCASE("constant tokens produce a constant attention term") {
        MssaConfig cfg = tiny_cfg(8);
        MssaBlock block("b", cfg, 2);
        nn::ParamStore ps;
        Rng r2(77);
        block.init(ps, r2);
        ps.at("b.lepe.w").fill(0.0);
        nn::Workspace ws(ps);
        Tensor v({16, 8});
        for (int i = 0; i < 16; ++i)
            for (int c = 0; c < 8; ++c) v.at(i, c) = 0.3 * c - 1.0;
        ad::Var out = block.attention(ws, ad::constant(v));
        for (int i = 1; i < 16; ++i)
            for (int c = 0; c < 8; ++c)
                CHECK(out->val.at(i, c) == doctest::Approx(out->val.at(0, c)).epsilon(1e-9));
    }
    SUBCASE("with rotation disabled the implied weights are a convex combination") {
        const int n = 16, d = 4;
        Tensor cb = forensim::testing::random_positive_features(rng, n, d);
        Tensor rb = forensim::testing::random_positive_features(rng, n, d);
        Tensor w({n, n});
        for (int k = 0; k < n; ++k) {
            double sum = 0.0;
            for (int j = 0; j < n; ++j) {
                double s = 0.0;
                for (int t = 0; t < d; ++t) s += cb.at(k, t) * rb.at(j, t);
                CHECK(s > 0.0);
                w.at(k, j) = s;
                sum += s;
            }
            double total = 0.0;
            for (int j = 0; j < n; ++j) total += w.at(k, j) / (sum + n * 1e-6);
            CHECK(total == doctest::Approx(1.0).epsilon(1e-4));
        }
    }
}

TEST_CASE("mssa block") {
    Rng rng(63);
    SUBCASE("zeroed residual branches and CPE reduce to the identity") {
        MssaConfig cfg = tiny_cfg(8);
        MssaBlock block("b", cfg, 2);
        nn::ParamStore ps;
        block.init(ps, rng);
        ps.at("b.cpe.w").fill(0.0);
        ps.at("b.out.w").fill(0.0);
        ps.at("b.out.b").fill(0.0);
        ps.at("b.mlp.fc2.w").fill(0.0);
        ps.at("b.mlp.fc2.b").fill(0.0);
        nn::Workspace ws(ps);
        Tensor v = rng.normal_tensor({16, 8});
        ad::Var out = block.forward(ws, ad::constant(v));
        CHECK(max_abs_diff(out->val, v) < 1e-15);
    }
    SUBCASE("shape is preserved for every valid config") {
        for (int heads : {1, 2, 4}) {
            MssaConfig cfg = tiny_cfg(8);
            MssaBlock block("b", cfg, heads);
            nn::ParamStore ps;
            block.init(ps, rng);
            nn::Workspace ws(ps);
            ad::Var out = block.forward(ws, ad::constant(rng.normal_tensor({16, 8})));
            CHECK(out->val.dim(0) == 16);
            CHECK(out->val.dim(1) == 8);
        }
    }
    SUBCASE("drop-path at rate 0 and at eval time is the identity on the branch") {
        nn::ParamStore ps;
        nn::Workspace train_ws(ps, /*train=*/true, /*seed=*/3);
        nn::Workspace eval_ws(ps, /*train=*/false, /*seed=*/3);
        ad::Var b = ad::constant(Tensor({2, 2}, 1.5));
        CHECK(max_abs_diff(nn::drop_path(train_ws, b, 0.0)->val, b->val) == 0.0);
        CHECK(max_abs_diff(nn::drop_path(eval_ws, b, 0.9)->val, b->val) == 0.0);
        // at rate>0 in training the branch is either dropped or rescaled
        ad::Var d = nn::drop_path(train_ws, b, 0.5);
        const double got = d->val[0];
        CHECK((got == 0.0 || got == doctest::Approx(3.0)));
    }
    SUBCASE("gradient of mean output w.r.t. input") {
        MssaConfig cfg = tiny_cfg(4);
        cfg.mlp_ratio = 2.0;
        MssaBlock block("b", cfg, 2);
        nn::ParamStore ps;
        block.init(ps, rng);
        Tensor v = rng.normal_tensor({4, 4});
        double err = core::finite_diff_check_var(
            [&](const std::vector<ad::Var>& vs) {
                nn::Workspace ws(ps);
                // reuse the same parameter leaves but differentiate the input
                return ad::mean_all(block.forward(ws, vs[0]));
            },
            {v}, 1e-4);
        CHECK(err < 1e-4);
    }
}

TEST_CASE("mssa module map") {
    Rng rng(64);
    SUBCASE("identical blocks average to a single block's output") {
        MssaConfig cfg = tiny_cfg(8);
        cfg.heads_per_block = {2, 2, 2};
        MssaModule mod("m", cfg);
        nn::ParamStore ps;
        mod.init(ps, rng);
        // share block0's weights across all three blocks
        for (const auto& [name, value] : ps.all()) {
            if (name.rfind("m.block0.", 0) == 0) {
                ps.at("m.block1." + name.substr(9)) = value;
                ps.at("m.block2." + name.substr(9)) = value;
            }
        }
        Tensor v = rng.normal_tensor({16, 8});
        nn::Workspace ws(ps);
        ad::Var map = mod.forward(ws, ad::constant(v));
        nn::Workspace ws2(ps);
        ad::Var single = mod.block(0).forward(ws2, ad::constant(v));
        ad::Var single_map = ad::silu(nn::Conv2d{"m.map_conv", 8, 4, 3}(ws2, ad::grid_from_tokens(single)));
        CHECK(max_abs_diff(map->val, single_map->val) < 1e-12);
    }
    SUBCASE("map spatial size tracks the token grid") {
        for (int n : {16, 64, 256}) {
            MssaConfig cfg = tiny_cfg(8);
            MssaModule mod("m", cfg);
            nn::ParamStore ps;
            mod.init(ps, rng);
            nn::Workspace ws(ps);
            ad::Var map = mod.forward(ws, ad::constant(rng.normal_tensor({n, 8})));
            const int g = static_cast<int>(std::lround(std::sqrt(static_cast<double>(n))));
            CHECK(map->val.dim(0) == 4);
            CHECK(map->val.dim(1) == g);
            CHECK(map->val.dim(2) == g);
        }
    }
}
