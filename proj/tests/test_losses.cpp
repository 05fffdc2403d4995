#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "forensim/core_math.hpp"
#include "forensim/losses.hpp"
#include "helpers.hpp"

using namespace forensim;
using namespace forensim::losses;

namespace {

Tensor logits_for_probs(const std::vector<std::array<double, 3>>& pixel_probs, int h, int w) {
    Tensor logits({3, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c)
                logits.at(c, y, x) = std::log(pixel_probs[static_cast<std::size_t>(y * w + x)]
                                                         [static_cast<std::size_t>(c)]);
    return logits;
}

}  // namespace

TEST_CASE("ce_loss") {
    SUBCASE("perfect one-hot prediction gives zero") {
        Tensor logits({3, 2, 2});
        Tensor labels({2, 2});
        labels.at(0, 1) = 1.0;
        labels.at(1, 0) = 2.0;
        for (int y = 0; y < 2; ++y)
            for (int x = 0; x < 2; ++x) logits.at(static_cast<int>(labels.at(y, x)), y, x) = 60.0;
        ad::Var loss = ce_loss(ad::constant(logits), labels);
        CHECK(loss->val[0] == doctest::Approx(0.0).epsilon(1e-9));
    }
    SUBCASE("uniform prediction costs ln 3 per pixel") {
        Tensor logits({3, 4, 4});  // all zeros: uniform softmax
        Tensor labels({4, 4});
        ad::Var loss = ce_loss(ad::constant(logits), labels);
        CHECK(loss->val[0] == doctest::Approx(std::log(3.0)).epsilon(1e-6));
    }
    SUBCASE("two-pixel case matches a hand computation") {
        // pixel 0: true class 0 with p=(0.7,0.2,0.1); pixel 1: true class 2 with p=(0.1,0.3,0.6)
        Tensor logits = logits_for_probs({{0.7, 0.2, 0.1}, {0.1, 0.3, 0.6}}, 1, 2);
        Tensor labels({1, 2});
        labels.at(0, 1) = 2.0;
        ad::Var loss = ce_loss(ad::constant(logits), labels);
        const double want = -(std::log(0.7) + std::log(0.6)) / 2.0;
        CHECK(loss->val[0] == doctest::Approx(want).epsilon(1e-7));
    }
    SUBCASE("per-class weights reweight pixels") {
        Tensor logits = logits_for_probs({{0.7, 0.2, 0.1}, {0.1, 0.3, 0.6}}, 1, 2);
        Tensor labels({1, 2});
        labels.at(0, 1) = 2.0;
        ad::Var loss = ce_loss(ad::constant(logits), labels, {1.0, 1.0, 3.0});
        const double want = -(1.0 * std::log(0.7) + 3.0 * std::log(0.6)) / 4.0;
        CHECK(loss->val[0] == doctest::Approx(want).epsilon(1e-7));
    }
    SUBCASE("label out of range is rejected") {
        Tensor logits({3, 1, 1});
        Tensor labels({1, 1}, 3.0);
        CHECK_THROWS_AS(ce_loss(ad::constant(logits), labels), std::invalid_argument);
    }
    SUBCASE("gradient check") {
        Rng rng(81);
        Tensor logits = rng.normal_tensor({3, 2, 2});
        Tensor labels({2, 2});
        labels.at(0, 0) = 1.0;
        labels.at(1, 1) = 2.0;
        double err = core::finite_diff_check_var(
            [&](const std::vector<ad::Var>& vs) { return ce_loss(vs[0], labels); }, {logits});
        CHECK(err < 1e-4);
    }
}

TEST_CASE("infonce_loss") {
    SUBCASE("single positive with two orthogonal negatives at tau=1") {
        Tensor a = Tensor::from({1, 3}, {1.0, 0.0, 0.0});
        Tensor p = Tensor::from({1, 3}, {1.0, 0.0, 0.0});
        Tensor n = Tensor::from({2, 3}, {0.0, 1.0, 0.0, 0.0, 0.0, 1.0});
        ad::Var loss = infonce_loss(ad::constant(a), ad::constant(p), ad::constant(n), 1.0);
        CHECK(loss->val[0] == doctest::Approx(std::log(1.0 + 2.0 / std::exp(1.0))).epsilon(1e-9));
        CHECK(loss->val[0] == doctest::Approx(0.5514).epsilon(1e-3));
    }
    SUBCASE("uniform similarities give ln(M+1)") {
        const int m_neg = 7;
        Tensor a = Tensor::from({1, 2}, {0.6, 0.8});
        Tensor p = a;
        Tensor n({m_neg, 2});
        for (int i = 0; i < m_neg; ++i) {
            n.at(i, 0) = 0.6;
            n.at(i, 1) = 0.8;
        }
        ad::Var loss = infonce_loss(ad::constant(a), ad::constant(p), ad::constant(n), 0.5);
        CHECK(loss->val[0] == doctest::Approx(std::log(m_neg + 1.0)).epsilon(1e-9));
    }
    SUBCASE("dominant positive drives the loss to zero") {
        Tensor a = Tensor::from({1, 1}, {40.0});
        Tensor p = Tensor::from({1, 1}, {1.0});
        Tensor n = Tensor::from({2, 1}, {0.0, 0.0});
        ad::Var loss = infonce_loss(ad::constant(a), ad::constant(p), ad::constant(n), 1.0);
        CHECK(loss->val[0] == doctest::Approx(0.0).epsilon(1e-9));
    }
    SUBCASE("appending a duplicate negative adds exactly ln((S+e^s)/S)") {
        Rng rng(82);
        Tensor a = rng.normal_tensor({1, 4});
        Tensor p = rng.normal_tensor({1, 4});
        Tensor n = rng.normal_tensor({3, 4});
        const double tau = 0.7;
        ad::Var before = infonce_loss(ad::constant(a), ad::constant(p), ad::constant(n), tau);
        Tensor n2({4, 4});
        for (int j = 0; j < 4; ++j) {
            for (int i = 0; i < 3; ++i) n2.at(i, j) = n.at(i, j);
            n2.at(3, j) = n.at(2, j);  // duplicate the last negative
        }
        ad::Var after = infonce_loss(ad::constant(a), ad::constant(p), ad::constant(n2), tau);
        double s_pos = 0.0, s_dup = 0.0;
        std::vector<double> s_neg(3);
        for (int j = 0; j < 4; ++j) s_pos += a.at(0, j) * p.at(0, j);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 4; ++j) s_neg[static_cast<std::size_t>(i)] += a.at(0, j) * n.at(i, j);
        s_dup = s_neg[2];
        double S = std::exp(s_pos / tau);
        for (double s : s_neg) S += std::exp(s / tau);
        const double want = std::log((S + std::exp(s_dup / tau)) / S);
        CHECK(after->val[0] - before->val[0] == doctest::Approx(want).epsilon(1e-9));
    }
    SUBCASE("empty anchors are rejected") {
        CHECK_THROWS_AS(infonce_loss(ad::constant(Tensor({0, 2})), ad::constant(Tensor({0, 2})),
                                     ad::constant(Tensor({2, 2}, 1.0)), 1.0),
                        std::invalid_argument);
    }
    SUBCASE("gradient check") {
        Rng rng(83);
        Tensor a = rng.normal_tensor({3, 4});
        Tensor p = rng.normal_tensor({3, 4});
        Tensor n = rng.normal_tensor({5, 4});
        double err = core::finite_diff_check_var(
            [](const std::vector<ad::Var>& vs) { return infonce_loss(vs[0], vs[1], vs[2], 0.7); },
            {a, p, n});
        CHECK(err < 1e-4);
    }
}

TEST_CASE("dice_loss") {
    SUBCASE("perfect match on a large mask is nearly zero") {
        const int side = 40;  // 1600 pixels, several hundred in each class
        Tensor probs({3, side, side});
        Tensor labels({side, side});
        for (int y = 0; y < side; ++y)
            for (int x = 0; x < side; ++x) {
                int c = y < side / 3 ? 0 : (y < 2 * side / 3 ? 1 : 2);
                labels.at(y, x) = c;
                probs.at(c, y, x) = 1.0;
            }
        ad::Var loss = dice_loss(ad::constant(probs), labels);
        CHECK(loss->val[0] >= 0.0);
        CHECK(loss->val[0] < 1e-3);
    }
    SUBCASE("disjoint equal-area prediction and truth, A=1000") {
        // 2000-wide single row; gt target occupies first 1000, prediction the rest
        Tensor probs({3, 1, 2000});
        Tensor labels({1, 2000});
        for (int x = 0; x < 2000; ++x) {
            labels.at(0, x) = x < 1000 ? 2.0 : 0.0;
            probs.at(2, 0, x) = x >= 1000 ? 1.0 : 0.0;
            probs.at(0, 0, x) = x >= 1000 ? 0.0 : 1.0;
        }
        ad::Var loss = dice_loss(ad::constant(probs), labels);
        // source class is empty-empty (perfect, 0); target term is 1 - 1/2001
        const double target_term = 1.0 - 1.0 / 2001.0;
        CHECK(loss->val[0] == doctest::Approx(target_term / 2.0).epsilon(1e-9));
        CHECK(target_term == doctest::Approx(0.999).epsilon(1e-3));
    }
    SUBCASE("empty prediction and truth is perfect under smoothing") {
        Tensor probs({3, 4, 4});
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 4; ++x) probs.at(0, y, x) = 1.0;
        Tensor labels({4, 4});
        ad::Var loss = dice_loss(ad::constant(probs), labels);
        CHECK(loss->val[0] == doctest::Approx(0.0));
    }
    SUBCASE("gradient check") {
        Rng rng(84);
        Tensor logits = rng.normal_tensor({3, 3, 3});
        Tensor labels({3, 3});
        labels.at(0, 0) = 1.0;
        labels.at(2, 2) = 2.0;
        double err = core::finite_diff_check_var(
            [&](const std::vector<ad::Var>& vs) {
                return dice_loss(ad::softmax_channels(vs[0]), labels);
            },
            {logits});
        CHECK(err < 1e-4);
    }
}

TEST_CASE("focal_loss") {
    SUBCASE("certain prediction costs nothing") {
        Tensor probs({3, 1, 1});
        probs.at(1, 0, 0) = 1.0;
        Tensor labels({1, 1}, 1.0);
        ad::Var loss = focal_loss(ad::constant(probs), labels);
        CHECK(loss->val[0] == doctest::Approx(0.0));
    }
    SUBCASE("p_t = 0.5 with paper defaults") {
        Tensor probs({3, 1, 1});
        probs.at(0, 0, 0) = 0.5;
        probs.at(1, 0, 0) = 0.3;
        probs.at(2, 0, 0) = 0.2;
        Tensor labels({1, 1}, 0.0);
        ad::Var loss = focal_loss(ad::constant(probs), labels, 0.25, 2.0);
        CHECK(loss->val[0] == doctest::Approx(0.25 * 0.25 * std::log(2.0)).epsilon(1e-9));
        CHECK(loss->val[0] == doctest::Approx(0.043322).epsilon(1e-4));
    }
    SUBCASE("gamma=0, alpha=1 reduces to cross-entropy") {
        Rng rng(85);
        Tensor logits = rng.normal_tensor({3, 4, 4});
        Tensor labels({4, 4});
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 4; ++x) labels.at(y, x) = rng.randint(0, 2);
        ad::Var probs = ad::softmax_channels(ad::constant(logits));
        ad::Var fl = focal_loss(probs, labels, 1.0, 0.0);
        ad::Var ce = ce_loss(ad::constant(logits), labels);
        CHECK(fl->val[0] == doctest::Approx(ce->val[0]).epsilon(1e-7));
    }
    SUBCASE("gradient check") {
        Rng rng(86);
        Tensor logits = rng.normal_tensor({3, 3, 3});
        Tensor labels({3, 3});
        labels.at(1, 1) = 2.0;
        double err = core::finite_diff_check_var(
            [&](const std::vector<ad::Var>& vs) {
                return focal_loss(ad::softmax_channels(vs[0]), labels);
            },
            {logits});
        CHECK(err < 1e-4);
    }
}

TEST_CASE("sample_pairs") {
    SUBCASE("pristine-only mask skips the contrastive term") {
        Rng rng(87);
        PairSample out = sample_pairs(Tensor({8, 8}), rng);
        CHECK_FALSE(out.valid);
    }
    SUBCASE("counts are exactly (64, 256) when all regions exist") {
        Tensor labels({8, 8});
        labels.at(0, 0) = 1.0;
        labels.at(7, 7) = 2.0;
        Rng rng(88);
        PairSample out = sample_pairs(labels, rng);
        CHECK(out.valid);
        CHECK(out.anchors.size() == 64);
        CHECK(out.positives.size() == 64);
        CHECK(out.negatives.size() == 256);
        for (int idx : out.anchors) CHECK(idx == 0);
        for (int idx : out.positives) CHECK(idx == 63);
    }
    SUBCASE("fixed seed reproduces identical index lists") {
        Tensor labels({8, 8});
        for (int x = 0; x < 4; ++x) labels.at(1, x) = 1.0;
        for (int x = 0; x < 4; ++x) labels.at(6, x) = 2.0;
        Rng r1(99), r2(99);
        PairSample a = sample_pairs(labels, r1);
        PairSample b = sample_pairs(labels, r2);
        CHECK(a.anchors == b.anchors);
        CHECK(a.positives == b.positives);
        CHECK(a.negatives == b.negatives);
    }
}

TEST_CASE("combined_loss") {
    Rng rng(89);
    Tensor logits = rng.normal_tensor({3, 4, 4});
    Tensor labels({4, 4});
    labels.at(0, 0) = 1.0;
    labels.at(0, 1) = 1.0;
    labels.at(3, 3) = 2.0;
    labels.at(3, 2) = 2.0;
    Tensor embeddings = rng.normal_tensor({16, 6});

    SUBCASE("weights (1,0,0,0) equal ce_loss exactly") {
        Rng lrng(1);
        LossWeights w{1.0, 0.0, 0.0, 0.0};
        LossBreakdown out =
            combined_loss(ad::constant(logits), ad::constant(embeddings), labels, w, lrng);
        ad::Var ce = ce_loss(ad::constant(logits), labels);
        CHECK(out.total->val[0] == ce->val[0]);
        CHECK(out.infonce_skipped);
    }
    SUBCASE("default weights equal the hand-assembled weighted sum") {
        Rng lrng(7);
        LossWeights w;
        LossBreakdown out =
            combined_loss(ad::constant(logits), ad::constant(embeddings), labels, w, lrng);
        // recompute the infonce component with the same sampled pairs
        Rng lrng2(7);
        PairSample pairs = sample_pairs(labels, lrng2);
        REQUIRE(pairs.valid);
        ad::Var emb = ad::constant(embeddings);
        ad::Var inf = infonce_loss(ad::l2_normalize_rows(ad::gather_rows(emb, pairs.anchors)),
                                   ad::l2_normalize_rows(ad::gather_rows(emb, pairs.positives)),
                                   ad::l2_normalize_rows(ad::gather_rows(emb, pairs.negatives)),
                                   0.07);
        ad::Var probs = ad::softmax_channels(ad::constant(logits));
        const double want = 1.0 * ce_loss(ad::constant(logits), labels)->val[0] +
                            0.1 * inf->val[0] + 1.0 * dice_loss(probs, labels)->val[0] +
                            0.5 * focal_loss(probs, labels)->val[0];
        CHECK(out.total->val[0] == doctest::Approx(want).epsilon(1e-7));
        CHECK_FALSE(out.infonce_skipped);
    }
    SUBCASE("doubling all weights doubles the loss") {
        Rng l1(5), l2(5);
        LossWeights w;
        LossWeights w2{2.0 * w.ce, 2.0 * w.infonce, 2.0 * w.dice, 2.0 * w.focal};
        LossBreakdown a = combined_loss(ad::constant(logits), ad::constant(embeddings), labels, w, l1);
        LossBreakdown b = combined_loss(ad::constant(logits), ad::constant(embeddings), labels, w2, l2);
        CHECK(b.total->val[0] == doctest::Approx(2.0 * a.total->val[0]).epsilon(1e-12));
    }
    SUBCASE("all-zero weights are rejected") {
        Rng lrng(3);
        LossWeights w{0.0, 0.0, 0.0, 0.0};
        CHECK_THROWS_AS(combined_loss(ad::constant(logits), nullptr, labels, w, lrng),
                        std::invalid_argument);
    }
    SUBCASE("every component is nonnegative") {
        Rng lrng(11);
        LossWeights w;
        LossBreakdown out =
            combined_loss(ad::constant(logits), ad::constant(embeddings), labels, w, lrng);
        CHECK(out.ce >= 0.0);
        CHECK(out.infonce >= 0.0);
        CHECK(out.dice >= 0.0);
        CHECK(out.focal >= 0.0);
        CHECK(out.total->val[0] >= 0.0);
    }
}
