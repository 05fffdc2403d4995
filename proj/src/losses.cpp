#include "forensim/losses.hpp"

#include <cmath>
#include <stdexcept>

namespace forensim::losses {

namespace {

void check_labels(const Tensor& labels, int h, int w) {
    if (labels.ndim() != 2 || labels.dim(0) != h || labels.dim(1) != w)
        throw std::invalid_argument("labels shape mismatch");
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const double v = labels[i];
        if (v != 0.0 && v != 1.0 && v != 2.0)
            throw std::invalid_argument("labels must be in {0,1,2}");
    }
}

Tensor one_hot(const Tensor& labels) {
    const int h = labels.dim(0), w = labels.dim(1);
    Tensor oh({3, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) oh.at(static_cast<int>(labels.at(y, x)), y, x) = 1.0;
    return oh;
}

}  // namespace

ad::Var ce_loss(const ad::Var& logits, const Tensor& labels,
                const std::array<double, 3>& class_weights) {
    const int h = logits->val.dim(1), w = logits->val.dim(2);
    check_labels(labels, h, w);
    Tensor weighted = one_hot(labels);
    double total_weight = 0.0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int c = static_cast<int>(labels.at(y, x));
            weighted.at(c, y, x) = class_weights[static_cast<std::size_t>(c)];
            total_weight += class_weights[static_cast<std::size_t>(c)];
        }
    if (total_weight <= 0.0) throw std::invalid_argument("ce_loss: nonpositive class weights");
    ad::Var picked = ad::mul(ad::log_softmax_channels(logits), ad::constant(weighted));
    return ad::scale(ad::sum_all(picked), -1.0 / total_weight);
}

ad::Var infonce_loss(const ad::Var& anchors, const ad::Var& positives, const ad::Var& negatives,
                     double temperature) {
    if (!(temperature > 0.0)) throw std::invalid_argument("infonce: temperature must be positive");
    const int m = anchors->val.dim(0);
    if (m == 0 || positives->val.dim(0) != m)
        throw std::invalid_argument("infonce: anchors and positives must pair up");
    const int k = negatives->val.dim(0);
    const double inv_t = 1.0 / temperature;

    ad::Var pos = ad::scale(ad::sum_rows(ad::mul(anchors, positives)), inv_t);       // M x 1
    ad::Var neg = ad::scale(ad::matmul(anchors, ad::transpose(negatives)), inv_t);   // M x K

    // row max as a constant shift keeps the exponentials bounded
    Tensor shift({m, 1});
    for (int i = 0; i < m; ++i) {
        double mx = pos->val.at(i, 0);
        for (int j = 0; j < k; ++j) mx = std::max(mx, neg->val.at(i, j));
        shift.at(i, 0) = mx;
    }
    Tensor shift_wide({m, k});
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < k; ++j) shift_wide.at(i, j) = shift.at(i, 0);

    ad::Var e_pos = ad::exp_of(ad::sub(pos, ad::constant(shift)));
    ad::Var e_neg = ad::sum_rows(ad::exp_of(ad::sub(neg, ad::constant(shift_wide))));
    ad::Var log_denom = ad::add(ad::log_of(ad::add(e_pos, e_neg)), ad::constant(shift));
    return ad::mean_all(ad::sub(log_denom, pos));
}

ad::Var dice_loss(const ad::Var& probs, const Tensor& labels, double smooth) {
    const int h = probs->val.dim(1), w = probs->val.dim(2);
    check_labels(labels, h, w);
    for (std::size_t i = 0; i < probs->val.size(); ++i)
        if (probs->val[i] < -1e-9 || probs->val[i] > 1.0 + 1e-9)
            throw std::invalid_argument("dice_loss: probs must lie in [0,1]");
    Tensor oh = one_hot(labels);
    ad::Var acc;
    for (int c = 1; c <= 2; ++c) {
        ad::Var p = ad::slice_channel(probs, c);
        Tensor g({1, h, w});
        double gsum = 0.0;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) gsum += (g.at(0, y, x) = oh.at(c, y, x));
        ad::Var inter = ad::sum_all(ad::mul(p, ad::constant(g)));
        ad::Var num = ad::add_const(ad::scale(inter, 2.0), smooth);
        ad::Var den = ad::add_const(ad::sum_all(p), gsum + smooth);
        ad::Var frac = ad::mul(num, ad::pow_const(den, -1.0));
        ad::Var term = ad::add_const(ad::scale(frac, -1.0), 1.0);
        acc = acc ? ad::add(acc, term) : term;
    }
    return ad::scale(acc, 0.5);
}

ad::Var focal_loss(const ad::Var& probs, const Tensor& labels, double alpha, double gamma) {
    if (!(alpha > 0.0) || alpha > 1.0 || gamma < 0.0)
        throw std::invalid_argument("focal_loss: need alpha in (0,1], gamma >= 0");
    const int h = probs->val.dim(1), w = probs->val.dim(2);
    check_labels(labels, h, w);
    Tensor oh = one_hot(labels);
    ad::Var p_t = ad::clamp_min_const(ad::sum_channels(ad::mul(probs, ad::constant(oh))), 1e-8);
    ad::Var mod = ad::pow_const(ad::add_const(ad::scale(p_t, -1.0), 1.0), gamma);
    ad::Var per_pixel = ad::mul(mod, ad::log_of(p_t));
    return ad::scale(ad::mean_all(per_pixel), -alpha);
}

PairSample sample_pairs(const Tensor& labels, Rng& rng, int n_pos, int n_neg) {
    const int h = labels.dim(0), w = labels.dim(1);
    check_labels(labels, h, w);
    std::vector<int> src, tgt, pristine;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int flat = y * w + x;
            const int c = static_cast<int>(labels.at(y, x));
            if (c == 1) src.push_back(flat);
            else if (c == 2) tgt.push_back(flat);
            else pristine.push_back(flat);
        }
    PairSample out;
    if (src.empty() || tgt.empty() || pristine.empty()) return out;
    out.valid = true;
    out.anchors.reserve(n_pos);
    out.positives.reserve(n_pos);
    out.negatives.reserve(n_neg);
    for (int i = 0; i < n_pos; ++i) {
        out.anchors.push_back(src[static_cast<std::size_t>(rng.randint(0, static_cast<long>(src.size()) - 1))]);
        out.positives.push_back(tgt[static_cast<std::size_t>(rng.randint(0, static_cast<long>(tgt.size()) - 1))]);
    }
    for (int i = 0; i < n_neg; ++i)
        out.negatives.push_back(
            pristine[static_cast<std::size_t>(rng.randint(0, static_cast<long>(pristine.size()) - 1))]);
    return out;
}

LossBreakdown combined_loss(const ad::Var& mask_logits, const ad::Var& pixel_embeddings,
                            const Tensor& labels, const LossWeights& weights, Rng& rng,
                            double temperature) {
    if (weights.ce <= 0.0 && weights.infonce <= 0.0 && weights.dice <= 0.0 && weights.focal <= 0.0)
        throw std::invalid_argument("combined_loss: at least one weight must be positive");

    LossBreakdown out;
    ad::Var total;
    auto accumulate = [&](const ad::Var& term, double weight, double& slot) {
        slot = term->val[0];
        if (weight == 0.0) return;
        ad::Var scaled = ad::scale(term, weight);
        total = total ? ad::add(total, scaled) : scaled;
    };

    ad::Var probs;
    if (weights.ce > 0.0) {
        ad::Var ce = ce_loss(mask_logits, labels);
        accumulate(ce, weights.ce, out.ce);
    }
    if (weights.dice > 0.0 || weights.focal > 0.0) probs = ad::softmax_channels(mask_logits);
    if (weights.dice > 0.0) accumulate(dice_loss(probs, labels), weights.dice, out.dice);
    if (weights.focal > 0.0) accumulate(focal_loss(probs, labels), weights.focal, out.focal);

    if (weights.infonce > 0.0 && pixel_embeddings) {
        PairSample pairs = sample_pairs(labels, rng);
        if (pairs.valid) {
            ad::Var a = ad::l2_normalize_rows(ad::gather_rows(pixel_embeddings, pairs.anchors));
            ad::Var p = ad::l2_normalize_rows(ad::gather_rows(pixel_embeddings, pairs.positives));
            ad::Var n = ad::l2_normalize_rows(ad::gather_rows(pixel_embeddings, pairs.negatives));
            accumulate(infonce_loss(a, p, n, temperature), weights.infonce, out.infonce);
            out.infonce_skipped = false;
        }
    }
    if (!total) total = ad::constant(Tensor({1}, 0.0));
    out.total = total;
    return out;
}

}  // namespace forensim::losses
