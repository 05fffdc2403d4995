#pragma once

#include <array>
#include <vector>

#include "forensim/autodiff.hpp"
#include "forensim/rng.hpp"
#include "forensim/tensor.hpp"

namespace forensim::losses {

struct LossWeights {
    double ce = 1.0;
    double infonce = 0.1;
    double dice = 1.0;
    double focal = 0.5;
};

/// Pixel-mean multi-class cross-entropy over 3 x H x W logits. labels holds
/// {0,1,2} per pixel. Optional per-class weights reweight each pixel by its
/// true class (normalized by the total weight).
ad::Var ce_loss(const ad::Var& logits, const Tensor& labels,
                const std::array<double, 3>& class_weights = {1.0, 1.0, 1.0});

/// Anchor-paired InfoNCE: row i of anchors pairs with row i of positives;
/// the negative set is shared by every anchor.
ad::Var infonce_loss(const ad::Var& anchors, const ad::Var& positives, const ad::Var& negatives,
                     double temperature);

/// Soft Dice over the source and target classes, averaged; smoothing 1.0 in
/// numerator and denominator so empty-vs-empty counts as perfect.
ad::Var dice_loss(const ad::Var& probs, const Tensor& labels, double smooth = 1.0);

/// Mean of -alpha (1 - p_t)^gamma log(p_t) with p_t clamped at 1e-8.
ad::Var focal_loss(const ad::Var& probs, const Tensor& labels, double alpha = 0.25,
                   double gamma = 2.0);

struct PairSample {
    std::vector<int> anchors;    // source-region pixel indices (flat, row-major)
    std::vector<int> positives;  // target-region pixel indices
    std::vector<int> negatives;  // pristine pixel indices
    bool valid = false;
};

/// 64 source-target pairs plus 256 pristine negatives, sampled uniformly with
/// replacement when the regions are small. Invalid (contrastive term skipped)
/// when any required region is empty.
PairSample sample_pairs(const Tensor& labels, Rng& rng, int n_pos = 64, int n_neg = 256);

struct LossBreakdown {
    ad::Var total;
    double ce = 0.0, infonce = 0.0, dice = 0.0, focal = 0.0;
    bool infonce_skipped = true;
};

/// Weighted combination of the four objectives. pixel_embeddings may be null
/// (contrastive term skipped); rows are H*W pixels. Skipped terms contribute 0.
LossBreakdown combined_loss(const ad::Var& mask_logits, const ad::Var& pixel_embeddings,
                            const Tensor& labels, const LossWeights& weights, Rng& rng,
                            double temperature = 0.07);

}  // namespace forensim::losses
