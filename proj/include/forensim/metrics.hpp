#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "forensim/tensor.hpp"

namespace forensim::metrics {

/// Full 3x3 pixel confusion matrix (rows = ground truth, cols = prediction)
/// plus image-level detection counts. Merging is associative and commutative,
/// so accumulation parallelizes as a map + reduce.
struct ConfusionCounts {
    std::array<std::array<long, 3>, 3> matrix{};
    long det_tp = 0, det_fp = 0, det_fn = 0, det_tn = 0;

    long tp(int c) const { return matrix[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)]; }
    long fp(int c) const;
    long fn(int c) const;
    long total() const;
    void merge(const ConfusionCounts& other);
};

/// Area floor scaled from the 200-pixel rule at 320x320.
int suppression_threshold(int h, int w);

/// Relabels non-pristine connected components (8-connectivity, source and
/// target handled independently) smaller than the scaled floor as pristine.
Tensor suppress_small_components(const Tensor& mask);

/// Adds the per-pixel confusion of one mask pair into counts.
void accumulate(const Tensor& pred, const Tensor& gt, ConfusionCounts& counts);

struct Prf {
    double precision = 0.0, recall = 0.0, f1 = 0.0;
};

/// P/R/F1 with the 0/0 -> 0 convention.
Prf prf_from(long tp, long fp, long fn);
std::array<Prf, 3> pixel_metrics(const ConfusionCounts& counts);

/// Exact rank-based ROC AUC with tie averaging; empty class -> nullopt.
std::optional<double> binary_auc(const std::vector<double>& scores,
                                 const std::vector<std::uint8_t>& positive);

/// Pooled-pixel one-vs-rest AUC macro-averaged over source and target.
/// class_scores[c] / class_labels[c] hold the dataset-wide pools for c in {0,1}
/// mapping to classes {source, target}.
std::optional<double> localization_auc(const std::array<std::vector<double>, 2>& class_scores,
                                       const std::array<std::vector<std::uint8_t>, 2>& class_labels);

Prf detection_metrics(const std::vector<double>& scores, const std::vector<int>& labels,
                      double threshold = 0.5);

/// Multi-class Matthews correlation (degenerate matrix -> 0) and balanced
/// accuracy (mean class recall).
std::pair<double, double> mcc_bacc(const ConfusionCounts& counts);

struct EvalReport {
    std::array<Prf, 3> pixel;  // pristine, source, target
    std::optional<double> auc;
    Prf detection;
    double mcc = 0.0;
    double bacc = 0.0;
    long images = 0;

    std::string to_text() const;
    std::string to_json_line() const;
    static EvalReport from_json_line(const std::string& line);
};

}  // namespace forensim::metrics
