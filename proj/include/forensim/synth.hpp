#pragma once

#include <opencv2/core.hpp>

#include <array>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "forensim/imgproc.hpp"
#include "forensim/rng.hpp"
#include "forensim/tensor.hpp"

namespace forensim::synth {

enum class Axis { X, Y, Principal };
const char* axis_name(Axis a);
Axis axis_from_name(const std::string& name);

struct GateThresholds {
    double min_area_frac = 0.005;   // degenerate-source floor
    double max_area_frac = 0.5;
    double scale_lo = 0.9, scale_hi = 1.1;
    double rotation_lo = -10.0, rotation_hi = 10.0;  // degrees
    double distance_factor = 1.0;   // in source equivalent diameters
};

struct GateResults {
    bool distance = false, scale = false, overlap = false, in_frame = false;
    bool all() const { return distance && scale && overlap && in_frame; }
};

struct PlacementCandidate {
    double dx = 0.0, dy = 0.0;
    Axis axis = Axis::X;
    double scale = 1.0;
    double rotation = 0.0;  // degrees
    GateResults gates;
    std::optional<double> cosine;
};

struct MaskStats {
    double cx = 0.0, cy = 0.0;
    long area = 0;
    double equiv_diameter = 0.0;  // 2 sqrt(area / pi)
    double principal_angle = 0.0; // radians, largest second-moment eigenvector
    cv::Rect bbox;
};

MaskStats mask_stats(const cv::Mat& mask);

/// Affine for a candidate: scale and rotate about the source centroid, then
/// translate by (dx, dy).
cv::Matx23d candidate_transform(const MaskStats& stats, const PlacementCandidate& c);

/// Warped alpha in [0,1] (CV_64FC1, same size as the frame).
cv::Mat warp_alpha(const cv::Mat& src_mask, const MaskStats& stats, const PlacementCandidate& c);

/// Evaluates the distance / scale / overlap / in-frame gates. A margin of
/// two pixels is applied to the distance gate at proposal time so records
/// re-validate against the declared thresholds from serialized masks.
GateResults evaluate_gates(const cv::Mat& src_mask, const MaskStats& stats,
                           const PlacementCandidate& c, const GateThresholds& g,
                           double distance_margin = 0.0);

/// Sliding proposals along the x, y and principal axes through the source
/// centroid; every returned candidate passes all gates.
std::vector<PlacementCandidate> propose_placements(const cv::Mat& src_mask,
                                                   const GateThresholds& g, Rng& rng,
                                                   int step = 4);

using EmbedFn = std::function<std::vector<double>(const cv::Mat& window)>;

/// 16x16 grayscale context embedding: mean-centered and L2-normalized.
EmbedFn default_embedder();

/// Context window: mask bbox dilated by 25% per side, clipped to the frame.
cv::Rect context_window(const cv::Rect& bbox, const cv::Size& frame);

/// Arg-max cosine destination among the candidates; accepted only when the
/// best cosine reaches tau. Cosines are recorded on the candidates.
std::optional<std::size_t> semantic_filter(std::vector<PlacementCandidate>& candidates,
                                           const cv::Mat& image, const cv::Mat& src_mask,
                                           const EmbedFn& embed, double tau);

/// Clone-stamp composite with a feathered alpha border (truncated Gaussian,
/// radius `feather_radius`). Returns the forged frame and the crisp target
/// mask (0.5 threshold on the pre-feather warped alpha).
std::pair<cv::Mat, cv::Mat> apply_transform_and_composite(const cv::Mat& image,
                                                          const cv::Mat& src_mask,
                                                          const PlacementCandidate& c,
                                                          double feather_sigma = 1.0,
                                                          int feather_radius = 3);

struct SynthConfig {
    std::string corpus = "synthetic";
    std::string out_dir;
    long count = 100;
    double pristine_ratio = 1.0 / 3.0;  // 200K forged : 100K pristine
    double tau = 0.30;
    bool semantic_filtering = true;
    double feather_sigma = 1.0;
    int feather_radius = 3;
    std::uint64_t seed = 42;
    int workers = 2;
    int image_size = 64;     // procedural corpus frame
    int jpeg_quality = 0;    // 0 = lossless PNG
    int sweep_step = 4;
    GateThresholds gates;
    /// Optional post-filter (reject low-quality forgeries); unset = accept all.
    std::function<bool(const cv::Mat& forged)> quality_filter;
};

struct SampleOutcome {
    bool skipped = false;
    bool pristine = false;
    cv::Mat image;
    Tensor mask;  // H x W labels
    std::string strategy;  // within_category | cross_object | pristine
    Axis axis = Axis::X;
    double dx = 0.0, dy = 0.0, scale = 1.0, rotation = 0.0;
    std::optional<double> cosine;
    cv::Rect source_bbox, target_bbox;
};

/// One sample end to end: strategy choice, placement, filtering, composite,
/// three-class mask. Deterministic given the rng state.
SampleOutcome synthesize(const cv::Mat& image, const std::vector<cv::Mat>& instance_masks,
                         Rng& rng, const SynthConfig& cfg, bool force_pristine);

struct ManifestEntry {
    std::string image_path, mask_path, split, strategy, axis;  // axis empty for pristine
    double dx = 0.0, dy = 0.0, scale = 1.0, rotation = 0.0;
    std::optional<double> cosine;
    bool has_boxes = false;
    std::array<int, 4> source_bbox{}, target_bbox{};  // x, y, w, h
};

std::string manifest_line(const ManifestEntry& e);
ManifestEntry parse_manifest_line(const std::string& line);
std::vector<ManifestEntry> read_manifest(const std::string& path);

/// Deterministic 8:1:1 partition: ids ranked by FNV-1a hash, exact rounded
/// validation/test counts. Stable across machines for a fixed id set.
std::map<std::string, std::string> assign_splits(std::vector<std::string> ids);

struct BuildSummary {
    long requested = 0, written = 0, skipped = 0, pristine = 0, forged = 0;
    std::array<long, 3> split_sizes{};  // train, val, test
    std::string manifest_path;
};

BuildSummary build_dataset(const SynthConfig& cfg);

/// Re-validates a manifest record purely from its serialized artifacts and
/// recorded transform. Returns false (with a reason) on any gate violation.
bool validate_record(const ManifestEntry& e, const std::string& root, const GateThresholds& g,
                     double tau, bool filtering_enabled, std::string* why = nullptr);

}  // namespace forensim::synth
