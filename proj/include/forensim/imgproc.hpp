#pragma once

#include <opencv2/core.hpp>

#include <string>
#include <vector>

#include "forensim/rng.hpp"
#include "forensim/tensor.hpp"

namespace forensim::img {

/// CV_8UC3 BGR image -> 3 x H x W double tensor in [0,1] (RGB channel order).
Tensor image_to_tensor(const cv::Mat& bgr);
cv::Mat tensor_to_image(const Tensor& t);

/// Three-class mask palette (RGB): pristine (0,0,255), source (0,255,0),
/// target (255,0,0). Round trip is lossless; unknown colors throw.
cv::Mat mask_to_rgb(const Tensor& labels);
Tensor rgb_to_mask(const cv::Mat& bgr);

cv::Mat load_image(const std::string& path);
void save_image(const std::string& path, const cv::Mat& bgr, int jpeg_quality = 0);
Tensor load_mask(const std::string& path);
void save_mask(const std::string& path, const Tensor& labels);

/// One procedurally generated base image: textured background plus a few
/// textured shapes with exact instance masks. Deterministic in (seed, index).
struct BaseSample {
    std::string id;
    cv::Mat image;                       // CV_8UC3
    std::vector<cv::Mat> instance_masks; // CV_8UC1 in {0,255}
};

BaseSample make_procedural_sample(std::uint64_t seed, int size, long index);

}  // namespace forensim::img
