#include "forensim/imgproc.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <stdexcept>

namespace forensim::img {

Tensor image_to_tensor(const cv::Mat& bgr) {
    if (bgr.type() != CV_8UC3) throw std::invalid_argument("image_to_tensor: expected CV_8UC3");
    Tensor t({3, bgr.rows, bgr.cols});
    for (int y = 0; y < bgr.rows; ++y)
        for (int x = 0; x < bgr.cols; ++x) {
            const cv::Vec3b px = bgr.at<cv::Vec3b>(y, x);
            t.at(0, y, x) = px[2] / 255.0;
            t.at(1, y, x) = px[1] / 255.0;
            t.at(2, y, x) = px[0] / 255.0;
        }
    return t;
}

cv::Mat tensor_to_image(const Tensor& t) {
    if (t.ndim() != 3 || t.dim(0) != 3) throw std::invalid_argument("tensor_to_image: expected 3xHxW");
    cv::Mat bgr(t.dim(1), t.dim(2), CV_8UC3);
    for (int y = 0; y < bgr.rows; ++y)
        for (int x = 0; x < bgr.cols; ++x) {
            auto clamp255 = [](double v) {
                return static_cast<unsigned char>(std::min(255.0, std::max(0.0, std::round(v * 255.0))));
            };
            bgr.at<cv::Vec3b>(y, x) =
                cv::Vec3b(clamp255(t.at(2, y, x)), clamp255(t.at(1, y, x)), clamp255(t.at(0, y, x)));
        }
    return bgr;
}

namespace {
// palette in BGR memory order
const cv::Vec3b kPristine(255, 0, 0);  // RGB (0,0,255)
const cv::Vec3b kSource(0, 255, 0);    // RGB (0,255,0)
const cv::Vec3b kTarget(0, 0, 255);    // RGB (255,0,0)
}  // namespace

cv::Mat mask_to_rgb(const Tensor& labels) {
    if (labels.ndim() != 2) throw std::invalid_argument("mask_to_rgb: expected HxW labels");
    cv::Mat bgr(labels.dim(0), labels.dim(1), CV_8UC3);
    for (int y = 0; y < bgr.rows; ++y)
        for (int x = 0; x < bgr.cols; ++x) {
            const int c = static_cast<int>(labels.at(y, x));
            if (c == 0) bgr.at<cv::Vec3b>(y, x) = kPristine;
            else if (c == 1) bgr.at<cv::Vec3b>(y, x) = kSource;
            else if (c == 2) bgr.at<cv::Vec3b>(y, x) = kTarget;
            else throw std::invalid_argument("mask_to_rgb: labels must be in {0,1,2}");
        }
    return bgr;
}

Tensor rgb_to_mask(const cv::Mat& bgr) {
    if (bgr.type() != CV_8UC3) throw std::invalid_argument("rgb_to_mask: expected CV_8UC3");
    Tensor labels({bgr.rows, bgr.cols});
    for (int y = 0; y < bgr.rows; ++y)
        for (int x = 0; x < bgr.cols; ++x) {
            const cv::Vec3b px = bgr.at<cv::Vec3b>(y, x);
            if (px == kPristine) labels.at(y, x) = 0.0;
            else if (px == kSource) labels.at(y, x) = 1.0;
            else if (px == kTarget) labels.at(y, x) = 2.0;
            else throw std::invalid_argument("rgb_to_mask: pixel outside the mask palette");
        }
    return labels;
}

cv::Mat load_image(const std::string& path) {
    cv::Mat m = cv::imread(path, cv::IMREAD_COLOR);
    if (m.empty()) throw std::runtime_error("cannot read image: " + path);
    return m;
}

void save_image(const std::string& path, const cv::Mat& bgr, int jpeg_quality) {
    std::vector<int> params;
    if (jpeg_quality > 0) params = {cv::IMWRITE_JPEG_QUALITY, jpeg_quality};
    if (!cv::imwrite(path, bgr, params)) throw std::runtime_error("cannot write image: " + path);
}

Tensor load_mask(const std::string& path) { return rgb_to_mask(load_image(path)); }

void save_mask(const std::string& path, const Tensor& labels) {
    save_image(path, mask_to_rgb(labels));
}

namespace {

void fill_value_noise(cv::Mat& img, Rng& rng) {
    // two octaves of upsampled noise plus a linear shade
    for (int octave : {8, 4}) {
        cv::Mat coarse(img.rows / octave + 2, img.cols / octave + 2, CV_32FC3);
        for (int y = 0; y < coarse.rows; ++y)
            for (int x = 0; x < coarse.cols; ++x)
                coarse.at<cv::Vec3f>(y, x) =
                    cv::Vec3f(static_cast<float>(rng.uniform(-20.0, 20.0)),
                              static_cast<float>(rng.uniform(-20.0, 20.0)),
                              static_cast<float>(rng.uniform(-20.0, 20.0)));
        cv::Mat fine;
        cv::resize(coarse, fine, img.size(), 0, 0, cv::INTER_CUBIC);
        for (int y = 0; y < img.rows; ++y)
            for (int x = 0; x < img.cols; ++x) {
                cv::Vec3b& px = img.at<cv::Vec3b>(y, x);
                const cv::Vec3f n = fine.at<cv::Vec3f>(y, x);
                for (int c = 0; c < 3; ++c)
                    px[c] = cv::saturate_cast<unsigned char>(px[c] + n[c]);
            }
    }
}

void texture_region(cv::Mat& img, const cv::Mat& mask, Rng& rng) {
    // per-object speckle so context windows carry variance
    const double amp = rng.uniform(8.0, 25.0);
    const bool stripes = rng.bernoulli(0.5);
    const double freq = rng.uniform(0.2, 0.9);
    const double phase = rng.uniform(0.0, 6.28);
    for (int y = 0; y < img.rows; ++y)
        for (int x = 0; x < img.cols; ++x) {
            if (!mask.at<unsigned char>(y, x)) continue;
            double delta = rng.uniform(-amp, amp);
            if (stripes) delta += amp * std::sin(freq * (x + y) + phase);
            cv::Vec3b& px = img.at<cv::Vec3b>(y, x);
            for (int c = 0; c < 3; ++c)
                px[c] = cv::saturate_cast<unsigned char>(px[c] + delta);
        }
}

}  // namespace

BaseSample make_procedural_sample(std::uint64_t seed, int size, long index) {
    BaseSample out;
    out.id = "proc_" + std::to_string(index);
    Rng rng(derive_seed(seed, out.id));

    out.image = cv::Mat(size, size, CV_8UC3);
    const cv::Vec3b base(static_cast<unsigned char>(rng.randint(60, 180)),
                         static_cast<unsigned char>(rng.randint(60, 180)),
                         static_cast<unsigned char>(rng.randint(60, 180)));
    out.image.setTo(base);
    fill_value_noise(out.image, rng);

    const int objects = static_cast<int>(rng.randint(2, 4));
    cv::Mat occupied = cv::Mat::zeros(size, size, CV_8UC1);
    for (int k = 0; k < objects; ++k) {
        for (int attempt = 0; attempt < 30; ++attempt) {
            cv::Mat mask = cv::Mat::zeros(size, size, CV_8UC1);
            const int kind = static_cast<int>(rng.randint(0, 2));
            const int half = static_cast<int>(rng.randint(size / 9, size / 5));
            const int cx = static_cast<int>(rng.randint(half + 1, size - half - 2));
            const int cy = static_cast<int>(rng.randint(half + 1, size - half - 2));
            if (kind == 0) {
                cv::ellipse(mask, cv::Point(cx, cy),
                            cv::Size(half, std::max(3, static_cast<int>(half * rng.uniform(0.55, 1.0)))),
                            rng.uniform(0.0, 180.0), 0, 360, cv::Scalar(255), cv::FILLED);
            } else if (kind == 1) {
                cv::rectangle(mask, cv::Point(cx - half, cy - static_cast<int>(half * 0.75)),
                              cv::Point(cx + half, cy + static_cast<int>(half * 0.75)), cv::Scalar(255),
                              cv::FILLED);
            } else {
                std::vector<cv::Point> tri = {
                    {cx, cy - half},
                    {cx - half, cy + half},
                    {cx + static_cast<int>(half * rng.uniform(0.5, 1.0)), cy + half}};
                cv::fillConvexPoly(mask, tri, cv::Scalar(255));
            }
            cv::Mat inter;
            cv::bitwise_and(mask, occupied, inter);
            if (cv::countNonZero(inter) > 0) continue;

            const cv::Vec3b color(static_cast<unsigned char>(rng.randint(30, 225)),
                                  static_cast<unsigned char>(rng.randint(30, 225)),
                                  static_cast<unsigned char>(rng.randint(30, 225)));
            out.image.setTo(color, mask);
            texture_region(out.image, mask, rng);
            cv::bitwise_or(occupied, mask, occupied);
            out.instance_masks.push_back(mask);
            break;
        }
    }
    return out;
}

}  // namespace forensim::img
