#include "forensim/metrics.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace forensim::metrics {

long ConfusionCounts::fp(int c) const {
    long s = 0;
    for (int g = 0; g < 3; ++g)
        if (g != c) s += matrix[static_cast<std::size_t>(g)][static_cast<std::size_t>(c)];
    return s;
}

long ConfusionCounts::fn(int c) const {
    long s = 0;
    for (int p = 0; p < 3; ++p)
        if (p != c) s += matrix[static_cast<std::size_t>(c)][static_cast<std::size_t>(p)];
    return s;
}

long ConfusionCounts::total() const {
    long s = 0;
    for (const auto& row : matrix)
        for (long v : row) s += v;
    return s;
}

void ConfusionCounts::merge(const ConfusionCounts& other) {
    for (int g = 0; g < 3; ++g)
        for (int p = 0; p < 3; ++p)
            matrix[static_cast<std::size_t>(g)][static_cast<std::size_t>(p)] +=
                other.matrix[static_cast<std::size_t>(g)][static_cast<std::size_t>(p)];
    det_tp += other.det_tp;
    det_fp += other.det_fp;
    det_fn += other.det_fn;
    det_tn += other.det_tn;
}

int suppression_threshold(int h, int w) {
    return static_cast<int>(std::lround(200.0 * h * w / (320.0 * 320.0)));
}

Tensor suppress_small_components(const Tensor& mask) {
    const int h = mask.dim(0), w = mask.dim(1);
    const int floor_area = suppression_threshold(h, w);
    Tensor out = mask;
    std::vector<char> seen(static_cast<std::size_t>(h) * w, 0);
    std::vector<int> stack, component;
    for (int start = 0; start < h * w; ++start) {
        if (seen[static_cast<std::size_t>(start)]) continue;
        const int cls = static_cast<int>(mask[static_cast<std::size_t>(start)]);
        if (cls == 0) {
            seen[static_cast<std::size_t>(start)] = 1;
            continue;
        }
        stack.assign(1, start);
        component.clear();
        seen[static_cast<std::size_t>(start)] = 1;
        while (!stack.empty()) {
            const int cur = stack.back();
            stack.pop_back();
            component.push_back(cur);
            const int cy = cur / w, cx = cur % w;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    if (dy == 0 && dx == 0) continue;
                    const int ny = cy + dy, nx = cx + dx;
                    if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
                    const int nidx = ny * w + nx;
                    if (seen[static_cast<std::size_t>(nidx)]) continue;
                    if (static_cast<int>(mask[static_cast<std::size_t>(nidx)]) != cls) continue;
                    seen[static_cast<std::size_t>(nidx)] = 1;
                    stack.push_back(nidx);
                }
        }
        if (static_cast<int>(component.size()) < floor_area)
            for (int idx : component) out[static_cast<std::size_t>(idx)] = 0.0;
    }
    return out;
}

void accumulate(const Tensor& pred, const Tensor& gt, ConfusionCounts& counts) {
    if (!pred.same_shape(gt)) throw std::invalid_argument("accumulate: mask shape mismatch");
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const int p = static_cast<int>(pred[i]), g = static_cast<int>(gt[i]);
        if (p < 0 || p > 2 || g < 0 || g > 2)
            throw std::invalid_argument("accumulate: labels must be in {0,1,2}");
        ++counts.matrix[static_cast<std::size_t>(g)][static_cast<std::size_t>(p)];
    }
}

Prf prf_from(long tp, long fp, long fn) {
    Prf out;
    out.precision = (tp + fp) > 0 ? static_cast<double>(tp) / (tp + fp) : 0.0;
    out.recall = (tp + fn) > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
    out.f1 = (out.precision + out.recall) > 0.0
                 ? 2.0 * out.precision * out.recall / (out.precision + out.recall)
                 : 0.0;
    return out;
}

std::array<Prf, 3> pixel_metrics(const ConfusionCounts& counts) {
    std::array<Prf, 3> out;
    for (int c = 0; c < 3; ++c)
        out[static_cast<std::size_t>(c)] = prf_from(counts.tp(c), counts.fp(c), counts.fn(c));
    return out;
}

std::optional<double> binary_auc(const std::vector<double>& scores,
                                 const std::vector<std::uint8_t>& positive) {
    if (scores.size() != positive.size()) throw std::invalid_argument("binary_auc: size mismatch");
    const std::size_t n = scores.size();
    std::size_t pos = 0;
    for (std::uint8_t b : positive) pos += b ? 1 : 0;
    const std::size_t neg = n - pos;
    if (pos == 0 || neg == 0) return std::nullopt;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // average ranks across ties, then Mann-Whitney
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double avg_rank = 0.5 * (static_cast<double>(i + 1) + static_cast<double>(j + 1));
        for (std::size_t t = i; t <= j; ++t)
            if (positive[order[t]]) rank_sum_pos += avg_rank;
        i = j + 1;
    }
    const double u = rank_sum_pos - static_cast<double>(pos) * (static_cast<double>(pos) + 1.0) / 2.0;
    return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

std::optional<double> localization_auc(const std::array<std::vector<double>, 2>& class_scores,
                                       const std::array<std::vector<std::uint8_t>, 2>& class_labels) {
    double sum = 0.0;
    int present = 0;
    for (int c = 0; c < 2; ++c) {
        auto auc = binary_auc(class_scores[static_cast<std::size_t>(c)],
                              class_labels[static_cast<std::size_t>(c)]);
        if (auc) {
            sum += *auc;
            ++present;
        }
    }
    if (present == 0) return std::nullopt;
    return sum / present;
}

Prf detection_metrics(const std::vector<double>& scores, const std::vector<int>& labels,
                      double threshold) {
    if (scores.size() != labels.size())
        throw std::invalid_argument("detection_metrics: size mismatch");
    long tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool pred = scores[i] >= threshold;
        const bool truth = labels[i] != 0;
        if (pred && truth) ++tp;
        else if (pred && !truth) ++fp;
        else if (!pred && truth) ++fn;
    }
    return prf_from(tp, fp, fn);
}

std::pair<double, double> mcc_bacc(const ConfusionCounts& counts) {
    const double s = static_cast<double>(counts.total());
    double bacc = 0.0;
    for (int c = 0; c < 3; ++c) {
        const long tp = counts.tp(c), fn = counts.fn(c);
        bacc += (tp + fn) > 0 ? static_cast<double>(tp) / (tp + fn) : 0.0;
    }
    bacc /= 3.0;
    if (s == 0.0) return {0.0, bacc};

    double correct = 0.0;
    std::array<double, 3> pred_marginal{}, true_marginal{};
    for (int g = 0; g < 3; ++g)
        for (int p = 0; p < 3; ++p) {
            const double v = static_cast<double>(
                counts.matrix[static_cast<std::size_t>(g)][static_cast<std::size_t>(p)]);
            if (g == p) correct += v;
            pred_marginal[static_cast<std::size_t>(p)] += v;
            true_marginal[static_cast<std::size_t>(g)] += v;
        }
    double dot = 0.0, p2 = 0.0, t2 = 0.0;
    for (int c = 0; c < 3; ++c) {
        dot += pred_marginal[static_cast<std::size_t>(c)] * true_marginal[static_cast<std::size_t>(c)];
        p2 += pred_marginal[static_cast<std::size_t>(c)] * pred_marginal[static_cast<std::size_t>(c)];
        t2 += true_marginal[static_cast<std::size_t>(c)] * true_marginal[static_cast<std::size_t>(c)];
    }
    const double denom = std::sqrt((s * s - p2) * (s * s - t2));
    const double mcc = denom > 0.0 ? (correct * s - dot) / denom : 0.0;
    return {mcc, bacc};
}

std::string EvalReport::to_text() const {
    std::ostringstream os;
    const char* names[3] = {"pristine", "source", "target"};
    os.setf(std::ios::fixed);
    os.precision(6);
    for (int c = 0; c < 3; ++c) {
        const Prf& m = pixel[static_cast<std::size_t>(c)];
        os << "pixel_precision_" << names[c] << " " << m.precision << "\n";
        os << "pixel_recall_" << names[c] << " " << m.recall << "\n";
        os << "pixel_f1_" << names[c] << " " << m.f1 << "\n";
    }
    os << "localization_auc " << (auc ? *auc : 0.0) << "\n";
    os << "detection_precision " << detection.precision << "\n";
    os << "detection_recall " << detection.recall << "\n";
    os << "detection_f1 " << detection.f1 << "\n";
    os << "mcc " << mcc << "\n";
    os << "bacc " << bacc << "\n";
    os << "images " << images << "\n";
    return os.str();
}

std::string EvalReport::to_json_line() const {
    nlohmann::ordered_json j;
    const char* names[3] = {"pristine", "source", "target"};
    for (int c = 0; c < 3; ++c) {
        const Prf& m = pixel[static_cast<std::size_t>(c)];
        j[std::string("p_") + names[c]] = m.precision;
        j[std::string("r_") + names[c]] = m.recall;
        j[std::string("f1_") + names[c]] = m.f1;
    }
    j["auc"] = auc ? nlohmann::ordered_json(*auc) : nlohmann::ordered_json(nullptr);
    j["det_p"] = detection.precision;
    j["det_r"] = detection.recall;
    j["det_f1"] = detection.f1;
    j["mcc"] = mcc;
    j["bacc"] = bacc;
    j["images"] = images;
    return j.dump();
}

EvalReport EvalReport::from_json_line(const std::string& line) {
    nlohmann::json j = nlohmann::json::parse(line);
    EvalReport r;
    const char* names[3] = {"pristine", "source", "target"};
    for (int c = 0; c < 3; ++c) {
        Prf& m = r.pixel[static_cast<std::size_t>(c)];
        m.precision = j.at(std::string("p_") + names[c]).get<double>();
        m.recall = j.at(std::string("r_") + names[c]).get<double>();
        m.f1 = j.at(std::string("f1_") + names[c]).get<double>();
    }
    if (!j.at("auc").is_null()) r.auc = j.at("auc").get<double>();
    r.detection.precision = j.at("det_p").get<double>();
    r.detection.recall = j.at("det_r").get<double>();
    r.detection.f1 = j.at("det_f1").get<double>();
    r.mcc = j.at("mcc").get<double>();
    r.bacc = j.at("bacc").get<double>();
    r.images = j.at("images").get<long>();
    return r;
}

}  // namespace forensim::metrics
