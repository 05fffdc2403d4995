#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace forensim {

using Shape = std::vector<int>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int d : s) {
        if (d < 0) throw std::invalid_argument("tensor dimension must be nonnegative");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        out += std::to_string(s[i]);
        if (i + 1 < s.size()) out += "x";
    }
    return out + "]";
}

/// Dense row-major tensor of doubles. All model math runs in double
/// precision; this is the one value type shared by every module.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape) : shape_(std::move(shape)), data_(shape_numel(shape_), 0.0) {}
    Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

    static Tensor from(Shape shape, std::vector<double> values) {
        if (shape_numel(shape) != values.size())
            throw std::invalid_argument("tensor data does not match shape " + shape_str(shape));
        Tensor t;
        t.shape_ = std::move(shape);
        t.data_ = std::move(values);
        return t;
    }

    int ndim() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const {
        if (i < 0) i += ndim();
        if (i < 0 || i >= ndim()) throw std::out_of_range("tensor dim index");
        return shape_[static_cast<std::size_t>(i)];
    }
    const Shape& shape() const { return shape_; }
    std::size_t size() const { return data_.size(); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& at(int i, int j) {
        return data_[static_cast<std::size_t>(i) * shape_[1] + j];
    }
    double at(int i, int j) const {
        return data_[static_cast<std::size_t>(i) * shape_[1] + j];
    }
    double& at(int i, int j, int k) {
        return data_[(static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k];
    }
    double at(int i, int j, int k) const {
        return data_[(static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k];
    }
    double& at(int i, int j, int k, int l) {
        return data_[((static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
    }
    double at(int i, int j, int k, int l) const {
        return data_[((static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l];
    }

    Tensor reshaped(Shape shape) const {
        if (shape_numel(shape) != size())
            throw std::invalid_argument("reshape " + shape_str(shape_) + " -> " + shape_str(shape));
        Tensor t = *this;
        t.shape_ = std::move(shape);
        return t;
    }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

private:
    Shape shape_;
    std::vector<double> data_;
};

inline Tensor zeros_like(const Tensor& t) { return Tensor(t.shape()); }

inline bool all_finite(const Tensor& t) {
    for (std::size_t i = 0; i < t.size(); ++i)
        if (!std::isfinite(t[i])) return false;
    return true;
}

inline void check_finite(const Tensor& t, const char* what) {
    if (!all_finite(t)) throw std::invalid_argument(std::string(what) + ": non-finite values");
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw std::invalid_argument("max_abs_diff: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline double max_rel_diff(const Tensor& a, const Tensor& b, double floor = 1e-12) {
    if (!a.same_shape(b)) throw std::invalid_argument("max_rel_diff: shape mismatch");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
        m = std::max(m, std::abs(a[i] - b[i]) / denom);
    }
    return m;
}

}  // namespace forensim
