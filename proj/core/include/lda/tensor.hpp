#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace lda {

// Dense image stack: row-major over pixels, channel index fastest, so
// data[(y*width + x)*channels + c].  A grayscale image has channels == 1.
class Tensor {
public:
    Tensor() = default;
    Tensor(int height, int width, int channels = 1)
        : h_(height), w_(width), c_(channels),
          data_(static_cast<std::size_t>(height) * width * channels, 0.0) {}

    int height() const { return h_; }
    int width() const { return w_; }
    int channels() const { return c_; }
    std::size_t size() const { return data_.size(); }

    double& operator()(int y, int x, int c = 0) {
        return data_[(static_cast<std::size_t>(y) * w_ + x) * c_ + c];
    }
    const double& operator()(int y, int x, int c = 0) const {
        return data_[(static_cast<std::size_t>(y) * w_ + x) * c_ + c];
    }
    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    bool same_shape(const Tensor& o) const {
        return h_ == o.h_ && w_ == o.w_ && c_ == o.c_;
    }

    void fill(double v) { data_.assign(data_.size(), v); }

private:
    int h_ = 0, w_ = 0, c_ = 0;
    std::vector<double> data_;
};

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* where) {
    if (!a.same_shape(b)) throw std::invalid_argument(std::string(where) + ": shape mismatch");
}

inline double dot(const Tensor& a, const Tensor& b) {
    check_same_shape(a, b, "dot");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm(const Tensor& a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * a[i];
    return std::sqrt(s);
}

// y += s * x
inline void axpy(double s, const Tensor& x, Tensor& y) {
    check_same_shape(x, y, "axpy");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += s * x[i];
}

// a + s*b as a new tensor
inline Tensor add_scaled(const Tensor& a, double s, const Tensor& b) {
    check_same_shape(a, b, "add_scaled");
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += s * b[i];
    return out;
}

inline bool all_finite(const Tensor& a) {
    for (std::size_t i = 0; i < a.size(); ++i)
        if (!std::isfinite(a[i])) return false;
    return true;
}

}  // namespace lda
