#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "pvpm/tensor.hpp"

namespace pvpm {

// All numerics run in double once data leaves the float32 interchange format;
// gradient verification at 1e-4 relative tolerance needs the headroom.

// C x H x W feature volume, row-major.
struct Volume {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<double> v;

    Volume() = default;
    Volume(int c, int h, int w) : channels(c), height(h), width(w), v(std::size_t(c) * h * w, 0.0) {}

    double& at(int c, int h, int w) { return v[(std::size_t(c) * height + h) * width + w]; }
    double at(int c, int h, int w) const { return v[(std::size_t(c) * height + h) * width + w]; }

    std::size_t size() const { return v.size(); }
    bool same_shape(const Volume& o) const {
        return channels == o.channels && height == o.height && width == o.width;
    }
};

// Row-major matrix; also used for per-part feature stacks (rows = parts).
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> v;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), v(std::size_t(r) * c, 0.0) {}

    double& at(int r, int c) { return v[std::size_t(r) * cols + c]; }
    double at(int r, int c) const { return v[std::size_t(r) * cols + c]; }

    std::span<double> row(int r) { return {v.data() + std::size_t(r) * cols, std::size_t(cols)}; }
    std::span<const double> row(int r) const {
        return {v.data() + std::size_t(r) * cols, std::size_t(cols)};
    }
};

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(std::span<const double> a) {
    double s = 0.0;
    for (double x : a) s += x * x;
    return s;
}

Volume volume_from_tensor(const Tensor& t);
Tensor tensor_from_volume(const Volume& vol);

inline Tensor tensor_from_doubles(std::vector<std::uint32_t> dims, const std::vector<double>& v) {
    std::vector<float> data(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) data[i] = static_cast<float>(v[i]);
    return Tensor(std::move(dims), std::move(data));
}

inline std::vector<double> doubles_from_tensor(const Tensor& t) {
    return std::vector<double>(t.data.begin(), t.data.end());
}

}  // namespace pvpm
