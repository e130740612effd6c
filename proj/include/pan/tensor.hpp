#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "pan/errors.hpp"

namespace pan {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
int64_t shape_numel(const Shape& s);

// Round-trips a double through float. Parameters and optimizer moments are
// kept on the f32 grid so checkpoint blobs (stored as little-endian f32)
// restore training state bit-exactly.
inline double quantize_f32(double x) { return static_cast<double>(static_cast<float>(x)); }

// Dense row-major N-d array of doubles. The outermost dimension varies
// slowest; a [N,C,H,W] tensor stores W contiguously.
struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;
    explicit Tensor(Shape s) : shape(std::move(s)), data(shape_numel(shape), 0.0) {}
    Tensor(Shape s, std::vector<double> d);

    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
    static Tensor full(Shape s, double v);
    static Tensor scalar(double v);

    int64_t numel() const { return static_cast<int64_t>(data.size()); }
    int dim(int i) const { return shape[static_cast<size_t>(i)]; }
    int rank() const { return static_cast<int>(shape.size()); }

    double& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
    const double& operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

    // 4-d accessor for [N,C,H,W] tensors; 3-d and 2-d variants for volumes
    // and projections. Bounds are the caller's responsibility.
    double& at(int n, int c, int h, int w) {
        return data[static_cast<size_t>(((static_cast<int64_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w)];
    }
    const double& at(int n, int c, int h, int w) const {
        return data[static_cast<size_t>(((static_cast<int64_t>(n) * shape[1] + c) * shape[2] + h) * shape[3] + w)];
    }
    double& at(int a, int b, int c) {
        return data[static_cast<size_t>((static_cast<int64_t>(a) * shape[1] + b) * shape[2] + c)];
    }
    const double& at(int a, int b, int c) const {
        return data[static_cast<size_t>((static_cast<int64_t>(a) * shape[1] + b) * shape[2] + c)];
    }
    double& at(int a, int b) { return data[static_cast<size_t>(static_cast<int64_t>(a) * shape[1] + b)]; }
    const double& at(int a, int b) const { return data[static_cast<size_t>(static_cast<int64_t>(a) * shape[1] + b)]; }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }
    bool all_finite() const;
    double min() const;
    double max() const;
    double sum() const;

    void fill(double v);
    void quantize_to_f32();
};

} // namespace pan
