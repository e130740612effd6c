#include "pan/tensor.hpp"

#include <algorithm>
#include <sstream>

namespace pan {

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) {
        if (i) os << ",";
        os << s[i];
    }
    os << "]";
    return os.str();
}

int64_t shape_numel(const Shape& s) {
    if (s.empty()) throw DimensionError("empty shape");
    int64_t n = 1;
    for (int e : s) {
        if (e <= 0) throw DimensionError("non-positive extent in shape " + shape_str(s));
        n *= e;
    }
    return n;
}

Tensor::Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (static_cast<int64_t>(data.size()) != shape_numel(shape))
        throw DimensionError("buffer length " + std::to_string(data.size()) +
                             " does not match shape " + shape_str(shape));
}

Tensor Tensor::full(Shape s, double v) {
    Tensor t(std::move(s));
    t.fill(v);
    return t;
}

Tensor Tensor::scalar(double v) {
    Tensor t(Shape{1});
    t.data[0] = v;
    return t;
}

bool Tensor::all_finite() const {
    for (double v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

double Tensor::min() const {
    return *std::min_element(data.begin(), data.end());
}

double Tensor::max() const {
    return *std::max_element(data.begin(), data.end());
}

double Tensor::sum() const {
    double s = 0.0;
    for (double v : data) s += v;
    return s;
}

void Tensor::fill(double v) {
    std::fill(data.begin(), data.end(), v);
}

void Tensor::quantize_to_f32() {
    for (double& v : data) v = quantize_f32(v);
}

} // namespace pan
