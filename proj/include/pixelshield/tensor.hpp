#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pixelshield/errors.hpp"

namespace pxs {

// Dense row-major f32 tensor. Carrier for images, noises, parameters and
// gradients. Invariant: numel(shape) == data.size().
struct Tensor {
    std::vector<int> shape;
    std::vector<float> data;

    Tensor() = default;
    Tensor(std::vector<int> s, std::vector<float> d);

    static Tensor zeros(const std::vector<int>& shape);
    static Tensor full(const std::vector<int>& shape, float value);
    static Tensor scalar(float value);

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }

    float& at(std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
    float at(std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

    // Throws NumericError if any element is NaN or Inf.
    void check_finite(const std::string& context) const;

    float max_abs() const;
    double sum() const;
    double sum_sq() const;
};

std::int64_t numel_of(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);

// True iff every element has a finite value. Integer exponent test, no
// dependence on fast-math flags.
bool all_finite(const float* p, std::int64_t n);

// a + b, a - b, a * b elementwise; shapes must match.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float c);
Tensor clamp01(const Tensor& a);
Tensor clamp(const Tensor& a, float lo, float hi);

double mse(const Tensor& a, const Tensor& b);

}  // namespace pxs
