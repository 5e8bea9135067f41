#include "pixelshield/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <sstream>

namespace pxs {

std::int64_t numel_of(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int e : shape) {
        if (e <= 0) throw UsageError("tensor extent must be positive, got " + std::to_string(e));
        n *= e;
    }
    return n;
}

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

Tensor::Tensor(std::vector<int> s, std::vector<float> d) : shape(std::move(s)), data(std::move(d)) {
    if (numel_of(shape) != static_cast<std::int64_t>(data.size()))
        throw UsageError("tensor data size does not match shape " + shape_str(shape));
}

Tensor Tensor::zeros(const std::vector<int>& shape) {
    Tensor t;
    t.shape = shape;
    t.data.assign(static_cast<std::size_t>(numel_of(shape)), 0.0f);
    return t;
}

Tensor Tensor::full(const std::vector<int>& shape, float value) {
    Tensor t;
    t.shape = shape;
    t.data.assign(static_cast<std::size_t>(numel_of(shape)), value);
    return t;
}

Tensor Tensor::scalar(float value) {
    Tensor t;
    t.shape = {};
    t.data = {value};
    return t;
}

bool all_finite(const float* p, std::int64_t n) {
    // NaN/Inf have all exponent bits set; OR-reduce the predicate so the
    // loop vectorizes without reassociating float math.
    std::uint32_t bad = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        std::uint32_t bits;
        std::memcpy(&bits, p + i, sizeof(bits));
        bad |= static_cast<std::uint32_t>((bits & 0x7f800000u) == 0x7f800000u);
    }
    return bad == 0;
}

void Tensor::check_finite(const std::string& context) const {
    if (!all_finite(data.data(), numel()))
        throw NumericError("non-finite value in " + context);
}

float Tensor::max_abs() const {
    float m = 0.0f;
    for (float v : data) m = std::max(m, std::fabs(v));
    return m;
}

double Tensor::sum() const {
    double s = 0.0;
    for (float v : data) s += v;
    return s;
}

double Tensor::sum_sq() const {
    double s = 0.0;
    for (float v : data) s += static_cast<double>(v) * v;
    return s;
}

static void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (!a.same_shape(b))
        throw UsageError(std::string(op) + ": shape mismatch " + shape_str(a.shape) + " vs " +
                         shape_str(b.shape));
}

Tensor add(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "add");
    Tensor out = a;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += b.data[i];
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "sub");
    Tensor out = a;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b.data[i];
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Tensor out = a;
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b.data[i];
    return out;
}

Tensor scale(const Tensor& a, float c) {
    Tensor out = a;
    for (float& v : out.data) v *= c;
    return out;
}

Tensor clamp01(const Tensor& a) { return clamp(a, 0.0f, 1.0f); }

Tensor clamp(const Tensor& a, float lo, float hi) {
    Tensor out = a;
    for (float& v : out.data) v = std::min(hi, std::max(lo, v));
    return out;
}

double mse(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mse");
    if (a.numel() == 0) throw UsageError("mse: empty tensors");
    double s = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        double d = static_cast<double>(a.data[i]) - b.data[i];
        s += d * d;
    }
    return s / static_cast<double>(a.numel());
}

}  // namespace pxs
