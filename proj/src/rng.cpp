#include "pixelshield/rng.hpp"

#include <cmath>

namespace pxs {

std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t derive_seed(std::uint64_t master, const std::string& path, std::uint64_t a,
                          std::uint64_t b, std::uint64_t c) {
    std::uint64_t s = master ^ fnv1a64(path);
    s ^= 0x2545f4914f6cdd1dULL * (a + 1);
    s ^= 0xd6e8feb86659fd93ULL * (b + 1);
    s ^= 0xa0761d6478bd642fULL * (c + 1);
    std::uint64_t st = s;
    return splitmix64(st);
}

double Rng::uniform() {
    // 53-bit mantissa.
    return static_cast<double>(next_u64() >> 11) * (1.0 / 9007199254740992.0);
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
    std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    return lo + static_cast<std::int64_t>(next_u64() % span);
}

double Rng::normal() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    double u1 = 0.0;
    do {
        u1 = uniform();
    } while (u1 <= 1e-300);
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double th = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(th);
    have_spare_ = true;
    return r * std::cos(th);
}

Tensor Rng::normal_tensor(const std::vector<int>& shape) {
    Tensor t = Tensor::zeros(shape);
    for (float& v : t.data) v = static_cast<float>(normal());
    return t;
}

Tensor Rng::uniform_tensor(const std::vector<int>& shape, float lo, float hi) {
    Tensor t = Tensor::zeros(shape);
    for (float& v : t.data) v = static_cast<float>(uniform(lo, hi));
    return t;
}

}  // namespace pxs
