#pragma once

#include <cstdint>
#include <string>

#include "pixelshield/tensor.hpp"

namespace pxs {

// All randomness in the project flows from one master seed. Streams are
// derived by hashing a semantic path (e.g. "train/item", step, index) into
// the master seed, so module-level seeds are stable across refactors and
// independent of thread scheduling.
//
// derive_seed(master, path, a, b, c) = splitmix of (master ^ fnv1a(path) ^ mix(a,b,c))

std::uint64_t fnv1a64(const std::string& s);
std::uint64_t splitmix64(std::uint64_t& state);
std::uint64_t derive_seed(std::uint64_t master, const std::string& path, std::uint64_t a = 0,
                          std::uint64_t b = 0, std::uint64_t c = 0);

// Deterministic, platform-independent generator (splitmix64 core).
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed ^ 0x9e3779b97f4a7c15ULL) {}

    std::uint64_t next_u64() { return splitmix64(state_); }

    // Uniform in [0, 1).
    double uniform();
    // Uniform in [lo, hi).
    double uniform(double lo, double hi);
    // Integer in [lo, hi] inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
    // Standard normal via Box-Muller.
    double normal();

    Tensor normal_tensor(const std::vector<int>& shape);
    Tensor uniform_tensor(const std::vector<int>& shape, float lo, float hi);

private:
    std::uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace pxs
