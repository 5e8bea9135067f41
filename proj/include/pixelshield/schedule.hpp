#pragma once

#include <string>
#include <vector>

#include "pixelshield/tensor.hpp"

namespace pxs {

enum class ScheduleKind { Cosine, Linear };

ScheduleKind schedule_kind_from_string(const std::string& s);
std::string to_string(ScheduleKind k);

// Variance-preserving schedule: alpha_t^2 + sigma_t^2 = 1, and the log
// signal-to-noise ratio lambda_t = log(alpha_t^2 / sigma_t^2) strictly
// decreases with t. Index 0 is the clean endpoint (alpha=1, sigma=0);
// entries 1..T are the noised steps.
struct NoiseSchedule {
    int T = 0;
    ScheduleKind kind = ScheduleKind::Cosine;
    std::vector<double> alpha;   // size T+1
    std::vector<double> sigma;   // size T+1
    std::vector<double> lambda;  // size T+1; lambda[0] is +inf conceptually, stored huge

    double alpha_at(int t) const { return alpha[static_cast<std::size_t>(t)]; }
    double sigma_at(int t) const { return sigma[static_cast<std::size_t>(t)]; }
};

// Builds the schedule; throws UsageError for T < 2. Guarantees
// alpha_T^2 < 1e-3 for both kinds.
NoiseSchedule make_schedule(int T, ScheduleKind kind);

// Forward process draw: x_t = alpha_t * x + sigma_t * eps.
Tensor q_sample(const Tensor& x, int t, const Tensor& eps, const NoiseSchedule& sched);

// Sinusoidal features of a (possibly fractional) timestep, length dim.
Tensor timestep_features(double t, int dim);

}  // namespace pxs
