#include "pixelshield/schedule.hpp"

#include <algorithm>
#include <cmath>

namespace pxs {

ScheduleKind schedule_kind_from_string(const std::string& s) {
    if (s == "cosine") return ScheduleKind::Cosine;
    if (s == "linear") return ScheduleKind::Linear;
    throw UsageError("unknown schedule kind '" + s + "'");
}

std::string to_string(ScheduleKind k) { return k == ScheduleKind::Cosine ? "cosine" : "linear"; }

NoiseSchedule make_schedule(int T, ScheduleKind kind) {
    if (T < 2) throw UsageError("make_schedule: T must be >= 2");
    std::vector<double> betas(static_cast<std::size_t>(T) + 1, 0.0);
    if (kind == ScheduleKind::Linear) {
        // Classic linear betas 1e-4..0.02 at T=1000, rescaled by 1000/T so
        // the terminal signal level stays schedule-length independent.
        const double scale = 1000.0 / T;
        for (int t = 1; t <= T; ++t) {
            const double frac = T > 1 ? static_cast<double>(t - 1) / (T - 1) : 0.0;
            betas[static_cast<std::size_t>(t)] = (1e-4 + (0.02 - 1e-4) * frac) * scale;
        }
    } else {
        const double s = 0.008;
        auto f = [&](double t) {
            const double a = std::cos((t / T + s) / (1.0 + s) * 3.14159265358979323846 / 2.0);
            return a * a;
        };
        double prev = f(0.0);
        for (int t = 1; t <= T; ++t) {
            const double cur = f(static_cast<double>(t));
            betas[static_cast<std::size_t>(t)] = 1.0 - cur / prev;
            prev = cur;
        }
    }
    for (int t = 1; t <= T; ++t)
        betas[static_cast<std::size_t>(t)] =
            std::min(0.999, std::max(1e-8, betas[static_cast<std::size_t>(t)]));

    NoiseSchedule sched;
    sched.T = T;
    sched.kind = kind;
    sched.alpha.assign(static_cast<std::size_t>(T) + 1, 1.0);
    sched.sigma.assign(static_cast<std::size_t>(T) + 1, 0.0);
    sched.lambda.assign(static_cast<std::size_t>(T) + 1, 0.0);
    double alpha_bar = 1.0;
    sched.lambda[0] = 1e30;  // clean endpoint
    for (int t = 1; t <= T; ++t) {
        alpha_bar *= 1.0 - betas[static_cast<std::size_t>(t)];
        const double a = std::sqrt(alpha_bar);
        const double sg = std::sqrt(1.0 - alpha_bar);
        sched.alpha[static_cast<std::size_t>(t)] = a;
        sched.sigma[static_cast<std::size_t>(t)] = sg;
        sched.lambda[static_cast<std::size_t>(t)] = std::log(alpha_bar / (1.0 - alpha_bar));
    }
    return sched;
}

Tensor q_sample(const Tensor& x, int t, const Tensor& eps, const NoiseSchedule& sched) {
    if (t < 1 || t > sched.T)
        throw UsageError("q_sample: t=" + std::to_string(t) + " outside [1," +
                         std::to_string(sched.T) + "]");
    if (!x.same_shape(eps)) throw UsageError("q_sample: eps shape mismatch");
    const float a = static_cast<float>(sched.alpha_at(t));
    const float sg = static_cast<float>(sched.sigma_at(t));
    Tensor out = x;
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = a * x.data[i] + sg * eps.data[i];
    return out;
}

Tensor timestep_features(double t, int dim) {
    if (dim < 2 || dim % 2 != 0) throw UsageError("timestep_features: dim must be even and >= 2");
    Tensor out = Tensor::zeros({dim});
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * i / half);
        out.data[static_cast<std::size_t>(2 * i)] = static_cast<float>(std::sin(t * freq));
        out.data[static_cast<std::size_t>(2 * i + 1)] = static_cast<float>(std::cos(t * freq));
    }
    return out;
}

}  // namespace pxs
