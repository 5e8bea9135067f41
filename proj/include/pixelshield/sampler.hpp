#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "pixelshield/denoiser.hpp"
#include "pixelshield/schedule.hpp"

namespace pxs {

// Epsilon predictor as a function of (x_t, t); conditioning is baked in.
// Lets tests drive the sampler with analytic oracles.
using EpsilonFn = std::function<Tensor(const Tensor& x_t, int t)>;

// Evenly spaced integer timesteps T = ts[0] > ts[1] > ... > ts[n] = 0.
std::vector<int> ddim_timesteps(int T, int n_steps);

// Deterministic DDIM (eta = 0) from seeded Gaussian x_T, with the predicted
// x0 clipped to [0,1] at every step. Output in [0,1].
Tensor ddim_sample_fn(const EpsilonFn& eps, const NoiseSchedule& sched, int n_steps,
                      const std::vector<int>& shape, std::uint64_t seed);

// As above with a denoiser model; mask/src must be given iff the model is the
// inpaint variant (src is the unmasked source; conditioning uses src * mask).
Tensor ddim_sample(const DenoiserModel& model, const NoiseSchedule& sched, int n_steps, int cond,
                   std::uint64_t seed, const BinaryMask* mask = nullptr,
                   const Tensor* src = nullptr);

// x0_hat = (x_T - sigma_T * eps(x_T)) / alpha_T, clamped to [0,1].
Tensor one_step_x0_estimate(const DenoiserModel& model, const NoiseSchedule& sched,
                            const Tensor& x_T, int cond, const BinaryMask* mask = nullptr,
                            const Tensor* src = nullptr);

}  // namespace pxs
