#include "pixelshield/sampler.hpp"

#include <cmath>

#include "pixelshield/rng.hpp"

namespace pxs {

std::vector<int> ddim_timesteps(int T, int n_steps) {
    if (n_steps < 1 || n_steps > T)
        throw UsageError("ddim: n_steps must be in [1, T], got " + std::to_string(n_steps));
    std::vector<int> ts(static_cast<std::size_t>(n_steps) + 1);
    for (int i = 0; i <= n_steps; ++i)
        ts[static_cast<std::size_t>(i)] =
            static_cast<int>(std::llround(static_cast<double>(T) * (n_steps - i) / n_steps));
    return ts;
}

Tensor ddim_sample_fn(const EpsilonFn& eps, const NoiseSchedule& sched, int n_steps,
                      const std::vector<int>& shape, std::uint64_t seed) {
    const std::vector<int> ts = ddim_timesteps(sched.T, n_steps);
    Rng rng(derive_seed(seed, "ddim_xT"));
    Tensor x = rng.normal_tensor(shape);
    for (int i = 0; i < n_steps; ++i) {
        const int t_cur = ts[static_cast<std::size_t>(i)];
        const int t_next = ts[static_cast<std::size_t>(i) + 1];
        const Tensor e = eps(x, t_cur);
        if (!e.same_shape(x)) throw UsageError("ddim: eps predictor changed the shape");
        const float a_cur = static_cast<float>(sched.alpha_at(t_cur));
        const float s_cur = static_cast<float>(sched.sigma_at(t_cur));
        const float a_next = static_cast<float>(sched.alpha_at(t_next));
        const float s_next = static_cast<float>(sched.sigma_at(t_next));
        if (a_cur < 1e-6f) throw NumericError("ddim: alpha_t below division guard");
        for (std::size_t k = 0; k < x.data.size(); ++k) {
            float x0 = (x.data[k] - s_cur * e.data[k]) / a_cur;
            x0 = std::min(1.0f, std::max(0.0f, x0));
            x.data[k] = a_next * x0 + s_next * e.data[k];
        }
    }
    x.check_finite("ddim_sample");
    return clamp01(x);
}

Tensor ddim_sample(const DenoiserModel& model, const NoiseSchedule& sched, int n_steps, int cond,
                   std::uint64_t seed, const BinaryMask* mask, const Tensor* src) {
    const ArchDesc& a = model.arch;
    const bool inpaint = a.variant == ModelVariant::Inpaint;
    if (inpaint && (!mask || !src))
        throw UsageError("ddim_sample: inpaint model needs mask and source");
    if (!inpaint && (mask || src))
        throw UsageError("ddim_sample: standard model takes no mask conditioning");
    Tensor src_masked;
    if (inpaint) src_masked = mul(*src, mask->to_tensor(a.channels));
    Executor ex(model.eps_graph.graph);
    const Tensor onehot = model.cond_onehot(cond);
    Tensor mask_t;
    if (inpaint) mask_t = mask->to_tensor();
    EpsilonFn fn = [&](const Tensor& x_t, int t) {
        const Tensor temb = timestep_features(t, a.temb_dim);
        InputMap in;
        in[kInX] = &x_t;
        in[kInTemb] = &temb;
        in[kInCond] = &onehot;
        if (inpaint) {
            in[kInMask] = &mask_t;
            in[kInSrcMasked] = &src_masked;
        }
        return ex.forward(model.params, in, model.eps_graph.output);
    };
    return ddim_sample_fn(fn, sched, n_steps, {a.channels, a.image_size, a.image_size}, seed);
}

Tensor one_step_x0_estimate(const DenoiserModel& model, const NoiseSchedule& sched,
                            const Tensor& x_T, int cond, const BinaryMask* mask,
                            const Tensor* src) {
    const ArchDesc& a = model.arch;
    const bool inpaint = a.variant == ModelVariant::Inpaint;
    if (inpaint && (!mask || !src))
        throw UsageError("one_step_x0_estimate: inpaint model needs mask and source");
    const double a_T = sched.alpha_at(sched.T);
    if (a_T < 1e-6) throw NumericError("one_step_x0_estimate: alpha_T below division guard");
    Tensor src_masked;
    if (inpaint) src_masked = mul(*src, mask->to_tensor(a.channels));
    const Tensor e =
        model.eps(x_T, sched.T, cond, inpaint ? mask : nullptr, inpaint ? &src_masked : nullptr);
    const float s_T = static_cast<float>(sched.sigma_at(sched.T));
    Tensor out = x_T;
    for (std::size_t k = 0; k < out.data.size(); ++k)
        out.data[k] = (x_T.data[k] - s_T * e.data[k]) / static_cast<float>(a_T);
    return clamp01(out);
}

}  // namespace pxs
