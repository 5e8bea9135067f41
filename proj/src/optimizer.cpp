#include "pixelshield/optimizer.hpp"

#include <cmath>

namespace pxs {

void optimizer_step(ParamStore& params, const std::map<std::string, Tensor>& grads,
                    OptimizerState& state) {
    if (state.lr <= 0.0f) throw UsageError("optimizer_step: learning rate must be > 0");
    state.step_count += 1;
    const double bc1 = 1.0 - std::pow(static_cast<double>(state.beta1), static_cast<double>(state.step_count));
    const double bc2 = 1.0 - std::pow(static_cast<double>(state.beta2), static_cast<double>(state.step_count));
    for (const auto& [name, g] : grads) {
        auto pit = params.find(name);
        if (pit == params.end()) throw UsageError("optimizer_step: unknown param '" + name + "'");
        Tensor& p = pit->second;
        if (!p.same_shape(g))
            throw UsageError("optimizer_step: grad shape " + shape_str(g.shape) +
                             " does not match param '" + name + "' " + shape_str(p.shape));
        Tensor& m = state.m.try_emplace(name, Tensor::zeros(p.shape)).first->second;
        Tensor& v = state.v.try_emplace(name, Tensor::zeros(p.shape)).first->second;
        for (std::size_t i = 0; i < p.data.size(); ++i) {
            m.data[i] = state.beta1 * m.data[i] + (1.0f - state.beta1) * g.data[i];
            v.data[i] = state.beta2 * v.data[i] + (1.0f - state.beta2) * g.data[i] * g.data[i];
            const double mhat = m.data[i] / bc1;
            const double vhat = v.data[i] / bc2;
            p.data[i] -= static_cast<float>(state.lr * mhat / (std::sqrt(vhat) + state.eps));
        }
    }
}

}  // namespace pxs
