#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "pixelshield/graph.hpp"
#include "pixelshield/tensor.hpp"

namespace pxs {

// Adam with bias correction. Defaults: lr 1e-3, decays (0.9, 0.999), eps 1e-8.
struct OptimizerState {
    float lr = 1e-3f;
    float beta1 = 0.9f;
    float beta2 = 0.999f;
    float eps = 1e-8f;
    std::int64_t step_count = 0;
    std::map<std::string, Tensor> m;  // first moments, keyed like params
    std::map<std::string, Tensor> v;  // second moments
};

// One update over every entry of `grads`; params and accumulators must have
// matching shapes. Increments step_count.
void optimizer_step(ParamStore& params, const std::map<std::string, Tensor>& grads,
                    OptimizerState& state);

}  // namespace pxs
