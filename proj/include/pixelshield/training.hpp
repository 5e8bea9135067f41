#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "pixelshield/denoiser.hpp"
#include "pixelshield/optimizer.hpp"

namespace pxs {

struct TrainBatch {
    std::vector<Tensor> images;  // each [C,H,W], values in [0,1]
    std::vector<int> cond_ids;
};

// KEEP-region mask for inpainting fine-tuning: the union of 1-3 random
// rectangles/ellipses, never empty or full (coverage kept in [5%, 95%]).
BinaryMask random_training_mask(int h, int w, std::uint64_t seed);

// Holds the per-model loss graph, optimizer state and per-thread executors.
class TrainContext {
public:
    TrainContext(DenoiserModel& model, NoiseSchedule sched, OptimizerState opt = {}, int jobs = 1,
                 double cond_dropout = 0.1);

    // One optimizer step on eps-prediction loss; samples t ~ U(1,T) and
    // eps ~ N(0,I) per item, deterministic in (params, batch, step_seed).
    // Returns the pre-step loss: mean over the batch of ||eps_hat - eps||^2.
    double train_step(const TrainBatch& batch, std::uint64_t step_seed);

    DenoiserModel& model() { return model_; }
    const NoiseSchedule& schedule() const { return sched_; }
    OptimizerState& optimizer() { return opt_; }

private:
    DenoiserModel& model_;
    NoiseSchedule sched_;
    OptimizerState opt_;
    int jobs_;
    double cond_dropout_;
    Graph loss_graph_;
    int loss_out_ = -1;
    std::vector<std::unique_ptr<Executor>> executors_;
};

double train_step_standard(TrainContext& ctx, const TrainBatch& batch, std::uint64_t step_seed);
double train_step_inpaint(TrainContext& ctx, const TrainBatch& batch, std::uint64_t step_seed);

}  // namespace pxs
