#include "pixelshield/training.hpp"

#include <cmath>

#include "pixelshield/rng.hpp"
#include "pixelshield/threadpool.hpp"

namespace pxs {

BinaryMask random_training_mask(int h, int w, std::uint64_t seed) {
    if (h < 8 || w < 8) throw UsageError("random_training_mask: H, W must be >= 8");
    Rng rng(derive_seed(seed, "train_mask"));
    const auto total = static_cast<double>(h) * w;
    for (int attempt = 0; attempt < 16; ++attempt) {
        BinaryMask m(h, w);
        const int shapes = static_cast<int>(rng.uniform_int(1, 3));
        for (int s = 0; s < shapes; ++s) {
            const bool ellipse = rng.uniform() < 0.5;
            const double cx = rng.uniform(0.0, w - 1.0);
            const double cy = rng.uniform(0.0, h - 1.0);
            const double rx = rng.uniform(2.0, w / 2.0);
            const double ry = rng.uniform(2.0, h / 2.0);
            for (int y = 0; y < h; ++y)
                for (int x = 0; x < w; ++x) {
                    const double dx = (x - cx) / rx, dy = (y - cy) / ry;
                    const bool inside =
                        ellipse ? (dx * dx + dy * dy <= 1.0)
                                : (std::fabs(x - cx) <= rx && std::fabs(y - cy) <= ry);
                    if (inside) m.at(y, x) = 1;
                }
        }
        const double frac = static_cast<double>(m.area()) / total;
        if (frac >= 0.05 && frac <= 0.95) return m;
    }
    // Every draw was degenerate; fall back to a centered rectangle.
    BinaryMask m(h, w);
    for (int y = h / 4; y < 3 * h / 4; ++y)
        for (int x = w / 4; x < 3 * w / 4; ++x) m.at(y, x) = 1;
    return m;
}

TrainContext::TrainContext(DenoiserModel& model, NoiseSchedule sched, OptimizerState opt, int jobs,
                           double cond_dropout)
    : model_(model),
      sched_(std::move(sched)),
      opt_(opt),
      jobs_(std::max(1, jobs)),
      cond_dropout_(cond_dropout) {
    std::map<std::string, int> bind;
    const ArchDesc& a = model.arch;
    Graph& g = loss_graph_;
    bind[kInX] = g.input(kInX, {a.channels, a.image_size, a.image_size});
    bind[kInTemb] = g.input(kInTemb, {a.temb_dim});
    bind[kInCond] = g.input(kInCond, {a.cond_vocab});
    if (a.variant == ModelVariant::Inpaint) {
        bind[kInMask] = g.input(kInMask, {1, a.image_size, a.image_size});
        bind[kInSrcMasked] = g.input(kInSrcMasked, {a.channels, a.image_size, a.image_size});
    }
    const int eps_out = g.inline_graph(model.eps_graph.graph, model.eps_graph.output, bind);
    const int target = g.input("eps_target", {a.channels, a.image_size, a.image_size});
    loss_out_ = g.sum_sq(g.sub(eps_out, target));
    for (int t = 0; t < jobs_; ++t) executors_.push_back(std::make_unique<Executor>(loss_graph_));
}

double TrainContext::train_step(const TrainBatch& batch, std::uint64_t step_seed) {
    const std::size_t B = batch.images.size();
    if (B == 0 || batch.cond_ids.size() != B)
        throw UsageError("train_step: batch images/cond_ids mismatch");
    const ArchDesc& a = model_.arch;
    const bool inpaint = a.variant == ModelVariant::Inpaint;

    std::set<std::string> wrt;
    for (const auto& [name, shape] : loss_graph_.param_leaves()) wrt.insert(name);

    std::vector<double> losses(B, 0.0);
    std::vector<std::map<std::string, Tensor>> grads(B);

    parallel_for(static_cast<int>(B), jobs_, [&](int i, int tid) {
        const Tensor& img = batch.images[static_cast<std::size_t>(i)];
        if (img.shape != std::vector<int>{a.channels, a.image_size, a.image_size})
            throw UsageError("train_step: image " + std::to_string(i) + " has shape " +
                             shape_str(img.shape));
        Rng rng(derive_seed(step_seed, "train_item", static_cast<std::uint64_t>(i)));
        const int t = static_cast<int>(rng.uniform_int(1, sched_.T));
        const Tensor eps = rng.normal_tensor(img.shape);
        const Tensor x_t = q_sample(img, t, eps, sched_);
        int cond = batch.cond_ids[static_cast<std::size_t>(i)];
        if (cond_dropout_ > 0.0 && rng.uniform() < cond_dropout_) cond = 0;
        const Tensor onehot = model_.cond_onehot(cond);
        const Tensor temb = timestep_features(t, a.temb_dim);

        InputMap in;
        in[kInX] = &x_t;
        in[kInTemb] = &temb;
        in[kInCond] = &onehot;
        in["eps_target"] = &eps;
        Tensor mask_t, src_masked;
        if (inpaint) {
            const BinaryMask m = random_training_mask(
                a.image_size, a.image_size,
                derive_seed(step_seed, "train_item_mask", static_cast<std::uint64_t>(i)));
            mask_t = m.to_tensor();
            src_masked = mul(img, m.to_tensor(a.channels));
            in[kInMask] = &mask_t;
            in[kInSrcMasked] = &src_masked;
        }
        Executor& ex = *executors_[static_cast<std::size_t>(tid)];
        grads[static_cast<std::size_t>(i)] = ex.backward(model_.params, in, loss_out_, wrt);
        losses[static_cast<std::size_t>(i)] =
            static_cast<double>(ex.value(loss_out_).data[0]);
    });

    // Deterministic accumulation in batch order.
    std::map<std::string, Tensor> mean_grads = std::move(grads[0]);
    for (std::size_t i = 1; i < B; ++i)
        for (auto& [name, g] : mean_grads) {
            const Tensor& gi = grads[i].at(name);
            for (std::size_t k = 0; k < g.data.size(); ++k) g.data[k] += gi.data[k];
        }
    const float inv = 1.0f / static_cast<float>(B);
    for (auto& [name, g] : mean_grads)
        for (float& v : g.data) v *= inv;
    optimizer_step(model_.params, mean_grads, opt_);

    double mean_loss = 0.0;
    for (double l : losses) mean_loss += l;
    return mean_loss / static_cast<double>(B);
}

double train_step_standard(TrainContext& ctx, const TrainBatch& batch, std::uint64_t step_seed) {
    if (ctx.model().arch.variant != ModelVariant::Standard)
        throw UsageError("train_step_standard: model is not the standard variant");
    return ctx.train_step(batch, step_seed);
}

double train_step_inpaint(TrainContext& ctx, const TrainBatch& batch, std::uint64_t step_seed) {
    if (ctx.model().arch.variant != ModelVariant::Inpaint)
        throw UsageError("train_step_inpaint: model is not the inpaint variant");
    return ctx.train_step(batch, step_seed);
}

}  // namespace pxs
