#include "pixelshield/protect.hpp"

#include <chrono>
#include <cmath>

#include "pixelshield/rng.hpp"

namespace pxs {

LossKind loss_kind_from_string(const std::string& s) {
    if (s == "early_stage") return LossKind::EarlyStage;
    if (s == "recon_max") return LossKind::ReconMax;
    if (s == "targeted_image") return LossKind::TargetedImage;
    throw UsageError("unknown attack loss '" + s + "'");
}

std::string to_string(LossKind k) {
    switch (k) {
        case LossKind::EarlyStage: return "early_stage";
        case LossKind::ReconMax: return "recon_max";
        case LossKind::TargetedImage: return "targeted_image";
    }
    return "?";
}

void AttackConfig::validate(const ArchDesc& arch) const {
    if (!(gamma > 0.0 && gamma <= eta && eta <= 1.0))
        throw UsageError("attack config requires 0 < gamma <= eta <= 1");
    if (steps < 0) throw UsageError("attack config: steps must be >= 0");
    if (loss == LossKind::TargetedImage) {
        if (k_steps < 1 || k_steps > 8) throw UsageError("targeted_image: K must be in [1, 8]");
        const std::vector<int> want{arch.channels, arch.image_size, arch.image_size};
        if (target_image.shape != want)
            throw UsageError("targeted_image: target must have shape " + shape_str(want));
    }
    if (loss != LossKind::ReconMax && arch.variant != ModelVariant::Inpaint)
        throw UsageError(to_string(loss) + " requires the inpaint model variant");
    if (cond_id < 0 || cond_id >= arch.cond_vocab) throw UsageError("attack config: bad cond id");
    if (use_mask_augmentation && (augment.s <= 0.0 || augment.iters < 1))
        throw UsageError("attack config: bad augmentation params");
}

Tensor project_linf(const Tensor& delta, double eta, const Tensor& x_src) {
    if (eta < 0.0) throw UsageError("project_linf: eta must be >= 0");
    if (!delta.same_shape(x_src)) throw UsageError("project_linf: shape mismatch");
    const float e = static_cast<float>(eta);
    Tensor out = delta;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        float v = std::min(e, std::max(-e, out.data[i]));
        const float s = x_src.data[i];
        v = std::min(1.0f - s, std::max(-s, v));  // keep x_src + delta in [0,1]
        out.data[i] = v;
    }
    return out;
}

Tensor apply_protection(const Tensor& x_src, const Tensor& delta, Region region,
                        const BinaryMask* mask) {
    if (!delta.same_shape(x_src)) throw UsageError("apply_protection: shape mismatch");
    Tensor out = x_src;
    if (region == Region::MaskOnly) {
        if (!mask) throw UsageError("apply_protection: mask_only region needs a mask");
        const Tensor m = mask->to_tensor(x_src.shape[0]);
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += delta.data[i] * m.data[i];
    } else {
        for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] += delta.data[i];
    }
    return clamp01(out);
}

// ---------------------------------------------------------------------------
// Loss graphs

namespace {
constexpr const char* kDelta = "delta";
constexpr const char* kSrc = "x_src";
constexpr const char* kMaskRep = "mask_rep";
constexpr const char* kXT = "x_T";
constexpr const char* kTarget = "target";
constexpr const char* kAlphaB = "alpha_b";
constexpr const char* kSigEps = "sig_eps";
constexpr const char* kEpsTarget = "eps_t";

Tensor onehot_of(int cond, int vocab) {
    if (cond < 0 || cond >= vocab) throw UsageError("bad condition id " + std::to_string(cond));
    Tensor t = Tensor::zeros({vocab});
    t.data[static_cast<std::size_t>(cond)] = 1.0f;
    return t;
}
}  // namespace

AttackLossGraph AttackLossGraph::early_stage(const DenoiserModel& model,
                                             const NoiseSchedule& sched) {
    if (model.arch.variant != ModelVariant::Inpaint)
        throw UsageError("early_stage loss requires the inpaint variant");
    const ArchDesc& a = model.arch;
    AttackLossGraph lg;
    lg.kind_ = LossKind::EarlyStage;
    lg.channels_ = a.channels;
    lg.vocab_ = a.cond_vocab;
    lg.sched_ = sched;
    Graph& g = lg.graph_;
    const std::vector<int> img{a.channels, a.image_size, a.image_size};
    int delta = g.input(kDelta, img);
    int src = g.input(kSrc, img);
    int mask_rep = g.input(kMaskRep, img);
    int mask_ch = g.input(kInMask, {1, a.image_size, a.image_size});
    int x_T = g.input(kXT, img);
    int temb = g.constant(timestep_features(sched.T, a.temb_dim));
    int cond = g.input(kInCond, {a.cond_vocab});
    int src_masked = g.mul(g.add(src, delta), mask_rep);
    std::map<std::string, int> bind{{kInX, x_T},
                                    {kInTemb, temb},
                                    {kInCond, cond},
                                    {kInMask, mask_ch},
                                    {kInSrcMasked, src_masked}};
    int eps = g.inline_graph(model.eps_graph.graph, model.eps_graph.output, bind);
    lg.loss_out_ = g.sum_sq(eps);
    lg.ex_ = std::make_unique<Executor>(lg.graph_);
    return lg;
}

AttackLossGraph AttackLossGraph::recon_max(const DenoiserModel& model,
                                           const NoiseSchedule& sched) {
    const ArchDesc& a = model.arch;
    AttackLossGraph lg;
    lg.kind_ = LossKind::ReconMax;
    lg.channels_ = a.channels;
    lg.vocab_ = a.cond_vocab;
    lg.sched_ = sched;
    lg.temb_dim_ = a.temb_dim;
    Graph& g = lg.graph_;
    const std::vector<int> img{a.channels, a.image_size, a.image_size};
    int delta = g.input(kDelta, img);
    int src = g.input(kSrc, img);
    int alpha_b = g.input(kAlphaB, img);
    int sig_eps = g.input(kSigEps, img);
    int temb = g.input(kInTemb, {a.temb_dim});
    int cond = g.input(kInCond, {a.cond_vocab});
    int eps_t = g.input(kEpsTarget, img);
    int xp = g.add(src, delta);
    int x_t = g.add(g.mul(xp, alpha_b), sig_eps);
    std::map<std::string, int> bind{{kInX, x_t}, {kInTemb, temb}, {kInCond, cond}};
    if (a.variant == ModelVariant::Inpaint) {
        // Baseline formulation is mask-free: full-ones mask, full source.
        int ones = g.constant(Tensor::full({1, a.image_size, a.image_size}, 1.0f));
        bind[kInMask] = ones;
        bind[kInSrcMasked] = xp;
    }
    int eps = g.inline_graph(model.eps_graph.graph, model.eps_graph.output, bind);
    lg.loss_out_ = g.sum_sq(g.sub(eps, eps_t));
    lg.ex_ = std::make_unique<Executor>(lg.graph_);
    return lg;
}

AttackLossGraph AttackLossGraph::targeted(const DenoiserModel& model, const NoiseSchedule& sched,
                                          int k) {
    if (model.arch.variant != ModelVariant::Inpaint)
        throw UsageError("targeted_image loss requires the inpaint variant");
    if (k < 1 || k > 8) throw UsageError("targeted_image: K must be in [1, 8]");
    const ArchDesc& a = model.arch;
    AttackLossGraph lg;
    lg.kind_ = LossKind::TargetedImage;
    lg.channels_ = a.channels;
    lg.vocab_ = a.cond_vocab;
    lg.sched_ = sched;
    Graph& g = lg.graph_;
    const std::vector<int> img{a.channels, a.image_size, a.image_size};
    int delta = g.input(kDelta, img);
    int src = g.input(kSrc, img);
    int mask_rep = g.input(kMaskRep, img);
    int mask_ch = g.input(kInMask, {1, a.image_size, a.image_size});
    int x_T = g.input(kXT, img);
    int cond = g.input(kInCond, {a.cond_vocab});
    int target = g.input(kTarget, img);
    int src_masked = g.mul(g.add(src, delta), mask_rep);

    // Unrolled deterministic DDIM matching the sampler's update (clipped
    // x0 parameterization), differentiated end to end.
    const std::vector<int> taus = ddim_timesteps(sched.T, k);
    int x = x_T;
    for (int i = 0; i < k; ++i) {
        const int t_cur = taus[static_cast<std::size_t>(i)];
        const int t_next = taus[static_cast<std::size_t>(i) + 1];
        int temb = g.constant(timestep_features(t_cur, a.temb_dim));
        std::map<std::string, int> bind{{kInX, x},
                                        {kInTemb, temb},
                                        {kInCond, cond},
                                        {kInMask, mask_ch},
                                        {kInSrcMasked, src_masked}};
        int eps = g.inline_graph(model.eps_graph.graph, model.eps_graph.output, bind);
        const double a_cur = sched.alpha_at(t_cur), s_cur = sched.sigma_at(t_cur);
        const double a_next = sched.alpha_at(t_next), s_next = sched.sigma_at(t_next);
        int x0 = g.clamp01(
            g.scale(g.sub(x, g.scale(eps, static_cast<float>(s_cur))), static_cast<float>(1.0 / a_cur)));
        x = g.add(g.scale(x0, static_cast<float>(a_next)), g.scale(eps, static_cast<float>(s_next)));
    }
    lg.loss_out_ = g.sum_sq(g.sub(x, target));
    lg.ex_ = std::make_unique<Executor>(lg.graph_);
    return lg;
}

AttackLossGraph::Eval AttackLossGraph::run(const ParamStore& params, const InputMap& in,
                                           bool want_grad) {
    Eval e;
    if (want_grad) {
        auto grads = ex_->backward(params, in, loss_out_, {kDelta});
        e.grad = std::move(grads.at(kDelta));
    } else {
        ex_->forward(params, in, loss_out_);
    }
    e.loss = ex_->value_f64(loss_out_);
    return e;
}

AttackLossGraph::Eval AttackLossGraph::eval_early(const ParamStore& params, const Tensor& x_src,
                                                  const Tensor& delta, const BinaryMask& mask,
                                                  int cond, const Tensor& x_T, bool want_grad) {
    if (kind_ != LossKind::EarlyStage) throw UsageError("eval_early on wrong loss graph");
    if (mask.empty()) throw UsageError("early_stage loss: empty mask");
    const Tensor mask_rep = mask.to_tensor(channels_);
    const Tensor mask_ch = mask.to_tensor();
    const Tensor onehot = onehot_of(cond, vocab_);
    InputMap in{{kDelta, &delta}, {kSrc, &x_src},      {kMaskRep, &mask_rep},
                {kInMask, &mask_ch}, {kXT, &x_T},      {kInCond, &onehot}};
    return run(params, in, want_grad);
}

AttackLossGraph::Eval AttackLossGraph::eval_recon(const ParamStore& params, const Tensor& x_src,
                                                  const Tensor& delta, int cond, int t,
                                                  const Tensor& eps_t, bool want_grad) {
    if (kind_ != LossKind::ReconMax) throw UsageError("eval_recon on wrong loss graph");
    if (t < 1 || t > sched_.T) throw UsageError("recon loss: t outside schedule");
    const Tensor alpha_b = Tensor::full(x_src.shape, static_cast<float>(sched_.alpha_at(t)));
    Tensor sig_eps = eps_t;
    const float sg = static_cast<float>(sched_.sigma_at(t));
    for (float& v : sig_eps.data) v *= sg;
    const Tensor temb = timestep_features(t, temb_dim_);
    const Tensor onehot = onehot_of(cond, vocab_);
    InputMap in{{kDelta, &delta},    {kSrc, &x_src},  {kAlphaB, &alpha_b}, {kSigEps, &sig_eps},
                {kInTemb, &temb},    {kInCond, &onehot}, {kEpsTarget, &eps_t}};
    return run(params, in, want_grad);
}

AttackLossGraph::Eval AttackLossGraph::eval_targeted(const ParamStore& params, const Tensor& x_src,
                                                     const Tensor& delta, const BinaryMask& mask,
                                                     int cond, const Tensor& x_T,
                                                     const Tensor& target, bool want_grad) {
    if (kind_ != LossKind::TargetedImage) throw UsageError("eval_targeted on wrong loss graph");
    if (mask.empty()) throw UsageError("targeted loss: empty mask");
    const Tensor mask_rep = mask.to_tensor(channels_);
    const Tensor mask_ch = mask.to_tensor();
    const Tensor onehot = onehot_of(cond, vocab_);
    InputMap in{{kDelta, &delta},    {kSrc, &x_src}, {kMaskRep, &mask_rep}, {kInMask, &mask_ch},
                {kXT, &x_T},         {kTarget, &target}, {kInCond, &onehot}};
    return run(params, in, want_grad);
}

double loss_early_stage(const DenoiserModel& model, const NoiseSchedule& sched,
                        const Tensor& x_src, const Tensor& delta, const BinaryMask& mask, int cond,
                        const Tensor& x_T) {
    AttackLossGraph lg = AttackLossGraph::early_stage(model, sched);
    return lg.eval_early(model.params, x_src, delta, mask, cond, x_T, false).loss;
}

double loss_recon_max(const DenoiserModel& model, const Tensor& x_src, const Tensor& delta,
                      int cond, const NoiseSchedule& sched, std::uint64_t seed) {
    AttackLossGraph lg = AttackLossGraph::recon_max(model, sched);
    Rng rng(derive_seed(seed, "recon_loss"));
    const int t = static_cast<int>(rng.uniform_int(1, sched.T));
    const Tensor eps = rng.normal_tensor(x_src.shape);
    return lg.eval_recon(model.params, x_src, delta, cond, t, eps, false).loss;
}

double loss_targeted_image(const DenoiserModel& model, const NoiseSchedule& sched,
                           const Tensor& x_src, const Tensor& delta, const BinaryMask& mask,
                           int cond, const Tensor& target, int k, std::uint64_t seed) {
    AttackLossGraph lg = AttackLossGraph::targeted(model, sched, k);
    Rng rng(derive_seed(seed, "targeted_xT"));
    const Tensor x_T = rng.normal_tensor(x_src.shape);
    return lg.eval_targeted(model.params, x_src, delta, mask, cond, x_T, target, false).loss;
}

// ---------------------------------------------------------------------------
// PGD

ProtectionResult pgd_protect(const Tensor& x_src, const BinaryMask& m_tr,
                             const DenoiserModel& model, const NoiseSchedule& sched,
                             const AttackConfig& config, const PgdObserver& observer) {
    const auto t_start = std::chrono::steady_clock::now();
    const ArchDesc& a = model.arch;
    config.validate(a);
    if (x_src.shape != std::vector<int>{a.channels, a.image_size, a.image_size})
        throw UsageError("pgd_protect: image shape " + shape_str(x_src.shape) +
                         " does not match the model");
    const bool mask_loss = config.loss != LossKind::ReconMax;
    if (mask_loss && m_tr.empty()) throw UsageError("pgd_protect: empty mask");
    if (m_tr.h != a.image_size || m_tr.w != a.image_size)
        throw UsageError("pgd_protect: mask extents do not match the image");

    AttackLossGraph lg = [&] {
        switch (config.loss) {
            case LossKind::EarlyStage: return AttackLossGraph::early_stage(model, sched);
            case LossKind::ReconMax: return AttackLossGraph::recon_max(model, sched);
            case LossKind::TargetedImage:
            default: return AttackLossGraph::targeted(model, sched, config.k_steps);
        }
    }();

    const bool maximize = config.loss != LossKind::TargetedImage;
    const Tensor region_rep = config.region == Region::MaskOnly
                                  ? m_tr.to_tensor(a.channels)
                                  : Tensor::full(x_src.shape, 1.0f);

    ProtectionResult res;
    res.config = config;
    res.delta = Tensor::zeros(x_src.shape);
    Tensor best_delta = res.delta;
    double best_loss = maximize ? -1.0 : 1e300;

    Tensor x_T, eps_t;
    int t_recon = 1;
    BinaryMask mask_it = m_tr;
    for (int it = 0; it < config.steps; ++it) {
        const bool draw = config.noise_resample || it == 0;
        if (config.loss == LossKind::ReconMax) {
            if (draw) {
                Rng rng(derive_seed(config.seed, "pgd_noise", static_cast<std::uint64_t>(it)));
                t_recon = static_cast<int>(rng.uniform_int(1, sched.T));
                eps_t = rng.normal_tensor(x_src.shape);
            }
        } else if (draw) {
            Rng rng(derive_seed(config.seed, "pgd_noise", static_cast<std::uint64_t>(it)));
            x_T = rng.normal_tensor(x_src.shape);
        }
        if (mask_loss) {
            if (config.use_mask_augmentation) {
                AugmentParams ap = config.augment;
                ap.seed = derive_seed(config.seed, "pgd_mask", static_cast<std::uint64_t>(it));
                mask_it = augment_mask(m_tr, ap);
            } else {
                mask_it = m_tr;
            }
        }

        AttackLossGraph::Eval ev;
        switch (config.loss) {
            case LossKind::EarlyStage:
                ev = lg.eval_early(model.params, x_src, res.delta, mask_it, config.cond_id, x_T,
                                   true);
                break;
            case LossKind::ReconMax:
                ev = lg.eval_recon(model.params, x_src, res.delta, config.cond_id, t_recon, eps_t,
                                   true);
                break;
            case LossKind::TargetedImage:
                ev = lg.eval_targeted(model.params, x_src, res.delta, mask_it, config.cond_id, x_T,
                                      config.target_image, true);
                break;
        }
        if (!std::isfinite(ev.loss))
            throw NumericError("pgd_protect: non-finite loss at iteration " + std::to_string(it));
        res.loss_trace.push_back(ev.loss);
        const bool better = maximize ? ev.loss > best_loss : ev.loss < best_loss;
        if (better) {
            best_loss = ev.loss;
            best_delta = res.delta;
        }
        res.best_trace.push_back(best_loss);

        const float step = static_cast<float>((maximize ? 1.0 : -1.0) * config.gamma);
        for (std::size_t i = 0; i < res.delta.data.size(); ++i) {
            const float gv = ev.grad.data[i];
            const float sign = gv > 0.0f ? 1.0f : (gv < 0.0f ? -1.0f : 0.0f);
            res.delta.data[i] += step * sign;
        }
        res.delta = project_linf(res.delta, config.eta, x_src);
        for (std::size_t i = 0; i < res.delta.data.size(); ++i)
            res.delta.data[i] *= region_rep.data[i];
        if (observer) observer(it, res.delta, ev.loss);
    }
    res.delta = std::move(best_delta);
    res.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return res;
}

Tensor random_noise_delta(const Tensor& x_src, const BinaryMask& m_tr, double eta, Region region,
                          std::uint64_t seed) {
    Rng rng(derive_seed(seed, "random_noise"));
    Tensor delta = rng.uniform_tensor(x_src.shape, static_cast<float>(-eta), static_cast<float>(eta));
    if (region == Region::MaskOnly) {
        const Tensor m = m_tr.to_tensor(x_src.shape[0]);
        for (std::size_t i = 0; i < delta.data.size(); ++i) delta.data[i] *= m.data[i];
    }
    return project_linf(delta, eta, x_src);
}

}  // namespace pxs
