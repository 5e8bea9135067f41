#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "pixelshield/denoiser.hpp"
#include "pixelshield/mask.hpp"
#include "pixelshield/sampler.hpp"

namespace pxs {

enum class LossKind { EarlyStage, ReconMax, TargetedImage };
enum class Region { MaskOnly, WholeImage };

LossKind loss_kind_from_string(const std::string& s);
std::string to_string(LossKind k);

struct AttackConfig {
    LossKind loss = LossKind::EarlyStage;
    double eta = 16.0 / 255.0;    // l-inf budget
    double gamma = 1.0 / 255.0;   // step size
    int steps = 300;
    bool use_mask_augmentation = true;
    AugmentParams augment;        // seed ignored; per-iteration seeds are derived
    bool noise_resample = true;   // fresh x_T (and t, eps) each iteration
    Tensor target_image;          // TargetedImage only
    int k_steps = 4;              // DDIM steps differentiated through (TargetedImage)
    int cond_id = 0;              // empty-prompt analog: 0 = unconditional
    Region region = Region::MaskOnly;
    std::uint64_t seed = 0;

    void validate(const ArchDesc& arch) const;
};

struct ProtectionResult {
    Tensor delta;
    std::vector<double> loss_trace;  // loss at each evaluated iterate
    std::vector<double> best_trace;  // running best (adversarially better-or-equal)
    double wall_seconds = 0.0;
    AttackConfig config;
};

// Clamp delta into the l-inf ball of radius eta and keep x_src + delta a
// valid image in [0,1].
Tensor project_linf(const Tensor& delta, double eta, const Tensor& x_src);

// x_src + delta with delta zeroed outside the region, clamped to [0,1].
Tensor apply_protection(const Tensor& x_src, const Tensor& delta, Region region,
                        const BinaryMask* mask = nullptr);

// Differentiable attack losses, built once per (model, kind) and evaluated
// many times with fresh inputs. Gradients are w.r.t. delta.
class AttackLossGraph {
public:
    static AttackLossGraph early_stage(const DenoiserModel& model, const NoiseSchedule& sched);
    static AttackLossGraph recon_max(const DenoiserModel& model, const NoiseSchedule& sched);
    static AttackLossGraph targeted(const DenoiserModel& model, const NoiseSchedule& sched, int k);

    struct Eval {
        double loss = 0.0;
        Tensor grad;  // d loss / d delta
    };

    // Norm of the initial predicted noise under protected conditioning:
    // || eps(x_T; cond, T, M, (x_src + delta) * M) ||^2.
    Eval eval_early(const ParamStore& params, const Tensor& x_src, const Tensor& delta,
                    const BinaryMask& mask, int cond, const Tensor& x_T, bool want_grad);

    // || eps(alpha_t (x_src + delta) + sigma_t eps_t; cond, t, ...) - eps_t ||^2
    Eval eval_recon(const ParamStore& params, const Tensor& x_src, const Tensor& delta, int cond,
                    int t, const Tensor& eps_t, bool want_grad);

    // || ddim_K(x_T; protected conditioning) - target ||^2 (minimized).
    Eval eval_targeted(const ParamStore& params, const Tensor& x_src, const Tensor& delta,
                       const BinaryMask& mask, int cond, const Tensor& x_T, const Tensor& target,
                       bool want_grad);

    LossKind kind() const { return kind_; }

private:
    AttackLossGraph() = default;
    Eval run(const ParamStore& params, const InputMap& in, bool want_grad);
    LossKind kind_ = LossKind::EarlyStage;
    int channels_ = 1;
    int temb_dim_ = 16;
    int vocab_ = 1;
    NoiseSchedule sched_;
    Graph graph_;
    int loss_out_ = -1;
    std::unique_ptr<Executor> ex_;
};

// Value-only convenience wrappers.
double loss_early_stage(const DenoiserModel& model, const NoiseSchedule& sched,
                        const Tensor& x_src, const Tensor& delta, const BinaryMask& mask, int cond,
                        const Tensor& x_T);
double loss_recon_max(const DenoiserModel& model, const Tensor& x_src, const Tensor& delta,
                      int cond, const NoiseSchedule& sched, std::uint64_t seed);
double loss_targeted_image(const DenoiserModel& model, const NoiseSchedule& sched,
                           const Tensor& x_src, const Tensor& delta, const BinaryMask& mask,
                           int cond, const Tensor& target, int k, std::uint64_t seed);

// Called after each iteration with the freshly projected delta.
using PgdObserver = std::function<void(int iter, const Tensor& delta, double loss)>;

// Signed-gradient ascent (descent for the targeted loss) with l-inf
// projection, per-iteration mask augmentation and noise resampling, and
// best-iterate selection. Deterministic per config seed.
ProtectionResult pgd_protect(const Tensor& x_src, const BinaryMask& m_tr,
                             const DenoiserModel& model, const NoiseSchedule& sched,
                             const AttackConfig& config, const PgdObserver& observer = nullptr);

// The null baseline: uniform +-eta noise inside the region, projected.
Tensor random_noise_delta(const Tensor& x_src, const BinaryMask& m_tr, double eta, Region region,
                          std::uint64_t seed);

}  // namespace pxs
