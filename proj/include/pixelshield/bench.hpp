#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pixelshield/protect.hpp"
#include "pixelshield/purify.hpp"

namespace pxs {

// Peak signal-to-noise ratio with MAX = 1.0 (full data range); identical
// inputs give +inf, reported as the "inf" literal and compared greater than
// any finite value.
double psnr(const Tensor& a, const Tensor& b);

// mask * src + (1 - mask) * edited.
Tensor postprocess_paste(const Tensor& src, const BinaryMask& mask, const Tensor& edited);

// DDIM edit with inpainting conditioning, then the source's kept region is
// pasted over the generated result.
Tensor edit(const DenoiserModel& model, const NoiseSchedule& sched, const Tensor& x_input,
            const BinaryMask& mask, int cond, int n_steps, std::uint64_t seed);

struct DatasetSpec {
    int image_size = 32;
    int channels = 1;
    int classes = 4;  // background classes; edit condition ids are 1..classes
};

struct BenchItem {
    int image_id = 0;
    int bg_class = 1;
    Tensor image;
    BinaryMask m_gt;
    MaskFamily family;
    std::vector<int> cond_ids;
};

// Synthetic 32x32 scenes: a two-tone elliptical foreground blob with a few
// interior features over one of `classes` textured backgrounds. The blob
// support is the ground-truth sensitive mask.
std::vector<BenchItem> generate_dataset(int n_images, std::uint64_t seed,
                                        const DatasetSpec& spec = {});

// Mean intensity of class backgrounds as produced by the generator.
double background_class_mean(int bg_class, const DatasetSpec& spec = {});

struct BenchRecord {
    int image_id = 0;
    std::string mask_id;
    std::string split;
    int cond_id = 0;
    std::string method;
    std::string purifier;      // empty when none
    std::string target_model;
    double psnr_db = 0.0;
    double wall_s = 0.0;       // protection wall time for this (item, method)
    std::uint64_t seed = 0;    // edit seed (shared between clean and protected edits)
};

struct BenchFailure {
    std::string context;
    std::string message;
};

struct GroupStats {
    std::string method;
    std::string split;
    std::string purifier;
    double median = 0.0;
    double mean = 0.0;
    int count = 0;
};

struct BenchOutput {
    std::vector<BenchRecord> records;
    std::vector<GroupStats> groups;
    std::vector<BenchFailure> failures;
    int total_jobs = 0;
    bool run_failed = false;  // >= 5% job failures
    // Per method: image_id -> optimized delta (for archives and transfer).
    std::map<std::string, std::map<int, Tensor>> deltas;
    std::map<std::string, Region> method_regions;
};

inline const std::vector<std::string> kAllMethods{
    "ours_early_stage", "ours_no_aug",          "photoguard_targeted",
    "advdm_recon",      "random_noise_control", "unprotected"};

struct BenchConfig {
    std::vector<std::string> methods = kAllMethods;
    double eta = 16.0 / 255.0;
    double gamma = 1.0 / 255.0;
    int steps = 300;
    int k_steps = 4;           // photoguard truncation
    int edit_steps = 50;
    bool seen_only = false;
    std::vector<PurifyConfig> purifiers{{"none", 75, 0.9}};
    AugmentParams augment;     // zeta < 0: auto
    int jobs = 1;
    std::uint64_t master_seed = 0;
};

// Canonical attack configuration for a method name (throws on the
// non-optimizing methods "random_noise_control" / "unprotected").
AttackConfig method_attack_config(const std::string& method, const BenchConfig& cfg,
                                  const ArchDesc& arch, std::uint64_t protect_seed);
Region method_region(const std::string& method);

// Full protocol: protect every item with every method (M_gt as the training
// mask), edit clean and protected inputs with shared seeds across the mask
// family and conditions, record PSNR(edit(protected), edit(clean)).
BenchOutput run_benchmark(const std::vector<BenchItem>& dataset, const DenoiserModel& victim,
                          const NoiseSchedule& sched, const BenchConfig& cfg);

// Evaluates externally supplied deltas (e.g. optimized against model A) on a
// different victim model with the standard pipeline.
BenchOutput transfer_eval(const std::vector<BenchItem>& dataset,
                          const std::map<std::string, std::map<int, Tensor>>& deltas,
                          const std::map<std::string, Region>& regions,
                          const DenoiserModel& victim, const NoiseSchedule& sched,
                          const BenchConfig& cfg);

struct SweepPoint {
    double budget = 0.0;  // eta (or step count for step sweeps)
    BenchOutput output;
};

// One full benchmark per eta value (sorted ascending required).
std::vector<SweepPoint> budget_sweep_eta(const std::vector<BenchItem>& dataset,
                                         const DenoiserModel& victim, const NoiseSchedule& sched,
                                         const BenchConfig& base, const std::string& method,
                                         const std::vector<double>& etas);

double median_psnr(const std::vector<BenchRecord>& records, const std::string& method,
                   const std::string& split, const std::string& purifier = "");

std::string records_csv(const std::vector<BenchRecord>& records, bool mask_wall = false);
void write_records_csv(const std::string& path, const std::vector<BenchRecord>& records);
std::string summary_json(const BenchOutput& out);
void write_summary_json(const std::string& path, const BenchOutput& out);

}  // namespace pxs
