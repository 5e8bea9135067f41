#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pixelshield/bench.hpp"
#include "pixelshield/denoiser.hpp"
#include "pixelshield/protect.hpp"

namespace pxs {

// JSON run configuration. Every field is optional in the file; flags override
// file values which override the defaults below. Unknown sections or keys are
// rejected (see share/config.schema.json for the published schema).
struct RunConfig {
    // model
    ArchDesc model;
    // schedule
    int T = 1000;
    std::string schedule_kind = "cosine";
    // train
    int train_steps = 3000;
    int batch_size = 4;
    int dataset_images = 256;
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    double cond_dropout = 0.1;
    std::uint64_t dataset_seed = 7;
    // attack
    std::string attack_loss = "early_stage";
    double eta = 16.0 / 255.0;
    double gamma = 1.0 / 255.0;
    int attack_steps = 300;
    bool use_mask_augmentation = true;
    bool noise_resample = true;
    int k_steps = 4;
    int cond_id = 0;
    std::string region = "mask_only";
    std::string target = "gray";  // "gray" or a PGM/PPM path
    // augment
    double zeta = -1.0;  // auto
    double smooth_s = 5.0;
    int aug_iters = 3;
    // bench
    int bench_images = 16;
    std::vector<std::string> methods = kAllMethods;
    int edit_steps = 50;
    bool seen_only = false;
    std::vector<double> sweep_etas;  // non-empty selects sweep mode
    std::string purifier = "none";   // for cmd_purify & bench purifier column
    int quality = 75;
    double crop_fraction = 0.9;
    // io
    std::string out_dir = "out";
    std::string checkpoint;
    std::string base_checkpoint;
    std::string transfer_checkpoint;  // model B for transfer eval
    std::string deltas_dir;           // delta archive for transfer eval
    // global
    std::uint64_t seed = 0;
    int jobs = 2;

    NoiseSchedule make_noise_schedule() const;
    AttackConfig make_attack_config(const ArchDesc& arch) const;
    BenchConfig make_bench_config() const;
    std::string to_json() const;  // effective (default-merged) form
};

// Parses + validates a config document; unknown keys are rejected with
// UsageError. `text` is the raw JSON.
RunConfig parse_config(const std::string& text);
RunConfig load_config_file(const std::string& path);

}  // namespace pxs
