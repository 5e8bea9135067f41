#include "pixelshield/config.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

namespace pxs {

using nlohmann::json;

namespace {

const std::set<std::string> kSections{"model", "schedule", "train", "attack",
                                      "augment", "bench", "io"};

const std::map<std::string, std::set<std::string>> kKeys{
    {"model",
     {"image_size", "channels", "base_width", "cond_vocab", "temb_dim", "temb_channels", "emb_dim",
      "groups", "variant"}},
    {"schedule", {"T", "kind"}},
    {"train",
     {"steps", "batch_size", "dataset_images", "lr", "beta1", "beta2", "adam_eps", "cond_dropout",
      "dataset_seed"}},
    {"attack",
     {"loss", "eta", "gamma", "steps", "use_mask_augmentation", "noise_resample", "k_steps",
      "cond_id", "region", "target"}},
    {"augment", {"zeta", "smooth_s", "iters"}},
    {"bench",
     {"images", "methods", "edit_steps", "seen_only", "sweep_etas", "purifier", "quality",
      "crop_fraction"}},
    {"io", {"out_dir", "checkpoint", "base_checkpoint", "transfer_checkpoint", "deltas_dir"}},
};

void reject_unknown(const json& j) {
    for (const auto& [section, body] : j.items()) {
        if (!kSections.count(section)) throw UsageError("config: unknown section '" + section + "'");
        if (!body.is_object()) throw UsageError("config: section '" + section + "' must be an object");
        const auto& known = kKeys.at(section);
        for (const auto& [key, value] : body.items())
            if (!known.count(key))
                throw UsageError("config: unknown key '" + section + "." + key + "'");
    }
}

template <typename T>
void get_to(const json& j, const char* section, const char* key, T& out) {
    if (!j.contains(section)) return;
    const json& s = j.at(section);
    if (!s.contains(key)) return;
    try {
        s.at(key).get_to(out);
    } catch (const json::exception& e) {
        throw UsageError(std::string("config: bad value for ") + section + "." + key + ": " +
                         e.what());
    }
}

}  // namespace

RunConfig parse_config(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw UsageError(std::string("config: invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw UsageError("config: document must be a JSON object");
    reject_unknown(j);

    RunConfig c;
    std::string variant = to_string(c.model.variant);
    get_to(j, "model", "image_size", c.model.image_size);
    get_to(j, "model", "channels", c.model.channels);
    get_to(j, "model", "base_width", c.model.base_width);
    get_to(j, "model", "cond_vocab", c.model.cond_vocab);
    get_to(j, "model", "temb_dim", c.model.temb_dim);
    get_to(j, "model", "temb_channels", c.model.temb_channels);
    get_to(j, "model", "emb_dim", c.model.emb_dim);
    get_to(j, "model", "groups", c.model.groups);
    get_to(j, "model", "variant", variant);
    c.model.variant = variant_from_string(variant);

    get_to(j, "schedule", "T", c.T);
    get_to(j, "schedule", "kind", c.schedule_kind);
    schedule_kind_from_string(c.schedule_kind);

    get_to(j, "train", "steps", c.train_steps);
    get_to(j, "train", "batch_size", c.batch_size);
    get_to(j, "train", "dataset_images", c.dataset_images);
    get_to(j, "train", "lr", c.lr);
    get_to(j, "train", "beta1", c.beta1);
    get_to(j, "train", "beta2", c.beta2);
    get_to(j, "train", "adam_eps", c.adam_eps);
    get_to(j, "train", "cond_dropout", c.cond_dropout);
    get_to(j, "train", "dataset_seed", c.dataset_seed);

    get_to(j, "attack", "loss", c.attack_loss);
    loss_kind_from_string(c.attack_loss);
    get_to(j, "attack", "eta", c.eta);
    get_to(j, "attack", "gamma", c.gamma);
    get_to(j, "attack", "steps", c.attack_steps);
    get_to(j, "attack", "use_mask_augmentation", c.use_mask_augmentation);
    get_to(j, "attack", "noise_resample", c.noise_resample);
    get_to(j, "attack", "k_steps", c.k_steps);
    get_to(j, "attack", "cond_id", c.cond_id);
    get_to(j, "attack", "region", c.region);
    if (c.region != "mask_only" && c.region != "whole_image")
        throw UsageError("config: attack.region must be mask_only or whole_image");
    get_to(j, "attack", "target", c.target);

    get_to(j, "augment", "zeta", c.zeta);
    get_to(j, "augment", "smooth_s", c.smooth_s);
    get_to(j, "augment", "iters", c.aug_iters);
    if (c.smooth_s <= 0.0) throw UsageError("config: augment.smooth_s must be > 0");
    if (c.aug_iters < 1) throw UsageError("config: augment.iters must be >= 1");

    get_to(j, "bench", "images", c.bench_images);
    get_to(j, "bench", "methods", c.methods);
    for (const std::string& m : c.methods)
        if (std::find(kAllMethods.begin(), kAllMethods.end(), m) == kAllMethods.end())
            throw UsageError("config: unknown bench method '" + m + "'");
    get_to(j, "bench", "edit_steps", c.edit_steps);
    get_to(j, "bench", "seen_only", c.seen_only);
    get_to(j, "bench", "sweep_etas", c.sweep_etas);
    get_to(j, "bench", "purifier", c.purifier);
    get_to(j, "bench", "quality", c.quality);
    get_to(j, "bench", "crop_fraction", c.crop_fraction);

    get_to(j, "io", "out_dir", c.out_dir);
    get_to(j, "io", "checkpoint", c.checkpoint);
    get_to(j, "io", "base_checkpoint", c.base_checkpoint);
    get_to(j, "io", "transfer_checkpoint", c.transfer_checkpoint);
    get_to(j, "io", "deltas_dir", c.deltas_dir);
    return c;
}

RunConfig load_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw UsageError("config file not found: " + path);
    std::string text((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return parse_config(text);
}

NoiseSchedule RunConfig::make_noise_schedule() const {
    return make_schedule(T, schedule_kind_from_string(schedule_kind));
}

AttackConfig RunConfig::make_attack_config(const ArchDesc& arch) const {
    AttackConfig ac;
    ac.loss = loss_kind_from_string(attack_loss);
    ac.eta = eta;
    ac.gamma = gamma;
    ac.steps = attack_steps;
    ac.use_mask_augmentation = use_mask_augmentation;
    ac.noise_resample = noise_resample;
    ac.k_steps = k_steps;
    ac.cond_id = cond_id;
    ac.region = region == "whole_image" ? Region::WholeImage : Region::MaskOnly;
    ac.augment.zeta = zeta;
    ac.augment.s = smooth_s;
    ac.augment.iters = aug_iters;
    ac.seed = seed;
    if (ac.loss == LossKind::TargetedImage && target == "gray")
        ac.target_image = Tensor::full({arch.channels, arch.image_size, arch.image_size}, 0.5f);
    return ac;
}

BenchConfig RunConfig::make_bench_config() const {
    BenchConfig bc;
    bc.methods = methods;
    bc.eta = eta;
    bc.gamma = gamma;
    bc.steps = attack_steps;
    bc.k_steps = k_steps;
    bc.edit_steps = edit_steps;
    bc.seen_only = seen_only;
    bc.augment.zeta = zeta;
    bc.augment.s = smooth_s;
    bc.augment.iters = aug_iters;
    bc.jobs = jobs;
    bc.master_seed = seed;
    if (purifier == "none") {
        bc.purifiers = {{"none", quality, crop_fraction}};
    } else {
        bc.purifiers = {{purifier, quality, crop_fraction}};
    }
    return bc;
}

std::string RunConfig::to_json() const {
    json j;
    j["model"] = {{"image_size", model.image_size},
                  {"channels", model.channels},
                  {"base_width", model.base_width},
                  {"cond_vocab", model.cond_vocab},
                  {"temb_dim", model.temb_dim},
                  {"temb_channels", model.temb_channels},
                  {"emb_dim", model.emb_dim},
                  {"groups", model.groups},
                  {"variant", to_string(model.variant)}};
    j["schedule"] = {{"T", T}, {"kind", schedule_kind}};
    j["train"] = {{"steps", train_steps},     {"batch_size", batch_size},
                  {"dataset_images", dataset_images}, {"lr", lr},
                  {"beta1", beta1},           {"beta2", beta2},
                  {"adam_eps", adam_eps},     {"cond_dropout", cond_dropout},
                  {"dataset_seed", dataset_seed}};
    j["attack"] = {{"loss", attack_loss},
                   {"eta", eta},
                   {"gamma", gamma},
                   {"steps", attack_steps},
                   {"use_mask_augmentation", use_mask_augmentation},
                   {"noise_resample", noise_resample},
                   {"k_steps", k_steps},
                   {"cond_id", cond_id},
                   {"region", region},
                   {"target", target}};
    j["augment"] = {{"zeta", zeta}, {"smooth_s", smooth_s}, {"iters", aug_iters}};
    j["bench"] = {{"images", bench_images},   {"methods", methods},
                  {"edit_steps", edit_steps}, {"seen_only", seen_only},
                  {"sweep_etas", sweep_etas}, {"purifier", purifier},
                  {"quality", quality},       {"crop_fraction", crop_fraction}};
    j["io"] = {{"out_dir", out_dir},
               {"checkpoint", checkpoint},
               {"base_checkpoint", base_checkpoint},
               {"transfer_checkpoint", transfer_checkpoint},
               {"deltas_dir", deltas_dir}};
    return j.dump(2) + "\n";
}

}  // namespace pxs
