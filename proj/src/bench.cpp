#include "pixelshield/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <mutex>
#include <tuple>

#include "pixelshield/rng.hpp"
#include "pixelshield/threadpool.hpp"

namespace pxs {

double psnr(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw UsageError("psnr: shape mismatch");
    const double m = mse(a, b);
    if (m <= 0.0) return std::numeric_limits<double>::infinity();
    return 20.0 * std::log10(1.0 / std::sqrt(m));
}

Tensor postprocess_paste(const Tensor& src, const BinaryMask& mask, const Tensor& edited) {
    if (!src.same_shape(edited)) throw UsageError("postprocess_paste: shape mismatch");
    const Tensor m = mask.to_tensor(src.shape[0]);
    Tensor out = edited;
    for (std::size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = m.data[i] * src.data[i] + (1.0f - m.data[i]) * edited.data[i];
    return out;
}

Tensor edit(const DenoiserModel& model, const NoiseSchedule& sched, const Tensor& x_input,
            const BinaryMask& mask, int cond, int n_steps, std::uint64_t seed) {
    if (model.arch.variant != ModelVariant::Inpaint)
        throw UsageError("edit: needs the inpaint model variant");
    const Tensor gen = ddim_sample(model, sched, n_steps, cond, seed, &mask, &x_input);
    return postprocess_paste(x_input, mask, gen);
}

// ---------------------------------------------------------------------------
// Synthetic dataset

double background_class_mean(int bg_class, const DatasetSpec& spec) {
    if (bg_class < 1 || bg_class > spec.classes) throw UsageError("bad background class");
    return 0.15 + 0.7 * (bg_class - 1) / std::max(1, spec.classes - 1);
}

namespace {

Tensor render_background(int bg_class, const DatasetSpec& spec, Rng& rng) {
    const int S = spec.image_size;
    const double base = background_class_mean(bg_class, spec);
    const double fx = rng.uniform(0.5, 2.0), fy = rng.uniform(0.5, 2.0);
    const double px = rng.uniform(0.0, 6.28), py = rng.uniform(0.0, 6.28);
    Tensor img = Tensor::zeros({spec.channels, S, S});
    for (int c = 0; c < spec.channels; ++c)
        for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x) {
                const double tex = 0.04 * std::sin(fx * x * 2.0 * 3.14159265 / S + px) *
                                   std::cos(fy * y * 2.0 * 3.14159265 / S + py);
                img.data[static_cast<std::size_t>((static_cast<std::int64_t>(c) * S + y) * S + x)] =
                    static_cast<float>(std::clamp(base + tex, 0.0, 1.0));
            }
    return img;
}

}  // namespace

std::vector<BenchItem> generate_dataset(int n_images, std::uint64_t seed,
                                        const DatasetSpec& spec) {
    if (n_images < 1) throw UsageError("generate_dataset: n_images must be >= 1");
    const int S = spec.image_size;
    std::vector<BenchItem> items;
    items.reserve(static_cast<std::size_t>(n_images));
    for (int i = 0; i < n_images; ++i) {
        BenchItem item;
        item.image_id = i;
        item.bg_class = 1 + i % spec.classes;
        Rng rng(derive_seed(seed, "dataset_item", static_cast<std::uint64_t>(i)));
        item.image = render_background(item.bg_class, spec, rng);

        // Elliptical identity blob; resample until its area lands in a
        // [10%, 50%] fraction of the image.
        const double total = static_cast<double>(S) * S;
        BinaryMask blob(S, S);
        double cx = 0, cy = 0, rx = 0, ry = 0;
        for (int attempt = 0; attempt < 32; ++attempt) {
            blob = BinaryMask(S, S);
            cx = S / 2.0 + rng.uniform(-4.0, 4.0);
            cy = S / 2.0 + rng.uniform(-4.0, 4.0);
            rx = rng.uniform(0.19 * S, 0.3 * S);
            ry = rng.uniform(0.19 * S, 0.3 * S);
            for (int y = 0; y < S; ++y)
                for (int x = 0; x < S; ++x) {
                    const double dx = (x - cx) / rx, dy = (y - cy) / ry;
                    if (dx * dx + dy * dy <= 1.0) blob.at(y, x) = 1;
                }
            const double frac = static_cast<double>(blob.area()) / total;
            if (frac >= 0.1 && frac <= 0.5) break;
        }
        item.m_gt = blob;

        // Two-tone body.
        const double bg = background_class_mean(item.bg_class, spec);
        const double tone_hi = bg > 0.5 ? 0.12 : 0.88;
        const double tone_lo = bg > 0.5 ? 0.32 : 0.68;
        for (int y = 0; y < S; ++y)
            for (int x = 0; x < S; ++x) {
                if (!blob.at(y, x)) continue;
                const double tone = y < cy ? tone_hi : tone_lo;
                for (int c = 0; c < spec.channels; ++c)
                    item.image.data[static_cast<std::size_t>(
                        (static_cast<std::int64_t>(c) * S + y) * S + x)] = static_cast<float>(tone);
            }
        // Interior features at seeded positions.
        const int n_feat = static_cast<int>(rng.uniform_int(2, 3));
        for (int f = 0; f < n_feat; ++f) {
            const double ang = rng.uniform(0.0, 6.28318);
            const double rad = rng.uniform(0.15, 0.55);
            const double fcx = cx + std::cos(ang) * rad * rx;
            const double fcy = cy + std::sin(ang) * rad * ry;
            const double fr = rng.uniform(1.2, 2.4);
            const double tone = f % 2 == 0 ? (tone_hi + tone_lo) * 0.5 : (bg > 0.5 ? 0.02 : 0.98);
            for (int y = 0; y < S; ++y)
                for (int x = 0; x < S; ++x) {
                    if (!blob.at(y, x)) continue;
                    const double d2 = (x - fcx) * (x - fcx) + (y - fcy) * (y - fcy);
                    if (d2 <= fr * fr)
                        for (int c = 0; c < spec.channels; ++c)
                            item.image.data[static_cast<std::size_t>(
                                (static_cast<std::int64_t>(c) * S + y) * S + x)] =
                                static_cast<float>(tone);
                }
        }
        item.family = mask_family(item.m_gt, derive_seed(seed, "dataset_family",
                                                         static_cast<std::uint64_t>(i)));
        for (int c = 1; c <= spec.classes; ++c) item.cond_ids.push_back(c);
        items.push_back(std::move(item));
    }
    return items;
}

// ---------------------------------------------------------------------------
// Benchmark protocol

Region method_region(const std::string& method) {
    if (method == "advdm_recon") return Region::WholeImage;
    return Region::MaskOnly;
}

AttackConfig method_attack_config(const std::string& method, const BenchConfig& cfg,
                                  const ArchDesc& arch, std::uint64_t protect_seed) {
    AttackConfig ac;
    ac.eta = cfg.eta;
    ac.gamma = cfg.gamma;
    ac.steps = cfg.steps;
    ac.augment = cfg.augment;
    ac.cond_id = 0;  // empty-prompt analog
    ac.seed = protect_seed;
    ac.region = method_region(method);
    if (method == "ours_early_stage") {
        ac.loss = LossKind::EarlyStage;
        ac.use_mask_augmentation = true;
    } else if (method == "ours_no_aug") {
        ac.loss = LossKind::EarlyStage;
        ac.use_mask_augmentation = false;
    } else if (method == "photoguard_targeted") {
        ac.loss = LossKind::TargetedImage;
        ac.use_mask_augmentation = false;
        ac.k_steps = cfg.k_steps;
        ac.target_image =
            Tensor::full({arch.channels, arch.image_size, arch.image_size}, 0.5f);
    } else if (method == "advdm_recon") {
        ac.loss = LossKind::ReconMax;
        ac.use_mask_augmentation = false;
    } else {
        throw UsageError("method '" + method + "' has no attack configuration");
    }
    return ac;
}

namespace {

struct EditKey {
    int item_idx;
    int mask_idx;
    int cond_idx;
};

GroupStats make_stats(const std::string& method, const std::string& split,
                      const std::string& purifier, std::vector<double> vals) {
    GroupStats s;
    s.method = method;
    s.split = split;
    s.purifier = purifier;
    s.count = static_cast<int>(vals.size());
    if (vals.empty()) return s;
    std::sort(vals.begin(), vals.end());
    const std::size_t n = vals.size();
    s.median = n % 2 ? vals[n / 2] : 0.5 * (vals[n / 2 - 1] + vals[n / 2]);
    double sum = 0.0;
    for (double v : vals) sum += v;
    s.mean = sum / static_cast<double>(n);
    return s;
}

void finalize_output(BenchOutput& out) {
    std::sort(out.records.begin(), out.records.end(), [](const BenchRecord& a, const BenchRecord& b) {
        return std::tie(a.method, a.purifier, a.target_model, a.image_id, a.mask_id, a.cond_id) <
               std::tie(b.method, b.purifier, b.target_model, b.image_id, b.mask_id, b.cond_id);
    });
    std::map<std::tuple<std::string, std::string, std::string>, std::vector<double>> grouped;
    for (const BenchRecord& r : out.records)
        grouped[{r.method, r.split, r.purifier}].push_back(r.psnr_db);
    for (auto& [key, vals] : grouped)
        out.groups.push_back(
            make_stats(std::get<0>(key), std::get<1>(key), std::get<2>(key), std::move(vals)));
    out.run_failed = out.total_jobs > 0 &&
                     static_cast<double>(out.failures.size()) >= 0.05 * out.total_jobs;
}

// Shared evaluation half of the pipeline: given per-(method, item) deltas,
// edits everything and fills records.
void evaluate_deltas(BenchOutput& out, const std::vector<BenchItem>& dataset,
                     const DenoiserModel& victim, const NoiseSchedule& sched,
                     const BenchConfig& cfg,
                     const std::map<std::string, std::map<int, double>>& wall,
                     const std::vector<std::string>& methods) {
    struct MaskRef {
        std::string id, split;
        const BinaryMask* mask;
    };
    std::vector<std::vector<MaskRef>> fam(dataset.size());
    for (std::size_t i = 0; i < dataset.size(); ++i)
        for (const auto& [mid, split, m] : dataset[i].family.members) {
            if (cfg.seen_only && split != "seen") continue;
            fam[i].push_back({mid, split, &m});
        }

    // Clean edits, shared across methods and purifiers.
    struct CleanTask {
        int item;
        int mask;
        int cond;
    };
    std::vector<CleanTask> ctasks;
    for (std::size_t i = 0; i < dataset.size(); ++i)
        for (std::size_t mi = 0; mi < fam[i].size(); ++mi)
            for (std::size_t ci = 0; ci < dataset[i].cond_ids.size(); ++ci)
                ctasks.push_back({static_cast<int>(i), static_cast<int>(mi), static_cast<int>(ci)});
    std::vector<Tensor> clean(ctasks.size());
    std::vector<std::string> clean_err(ctasks.size());
    auto edit_seed = [&](const BenchItem& item, const std::string& mask_id, int cond) {
        return derive_seed(cfg.master_seed, "edit/" + mask_id,
                           static_cast<std::uint64_t>(item.image_id),
                           static_cast<std::uint64_t>(cond));
    };
    parallel_for(static_cast<int>(ctasks.size()), cfg.jobs, [&](int k, int) {
        const CleanTask& t = ctasks[static_cast<std::size_t>(k)];
        const BenchItem& item = dataset[static_cast<std::size_t>(t.item)];
        const MaskRef& mr = fam[static_cast<std::size_t>(t.item)][static_cast<std::size_t>(t.mask)];
        const int cond = item.cond_ids[static_cast<std::size_t>(t.cond)];
        try {
            clean[static_cast<std::size_t>(k)] = edit(victim, sched, item.image, *mr.mask, cond,
                                                      cfg.edit_steps, edit_seed(item, mr.id, cond));
        } catch (const std::exception& e) {
            clean_err[static_cast<std::size_t>(k)] = e.what();
        }
    });
    std::map<std::tuple<int, int, int>, std::size_t> clean_idx;
    for (std::size_t k = 0; k < ctasks.size(); ++k)
        clean_idx[{ctasks[k].item, ctasks[k].mask, ctasks[k].cond}] = k;

    struct RecTask {
        int method;
        int item;
        int mask;
        int cond;
        int purifier;
    };
    std::vector<RecTask> rtasks;
    for (std::size_t m = 0; m < methods.size(); ++m)
        for (std::size_t i = 0; i < dataset.size(); ++i)
            for (std::size_t mi = 0; mi < fam[i].size(); ++mi)
                for (std::size_t ci = 0; ci < dataset[i].cond_ids.size(); ++ci)
                    for (std::size_t p = 0; p < cfg.purifiers.size(); ++p)
                        rtasks.push_back({static_cast<int>(m), static_cast<int>(i),
                                          static_cast<int>(mi), static_cast<int>(ci),
                                          static_cast<int>(p)});
    std::vector<std::optional<BenchRecord>> recs(rtasks.size());
    std::vector<std::string> rec_err(rtasks.size());
    // The protected input only depends on (method, item, purifier); cache it.
    std::mutex prot_mutex;
    std::map<std::tuple<int, int, int>, Tensor> prot_cache;
    parallel_for(static_cast<int>(rtasks.size()), cfg.jobs, [&](int k, int) {
        const RecTask& t = rtasks[static_cast<std::size_t>(k)];
        const std::string& method = methods[static_cast<std::size_t>(t.method)];
        const BenchItem& item = dataset[static_cast<std::size_t>(t.item)];
        const MaskRef& mr = fam[static_cast<std::size_t>(t.item)][static_cast<std::size_t>(t.mask)];
        const int cond = item.cond_ids[static_cast<std::size_t>(t.cond)];
        const PurifyConfig& pc = cfg.purifiers[static_cast<std::size_t>(t.purifier)];
        try {
            const std::size_t ck = clean_idx.at({t.item, t.mask, t.cond});
            if (!clean_err[ck].empty()) throw NumericError("clean edit failed: " + clean_err[ck]);
            Tensor x_in;
            {
                std::unique_lock lock(prot_mutex);
                auto it = prot_cache.find({t.method, t.item, t.purifier});
                if (it != prot_cache.end()) {
                    x_in = it->second;
                } else {
                    lock.unlock();
                    const Tensor& delta = out.deltas.at(method).at(item.image_id);
                    Tensor prot = apply_protection(item.image, delta, out.method_regions.at(method),
                                                   &item.m_gt);
                    x_in = purify(prot, pc);
                    lock.lock();
                    prot_cache.emplace(std::make_tuple(t.method, t.item, t.purifier), x_in);
                }
            }
            const std::uint64_t es = edit_seed(item, mr.id, cond);
            const Tensor edited = edit(victim, sched, x_in, *mr.mask, cond, cfg.edit_steps, es);
            BenchRecord r;
            r.image_id = item.image_id;
            r.mask_id = mr.id;
            r.split = mr.split;
            r.cond_id = cond;
            r.method = method;
            r.purifier = pc.kind == "none" ? "" : pc.kind + (pc.kind == "dct_quantize"
                                                                 ? "_q" + std::to_string(pc.quality)
                                                                 : "");
            r.target_model = victim.model_id;
            r.psnr_db = psnr(edited, clean[ck]);
            r.wall_s = wall.count(method) && wall.at(method).count(item.image_id)
                           ? wall.at(method).at(item.image_id)
                           : 0.0;
            r.seed = es;
            recs[static_cast<std::size_t>(k)] = std::move(r);
        } catch (const std::exception& e) {
            rec_err[static_cast<std::size_t>(k)] =
                method + "/img" + std::to_string(item.image_id) + "/" + mr.id + "/c" +
                std::to_string(cond) + ": " + e.what();
        }
    });
    out.total_jobs += static_cast<int>(rtasks.size());
    for (std::size_t k = 0; k < rtasks.size(); ++k) {
        if (recs[k].has_value())
            out.records.push_back(std::move(*recs[k]));
        else
            out.failures.push_back({"record", rec_err[k]});
    }
}

}  // namespace

BenchOutput run_benchmark(const std::vector<BenchItem>& dataset, const DenoiserModel& victim,
                          const NoiseSchedule& sched, const BenchConfig& cfg) {
    if (dataset.empty()) throw UsageError("run_benchmark: empty dataset");
    for (const std::string& m : cfg.methods)
        if (std::find(kAllMethods.begin(), kAllMethods.end(), m) == kAllMethods.end())
            throw UsageError("run_benchmark: unknown method '" + m + "'");

    BenchOutput out;
    std::map<std::string, std::map<int, double>> wall;
    for (const std::string& m : cfg.methods) out.method_regions[m] = method_region(m);

    // Phase 1: protection deltas per (method, item).
    struct PTask {
        int method;
        int item;
    };
    std::vector<PTask> ptasks;
    for (std::size_t m = 0; m < cfg.methods.size(); ++m)
        for (std::size_t i = 0; i < dataset.size(); ++i)
            ptasks.push_back({static_cast<int>(m), static_cast<int>(i)});
    std::vector<std::optional<Tensor>> pdeltas(ptasks.size());
    std::vector<double> pwall(ptasks.size(), 0.0);
    std::vector<std::string> perr(ptasks.size());
    parallel_for(static_cast<int>(ptasks.size()), cfg.jobs, [&](int k, int) {
        const PTask& t = ptasks[static_cast<std::size_t>(k)];
        const std::string& method = cfg.methods[static_cast<std::size_t>(t.method)];
        const BenchItem& item = dataset[static_cast<std::size_t>(t.item)];
        const std::uint64_t pseed =
            derive_seed(cfg.master_seed, "protect/" + method,
                        static_cast<std::uint64_t>(item.image_id));
        try {
            const auto t0 = std::chrono::steady_clock::now();
            Tensor delta;
            if (method == "unprotected") {
                delta = Tensor::zeros(item.image.shape);
            } else if (method == "random_noise_control") {
                delta = random_noise_delta(item.image, item.m_gt, cfg.eta, Region::MaskOnly, pseed);
            } else {
                const AttackConfig ac = method_attack_config(method, cfg, victim.arch, pseed);
                delta = pgd_protect(item.image, item.m_gt, victim, sched, ac).delta;
            }
            pwall[static_cast<std::size_t>(k)] =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            pdeltas[static_cast<std::size_t>(k)] = std::move(delta);
        } catch (const std::exception& e) {
            perr[static_cast<std::size_t>(k)] = method + "/img" +
                                                std::to_string(item.image_id) + ": " + e.what();
        }
    });
    out.total_jobs += static_cast<int>(ptasks.size());
    std::vector<std::string> ok_methods = cfg.methods;
    for (std::size_t k = 0; k < ptasks.size(); ++k) {
        const PTask& t = ptasks[k];
        const std::string& method = cfg.methods[static_cast<std::size_t>(t.method)];
        const BenchItem& item = dataset[static_cast<std::size_t>(t.item)];
        if (pdeltas[k].has_value()) {
            out.deltas[method][item.image_id] = std::move(*pdeltas[k]);
            wall[method][item.image_id] = pwall[k];
        } else {
            out.failures.push_back({"protect", perr[k]});
        }
    }

    evaluate_deltas(out, dataset, victim, sched, cfg, wall, ok_methods);
    finalize_output(out);
    return out;
}

BenchOutput transfer_eval(const std::vector<BenchItem>& dataset,
                          const std::map<std::string, std::map<int, Tensor>>& deltas,
                          const std::map<std::string, Region>& regions,
                          const DenoiserModel& victim, const NoiseSchedule& sched,
                          const BenchConfig& cfg) {
    BenchOutput out;
    out.deltas = deltas;
    out.method_regions = regions;
    std::vector<std::string> methods;
    const std::vector<int> want{victim.arch.channels, victim.arch.image_size,
                                victim.arch.image_size};
    for (const auto& [method, per_image] : deltas) {
        methods.push_back(method);
        if (!regions.count(method))
            throw UsageError("transfer_eval: missing region for method '" + method + "'");
        for (const auto& [id, d] : per_image) {
            if (d.shape != want)
                throw UsageError("transfer_eval: delta for image " + std::to_string(id) +
                                 " has shape " + shape_str(d.shape) + ", victim expects " +
                                 shape_str(want));
            (void)id;
        }
    }
    std::map<std::string, std::map<int, double>> wall;
    evaluate_deltas(out, dataset, victim, sched, cfg, wall, methods);
    finalize_output(out);
    return out;
}

std::vector<SweepPoint> budget_sweep_eta(const std::vector<BenchItem>& dataset,
                                         const DenoiserModel& victim, const NoiseSchedule& sched,
                                         const BenchConfig& base, const std::string& method,
                                         const std::vector<double>& etas) {
    if (!std::is_sorted(etas.begin(), etas.end()))
        throw UsageError("budget_sweep: budgets must be sorted ascending");
    std::vector<SweepPoint> points;
    for (double eta : etas) {
        BenchConfig cfg = base;
        cfg.methods = {method};
        cfg.eta = eta;
        cfg.gamma = std::min(base.gamma, eta);
        SweepPoint p;
        p.budget = eta;
        p.output = run_benchmark(dataset, victim, sched, cfg);
        points.push_back(std::move(p));
    }
    return points;
}

double median_psnr(const std::vector<BenchRecord>& records, const std::string& method,
                   const std::string& split, const std::string& purifier) {
    std::vector<double> vals;
    for (const BenchRecord& r : records)
        if (r.method == method && (split == "all" || r.split == split) && r.purifier == purifier)
            vals.push_back(r.psnr_db);
    if (vals.empty()) throw UsageError("median_psnr: no records for " + method + "/" + split);
    std::sort(vals.begin(), vals.end());
    const std::size_t n = vals.size();
    return n % 2 ? vals[n / 2] : 0.5 * (vals[n / 2 - 1] + vals[n / 2]);
}

// ---------------------------------------------------------------------------
// Emission

namespace {
std::string fmt6(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}
}  // namespace

std::string records_csv(const std::vector<BenchRecord>& records, bool mask_wall) {
    std::string s = "image_id,mask_id,split,cond_id,method,purifier,target_model,psnr_db,wall_s,seed\n";
    for (const BenchRecord& r : records) {
        s += std::to_string(r.image_id) + "," + r.mask_id + "," + r.split + "," +
             std::to_string(r.cond_id) + "," + r.method + "," + r.purifier + "," + r.target_model +
             "," + fmt6(r.psnr_db) + "," + (mask_wall ? std::string("0") : fmt6(r.wall_s)) + "," +
             std::to_string(r.seed) + "\n";
    }
    return s;
}

void write_records_csv(const std::string& path, const std::vector<BenchRecord>& records) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path);
    os << records_csv(records);
}

std::string summary_json(const BenchOutput& out) {
    std::string s = "{\n  \"groups\": [\n";
    for (std::size_t i = 0; i < out.groups.size(); ++i) {
        const GroupStats& g = out.groups[i];
        s += "    {\"method\": \"" + g.method + "\", \"split\": \"" + g.split +
             "\", \"purifier\": \"" + g.purifier + "\", \"median_psnr_db\": \"" + fmt6(g.median) +
             "\", \"mean_psnr_db\": \"" + fmt6(g.mean) + "\", \"count\": " +
             std::to_string(g.count) + "}";
        s += i + 1 < out.groups.size() ? ",\n" : "\n";
    }
    s += "  ],\n";
    s += "  \"total_jobs\": " + std::to_string(out.total_jobs) + ",\n";
    s += "  \"failed_jobs\": " + std::to_string(out.failures.size()) + ",\n";
    s += std::string("  \"run_failed\": ") + (out.run_failed ? "true" : "false") + "\n}\n";
    return s;
}

void write_summary_json(const std::string& path, const BenchOutput& out) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path);
    os << summary_json(out);
}

}  // namespace pxs
