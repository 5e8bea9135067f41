#include "pixelshield/denoiser.hpp"

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "pixelshield/checkpoint.hpp"
#include "pixelshield/rng.hpp"

namespace pxs {

ModelVariant variant_from_string(const std::string& s) {
    if (s == "standard") return ModelVariant::Standard;
    if (s == "inpaint") return ModelVariant::Inpaint;
    throw UsageError("unknown model variant '" + s + "'");
}

std::string to_string(ModelVariant v) {
    return v == ModelVariant::Standard ? "standard" : "inpaint";
}

int ArchDesc::input_channels() const {
    const int base = variant == ModelVariant::Standard ? channels : 2 * channels + 1;
    return base + temb_channels;
}

void ArchDesc::validate() const {
    if (image_size < 8 || image_size % 4 != 0)
        throw UsageError("arch: image_size must be >= 8 and divisible by 4");
    if (channels != 1 && channels != 3) throw UsageError("arch: channels must be 1 or 3");
    if (base_width < groups || base_width % groups != 0)
        throw UsageError("arch: base_width must be a positive multiple of groups");
    if (cond_vocab < 1) throw UsageError("arch: cond_vocab must be >= 1");
    if (temb_dim < 2 || temb_dim % 2) throw UsageError("arch: temb_dim must be even");
    if (temb_channels < 1) throw UsageError("arch: temb_channels must be >= 1");
}

namespace {

struct NetBuilder {
    Graph& g;
    const ArchDesc& arch;
    int emb = -1;  // shared embedding vector node

    int block(int x, int out_ch, const std::string& name) {
        const int in_ch = g.node(x).shape[0];
        int proj_w = g.param(name + ".p.w", {in_ch, arch.emb_dim});
        int proj_b = g.param(name + ".p.b", {in_ch});
        int proj = g.add(g.matmul(proj_w, emb), proj_b);
        int xe = g.bias_add(x, proj);
        int h = conv_gn_silu(xe, out_ch, name + ".c1");
        return conv_gn_silu(h, out_ch, name + ".c2");
    }

    int conv_gn_silu(int x, int out_ch, const std::string& name) {
        const int in_ch = g.node(x).shape[0];
        int w = g.param(name + ".w", {out_ch, in_ch, 3, 3});
        int b = g.param(name + ".b", {out_ch});
        int c = g.conv2d(x, w, b, 3);
        int gamma = g.param(name + ".g", {out_ch});
        int beta = g.param(name + ".bt", {out_ch});
        return g.silu(g.group_norm(c, gamma, beta, arch.groups));
    }
};

}  // namespace

EpsGraph build_eps_graph(const ArchDesc& arch) {
    arch.validate();
    const int S = arch.image_size;
    const int C = arch.channels;
    const int W0 = arch.base_width;

    EpsGraph eg;
    Graph& g = eg.graph;
    NetBuilder nb{g, arch, -1};

    int x = g.input(kInX, {C, S, S});
    int temb = g.input(kInTemb, {arch.temb_dim});
    int cond = g.input(kInCond, {arch.cond_vocab});

    int wt = g.param("emb.t.w", {arch.emb_dim, arch.temb_dim});
    int wc = g.param("emb.c.w", {arch.emb_dim, arch.cond_vocab});
    int b1 = g.param("emb.b1", {arch.emb_dim});
    int e1 = g.silu(g.add(g.add(g.matmul(wt, temb), g.matmul(wc, cond)), b1));
    int w2 = g.param("emb.l2.w", {arch.emb_dim, arch.emb_dim});
    int b2 = g.param("emb.b2", {arch.emb_dim});
    nb.emb = g.silu(g.add(g.matmul(w2, e1), b2));

    // A few embedding channels enter the stem as spatial maps.
    int ws = g.param("emb.stem.w", {arch.temb_channels, arch.emb_dim});
    int bs = g.param("emb.stem.b", {arch.temb_channels});
    int stem_vec = g.add(g.matmul(ws, nb.emb), bs);
    int zero_plane = g.constant(Tensor::zeros({arch.temb_channels, S, S}));
    int emb_plane = g.bias_add(zero_plane, stem_vec);

    std::vector<int> stem_parts{x};
    if (arch.variant == ModelVariant::Inpaint) {
        int mask = g.input(kInMask, {1, S, S});
        int srcm = g.input(kInSrcMasked, {C, S, S});
        stem_parts.push_back(mask);
        stem_parts.push_back(srcm);
    }
    stem_parts.push_back(emb_plane);
    int stem_in = g.concat_c(stem_parts);

    int sw = g.param("stem.w", {W0, arch.input_channels(), 3, 3});
    int sb = g.param("stem.b", {W0});
    int h0 = g.conv2d(stem_in, sw, sb, 3);

    int e0 = nb.block(h0, W0, "enc0");
    int en1 = nb.block(g.down2x(e0), 2 * W0, "enc1");
    int mid = nb.block(g.down2x(en1), 4 * W0, "mid");
    int d1 = nb.block(g.concat_c({en1, g.up2x(mid)}), 2 * W0, "dec1");
    int d0 = nb.block(g.concat_c({e0, g.up2x(d1)}), W0, "dec0");

    int ow = g.param("out.w", {C, W0, 1, 1});
    int ob = g.param("out.b", {C});
    eg.output = g.conv2d(d0, ow, ob, 1);
    return eg;
}

DenoiserModel DenoiserModel::create(const ArchDesc& arch, std::uint64_t init_seed) {
    DenoiserModel m;
    m.arch = arch;
    m.eps_graph = build_eps_graph(arch);
    Rng rng(derive_seed(init_seed, "model_init"));
    for (const auto& [name, shape] : m.eps_graph.graph.param_leaves()) {
        Tensor t = Tensor::zeros(shape);
        const bool is_gamma = name.size() >= 2 && name.substr(name.size() - 2) == ".g";
        const bool is_out = name.rfind("out.", 0) == 0;
        if (is_gamma) {
            t = Tensor::full(shape, 1.0f);
        } else if (is_out) {
            // Zero-initialized final layer: the untrained model predicts 0.
        } else if (shape.size() == 4) {
            const double fan_in = static_cast<double>(shape[1]) * shape[2] * shape[3];
            const double std = std::sqrt(2.0 / fan_in);
            for (float& v : t.data) v = static_cast<float>(rng.normal() * std);
        } else if (shape.size() == 2) {
            const double std = std::sqrt(1.0 / shape[1]);
            for (float& v : t.data) v = static_cast<float>(rng.normal() * std);
        }  // biases and beta stay zero
        m.params[name] = std::move(t);
    }
    return m;
}

DenoiserModel DenoiserModel::expand_to_inpaint(const DenoiserModel& base) {
    if (base.arch.variant != ModelVariant::Standard)
        throw UsageError("expand_to_inpaint: base model must be the standard variant");
    ArchDesc arch = base.arch;
    arch.variant = ModelVariant::Inpaint;
    DenoiserModel m;
    m.arch = arch;
    m.model_id = base.model_id;
    m.eps_graph = build_eps_graph(arch);
    m.params = base.params;

    const int C = arch.channels;
    const int W0 = arch.base_width;
    const int in_old = base.arch.input_channels();
    const int in_new = arch.input_channels();
    const Tensor& old_w = base.params.at("stem.w");
    Tensor new_w = Tensor::zeros({W0, in_new, 3, 3});
    // Old layout: [x (C), temb planes]; new: [x (C), mask (1), masked src (C),
    // temb planes]. New channels stay zero so outputs match the base model.
    for (int o = 0; o < W0; ++o) {
        for (int ci = 0; ci < in_old; ++ci) {
            const int cn = ci < C ? ci : ci + C + 1;
            for (int k = 0; k < 9; ++k)
                new_w.data[static_cast<std::size_t>(((o * in_new) + cn) * 9 + k)] =
                    old_w.data[static_cast<std::size_t>(((o * in_old) + ci) * 9 + k)];
        }
    }
    m.params["stem.w"] = std::move(new_w);
    return m;
}

Tensor DenoiserModel::cond_onehot(int cond) const {
    if (cond < 0 || cond >= arch.cond_vocab)
        throw UsageError("condition id " + std::to_string(cond) + " outside vocab [0," +
                         std::to_string(arch.cond_vocab - 1) + "]");
    Tensor t = Tensor::zeros({arch.cond_vocab});
    t.data[static_cast<std::size_t>(cond)] = 1.0f;
    return t;
}

Tensor DenoiserModel::eps(const Tensor& x_t, double t, int cond, const BinaryMask* mask,
                          const Tensor* src_masked) const {
    const Tensor temb = timestep_features(t, arch.temb_dim);
    const Tensor onehot = cond_onehot(cond);
    InputMap in;
    in[kInX] = &x_t;
    in[kInTemb] = &temb;
    in[kInCond] = &onehot;
    Tensor mask_t;
    if (arch.variant == ModelVariant::Inpaint) {
        if (!mask || !src_masked)
            throw UsageError("inpaint model requires mask and masked source inputs");
        mask_t = mask->to_tensor();
        in[kInMask] = &mask_t;
        in[kInSrcMasked] = src_masked;
    } else if (mask || src_masked) {
        throw UsageError("standard model takes no mask conditioning");
    }
    Executor ex(eps_graph.graph);
    return ex.forward(params, in, eps_graph.output);
}

void DenoiserModel::save(const std::string& ckpt_path) const {
    save_ckpt(ckpt_path, params);
    nlohmann::json j;
    j["image_size"] = arch.image_size;
    j["channels"] = arch.channels;
    j["base_width"] = arch.base_width;
    j["cond_vocab"] = arch.cond_vocab;
    j["temb_dim"] = arch.temb_dim;
    j["temb_channels"] = arch.temb_channels;
    j["emb_dim"] = arch.emb_dim;
    j["groups"] = arch.groups;
    j["variant"] = to_string(arch.variant);
    j["model_id"] = model_id;
    std::ofstream os(ckpt_path + ".json");
    if (!os) throw IoError("cannot write sidecar for " + ckpt_path);
    os << j.dump(2) << "\n";
}

DenoiserModel DenoiserModel::load(const std::string& ckpt_path) {
    std::ifstream is(ckpt_path + ".json");
    if (!is) throw IoError("missing arch sidecar " + ckpt_path + ".json");
    nlohmann::json j = nlohmann::json::parse(is);
    ArchDesc arch;
    arch.image_size = j.at("image_size").get<int>();
    arch.channels = j.at("channels").get<int>();
    arch.base_width = j.at("base_width").get<int>();
    arch.cond_vocab = j.at("cond_vocab").get<int>();
    arch.temb_dim = j.at("temb_dim").get<int>();
    arch.temb_channels = j.at("temb_channels").get<int>();
    arch.emb_dim = j.at("emb_dim").get<int>();
    arch.groups = j.at("groups").get<int>();
    arch.variant = variant_from_string(j.at("variant").get<std::string>());

    DenoiserModel m;
    m.arch = arch;
    m.model_id = j.value("model_id", std::string("model"));
    m.eps_graph = build_eps_graph(arch);
    m.params = load_ckpt(ckpt_path);
    for (const auto& [name, shape] : m.eps_graph.graph.param_leaves()) {
        auto it = m.params.find(name);
        if (it == m.params.end()) throw IoError("checkpoint missing tensor '" + name + "'");
        if (it->second.shape != shape)
            throw IoError("checkpoint tensor '" + name + "' has shape " +
                          shape_str(it->second.shape) + ", arch wants " + shape_str(shape));
    }
    return m;
}

}  // namespace pxs
