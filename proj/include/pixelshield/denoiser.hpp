#pragma once

#include <cstdint>
#include <string>

#include "pixelshield/graph.hpp"
#include "pixelshield/mask.hpp"
#include "pixelshield/schedule.hpp"

namespace pxs {

enum class ModelVariant { Standard, Inpaint };

ModelVariant variant_from_string(const std::string& s);
std::string to_string(ModelVariant v);

// 2-level U-Net epsilon predictor: double-conv blocks with group norm and
// SiLU, nearest down/up-sampling, skip concatenation. Timestep features and
// the condition embedding are projected and added at every level; a few
// embedding channels also enter the stem spatially.
struct ArchDesc {
    int image_size = 32;
    int channels = 1;
    int base_width = 32;
    int cond_vocab = 5;  // condition id 0 = unconditional
    int temb_dim = 16;
    int temb_channels = 4;
    int emb_dim = 64;
    int groups = 8;
    ModelVariant variant = ModelVariant::Standard;

    // Stem input channels: C + temb_channels (standard),
    // 2C + 1 + temb_channels (inpaint).
    int input_channels() const;
    void validate() const;
};

// Input leaf names of the epsilon graph.
inline constexpr const char* kInX = "x";
inline constexpr const char* kInTemb = "temb";
inline constexpr const char* kInCond = "cond";
inline constexpr const char* kInMask = "mask";
inline constexpr const char* kInSrcMasked = "src_masked";

struct EpsGraph {
    Graph graph;
    int output = -1;
};

EpsGraph build_eps_graph(const ArchDesc& arch);

struct DenoiserModel {
    ArchDesc arch;
    ParamStore params;
    EpsGraph eps_graph;
    std::string model_id = "model";

    static DenoiserModel create(const ArchDesc& arch, std::uint64_t init_seed);

    // Base model behaviour is preserved exactly: the new mask / masked-source
    // input channels start at zero weight.
    static DenoiserModel expand_to_inpaint(const DenoiserModel& base);

    Tensor cond_onehot(int cond) const;

    // Convenience single forward (constructs a throwaway executor).
    Tensor eps(const Tensor& x_t, double t, int cond, const BinaryMask* mask = nullptr,
               const Tensor* src_masked = nullptr) const;

    void save(const std::string& ckpt_path) const;  // writes ckpt + ".json" sidecar
    static DenoiserModel load(const std::string& ckpt_path);
};

}  // namespace pxs
