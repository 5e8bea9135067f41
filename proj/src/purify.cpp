#include "pixelshield/purify.hpp"

#include <algorithm>
#include <cmath>

namespace pxs {

namespace {

// Standard luminance quantization table (JPEG Annex K).
constexpr int kLumaBase[64] = {
    16, 11, 10, 16, 24,  40,  51,  61,  12, 12, 14, 19, 26,  58,  60,  55,
    14, 13, 16, 24, 40,  57,  69,  56,  14, 17, 22, 29, 51,  87,  80,  62,
    18, 22, 37, 56, 68,  109, 103, 77,  24, 35, 55, 64, 81,  104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101, 72, 92, 95, 98, 112, 100, 103, 99};

void quant_table(int quality, float* tbl) {
    const int scale = quality < 50 ? 5000 / quality : 200 - 2 * quality;
    for (int i = 0; i < 64; ++i) {
        int v = (kLumaBase[i] * scale + 50) / 100;
        tbl[i] = static_cast<float>(std::clamp(v, 1, 255));
    }
}

struct DctBasis {
    float c[8][8];  // c[u][x] = C(u)/2 * cos((2x+1)u pi/16)
    DctBasis() {
        for (int u = 0; u < 8; ++u)
            for (int x = 0; x < 8; ++x) {
                const double cu = u == 0 ? 1.0 / std::sqrt(2.0) : 1.0;
                c[u][x] = static_cast<float>(
                    0.5 * cu * std::cos((2.0 * x + 1.0) * u * 3.14159265358979323846 / 16.0));
            }
    }
};

const DctBasis& basis() {
    static const DctBasis b;
    return b;
}

void block_roundtrip(float* blk, const float* tbl) {
    const DctBasis& B = basis();
    float tmp[64], coef[64];
    // rows then columns
    for (int y = 0; y < 8; ++y)
        for (int u = 0; u < 8; ++u) {
            float s = 0.0f;
            for (int x = 0; x < 8; ++x) s += blk[y * 8 + x] * B.c[u][x];
            tmp[y * 8 + u] = s;
        }
    for (int u = 0; u < 8; ++u)
        for (int v = 0; v < 8; ++v) {
            float s = 0.0f;
            for (int y = 0; y < 8; ++y) s += tmp[y * 8 + u] * B.c[v][y];
            coef[v * 8 + u] = s;
        }
    for (int i = 0; i < 64; ++i) coef[i] = std::nearbyint(coef[i] / tbl[i]) * tbl[i];
    // inverse
    for (int v = 0; v < 8; ++v)
        for (int x = 0; x < 8; ++x) {
            float s = 0.0f;
            for (int u = 0; u < 8; ++u) s += coef[v * 8 + u] * B.c[u][x];
            tmp[v * 8 + x] = s;
        }
    for (int x = 0; x < 8; ++x)
        for (int y = 0; y < 8; ++y) {
            float s = 0.0f;
            for (int v = 0; v < 8; ++v) s += tmp[v * 8 + x] * B.c[v][y];
            blk[y * 8 + x] = s;
        }
}

int reflect(int i, int n) {
    if (i < n) return i;
    return 2 * n - 1 - i;  // pad is < 8 and n >= 8, so one reflection suffices
}

}  // namespace

Tensor dct_quantize_purify(const Tensor& img, int quality) {
    if (quality < 1 || quality > 100)
        throw UsageError("dct_quantize_purify: quality must be in [1,100]");
    if (img.rank() != 3) throw UsageError("dct_quantize_purify: image must be [C,H,W]");
    const int C = img.shape[0], H = img.shape[1], W = img.shape[2];
    const int Hp = (H + 7) / 8 * 8, Wp = (W + 7) / 8 * 8;
    float tbl[64];
    quant_table(quality, tbl);
    Tensor out = img;
    std::vector<float> plane(static_cast<std::size_t>(Hp) * Wp);
    for (int c = 0; c < C; ++c) {
        const float* src = img.data.data() + static_cast<std::int64_t>(c) * H * W;
        for (int y = 0; y < Hp; ++y)
            for (int x = 0; x < Wp; ++x)
                plane[static_cast<std::size_t>(y) * Wp + x] =
                    src[static_cast<std::int64_t>(reflect(y, H)) * W + reflect(x, W)] * 255.0f -
                    128.0f;
        float blk[64];
        for (int by = 0; by < Hp; by += 8)
            for (int bx = 0; bx < Wp; bx += 8) {
                for (int y = 0; y < 8; ++y)
                    for (int x = 0; x < 8; ++x)
                        blk[y * 8 + x] = plane[static_cast<std::size_t>(by + y) * Wp + bx + x];
                block_roundtrip(blk, tbl);
                for (int y = 0; y < 8; ++y)
                    for (int x = 0; x < 8; ++x)
                        plane[static_cast<std::size_t>(by + y) * Wp + bx + x] = blk[y * 8 + x];
            }
        float* dst = out.data.data() + static_cast<std::int64_t>(c) * H * W;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
                dst[static_cast<std::int64_t>(y) * W + x] =
                    (plane[static_cast<std::size_t>(y) * Wp + x] + 128.0f) / 255.0f;
    }
    return clamp01(out);
}

Tensor crop_resize_purify(const Tensor& img, double f) {
    if (!(f > 0.0 && f <= 1.0)) throw UsageError("crop_resize_purify: f must be in (0,1]");
    if (img.rank() != 3) throw UsageError("crop_resize_purify: image must be [C,H,W]");
    const int C = img.shape[0], H = img.shape[1], W = img.shape[2];
    const int ch = static_cast<int>(std::floor(f * H));
    const int cw = static_cast<int>(std::floor(f * W));
    if (ch == H && cw == W) return img;
    if (ch < 8 || cw < 8) throw UsageError("crop_resize_purify: crop smaller than 8x8");
    const int y0 = (H - ch) / 2, x0 = (W - cw) / 2;
    Tensor out = Tensor::zeros(img.shape);
    for (int c = 0; c < C; ++c) {
        const float* src = img.data.data() + static_cast<std::int64_t>(c) * H * W;
        float* dst = out.data.data() + static_cast<std::int64_t>(c) * H * W;
        for (int y = 0; y < H; ++y) {
            double sy = (y + 0.5) * ch / H - 0.5;
            sy = std::clamp(sy, 0.0, static_cast<double>(ch - 1));
            const int iy = std::min(static_cast<int>(sy), ch - 2 >= 0 ? ch - 2 : 0);
            const double wy = sy - iy;
            for (int x = 0; x < W; ++x) {
                double sx = (x + 0.5) * cw / W - 0.5;
                sx = std::clamp(sx, 0.0, static_cast<double>(cw - 1));
                const int ix = std::min(static_cast<int>(sx), cw - 2 >= 0 ? cw - 2 : 0);
                const double wx = sx - ix;
                auto at = [&](int yy, int xx) {
                    return static_cast<double>(
                        src[static_cast<std::int64_t>(y0 + yy) * W + x0 + xx]);
                };
                const double v = (1 - wy) * ((1 - wx) * at(iy, ix) + wx * at(iy, ix + 1)) +
                                 wy * ((1 - wx) * at(iy + 1, ix) + wx * at(iy + 1, ix + 1));
                dst[static_cast<std::int64_t>(y) * W + x] = static_cast<float>(v);
            }
        }
    }
    return clamp01(out);
}

Tensor purify(const Tensor& img, const PurifyConfig& cfg) {
    if (cfg.kind == "none" || cfg.kind.empty()) return img;
    if (cfg.kind == "dct_quantize") return dct_quantize_purify(img, cfg.quality);
    if (cfg.kind == "crop_resize") return crop_resize_purify(img, cfg.crop_fraction);
    throw UsageError("unknown purifier '" + cfg.kind + "'");
}

}  // namespace pxs
