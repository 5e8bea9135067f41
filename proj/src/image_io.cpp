#include "pixelshield/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace pxs {

namespace {

int read_pnm_token(std::istream& is) {
    // Skips whitespace and '#' comments.
    while (true) {
        int c = is.peek();
        if (c == '#') {
            std::string line;
            std::getline(is, line);
        } else if (std::isspace(c)) {
            is.get();
        } else {
            break;
        }
    }
    int v;
    if (!(is >> v)) throw IoError("malformed PNM header");
    return v;
}

unsigned char to_byte(float v) {
    float x = std::min(1.0f, std::max(0.0f, v));
    return static_cast<unsigned char>(std::lround(x * 255.0f));
}

}  // namespace

void save_image(const std::string& path, const Tensor& img) {
    if (img.rank() != 3 || (img.shape[0] != 1 && img.shape[0] != 3))
        throw UsageError("save_image: expected [C,H,W] with C in {1,3}, got " + shape_str(img.shape));
    const int c = img.shape[0], h = img.shape[1], w = img.shape[2];
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for write: " + path);
    os << (c == 1 ? "P5" : "P6") << "\n" << w << " " << h << "\n255\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(w) * c);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < c; ++ch)
                row[static_cast<std::size_t>(x) * c + ch] =
                    to_byte(img.data[static_cast<std::size_t>((static_cast<std::int64_t>(ch) * h + y) * w + x)]);
        os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!os) throw IoError("write failed: " + path);
}

Tensor load_image(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    std::string magic;
    is >> magic;
    int c;
    if (magic == "P5")
        c = 1;
    else if (magic == "P6")
        c = 3;
    else
        throw IoError("unsupported PNM type '" + magic + "' in " + path);
    const int w = read_pnm_token(is);
    const int h = read_pnm_token(is);
    const int maxval = read_pnm_token(is);
    if (maxval != 255) throw IoError("only 8-bit PNM supported: " + path);
    is.get();  // single whitespace after header
    std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * c);
    is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!is) throw IoError("truncated PNM: " + path);
    Tensor img = Tensor::zeros({c, h, w});
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (int ch = 0; ch < c; ++ch)
                img.data[static_cast<std::size_t>((static_cast<std::int64_t>(ch) * h + y) * w + x)] =
                    static_cast<float>(raw[(static_cast<std::size_t>(y) * w + x) * c + ch]) / 255.0f;
    return img;
}

void save_mask(const std::string& path, const BinaryMask& mask) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for write: " + path);
    os << "P5\n" << mask.w << " " << mask.h << "\n255\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(mask.w));
    for (int y = 0; y < mask.h; ++y) {
        for (int x = 0; x < mask.w; ++x) row[static_cast<std::size_t>(x)] = mask.at(y, x) ? 255 : 0;
        os.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!os) throw IoError("write failed: " + path);
}

BinaryMask load_mask(const std::string& path) {
    Tensor img = load_image(path);
    if (img.shape[0] != 1) throw IoError("mask must be a PGM (P5): " + path);
    BinaryMask m(img.shape[1], img.shape[2]);
    for (std::size_t i = 0; i < m.bits.size(); ++i) m.bits[i] = img.data[i] > (127.0f / 255.0f) ? 1 : 0;
    return m;
}

}  // namespace pxs
