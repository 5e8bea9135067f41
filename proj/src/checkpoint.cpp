#include "pixelshield/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>

namespace pxs {

namespace {

constexpr char kMagic[8] = {'D', 'G', 'C', 'K', 'P', 'T', '1', '\0'};

void put_u16(std::ostream& os, std::uint16_t v) {
    unsigned char b[2] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>(v >> 8)};
    os.write(reinterpret_cast<const char*>(b), 2);
}

void put_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint16_t get_u16(std::istream& is) {
    unsigned char b[2];
    is.read(reinterpret_cast<char*>(b), 2);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

std::uint32_t get_u32(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

void put_f32_payload(std::ostream& os, const std::vector<float>& data) {
    // Host is little-endian; write raw.
    os.write(reinterpret_cast<const char*>(data.data()),
             static_cast<std::streamsize>(data.size() * sizeof(float)));
}

}  // namespace

void save_ckpt(const std::string& path, const ParamStore& tensors) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for write: " + path);
    os.write(kMagic, 8);
    put_u32(os, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        if (name.size() > 0xffff) throw UsageError("tensor name too long: " + name);
        if (t.rank() > 0xff) throw UsageError("tensor rank too large");
        put_u16(os, static_cast<std::uint16_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        os.put(static_cast<char>(t.rank()));
        for (int e : t.shape) put_u32(os, static_cast<std::uint32_t>(e));
        put_f32_payload(os, t.data);
    }
    if (!os) throw IoError("write failed: " + path);
}

ParamStore load_ckpt(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kMagic, 8) != 0) throw IoError("bad checkpoint magic: " + path);
    const std::uint32_t count = get_u32(is);
    ParamStore out;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint16_t nlen = get_u16(is);
        std::string name(nlen, '\0');
        is.read(name.data(), nlen);
        const int rank = is.get();
        if (rank < 0) throw IoError("truncated checkpoint: " + path);
        std::vector<int> shape(static_cast<std::size_t>(rank));
        for (int r = 0; r < rank; ++r) shape[static_cast<std::size_t>(r)] = static_cast<int>(get_u32(is));
        Tensor t = Tensor::zeros(shape);
        is.read(reinterpret_cast<char*>(t.data.data()),
                static_cast<std::streamsize>(t.data.size() * sizeof(float)));
        if (!is) throw IoError("truncated checkpoint: " + path);
        out[name] = std::move(t);
    }
    return out;
}

void save_tensor(const std::string& path, const std::string& name, const Tensor& t) {
    ParamStore one;
    one[name] = t;
    save_ckpt(path, one);
}

Tensor load_single_tensor(const std::string& path) {
    ParamStore all = load_ckpt(path);
    if (all.size() != 1) throw IoError("expected a single tensor in " + path);
    return all.begin()->second;
}

}  // namespace pxs
