#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "spygr/errors.hpp"
#include "spygr/tensor.hpp"

namespace spygr {

// Flat binary tensor format:
//   4 bytes magic "SPGT"
//   1 byte dtype code (0 = f32, 1 = f64)
//   3 reserved zero bytes
//   4 x u32 little-endian extents [N, C, H, W]
//   raw little-endian values, row-major, W fastest
inline constexpr char kTensorMagic[4] = {'S', 'P', 'G', 'T'};

static_assert(std::endian::native == std::endian::little,
              "serialization assumes a little-endian host");

namespace detail {

inline void put_u32le(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline std::uint32_t get_u32le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

template <class T>
inline std::string tensor_to_bytes(const Tensor<T>& t) {
    std::string out;
    out.reserve(20 + static_cast<std::size_t>(t.numel()) * sizeof(T));
    out.append(kTensorMagic, 4);
    out.push_back(static_cast<char>(dtype_of<T>::value));
    out.append(3, '\0');
    detail::put_u32le(out, static_cast<std::uint32_t>(t.shape().n));
    detail::put_u32le(out, static_cast<std::uint32_t>(t.shape().c));
    detail::put_u32le(out, static_cast<std::uint32_t>(t.shape().h));
    detail::put_u32le(out, static_cast<std::uint32_t>(t.shape().w));
    const std::size_t bytes = static_cast<std::size_t>(t.numel()) * sizeof(T);
    const std::size_t off = out.size();
    out.resize(off + bytes);
    std::memcpy(out.data() + off, t.data(), bytes);
    return out;
}

template <class T>
inline void save_tensor(const std::filesystem::path& path, const Tensor<T>& t) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path.string());
    const std::string bytes = tensor_to_bytes(t);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("short write: " + path.string());
}

struct TensorFileInfo {
    Dtype dtype;
    Shape shape;
};

inline TensorFileInfo peek_tensor(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path.string());
    unsigned char header[24];
    f.read(reinterpret_cast<char*>(header), sizeof(header));
    if (!f) throw IoError("truncated header: " + path.string());
    if (std::memcmp(header, kTensorMagic, 4) != 0)
        throw IoError("bad magic in " + path.string());
    if (header[4] > 1) throw IoError("unknown dtype code in " + path.string());
    TensorFileInfo info;
    info.dtype = static_cast<Dtype>(header[4]);
    info.shape = Shape{static_cast<int>(detail::get_u32le(header + 8)),
                       static_cast<int>(detail::get_u32le(header + 12)),
                       static_cast<int>(detail::get_u32le(header + 16)),
                       static_cast<int>(detail::get_u32le(header + 20))};
    return info;
}

/// Loads a tensor file, converting the stored precision to T when they
/// differ (f32 -> f64 is exact; f64 -> f32 rounds).
template <class T>
inline Tensor<T> load_tensor(const std::filesystem::path& path) {
    const TensorFileInfo info = peek_tensor(path);
    std::ifstream f(path, std::ios::binary);
    f.seekg(24);
    const std::int64_t n = info.shape.numel();

    auto read_raw = [&](auto* dst, std::size_t value_size) {
        f.read(reinterpret_cast<char*>(dst), static_cast<std::streamsize>(value_size * n));
        if (!f) throw IoError("truncated data: " + path.string());
    };

    if (info.dtype == dtype_of<T>::value) {
        Tensor<T> t(info.shape);
        read_raw(t.data(), sizeof(T));
        return t;
    }
    if (info.dtype == Dtype::f32) {
        Tensor<float> t(info.shape);
        read_raw(t.data(), sizeof(float));
        return t.template cast<T>();
    }
    Tensor<double> t(info.shape);
    read_raw(t.data(), sizeof(double));
    return t.template cast<T>();
}

}  // namespace spygr
