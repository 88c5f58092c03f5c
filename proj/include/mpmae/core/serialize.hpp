#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "mpmae/core/tensor.hpp"

namespace mpmae {

static_assert(std::endian::native == std::endian::little,
              "on-disk formats are little-endian; payloads are memcpy'd");

// Errors surfaced by archives and the dataset container.
struct IntegrityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class DType : std::uint8_t { f32 = 0, f64 = 1, i32 = 2, u8 = 3, u64 = 4 };

template <typename T>
constexpr DType dtype_of();
template <>
constexpr DType dtype_of<float>() { return DType::f32; }
template <>
constexpr DType dtype_of<double>() { return DType::f64; }
template <>
constexpr DType dtype_of<std::int32_t>() { return DType::i32; }
template <>
constexpr DType dtype_of<std::uint8_t>() { return DType::u8; }
template <>
constexpr DType dtype_of<std::uint64_t>() { return DType::u64; }

inline std::size_t dtype_size(DType t) {
    switch (t) {
        case DType::f32: return 4;
        case DType::f64: return 8;
        case DType::i32: return 4;
        case DType::u8: return 1;
        case DType::u64: return 8;
    }
    throw FormatError("unknown dtype code");
}

inline std::uint32_t crc32(const std::uint8_t* data, std::size_t len, std::uint32_t crc = 0) {
    static const auto table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
        return t;
    }();
    crc = ~crc;
    for (std::size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xFFu] ^ (crc >> 8);
    return ~crc;
}

// --- little-endian byte stream helpers -------------------------------------

class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        buf_.insert(buf_.end(), b, b + n);
    }
    void str(const std::string& s) {
        u64(s.size());
        bytes(s.data(), s.size());
    }
    const std::vector<std::uint8_t>& data() const { return buf_; }

private:
    std::vector<std::uint8_t> buf_;
};

class ByteReader {
public:
    ByteReader(const std::uint8_t* p, std::size_t n) : p_(p), n_(n) {}
    std::uint8_t u8() { return take(1)[0]; }
    std::uint32_t u32() {
        const auto* b = take(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        const auto* b = take(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
        return v;
    }
    std::string str() {
        const std::uint64_t len = u64();
        const auto* b = take(len);
        return std::string(reinterpret_cast<const char*>(b), len);
    }
    const std::uint8_t* take(std::size_t n) {
        if (pos_ + n > n_) throw FormatError("archive truncated");
        const std::uint8_t* p = p_ + pos_;
        pos_ += n;
        return p;
    }
    std::size_t remaining() const { return n_ - pos_; }

private:
    const std::uint8_t* p_;
    std::size_t n_;
    std::size_t pos_ = 0;
};

// --- named tensor archive ---------------------------------------------------
//
// Layout: magic "MPCK", u32 version, meta string (JSON), u64 entry count,
// entries (name, dtype u8, rank u8, dims u64..., payload LE), u32 CRC32 of
// everything before the trailer.

struct ArchiveEntry {
    DType dtype;
    Shape shape;
    std::vector<std::uint8_t> raw;

    template <typename T>
    Tensor<T> as() const {
        if (dtype != dtype_of<T>()) throw FormatError("archive entry dtype mismatch");
        Tensor<T> t(shape);
        std::memcpy(t.data(), raw.data(), raw.size());
        return t;
    }
};

class TensorArchive {
public:
    static constexpr std::uint32_t kVersion = 1;

    std::string meta;  // JSON blob, caller-defined
    std::map<std::string, ArchiveEntry> entries;

    template <typename T>
    void put(const std::string& name, const Tensor<T>& t) {
        ArchiveEntry e;
        e.dtype = dtype_of<T>();
        e.shape = t.shape();
        e.raw.resize(static_cast<std::size_t>(t.numel()) * sizeof(T));
        std::memcpy(e.raw.data(), t.data(), e.raw.size());
        entries[name] = std::move(e);
    }

    template <typename T>
    Tensor<T> get(const std::string& name) const {
        auto it = entries.find(name);
        if (it == entries.end()) throw FormatError("archive: missing tensor '" + name + "'");
        return it->second.as<T>();
    }

    bool contains(const std::string& name) const { return entries.count(name) > 0; }

    void save(const std::string& path) const {
        ByteWriter w;
        w.bytes("MPCK", 4);
        w.u32(kVersion);
        w.str(meta);
        w.u64(entries.size());
        for (const auto& [name, e] : entries) {
            w.str(name);
            w.u8(static_cast<std::uint8_t>(e.dtype));
            w.u8(static_cast<std::uint8_t>(e.shape.size()));
            for (auto d : e.shape) w.u64(static_cast<std::uint64_t>(d));
            w.bytes(e.raw.data(), e.raw.size());
        }
        const std::uint32_t crc = crc32(w.data().data(), w.data().size());
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("cannot open for write: " + path);
        f.write(reinterpret_cast<const char*>(w.data().data()),
                static_cast<std::streamsize>(w.data().size()));
        std::uint8_t tail[4];
        for (int i = 0; i < 4; ++i) tail[i] = static_cast<std::uint8_t>(crc >> (8 * i));
        f.write(reinterpret_cast<const char*>(tail), 4);
        if (!f) throw std::runtime_error("write failed: " + path);
    }

    static TensorArchive load(const std::string& path) {
        std::ifstream f(path, std::ios::binary);
        if (!f) throw std::runtime_error("cannot open: " + path);
        std::vector<std::uint8_t> buf((std::istreambuf_iterator<char>(f)),
                                      std::istreambuf_iterator<char>());
        if (buf.size() < 12) throw FormatError("archive too small");
        std::uint32_t stored = 0;
        for (int i = 0; i < 4; ++i)
            stored |= static_cast<std::uint32_t>(buf[buf.size() - 4 + static_cast<std::size_t>(i)])
                      << (8 * i);
        if (crc32(buf.data(), buf.size() - 4) != stored)
            throw IntegrityError("archive checksum mismatch: " + path);

        ByteReader r(buf.data(), buf.size() - 4);
        if (std::memcmp(r.take(4), "MPCK", 4) != 0) throw FormatError("bad archive magic");
        const std::uint32_t ver = r.u32();
        if (ver != kVersion) throw FormatError("unsupported archive version " + std::to_string(ver));
        TensorArchive a;
        a.meta = r.str();
        const std::uint64_t n = r.u64();
        for (std::uint64_t i = 0; i < n; ++i) {
            std::string name = r.str();
            ArchiveEntry e;
            e.dtype = static_cast<DType>(r.u8());
            const int rank = r.u8();
            std::int64_t numel = 1;
            for (int d = 0; d < rank; ++d) {
                e.shape.push_back(static_cast<std::int64_t>(r.u64()));
                numel *= e.shape.back();
            }
            const std::size_t bytes = static_cast<std::size_t>(numel) * dtype_size(e.dtype);
            const auto* p = r.take(bytes);
            e.raw.assign(p, p + bytes);
            a.entries[std::move(name)] = std::move(e);
        }
        return a;
    }
};

}  // namespace mpmae
