#pragma once

// Little-endian byte buffers and whole-file helpers.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "evfi/errors.hpp"

namespace evfi {

static_assert(std::endian::native == std::endian::little, "evfi file formats assume a little-endian host");

class ByteWriter {
public:
    void bytes(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
    void u8(std::uint8_t v) { put(v); }
    void i8(std::int8_t v) { put(v); }
    void u16(std::uint16_t v) { put(v); }
    void u32(std::uint32_t v) { put(v); }
    void u64(std::uint64_t v) { put(v); }
    void f32(float v) { put(v); }
    void f64(double v) { put(v); }

    const std::vector<std::uint8_t>& buffer() const { return buf_; }
    std::vector<std::uint8_t> take() { return std::move(buf_); }

private:
    template <class T>
    void put(T v) {
        std::uint8_t raw[sizeof(T)];
        std::memcpy(raw, &v, sizeof(T));
        buf_.insert(buf_.end(), raw, raw + sizeof(T));
    }
    std::vector<std::uint8_t> buf_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> data, std::string source = "buffer")
        : data_(data), source_(std::move(source)) {}

    std::size_t offset() const { return pos_; }
    std::size_t remaining() const { return data_.size() - pos_; }
    const std::string& source() const { return source_; }

    /// Throws when fewer than n bytes remain.
    void need(std::size_t n, std::string_view what) const {
        if (remaining() < n) {
            throw DataError(source_ + ": truncated " + std::string(what) + " at byte offset " +
                            std::to_string(pos_) + ": expected " + std::to_string(n) + " bytes, " +
                            std::to_string(remaining()) + " available");
        }
    }

    std::string bytes(std::size_t n, std::string_view what) {
        need(n, what);
        std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    std::uint8_t u8(std::string_view what) { return get<std::uint8_t>(what); }
    std::int8_t i8(std::string_view what) { return get<std::int8_t>(what); }
    std::uint16_t u16(std::string_view what) { return get<std::uint16_t>(what); }
    std::uint32_t u32(std::string_view what) { return get<std::uint32_t>(what); }
    std::uint64_t u64(std::string_view what) { return get<std::uint64_t>(what); }
    float f32(std::string_view what) { return get<float>(what); }
    double f64(std::string_view what) { return get<double>(what); }

    [[noreturn]] void fail(std::string_view msg, std::size_t at) const {
        throw DataError(source_ + ": " + std::string(msg) + " at byte offset " + std::to_string(at));
    }

    void expect_magic(std::string_view magic) {
        const std::size_t at = pos_;
        if (bytes(magic.size(), "magic") != magic) fail("bad magic (expected \"" + std::string(magic) + "\")", at);
    }

private:
    template <class T>
    T get(std::string_view what) {
        need(sizeof(T), what);
        T v;
        std::memcpy(&v, data_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return v;
    }

    std::span<const std::uint8_t> data_;
    std::size_t pos_ = 0;
    std::string source_;
};

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open input file: " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::string read_text_file(const std::filesystem::path& path) {
    const auto bytes = read_file(path);
    return {bytes.begin(), bytes.end()};
}

inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open output file: " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("failed writing: " + path.string());
}

inline void write_text_file(const std::filesystem::path& path, std::string_view text) {
    write_file(path, {reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

/// FNV-1a 64-bit digest.
inline std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (std::uint8_t b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace evfi
