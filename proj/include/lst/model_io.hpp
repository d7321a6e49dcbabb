#pragma once

#include "lst/error.hpp"
#include "lst/mnist_io.hpp"
#include "lst/nn.hpp"

#include <zlib.h>

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace lst {

// ---------------------------------------------------------------------------
// Model container, all integers little-endian:
//
//   magic      4 bytes ASCII  "LST1" (float model) or "LSQ1" (Q5.7 model)
//   version    u32            container_version
//   spec_len   u32            byte length of the spec text
//   spec       spec_len bytes UTF-8, see spec_to_text()
//   count      u64            number of stored parameter values
//   payload    count * 8 bytes IEEE-754 binary64 ("LST1")
//              count * 2 bytes int16 raw Q5.7 words ("LSQ1")
//   crc        u32            CRC-32 (IEEE 802.3) of every preceding byte
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t container_version = 1;
inline constexpr std::array<char, 4> float_model_magic{'L', 'S', 'T', '1'};
inline constexpr std::array<char, 4> fixed_model_magic{'L', 'S', 'Q', '1'};

inline std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
    uLong crc = crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed in chunks to stay portable for large files.
    constexpr std::size_t chunk = 1u << 30;
    for (std::size_t off = 0; off < bytes.size(); off += chunk) {
        const std::size_t n = std::min(chunk, bytes.size() - off);
        crc = crc32(crc, bytes.data() + off, static_cast<uInt>(n));
    }
    return static_cast<std::uint32_t>(crc);
}

namespace detail {

class ByteWriter {
public:
    void raw(std::span<const std::uint8_t> b) { out_.insert(out_.end(), b.begin(), b.end()); }
    void raw(std::string_view s) { out_.insert(out_.end(), s.begin(), s.end()); }

    template <std::unsigned_integral U>
    void le(U v) {
        for (std::size_t i = 0; i < sizeof(U); ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }

    std::vector<std::uint8_t>& bytes() { return out_; }

private:
    std::vector<std::uint8_t> out_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> b) : bytes_(b) {}

    std::span<const std::uint8_t> take(std::size_t n) {
        if (bytes_.size() - pos_ < n) throw Error(ErrorKind::checksum_mismatch, "model file is truncated");
        auto s = bytes_.subspan(pos_, n);
        pos_ += n;
        return s;
    }

    template <std::unsigned_integral U>
    U le() {
        const auto s = take(sizeof(U));
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(U{s[i]} << (8 * i));
        return v;
    }

    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

struct Container {
    ModelSpec spec;
    std::uint64_t count = 0;
    std::span<const std::uint8_t> payload;
};

inline std::vector<std::uint8_t> encode_container(const std::array<char, 4>& magic, const ModelSpec& spec,
                                                  std::uint64_t count, std::span<const std::uint8_t> payload) {
    ByteWriter w;
    w.raw(std::string_view(magic.data(), magic.size()));
    w.le(container_version);
    const std::string text = spec_to_text(spec);
    w.le(static_cast<std::uint32_t>(text.size()));
    w.raw(text);
    w.le(count);
    w.raw(payload);
    const auto crc = crc32_of(w.bytes());
    w.le(crc);
    return std::move(w.bytes());
}

// Checks magic, version and CRC, in that order, then splits the sections.
inline Container decode_container(std::span<const std::uint8_t> bytes, const std::array<char, 4>& magic,
                                  std::size_t word_size) {
    if (bytes.size() < 4 || std::memcmp(bytes.data(), magic.data(), 4) != 0) {
        throw Error(ErrorKind::bad_magic, "not a '" + std::string(magic.data(), 4) + "' model file");
    }
    ByteReader header(bytes.subspan(4));
    const auto version = header.le<std::uint32_t>();
    if (version != container_version) {
        throw Error(ErrorKind::format_version_mismatch, "model file version " + std::to_string(version) +
                                                            ", this build reads version " +
                                                            std::to_string(container_version));
    }
    if (bytes.size() < 12) throw Error(ErrorKind::checksum_mismatch, "model file is truncated");
    const auto body = bytes.first(bytes.size() - 4);
    ByteReader tail(bytes.last(4));
    if (crc32_of(body) != tail.le<std::uint32_t>()) {
        throw Error(ErrorKind::checksum_mismatch, "CRC-32 mismatch (file corrupt or truncated)");
    }
    ByteReader r(body.subspan(8));
    const auto spec_len = r.le<std::uint32_t>();
    const auto text = r.take(spec_len);
    Container c;
    c.spec = spec_from_text(std::string_view(reinterpret_cast<const char*>(text.data()), text.size()));
    c.count = r.le<std::uint64_t>();
    if (r.remaining() != c.count * word_size) {
        throw Error(ErrorKind::checksum_mismatch, "payload size disagrees with parameter count");
    }
    c.payload = r.take(r.remaining());
    if (c.count != param_count(c.spec)) {
        throw Error(ErrorKind::shape_mismatch, "file stores " + std::to_string(c.count) + " values, spec needs " +
                                                   std::to_string(param_count(c.spec)));
    }
    return c;
}

} // namespace detail

template <typename T>
std::vector<std::uint8_t> encode_model(const ModelSpec& spec, const ModelParams<T>& params) {
    check_params(spec, params);
    detail::ByteWriter payload;
    for_each_tensor(params, [&](auto span) {
        for (const auto v : span) payload.le(std::bit_cast<std::uint64_t>(static_cast<double>(v)));
    });
    return detail::encode_container(float_model_magic, spec, stored_value_count(params), payload.bytes());
}

struct LoadedModel {
    ModelSpec spec;
    ModelParams<double> params;
};

inline LoadedModel decode_model(std::span<const std::uint8_t> bytes) {
    const auto c = detail::decode_container(bytes, float_model_magic, 8);
    std::vector<double> values(c.count);
    detail::ByteReader r(c.payload);
    for (auto& v : values) v = std::bit_cast<double>(r.le<std::uint64_t>());
    LoadedModel out{c.spec, make_params<double>(c.spec)};
    assign_params(out.params, std::span<const double>(values));
    return out;
}

template <typename T>
void save_model(const std::filesystem::path& path, const ModelSpec& spec, const ModelParams<T>& params) {
    write_file_bytes(path, encode_model(spec, params));
}

inline LoadedModel load_model(const std::filesystem::path& path) {
    return decode_model(read_file_bytes(path));
}

// Reads the 4-byte magic, or an empty string for short files.
inline std::string peek_magic(const std::filesystem::path& path) {
    const auto bytes = read_file_bytes(path);
    if (bytes.size() < 4) return {};
    return std::string(reinterpret_cast<const char*>(bytes.data()), 4);
}

} // namespace lst
