#pragma once

// Little-endian encoding helpers, CRC-32 framing and atomic file writes shared
// by the feature-file and checkpoint formats.

#include "tfcmnn/errors.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

namespace tfcmnn {

using Bytes = std::vector<std::uint8_t>;

inline std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n)
{
    uLong crc = ::crc32(0L, Z_NULL, 0);
    // zlib takes uInt lengths; feed in chunks for very large payloads.
    while ( n > 0 )
    {
        const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
        crc = ::crc32(crc, data, chunk);
        data += chunk;
        n -= chunk;
    }
    return static_cast<std::uint32_t>(crc);
}

class ByteWriter
{
public:
    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u16(std::uint16_t v) { put(v, 2); }
    void u32(std::uint32_t v) { put(v, 4); }
    void u64(std::uint64_t v) { put(v, 8); }
    void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }

    void raw(std::string_view s) { buf_.insert(buf_.end(), s.begin(), s.end()); }

    void str(std::string_view s)
    {
        u32(static_cast<std::uint32_t>(s.size()));
        raw(s);
    }

    // Appends the CRC-32 of everything written so far.
    void seal() { u32(crc32_of(buf_.data(), buf_.size())); }

    const Bytes& bytes() const noexcept { return buf_; }

private:
    void put(std::uint64_t v, int n)
    {
        for ( int i = 0; i < n; ++i )
            buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }

    Bytes buf_;
};

class ByteReader
{
public:
    explicit ByteReader(const Bytes& buf, std::string what = "file")
        : buf_(buf)
        , what_(std::move(what))
    {}

    std::uint8_t u8() { return static_cast<std::uint8_t>(get(1)); }
    std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
    std::uint64_t u64() { return get(8); }
    double f64() { return std::bit_cast<double>(get(8)); }

    std::string raw(std::size_t n)
    {
        need(n);
        std::string s(buf_.begin() + static_cast<std::ptrdiff_t>(pos_),
                      buf_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
        pos_ += n;
        return s;
    }

    std::string str() { return raw(u32()); }

    std::size_t position() const noexcept { return pos_; }
    std::size_t remaining() const noexcept { return buf_.size() - pos_; }

    void need(std::size_t n) const
    {
        if ( remaining() < n )
            throw TruncatedError(what_ + " is truncated at byte " + std::to_string(pos_));
    }

private:
    std::uint64_t get(int n)
    {
        need(static_cast<std::size_t>(n));
        std::uint64_t v = 0;
        for ( int i = 0; i < n; ++i )
            v |= static_cast<std::uint64_t>(buf_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
        pos_ += static_cast<std::size_t>(n);
        return v;
    }

    const Bytes& buf_;
    std::string what_;
    std::size_t pos_ = 0;
};

// Checks the trailing CRC-32 over every preceding byte.
inline void verify_crc(const Bytes& buf, const std::string& what)
{
    if ( buf.size() < 4 )
        throw TruncatedError(what + " is truncated");
    const std::size_t body = buf.size() - 4;
    std::uint32_t stored   = 0;
    for ( int i = 0; i < 4; ++i )
        stored |= static_cast<std::uint32_t>(buf[body + static_cast<std::size_t>(i)]) << (8 * i);
    if ( crc32_of(buf.data(), body) != stored )
        throw CrcMismatchError(what + ": CRC-32 mismatch");
}

inline Bytes read_file_bytes(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if ( !in )
        throw DataError("cannot open " + path.string());
    return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

// Write to a sibling temp file, then rename over the target.
inline void write_file_atomic(const std::filesystem::path& path, const std::uint8_t* data,
                              std::size_t n)
{
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if ( !out )
            throw DataError("cannot write " + tmp.string());
        out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n));
        if ( !out )
            throw DataError("write failed for " + tmp.string());
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if ( ec )
        throw DataError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

inline void write_file_atomic(const std::filesystem::path& path, const Bytes& bytes)
{
    write_file_atomic(path, bytes.data(), bytes.size());
}

inline void write_file_atomic(const std::filesystem::path& path, std::string_view text)
{
    write_file_atomic(path, reinterpret_cast<const std::uint8_t*>(text.data()), text.size());
}

} // namespace tfcmnn
