#pragma once

// Checkpoint layout (little-endian):
//   "TFCM" | u32 version | str structure | u8 kind | u8 n_branches | u8 axis[n]
//   | u32 pieces | u8 has_dropout | f64 keep | u32 width | u64 seed | u32 init scheme
//   | u8 pool mode | u8 partial window | u8 conv bias | u8 fc bias
//   | u64 n_scalars | f64 * n_scalars (parameters() order) | u32 CRC-32 of all preceding bytes
// str = u32 length + bytes.

#include "tfcmnn/binary_io.hpp"
#include "tfcmnn/model.hpp"

#include <filesystem>
#include <string>

namespace tfcmnn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline Bytes encode_checkpoint(const Model& m)
{
    ByteWriter w;
    w.raw("TFCM");
    w.u32(kCheckpointVersion);
    w.str(m.spec.canonical());
    w.u8(static_cast<std::uint8_t>(m.kind));
    w.u8(static_cast<std::uint8_t>(m.branches.size()));
    for ( const auto& b : m.branches )
        w.u8(static_cast<std::uint8_t>(b.axis));
    w.u32(static_cast<std::uint32_t>(m.spec.pieces));
    w.u8(m.spec.dropout ? 1 : 0);
    w.f64(m.spec.dropout.value_or(1.0));
    w.u32(static_cast<std::uint32_t>(m.spec.width));
    w.u64(m.seed);
    w.u32(m.init_scheme);
    w.u8(static_cast<std::uint8_t>(m.options.pool_mode));
    w.u8(static_cast<std::uint8_t>(m.options.partial));
    w.u8(m.options.conv_bias ? 1 : 0);
    w.u8(m.options.fc_bias ? 1 : 0);

    const auto params = parameters(m);
    std::uint64_t n = 0;
    for ( const auto& p : params )
        n += p.tensor->size();
    w.u64(n);
    for ( const auto& p : params )
        for ( double v : p.tensor->data() )
            w.f64(v);
    w.seal();
    return w.bytes();
}

inline Model decode_checkpoint(const Bytes& buf, const std::string& what = "checkpoint")
{
    ByteReader r(buf, what);
    if ( buf.size() < 4 || r.raw(4) != "TFCM" )
        throw BadMagicError(what + ": bad magic, not a checkpoint");
    const auto version = r.u32();
    if ( version != kCheckpointVersion )
        throw BadVersionError(what + ": unsupported checkpoint version " + std::to_string(version));

    StructureSpec spec;
    try
    {
        spec = parse_structure(r.str());
    }
    catch ( const ParseError& e )
    {
        throw FormatError(what + ": bad structure string (" + e.what() + ")");
    }
    const auto kind    = r.u8();
    if ( kind > 2 )
        throw FormatError(what + ": unknown model kind " + std::to_string(kind));
    const auto n_branches = r.u8();
    std::vector<std::uint8_t> axes;
    for ( unsigned i = 0; i < n_branches; ++i )
        axes.push_back(r.u8());
    spec.pieces = r.u32();
    const bool has_dropout = r.u8() != 0;
    const double keep      = r.f64();
    if ( has_dropout )
        spec.dropout = keep;
    spec.width        = r.u32();
    const auto seed   = r.u64();
    const auto scheme = r.u32();
    if ( scheme != kInitUniformFanIn )
        throw FormatError(what + ": unknown init scheme " + std::to_string(scheme));
    ModelOptions opt;
    const auto pool_mode = r.u8(), partial = r.u8();
    if ( pool_mode > 1 || partial > 1 )
        throw FormatError(what + ": unknown pooling options");
    opt.pool_mode = static_cast<PoolMode>(pool_mode);
    opt.partial   = static_cast<PartialWindow>(partial);
    opt.conv_bias = r.u8() != 0;
    opt.fc_bias   = r.u8() != 0;

    Model m = build_model(static_cast<ModelKind>(kind), spec, seed, opt);
    if ( m.branches.size() != n_branches )
        throw FormatError(what + ": branch count disagrees with model kind");
    for ( std::size_t i = 0; i < n_branches; ++i )
        if ( static_cast<std::uint8_t>(m.branches[i].axis) != axes[i] )
            throw FormatError(what + ": branch axis tags disagree with model kind");

    const auto n = r.u64();
    std::uint64_t expected = 0;
    for ( const auto& p : parameters(m) )
        expected += p.tensor->size();
    if ( n != expected )
        throw FormatError(what + ": holds " + std::to_string(n) + " scalars, structure needs " +
                          std::to_string(expected));
    r.need(n * 8 + 4);
    if ( r.remaining() != n * 8 + 4 )
        throw FormatError(what + ": trailing bytes after payload");
    verify_crc(buf, what);
    for ( auto& p : parameters(m) )
        for ( auto& v : p.tensor->data() )
            v = r.f64();
    return m;
}

inline void save_checkpoint(const std::filesystem::path& path, const Model& m)
{
    write_file_atomic(path, encode_checkpoint(m));
}

inline Model load_checkpoint(const std::filesystem::path& path)
{
    return decode_checkpoint(read_file_bytes(path), path.string());
}

} // namespace tfcmnn
