#pragma once

// 16-bit PCM mono WAV and per-utterance frame-label CSV.

#include "tfcmnn/binary_io.hpp"
#include "tfcmnn/errors.hpp"
#include "tfcmnn/features.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace tfcmnn {

inline AudioClip read_wav(const std::filesystem::path& path)
{
    const Bytes buf = read_file_bytes(path);
    ByteReader in(buf, path.string());
    const std::string name = path.filename().string();

    if ( in.raw(4) != "RIFF" )
        throw BadMagicError(name + ": not a RIFF file");
    in.u32();
    if ( in.raw(4) != "WAVE" )
        throw BadMagicError(name + ": not a WAVE file");

    AudioClip clip;
    bool have_fmt = false;
    while ( in.remaining() >= 8 )
    {
        const std::string id   = in.raw(4);
        const std::uint32_t sz = in.u32();
        in.need(sz);
        if ( id == "fmt " )
        {
            const auto start          = in.position();
            const std::uint16_t fmt   = in.u16();
            const std::uint16_t chans = in.u16();
            clip.sample_rate          = in.u32();
            in.u32();
            in.u16();
            const std::uint16_t bits = in.u16();
            if ( fmt != 1 || chans != 1 || bits != 16 )
                throw FormatError(name + ": only 16-bit PCM mono is supported");
            in.raw(sz - (in.position() - start));
            have_fmt = true;
        }
        else if ( id == "data" )
        {
            if ( !have_fmt )
                throw FormatError(name + ": data chunk before fmt chunk");
            clip.samples.resize(sz / 2);
            for ( auto& s : clip.samples )
                s = static_cast<std::int16_t>(in.u16()) / 32768.0;
            clip.validate();
            return clip;
        }
        else
            in.raw(sz);
        if ( sz % 2 == 1 && in.remaining() > 0 )
            in.u8();
    }
    throw FormatError(name + ": no data chunk");
}

inline void write_wav(const std::filesystem::path& path, const AudioClip& clip)
{
    const auto n = static_cast<std::uint32_t>(clip.samples.size());
    ByteWriter out;
    out.raw("RIFF");
    out.u32(36 + 2 * n);
    out.raw("WAVE");
    out.raw("fmt ");
    out.u32(16);
    out.u16(1);
    out.u16(1);
    out.u32(clip.sample_rate);
    out.u32(clip.sample_rate * 2);
    out.u16(2);
    out.u16(16);
    out.raw("data");
    out.u32(2 * n);
    for ( double s : clip.samples )
    {
        const double v = std::clamp(std::round(s * 32768.0), -32768.0, 32767.0);
        out.u16(static_cast<std::uint16_t>(static_cast<std::int16_t>(v)));
    }
    write_file_atomic(path, out.bytes());
}

// `frame_index,label_index` rows; an optional non-numeric header line is
// skipped. Every frame in [0, n_frames) must be labeled exactly once.
inline std::vector<int> read_frame_labels(const std::filesystem::path& path, std::size_t n_frames)
{
    std::ifstream in(path);
    if ( !in )
        throw DataError("missing label file " + path.string());

    std::vector<int> labels(n_frames, -1);
    std::string line;
    std::size_t line_no = 0;
    while ( std::getline(in, line) )
    {
        ++line_no;
        if ( !line.empty() && line.back() == '\r' )
            line.pop_back();
        if ( line.empty() )
            continue;
        std::istringstream row(line);
        long long frame = 0, label = 0;
        char comma      = 0;
        if ( !(row >> frame >> comma >> label) || comma != ',' )
        {
            if ( line_no == 1 )
                continue;
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": malformed row");
        }
        if ( frame < 0 || static_cast<std::size_t>(frame) >= n_frames )
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": frame " +
                            std::to_string(frame) + " outside [0," + std::to_string(n_frames) + ")");
        if ( label < 0 || label > 29 )
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": label " +
                            std::to_string(label) + " outside [0,29]");
        if ( labels[static_cast<std::size_t>(frame)] != -1 )
            throw DataError(path.string() + ": frame " + std::to_string(frame) + " labeled twice");
        labels[static_cast<std::size_t>(frame)] = static_cast<int>(label);
    }
    for ( std::size_t t = 0; t < n_frames; ++t )
        if ( labels[t] < 0 )
            throw DataError(path.string() + ": frame " + std::to_string(t) + " has no label");
    return labels;
}

} // namespace tfcmnn
