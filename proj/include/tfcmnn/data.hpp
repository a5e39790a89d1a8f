#pragma once

#include "tfcmnn/binary_io.hpp"
#include "tfcmnn/errors.hpp"
#include "tfcmnn/features.hpp"
#include "tfcmnn/layers.hpp"
#include "tfcmnn/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

namespace tfcmnn {

struct Example
{
    Tensor patch;  // 18 x max(width, 1)
    int label = 0;
    std::uint16_t speaker = 0;

    bool operator==(const Example&) const = default;
};

// A set of labeled patches of uniform shape. width == 0 marks raw,
// un-windowed frames (stored as 18 x 1 patches).
struct FrameDataset
{
    std::size_t width = 15;
    std::vector<Example> examples;

    std::size_t size() const { return examples.size(); }
    bool empty() const { return examples.empty(); }
    std::size_t columns() const { return std::max<std::size_t>(width, 1); }

    void validate() const
    {
        for ( const auto& e : examples )
        {
            if ( e.patch.shape() != Tensor::Shape{kNumCoefficients, columns()} )
                throw DataError("patch shape " + shape_string(e.patch.shape()) + " does not match dataset width " +
                                std::to_string(width));
            if ( e.label < 0 || e.label >= static_cast<int>(kNumClasses) )
                throw DataError("label " + std::to_string(e.label) + " outside [0,29]");
        }
    }

    std::set<std::uint16_t> speakers() const
    {
        std::set<std::uint16_t> s;
        for ( const auto& e : examples )
            s.insert(e.speaker);
        return s;
    }

    bool operator==(const FrameDataset&) const = default;
};

// Context-windows a set of utterances into one dataset.
inline FrameDataset window_utterances(const std::vector<FeatureMatrix>& utterances, std::size_t width)
{
    FrameDataset ds;
    ds.width = width;
    for ( const auto& fm : utterances )
        for ( auto& lp : context_window(fm, width) )
            ds.examples.push_back({std::move(lp.patch), lp.label, fm.speaker_id});
    return ds;
}

// ---------------------------------------------------------------------------
// TFCF feature file:
//   "TFCF" | u32 version | u16 feature dim | u16 width (0 = frames) | u64 count
//   | count * (u16 speaker | u8 label | f64 * dim * max(width,1))
//   | u32 CRC-32 of all preceding bytes

inline constexpr std::uint32_t kFeatureFileVersion = 1;

inline Bytes encode_feature_file(const FrameDataset& ds)
{
    ds.validate();
    ByteWriter w;
    w.raw("TFCF");
    w.u32(kFeatureFileVersion);
    w.u16(static_cast<std::uint16_t>(kNumCoefficients));
    w.u16(static_cast<std::uint16_t>(ds.width));
    w.u64(ds.examples.size());
    for ( const auto& e : ds.examples )
    {
        w.u16(e.speaker);
        w.u8(static_cast<std::uint8_t>(e.label));
        for ( double v : e.patch.data() )
            w.f64(v);
    }
    w.seal();
    return w.bytes();
}

inline FrameDataset decode_feature_file(const Bytes& buf, const std::string& what = "feature file")
{
    ByteReader r(buf, what);
    if ( buf.size() < 4 || r.raw(4) != "TFCF" )
        throw BadMagicError(what + ": bad magic, not a feature file");
    const auto version = r.u32();
    if ( version != kFeatureFileVersion )
        throw BadVersionError(what + ": unsupported feature file version " + std::to_string(version));
    const auto dim = r.u16();
    if ( dim != kNumCoefficients )
        throw FormatError(what + ": feature dimension " + std::to_string(dim) + ", expected 18");
    FrameDataset ds;
    ds.width          = r.u16();
    const auto count  = r.u64();
    const std::uint64_t record = 3 + 8ull * dim * ds.columns();
    if ( count > r.remaining() / record + 1 )
        throw TruncatedError(what + " is truncated: header announces " + std::to_string(count) + " records");
    r.need(count * record + 4);
    if ( r.remaining() != count * record + 4 )
        throw FormatError(what + ": trailing bytes after payload");
    verify_crc(buf, what);

    ds.examples.reserve(count);
    for ( std::uint64_t i = 0; i < count; ++i )
    {
        Example e;
        e.speaker = r.u16();
        e.label   = r.u8();
        std::vector<double> vals(dim * ds.columns());
        for ( auto& v : vals )
            v = r.f64();
        e.patch = Tensor({dim, ds.columns()}, std::move(vals));
        ds.examples.push_back(std::move(e));
    }
    ds.validate();
    return ds;
}

inline void write_feature_file(const std::filesystem::path& path, const FrameDataset& ds)
{
    write_file_atomic(path, encode_feature_file(ds));
}

inline FrameDataset read_feature_file(const std::filesystem::path& path)
{
    return decode_feature_file(read_file_bytes(path), path.string());
}

// Un-windowed utterance frames, one record per frame.
inline void write_feature_file(const std::filesystem::path& path, const std::vector<FeatureMatrix>& utterances)
{
    FrameDataset ds = window_utterances(utterances, 1);
    ds.width        = 0;
    write_feature_file(path, ds);
}

// `speaker,label,f1..f18` per frame; an optional non-numeric header row is skipped.
inline FrameDataset read_frame_csv(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if ( !in )
        throw DataError("cannot open " + path.string());
    FrameDataset ds;
    ds.width = 0;
    std::string line;
    std::size_t line_no = 0;
    while ( std::getline(in, line) )
    {
        ++line_no;
        if ( !line.empty() && line.back() == '\r' )
            line.pop_back();
        if ( line.empty() )
            continue;
        std::vector<std::string> cells;
        std::stringstream row(line);
        std::string cell;
        while ( std::getline(row, cell, ',') )
            cells.push_back(cell);

        auto bad = [&](const std::string& why) {
            return DataError(path.string() + ":" + std::to_string(line_no) + ": " + why);
        };
        if ( cells.size() != 2 + kNumCoefficients )
        {
            if ( line_no == 1 )
                continue;
            throw bad("expected " + std::to_string(2 + kNumCoefficients) + " columns, got " +
                      std::to_string(cells.size()));
        }
        try
        {
            std::size_t used = 0;
            const long speaker = std::stol(cells[0], &used);
            if ( used != cells[0].size() )
                throw std::invalid_argument("speaker");
            const long label = std::stol(cells[1], &used);
            if ( used != cells[1].size() )
                throw std::invalid_argument("label");
            if ( speaker < 0 || speaker > 65535 )
                throw bad("speaker id out of range");
            if ( label < 0 || label >= static_cast<long>(kNumClasses) )
                throw bad("label outside [0,29]");
            std::vector<double> f(kNumCoefficients);
            for ( std::size_t j = 0; j < kNumCoefficients; ++j )
                f[j] = std::stod(cells[2 + j]);
            ds.examples.push_back({Tensor({kNumCoefficients, 1}, std::move(f)), static_cast<int>(label),
                                   static_cast<std::uint16_t>(speaker)});
        }
        catch ( const DataError& )
        {
            throw;
        }
        catch ( const std::exception& )
        {
            if ( line_no == 1 )
                continue;
            throw bad("non-numeric field");
        }
    }
    return ds;
}

// Treats each run of consecutive same-speaker frames as one utterance.
inline std::vector<FeatureMatrix> frames_to_utterances(const FrameDataset& frames)
{
    if ( frames.width > 1 )
        throw DataError("dataset is already context-windowed");
    std::vector<FeatureMatrix> out;
    std::size_t i = 0;
    while ( i < frames.size() )
    {
        std::size_t j = i;
        while ( j < frames.size() && frames.examples[j].speaker == frames.examples[i].speaker )
            ++j;
        FeatureMatrix fm;
        std::vector<double> vals;
        for ( std::size_t t = i; t < j; ++t )
        {
            vals.insert(vals.end(), frames.examples[t].patch.data().begin(), frames.examples[t].patch.data().end());
            fm.labels.push_back(frames.examples[t].label);
        }
        fm.frames       = Tensor({j - i, kNumCoefficients}, std::move(vals));
        fm.speaker_id   = frames.examples[i].speaker;
        fm.utterance_id = "run" + std::to_string(out.size());
        out.push_back(std::move(fm));
        i = j;
    }
    return out;
}

// ---------------------------------------------------------------------------

struct DatasetSplit
{
    FrameDataset train;
    FrameDataset dev;
    FrameDataset eval;
};

// eval: every frame of `eval_speakers` randomly chosen speakers. dev: a random
// fraction of the remaining frames (or of the remaining speakers when
// `dev_by_speaker`). Relative order inside each split follows the input.
inline DatasetSplit split_by_speaker(const FrameDataset& ds, double dev_fraction, std::size_t eval_speakers,
                                     std::uint64_t seed, bool dev_by_speaker = false)
{
    if ( !(dev_fraction >= 0.0 && dev_fraction <= 1.0) )
        throw DomainError("dev fraction must be in [0,1]");
    const auto speaker_set = ds.speakers();
    if ( speaker_set.size() < eval_speakers + 2 )
        throw DataError("need at least " + std::to_string(eval_speakers + 2) + " speakers, dataset has " +
                        std::to_string(speaker_set.size()));

    SeededRng rng(seed);
    std::vector<std::uint16_t> speakers(speaker_set.begin(), speaker_set.end());
    rng.shuffle(speakers);
    const std::set<std::uint16_t> eval_set(speakers.begin(), speakers.begin() + static_cast<std::ptrdiff_t>(eval_speakers));

    DatasetSplit out;
    out.train.width = out.dev.width = out.eval.width = ds.width;

    std::vector<std::size_t> pool;
    for ( std::size_t i = 0; i < ds.size(); ++i )
    {
        if ( eval_set.count(ds.examples[i].speaker) )
            out.eval.examples.push_back(ds.examples[i]);
        else
            pool.push_back(i);
    }

    std::vector<bool> to_dev(ds.size(), false);
    if ( dev_by_speaker )
    {
        const std::vector<std::uint16_t> rest(speakers.begin() + static_cast<std::ptrdiff_t>(eval_speakers), speakers.end());
        const auto n_dev = static_cast<std::size_t>(std::llround(dev_fraction * static_cast<double>(rest.size())));
        const std::set<std::uint16_t> dev_set(rest.begin(), rest.begin() + static_cast<std::ptrdiff_t>(n_dev));
        for ( auto i : pool )
            to_dev[i] = dev_set.count(ds.examples[i].speaker) > 0;
    }
    else
    {
        std::vector<std::size_t> order = pool;
        rng.shuffle(order);
        const auto n_dev = static_cast<std::size_t>(std::llround(dev_fraction * static_cast<double>(pool.size())));
        for ( std::size_t i = 0; i < n_dev; ++i )
            to_dev[order[i]] = true;
    }
    for ( auto i : pool )
        (to_dev[i] ? out.dev : out.train).examples.push_back(ds.examples[i]);
    return out;
}

// ---------------------------------------------------------------------------

enum class PatternKind : std::uint8_t
{
    time      = 0,  // burst across all rows at a class-specific column range
    frequency = 1,  // band across all columns at a class-specific row range
    both      = 2,
};

struct SyntheticSpec
{
    std::size_t n_classes        = 4;
    std::size_t frames_per_class = 500;
    double sigma                 = 0.3;
    double amplitude             = 1.0;
    std::size_t width            = 15;
    std::size_t n_speakers       = 10;
    std::vector<PatternKind> kinds;  // per class; empty = alternate time, frequency
    std::uint64_t seed           = 42;

    PatternKind kind_of(std::size_t c) const
    {
        if ( !kinds.empty() )
            return kinds.at(c);
        return c % 2 == 0 ? PatternKind::time : PatternKind::frequency;
    }

    void validate() const
    {
        if ( n_classes < 2 || n_classes > kNumClasses )
            throw ConfigurationError("synthetic class count must be in [2,30]");
        if ( frames_per_class == 0 || width == 0 || n_speakers == 0 || n_speakers > 65536 )
            throw ConfigurationError("synthetic counts must be positive");
        if ( !(sigma >= 0.0) )
            throw ConfigurationError("synthetic noise sigma must be >= 0");
        if ( !kinds.empty() && kinds.size() != n_classes )
            throw ConfigurationError("pattern kinds must list one entry per class");
    }
};

// Half-open interval [begin, end) for slot `index` of `count` slots on an axis
// of `extent` cells: each slot owns extent/count cells and the pattern fills
// the centered half of them.
inline std::pair<std::size_t, std::size_t> pattern_range(std::size_t index, std::size_t count, std::size_t extent)
{
    const std::size_t slot  = std::max<std::size_t>(extent / count, 1);
    const std::size_t len   = std::max<std::size_t>(slot / 2, 1);
    const std::size_t begin = std::min(index * slot + (slot - len) / 2, extent - 1);
    return {begin, std::min(begin + len, extent)};
}

// Signature pattern of class `c` without noise.
inline Tensor synthetic_pattern(const SyntheticSpec& spec, std::size_t c)
{
    std::size_t time_rank = 0, freq_rank = 0, n_time = 0, n_freq = 0;
    for ( std::size_t i = 0; i < spec.n_classes; ++i )
    {
        const auto k = spec.kind_of(i);
        if ( k == PatternKind::time || k == PatternKind::both )
        {
            if ( i < c ) ++time_rank;
            ++n_time;
        }
        if ( k == PatternKind::frequency || k == PatternKind::both )
        {
            if ( i < c ) ++freq_rank;
            ++n_freq;
        }
    }
    Tensor p({kNumCoefficients, spec.width});
    const auto kind = spec.kind_of(c);
    if ( kind == PatternKind::time || kind == PatternKind::both )
    {
        const auto [b, e] = pattern_range(time_rank, n_time, spec.width);
        for ( std::size_t r = 0; r < kNumCoefficients; ++r )
            for ( std::size_t col = b; col < e; ++col )
                p(r, col) += spec.amplitude;
    }
    if ( kind == PatternKind::frequency || kind == PatternKind::both )
    {
        const auto [b, e] = pattern_range(freq_rank, n_freq, kNumCoefficients);
        for ( std::size_t r = b; r < e; ++r )
            for ( std::size_t col = 0; col < spec.width; ++col )
                p(r, col) += spec.amplitude;
    }
    return p;
}

// Example e has class e mod n_classes and speaker e mod n_speakers.
inline FrameDataset generate_synthetic(const SyntheticSpec& spec)
{
    spec.validate();
    std::vector<Tensor> patterns;
    for ( std::size_t c = 0; c < spec.n_classes; ++c )
        patterns.push_back(synthetic_pattern(spec, c));

    SeededRng rng(spec.seed);
    FrameDataset ds;
    ds.width       = spec.width;
    const auto n   = spec.n_classes * spec.frames_per_class;
    ds.examples.reserve(n);
    for ( std::size_t e = 0; e < n; ++e )
    {
        const std::size_t c = e % spec.n_classes;
        Tensor patch        = patterns[c];
        for ( auto& v : patch.data() )
            v += spec.sigma * rng.normal();
        ds.examples.push_back({std::move(patch), static_cast<int>(c), static_cast<std::uint16_t>(e % spec.n_speakers)});
    }
    return ds;
}

// ---------------------------------------------------------------------------

// Seeded permutation of all example indices for (seed, epoch), cut into
// consecutive batches; the last one may be short.
inline std::vector<std::vector<std::size_t>> batch_iterator(std::size_t n_examples, std::size_t batch_size,
                                                            std::uint64_t seed, std::uint64_t epoch_index)
{
    if ( batch_size == 0 )
        throw ConfigurationError("batch size must be at least 1");
    std::vector<std::size_t> order(n_examples);
    for ( std::size_t i = 0; i < n_examples; ++i )
        order[i] = i;
    SeededRng rng(derive_seed(seed, epoch_index));
    rng.shuffle(order);

    std::vector<std::vector<std::size_t>> batches;
    for ( std::size_t at = 0; at < n_examples; at += batch_size )
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(at),
                             order.begin() + static_cast<std::ptrdiff_t>(std::min(at + batch_size, n_examples)));
    return batches;
}

inline std::vector<std::vector<std::size_t>> batch_iterator(const FrameDataset& ds, std::size_t batch_size,
                                                            std::uint64_t seed, std::uint64_t epoch_index)
{
    return batch_iterator(ds.size(), batch_size, seed, epoch_index);
}

} // namespace tfcmnn
