#pragma once

// LHCB front-end: framing, power spectrum, Bark-domain Hanning filter bank,
// log compression, normalization and context windowing.

#include "tfcmnn/errors.hpp"
#include "tfcmnn/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

namespace tfcmnn {

inline constexpr std::size_t kNumCoefficients = 18;

struct AudioClip
{
    std::vector<double> samples;
    unsigned sample_rate = 44100;

    void validate() const
    {
        if ( samples.empty() )
            throw DataError("audio clip is empty");
        if ( sample_rate < 8000 )
            throw DataError("sample rate " + std::to_string(sample_rate) + " Hz is below 8000 Hz");
    }
};

struct FrontEndConfig
{
    double window_ms    = 23.0;
    double hop_fraction = 0.5;
    std::size_t n_filters = kNumCoefficients;
    double log_floor    = 1e-10;
};

struct FramingGeometry
{
    std::size_t window = 0;  // W
    std::size_t hop    = 0;  // H
    std::size_t frames = 0;
};

inline FramingGeometry framing_geometry(std::size_t n_samples, unsigned sample_rate,
                                        double window_ms = 23.0, double hop_fraction = 0.5)
{
    FramingGeometry g;
    g.window = static_cast<std::size_t>(std::lround(window_ms * sample_rate / 1000.0));
    if ( g.window == 0 )
        throw ConfigurationError("analysis window rounds to zero samples");
    g.hop = static_cast<std::size_t>(std::floor(static_cast<double>(g.window) * hop_fraction));
    if ( g.hop == 0 )
        throw ConfigurationError("hop rounds to zero samples");
    if ( n_samples < g.window )
        throw TooShortError("clip has " + std::to_string(n_samples) +
                            " samples, shorter than one " + std::to_string(g.window) +
                            "-sample window");
    g.frames = (n_samples - g.window) / g.hop + 1;
    return g;
}

// Symmetric Hann window, w[n] = 0.5 (1 - cos(2 pi n / (W - 1))).
inline std::vector<double> hanning_window(std::size_t length)
{
    std::vector<double> w(length, 1.0);
    if ( length < 2 )
        return w;
    for ( std::size_t n = 0; n < length; ++n )
        w[n] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * static_cast<double>(n) /
                                     static_cast<double>(length - 1)));
    return w;
}

// Each frame has its mean removed and is then Hann-weighted.
inline std::vector<std::vector<double>> frame_signal(const AudioClip& clip, double window_ms = 23.0,
                                                     double hop_fraction = 0.5)
{
    clip.validate();
    const auto g      = framing_geometry(clip.samples.size(), clip.sample_rate, window_ms, hop_fraction);
    const auto window = hanning_window(g.window);

    std::vector<std::vector<double>> frames(g.frames, std::vector<double>(g.window));
    for ( std::size_t t = 0; t < g.frames; ++t )
    {
        const double* src = clip.samples.data() + t * g.hop;
        double mean       = 0.0;
        for ( std::size_t n = 0; n < g.window; ++n )
            mean += src[n];
        mean /= static_cast<double>(g.window);
        for ( std::size_t n = 0; n < g.window; ++n )
            frames[t][n] = (src[n] - mean) * window[n];
    }
    return frames;
}

inline std::size_t next_power_of_two(std::size_t n)
{
    std::size_t p = 1;
    while ( p < n )
        p <<= 1;
    return p;
}

// In-place iterative radix-2 FFT; size must be a power of two.
inline void fft_radix2(std::vector<std::complex<double>>& a)
{
    const std::size_t n = a.size();
    if ( n == 0 || (n & (n - 1)) != 0 )
        throw DimensionError("FFT size must be a power of two");

    for ( std::size_t i = 1, j = 0; i < n; ++i )
    {
        std::size_t bit = n >> 1;
        for ( ; j & bit; bit >>= 1 )
            j ^= bit;
        j ^= bit;
        if ( i < j )
            std::swap(a[i], a[j]);
    }

    for ( std::size_t len = 2; len <= n; len <<= 1 )
    {
        const std::size_t half = len / 2;
        for ( std::size_t k = 0; k < half; ++k )
        {
            // Twiddles computed directly rather than by recurrence.
            const double angle = -2.0 * std::numbers::pi * static_cast<double>(k) /
                                 static_cast<double>(len);
            const std::complex<double> w(std::cos(angle), std::sin(angle));
            for ( std::size_t i = 0; i < n; i += len )
            {
                const auto u = a[i + k];
                const auto v = a[i + k + half] * w;
                a[i + k]        = u + v;
                a[i + k + half] = u - v;
            }
        }
    }
}

// One-sided power |X_k|^2, k = 0..F/2, after zero-padding to F = next pow2.
inline std::vector<double> power_spectrum(const std::vector<double>& frame)
{
    if ( frame.empty() )
        throw DimensionError("power spectrum of an empty frame");
    const std::size_t fft_size = next_power_of_two(frame.size());
    std::vector<std::complex<double>> buf(fft_size);
    for ( std::size_t n = 0; n < frame.size(); ++n )
        buf[n] = frame[n];
    fft_radix2(buf);

    std::vector<double> power(fft_size / 2 + 1);
    for ( std::size_t k = 0; k < power.size(); ++k )
        power[k] = std::norm(buf[k]);
    return power;
}

inline double hz_to_bark(double hz)
{
    return 13.0 * std::atan(0.00076 * hz) + 3.5 * std::atan((hz / 7500.0) * (hz / 7500.0));
}

// hz_to_bark is strictly increasing on [0, inf), so bisection suffices.
inline double bark_to_hz(double bark)
{
    double lo = 0.0, hi = 1.0e5;
    if ( bark <= 0.0 )
        return 0.0;
    if ( bark >= hz_to_bark(hi) )
        throw DomainError("Bark value out of range: " + std::to_string(bark));
    for ( int it = 0; it < 200 && hi - lo > 1e-9; ++it )
    {
        const double mid = 0.5 * (lo + hi);
        (hz_to_bark(mid) < bark ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

struct FilterBank
{
    std::size_t n_filters = 0;
    std::size_t fft_size  = 0;
    unsigned sample_rate  = 0;
    std::vector<std::vector<double>> responses;  // n_filters x (fft_size/2 + 1)
    std::vector<double> center_barks;
    std::vector<double> center_hz;

    std::size_t n_bins() const { return fft_size / 2 + 1; }

    double bin_hz(std::size_t k) const
    {
        return static_cast<double>(k) * sample_rate / static_cast<double>(fft_size);
    }
};

// Raised-cosine filters in the Bark domain: centers at 1, 2, ..., n Bark,
// each with +/-1 Bark support, so adjacent responses sum to one between centers.
inline FilterBank build_filterbank(unsigned sample_rate, std::size_t fft_size,
                                   std::size_t n_filters = kNumCoefficients)
{
    if ( fft_size < 2 || (fft_size & (fft_size - 1)) != 0 )
        throw ConfigurationError("FFT size must be a power of two >= 2");
    if ( n_filters == 0 )
        throw ConfigurationError("filter bank needs at least one filter");

    FilterBank bank;
    bank.n_filters   = n_filters;
    bank.fft_size    = fft_size;
    bank.sample_rate = sample_rate;

    const double top_bark     = static_cast<double>(n_filters) + 1.0;
    const double nyquist_bark = hz_to_bark(sample_rate / 2.0);
    if ( nyquist_bark < top_bark )
        throw ConfigurationError("sample rate " + std::to_string(sample_rate) +
                                 " Hz cannot realize filter " + std::to_string(n_filters) +
                                 " (needs " + std::to_string(top_bark) + " Bark below Nyquist)");

    bank.responses.assign(n_filters, std::vector<double>(bank.n_bins(), 0.0));
    for ( std::size_t j = 0; j < n_filters; ++j )
    {
        const double center = static_cast<double>(j + 1);
        bank.center_barks.push_back(center);
        bank.center_hz.push_back(bark_to_hz(center));

        bool any_positive = false;
        for ( std::size_t k = 0; k < bank.n_bins(); ++k )
        {
            const double d = hz_to_bark(bank.bin_hz(k)) - center;
            if ( std::abs(d) < 1.0 )
            {
                const double w = 0.5 * (1.0 + std::cos(std::numbers::pi * d));
                bank.responses[j][k] = w;
                any_positive |= w > 0.0;
            }
        }
        if ( !any_positive )
            throw ConfigurationError("filter " + std::to_string(j + 1) +
                                     " covers no DFT bin at FFT size " + std::to_string(fft_size));
    }
    return bank;
}

// coefficient_j = ln(max(sum_k response_j[k] power[k], floor)).
inline std::vector<double> lhcb_frame(const std::vector<double>& power, const FilterBank& bank,
                                      double floor = 1e-10)
{
    if ( power.size() != bank.n_bins() )
        throw DimensionError("power spectrum has " + std::to_string(power.size()) +
                             " bins, filter bank expects " + std::to_string(bank.n_bins()));
    std::vector<double> out(bank.n_filters);
    for ( std::size_t j = 0; j < bank.n_filters; ++j )
    {
        double e = 0.0;
        for ( std::size_t k = 0; k < power.size(); ++k )
            e += bank.responses[j][k] * power[k];
        out[j] = std::log(std::max(e, floor));
    }
    return out;
}

// Raw clip -> n_frames x n_filters log filter-bank energies.
inline Tensor extract_lhcb(const AudioClip& clip, const FrontEndConfig& cfg = {})
{
    const auto frames = frame_signal(clip, cfg.window_ms, cfg.hop_fraction);
    const auto bank   = build_filterbank(clip.sample_rate, next_power_of_two(frames.front().size()),
                                         cfg.n_filters);
    Tensor out({frames.size(), cfg.n_filters});
    for ( std::size_t t = 0; t < frames.size(); ++t )
    {
        const auto coeffs = lhcb_frame(power_spectrum(frames[t]), bank, cfg.log_floor);
        std::copy(coeffs.begin(), coeffs.end(), out.data().begin() + static_cast<std::ptrdiff_t>(t * cfg.n_filters));
    }
    return out;
}

struct FeatureMatrix
{
    Tensor frames;            // n_frames x 18
    std::vector<int> labels;  // one per frame, [0, 29]
    std::string utterance_id;
    std::uint16_t speaker_id = 0;

    std::size_t n_frames() const { return frames.empty() ? 0 : frames.extent(0); }

    void validate() const
    {
        if ( frames.rank() != 2 || frames.extent(1) != kNumCoefficients )
            throw DimensionError("feature matrix must be n x 18, got " + shape_string(frames.shape()));
        if ( labels.size() != frames.extent(0) )
            throw DataError(utterance_id + ": " + std::to_string(labels.size()) + " labels for " +
                            std::to_string(frames.extent(0)) + " frames");
        for ( int l : labels )
            if ( l < 0 || l > 29 )
                throw DataError(utterance_id + ": label " + std::to_string(l) + " outside [0,29]");
    }
};

struct NormStats
{
    std::vector<double> mean;
    std::vector<double> std;
    double target_variance = 0.5;
};

// Population moments over every training frame. Never fit on dev/eval data.
inline NormStats fit_norm_stats(const std::vector<FeatureMatrix>& training)
{
    if ( training.empty() )
        throw DataError("cannot fit normalization statistics on an empty set");

    const std::size_t dim = training.front().frames.extent(1);
    std::vector<double> sum(dim, 0.0);
    std::size_t count = 0;
    for ( const auto& fm : training )
    {
        if ( fm.frames.extent(1) != dim )
            throw DimensionError("inconsistent coefficient count across utterances");
        for ( std::size_t t = 0; t < fm.frames.extent(0); ++t )
            for ( std::size_t j = 0; j < dim; ++j )
                sum[j] += fm.frames(t, j);
        count += fm.frames.extent(0);
    }

    NormStats stats;
    stats.mean.resize(dim);
    for ( std::size_t j = 0; j < dim; ++j )
        stats.mean[j] = sum[j] / static_cast<double>(count);

    // Second pass on centered values.
    std::vector<double> sq(dim, 0.0);
    for ( const auto& fm : training )
        for ( std::size_t t = 0; t < fm.frames.extent(0); ++t )
            for ( std::size_t j = 0; j < dim; ++j )
            {
                const double d = fm.frames(t, j) - stats.mean[j];
                sq[j] += d * d;
            }

    stats.std.resize(dim);
    for ( std::size_t j = 0; j < dim; ++j )
    {
        stats.std[j] = std::sqrt(sq[j] / static_cast<double>(count));
        if ( !(stats.std[j] > 0.0) )
            throw DegenerateFeatureError(j);
    }
    return stats;
}

// y = (x - mean) / std * sqrt(target_variance)
inline FeatureMatrix normalize(const FeatureMatrix& fm, const NormStats& stats)
{
    const std::size_t dim = fm.frames.extent(1);
    if ( stats.mean.size() != dim || stats.std.size() != dim )
        throw DimensionError("normalization statistics do not match coefficient count");
    for ( std::size_t j = 0; j < dim; ++j )
        if ( !(stats.std[j] > 0.0) )
            throw DegenerateFeatureError(j);

    const double gain = std::sqrt(stats.target_variance);
    FeatureMatrix out = fm;
    for ( std::size_t t = 0; t < fm.frames.extent(0); ++t )
        for ( std::size_t j = 0; j < dim; ++j )
            out.frames(t, j) = (fm.frames(t, j) - stats.mean[j]) / stats.std[j] * gain;
    return out;
}

struct LabeledPatch
{
    Tensor patch;  // 18 x width; rows are coefficients, columns are frames
    int label = 0;
};

// Index of the labeled frame inside a window of `width` columns. For even
// widths the center sits left of the midpoint.
inline std::size_t context_center(std::size_t width) { return (width - 1) / 2; }

// One patch per frame, edges replicate-padded.
inline std::vector<LabeledPatch> context_window(const FeatureMatrix& fm, std::size_t width)
{
    if ( width == 0 )
        throw ConfigurationError("context width must be at least 1");
    fm.validate();

    const std::size_t n      = fm.n_frames();
    const std::size_t dim    = fm.frames.extent(1);
    const auto offset        = static_cast<std::ptrdiff_t>(context_center(width));
    const auto last          = static_cast<std::ptrdiff_t>(n) - 1;

    std::vector<LabeledPatch> out;
    out.reserve(n);
    for ( std::size_t t = 0; t < n; ++t )
    {
        Tensor patch({dim, width});
        for ( std::size_t c = 0; c < width; ++c )
        {
            const auto src = std::clamp(static_cast<std::ptrdiff_t>(t) - offset +
                                            static_cast<std::ptrdiff_t>(c),
                                        std::ptrdiff_t{0}, last);
            for ( std::size_t j = 0; j < dim; ++j )
                patch(j, c) = fm.frames(static_cast<std::size_t>(src), j);
        }
        out.push_back({std::move(patch), fm.labels[t]});
    }
    return out;
}

} // namespace tfcmnn
