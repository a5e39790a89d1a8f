#pragma once

// Forward and backward passes for the layer types of the network: ReLU,
// dense maxout, axis-selective 1D convolution with maxout, pooling, dropout
// and the softmax / cross-entropy head.
//
// Feature maps keep the orientation of the input patch: rows are frequency,
// columns are time. A layer sliding along time therefore emits maps x L, and
// a layer sliding along frequency emits L x maps. The axis that is not slid
// over ("span") is always covered entirely by each filter.

#include "tfcmnn/errors.hpp"
#include "tfcmnn/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

namespace tfcmnn {

inline constexpr std::size_t kNumClasses = 30;

enum class Axis : std::uint8_t
{
    time      = 0,
    frequency = 1,
};

inline const char* axis_name(Axis a) { return a == Axis::time ? "time" : "frequency"; }

// Extent along which an axis-layer slides, and the extent it spans.
inline std::size_t sliding_extent(const Tensor& t, Axis a) { return a == Axis::time ? t.extent(1) : t.extent(0); }
inline std::size_t span_extent(const Tensor& t, Axis a) { return a == Axis::time ? t.extent(0) : t.extent(1); }

inline Tensor::Shape oriented_shape(Axis a, std::size_t channels, std::size_t length)
{
    return a == Axis::time ? Tensor::Shape{channels, length} : Tensor::Shape{length, channels};
}

inline std::size_t oriented_index(Axis a, std::size_t channels, std::size_t length, std::size_t channel,
                                  std::size_t pos)
{
    return a == Axis::time ? channel * length + pos : pos * channels + channel;
}

// ---------------------------------------------------------------------------
// ReLU

struct ReluCache
{
    Tensor z;
};

inline std::pair<Tensor, ReluCache> relu_forward(const Tensor& z)
{
    Tensor y = z;
    for ( auto& v : y.data() )
        v = std::max(v, 0.0);
    return {std::move(y), ReluCache{z}};
}

// Subgradient at z == 0 is taken as 0.
inline Tensor relu_backward(const Tensor& grad, const ReluCache& cache)
{
    if ( cache.z.empty() )
        throw CacheMismatchError("relu backward without a forward cache");
    if ( grad.shape() != cache.z.shape() )
        throw CacheMismatchError("relu gradient shape does not match cache");
    Tensor out = grad;
    for ( std::size_t i = 0; i < out.size(); ++i )
        if ( !(cache.z[i] > 0.0) )
            out[i] = 0.0;
    return out;
}

inline std::size_t checked_pieces(std::size_t k)
{
    if ( k == 0 )
        throw ConfigurationError("maxout needs at least one piece");
    return k;
}

// ---------------------------------------------------------------------------
// Dense maxout: z_ij = x^T W[., i, j] + b_ij, h_i = max_j z_ij.

struct DenseMaxoutLayer
{
    Tensor weights;  // d x m x k
    Tensor biases;   // m x k
    bool use_bias = true;

    DenseMaxoutLayer() = default;
    DenseMaxoutLayer(std::size_t inputs, std::size_t units, std::size_t pieces, bool bias = true)
        : weights({inputs, units, checked_pieces(pieces)})
        , biases({units, pieces})
        , use_bias(bias)
    {}

    std::size_t inputs() const { return weights.extent(0); }
    std::size_t units() const { return weights.extent(1); }
    std::size_t pieces() const { return weights.extent(2); }
};

struct DenseCache
{
    Tensor input;
    std::vector<std::uint32_t> argmax;  // winning piece per unit
    std::vector<double> margin;         // best minus runner-up (inf when k == 1)
    Tensor::Shape weight_shape;
};

struct DenseGrads
{
    Tensor weights;
    Tensor biases;
};

// `x` may have any shape; it is consumed in row-major order.
inline std::pair<Tensor, DenseCache> dense_maxout_forward(const Tensor& x, const DenseMaxoutLayer& layer)
{
    const std::size_t d = layer.inputs(), m = layer.units(), k = layer.pieces();
    if ( x.size() != d )
        throw DimensionError("dense maxout expects " + std::to_string(d) + " inputs, got " +
                             std::to_string(x.size()));

    std::vector<double> z(m * k, 0.0);
    if ( layer.use_bias )
        std::copy(layer.biases.data().begin(), layer.biases.data().end(), z.begin());
    const double* w = layer.weights.data().data();
    for ( std::size_t r = 0; r < d; ++r )
    {
        const double xr = x[r];
        const double* row = w + r * m * k;
        for ( std::size_t c = 0; c < m * k; ++c )
            z[c] += xr * row[c];
    }

    Tensor h({m});
    DenseCache cache{x, std::vector<std::uint32_t>(m), std::vector<double>(m), layer.weights.shape()};
    for ( std::size_t i = 0; i < m; ++i )
    {
        std::uint32_t best = 0;
        double runner      = -std::numeric_limits<double>::infinity();
        for ( std::uint32_t j = 1; j < k; ++j )
        {
            // strict '>' keeps the lowest index on ties
            if ( z[i * k + j] > z[i * k + best] )
            {
                runner = std::max(runner, z[i * k + best]);
                best   = j;
            }
            else
                runner = std::max(runner, z[i * k + j]);
        }
        h[i]            = z[i * k + best];
        cache.argmax[i] = best;
        cache.margin[i] = h[i] - runner;
    }
    return {std::move(h), std::move(cache)};
}

inline std::pair<Tensor, DenseGrads> dense_maxout_backward(const Tensor& grad, const DenseMaxoutLayer& layer,
                                                           const DenseCache& cache)
{
    if ( cache.argmax.empty() || cache.weight_shape != layer.weights.shape() )
        throw CacheMismatchError("dense maxout cache does not belong to this layer");
    const std::size_t d = layer.inputs(), m = layer.units(), k = layer.pieces();
    if ( grad.size() != m )
        throw DimensionError("dense maxout gradient has wrong length");

    DenseGrads g{Tensor(layer.weights.shape()), Tensor(layer.biases.shape())};
    Tensor dx(cache.input.shape());
    for ( std::size_t i = 0; i < m; ++i )
    {
        const std::size_t col = i * k + cache.argmax[i];
        const double gi       = grad[i];
        if ( layer.use_bias )
            g.biases[col] = gi;
        if ( gi == 0.0 )
            continue;
        for ( std::size_t r = 0; r < d; ++r )
        {
            g.weights[r * m * k + col] += gi * cache.input[r];
            dx[r] += gi * layer.weights[r * m * k + col];
        }
    }
    return {std::move(dx), std::move(g)};
}

// ---------------------------------------------------------------------------
// Axis-selective 1D convolution followed by maxout over each map's pieces.

struct ConvAxisLayer
{
    Axis axis          = Axis::time;
    std::size_t maps   = 0;  // maxout output maps
    std::size_t kernel = 0;  // K, along the sliding axis
    std::size_t pieces = 1;  // k
    std::size_t span   = 0;  // extent of the non-sliding axis
    Tensor weights;          // (maps*pieces) x K x span, linear map index = map*pieces + piece
    Tensor biases;           // (maps*pieces)
    bool use_bias = true;

    ConvAxisLayer() = default;
    ConvAxisLayer(Axis a, std::size_t n_maps, std::size_t k_width, std::size_t n_pieces, std::size_t span_extent,
                  bool bias = true)
        : axis(a)
        , maps(n_maps)
        , kernel(k_width)
        , pieces(checked_pieces(n_pieces))
        , span(span_extent)
        , weights({n_maps * n_pieces, k_width, span_extent})
        , biases({n_maps * n_pieces})
        , use_bias(bias)
    {}

    std::size_t linear_maps() const { return maps * pieces; }
    std::size_t output_length(std::size_t extent) const { return extent - kernel + 1; }
};

struct ConvCache
{
    Tensor input;
    std::vector<std::uint32_t> argmax;  // maps x L, winning piece
    std::vector<double> margin;
    std::size_t length = 0;
    Tensor::Shape weight_shape;
};

struct ConvGrads
{
    Tensor weights;
    Tensor biases;
};

inline std::pair<Tensor, ConvCache> conv_axis_forward(const Tensor& input, const ConvAxisLayer& layer)
{
    if ( input.rank() != 2 )
        throw ShapeError("axis convolution expects a rank-2 input");
    const Axis a            = layer.axis;
    const std::size_t ext   = sliding_extent(input, a);
    const std::size_t span  = span_extent(input, a);
    if ( span != layer.span )
        throw ShapeError(std::string(axis_name(a)) + " convolution spans " + std::to_string(layer.span) +
                         " but input provides " + std::to_string(span));
    if ( layer.kernel > ext || layer.kernel == 0 )
        throw ShapeError(std::string(axis_name(a)) + " kernel " + std::to_string(layer.kernel) +
                         " exceeds extent " + std::to_string(ext));

    const std::size_t L = layer.output_length(ext), K = layer.kernel, k = layer.pieces;
    const std::size_t n_lin = layer.linear_maps();

    // Pre-activations for every linear map at every position.
    std::vector<double> z(n_lin * L);
    const double* x = input.data().data();
    const double* w = layer.weights.data().data();
    for ( std::size_t lm = 0; lm < n_lin; ++lm )
    {
        const double b = layer.use_bias ? layer.biases[lm] : 0.0;
        for ( std::size_t p = 0; p < L; ++p )
        {
            double acc = b;
            for ( std::size_t q = 0; q < K; ++q )
            {
                const double* wq = w + (lm * K + q) * span;
                if ( a == Axis::time )
                    for ( std::size_t s = 0; s < span; ++s )
                        acc += wq[s] * x[s * ext + p + q];
                else
                {
                    const double* row = x + (p + q) * span;
                    for ( std::size_t s = 0; s < span; ++s )
                        acc += wq[s] * row[s];
                }
            }
            z[lm * L + p] = acc;
        }
    }

    Tensor out(oriented_shape(a, layer.maps, L));
    ConvCache cache{input, std::vector<std::uint32_t>(layer.maps * L), std::vector<double>(layer.maps * L), L,
                    layer.weights.shape()};
    for ( std::size_t u = 0; u < layer.maps; ++u )
        for ( std::size_t p = 0; p < L; ++p )
        {
            std::uint32_t best = 0;
            double runner      = -std::numeric_limits<double>::infinity();
            for ( std::uint32_t j = 1; j < k; ++j )
            {
                const double v = z[(u * k + j) * L + p];
                if ( v > z[(u * k + best) * L + p] )
                {
                    runner = std::max(runner, z[(u * k + best) * L + p]);
                    best   = j;
                }
                else
                    runner = std::max(runner, v);
            }
            const double h = z[(u * k + best) * L + p];
            out[oriented_index(a, layer.maps, L, u, p)] = h;
            cache.argmax[u * L + p] = best;
            cache.margin[u * L + p] = h - runner;
        }
    return {std::move(out), std::move(cache)};
}

// Weight gradients accumulate over every shared position.
inline std::pair<Tensor, ConvGrads> conv_axis_backward(const Tensor& grad, const ConvAxisLayer& layer,
                                                       const ConvCache& cache)
{
    if ( cache.argmax.empty() || cache.weight_shape != layer.weights.shape() )
        throw CacheMismatchError("convolution cache does not belong to this layer");
    const Axis a          = layer.axis;
    const std::size_t L   = cache.length, K = layer.kernel, k = layer.pieces, span = layer.span;
    const std::size_t ext = sliding_extent(cache.input, a);
    if ( grad.shape() != oriented_shape(a, layer.maps, L) )
        throw DimensionError("convolution gradient shape " + shape_string(grad.shape()) + " does not match output");

    ConvGrads g{Tensor(layer.weights.shape()), Tensor(layer.biases.shape())};
    Tensor dx(cache.input.shape());
    const double* x = cache.input.data().data();
    const double* w = layer.weights.data().data();
    double* gw      = g.weights.data().data();
    double* gx      = dx.data().data();

    for ( std::size_t u = 0; u < layer.maps; ++u )
        for ( std::size_t p = 0; p < L; ++p )
        {
            const double go = grad[oriented_index(a, layer.maps, L, u, p)];
            if ( go == 0.0 )
                continue;
            const std::size_t lm = u * k + cache.argmax[u * L + p];
            if ( layer.use_bias )
                g.biases[lm] += go;
            for ( std::size_t q = 0; q < K; ++q )
            {
                const std::size_t woff = (lm * K + q) * span;
                for ( std::size_t s = 0; s < span; ++s )
                {
                    const std::size_t xi = a == Axis::time ? s * ext + p + q : (p + q) * span + s;
                    gw[woff + s] += go * x[xi];
                    gx[xi] += go * w[woff + s];
                }
            }
        }
    return {std::move(dx), std::move(g)};
}

// ---------------------------------------------------------------------------
// Pooling along the sliding axis, non-overlapping, stride = size.

enum class PoolMode : std::uint8_t
{
    max  = 0,
    mean = 1,
};

// What to do with a trailing window shorter than `size`.
enum class PartialWindow : std::uint8_t
{
    drop = 0,  // output length floor(L / S)
    keep = 1,  // output length ceil(L / S), last window pooled as-is
};

struct MaxPoolLayer
{
    Axis axis             = Axis::time;
    std::size_t size      = 1;
    PoolMode mode         = PoolMode::max;
    PartialWindow partial = PartialWindow::drop;

    std::size_t output_length(std::size_t length) const
    {
        return partial == PartialWindow::drop ? length / size : (length + size - 1) / size;
    }
};

struct PoolCache
{
    Tensor::Shape input_shape;
    std::vector<std::uint32_t> argmax;  // channels x out_len, absolute position along the axis
    std::vector<double> margin;
    std::size_t out_length = 0;
};

inline std::pair<Tensor, PoolCache> maxpool_forward(const Tensor& maps, const MaxPoolLayer& layer)
{
    if ( maps.rank() != 2 )
        throw ShapeError("pooling expects a rank-2 input");
    if ( layer.size == 0 )
        throw ConfigurationError("pooling window must be at least 1");
    const Axis a             = layer.axis;
    const std::size_t L      = sliding_extent(maps, a);
    const std::size_t ch     = span_extent(maps, a);
    const std::size_t out_len = layer.output_length(L);
    if ( out_len == 0 )
        throw ShapeError("pooling window " + std::to_string(layer.size) + " exceeds map length " +
                         std::to_string(L));

    Tensor out(oriented_shape(a, ch, out_len));
    PoolCache cache{maps.shape(), std::vector<std::uint32_t>(ch * out_len), std::vector<double>(ch * out_len), out_len};
    for ( std::size_t c = 0; c < ch; ++c )
        for ( std::size_t o = 0; o < out_len; ++o )
        {
            const std::size_t begin = o * layer.size;
            const std::size_t end   = std::min(begin + layer.size, L);
            if ( layer.mode == PoolMode::mean )
            {
                double acc = 0.0;
                for ( std::size_t p = begin; p < end; ++p )
                    acc += maps[oriented_index(a, ch, L, c, p)];
                out[oriented_index(a, ch, out_len, c, o)] = acc / static_cast<double>(end - begin);
                cache.margin[c * out_len + o] = std::numeric_limits<double>::infinity();
                continue;
            }
            std::size_t best = begin;
            double runner    = -std::numeric_limits<double>::infinity();
            for ( std::size_t p = begin + 1; p < end; ++p )
            {
                const double v = maps[oriented_index(a, ch, L, c, p)];
                const double bv = maps[oriented_index(a, ch, L, c, best)];
                if ( v > bv )
                {
                    runner = std::max(runner, bv);
                    best   = p;
                }
                else
                    runner = std::max(runner, v);
            }
            const double bv = maps[oriented_index(a, ch, L, c, best)];
            out[oriented_index(a, ch, out_len, c, o)] = bv;
            cache.argmax[c * out_len + o] = static_cast<std::uint32_t>(best);
            cache.margin[c * out_len + o] = bv - runner;
        }
    return {std::move(out), std::move(cache)};
}

inline Tensor maxpool_backward(const Tensor& grad, const MaxPoolLayer& layer, const PoolCache& cache)
{
    if ( cache.input_shape.empty() || cache.input_shape.size() != 2 )
        throw CacheMismatchError("pooling backward without a matching forward cache");
    const Axis a          = layer.axis;
    Tensor dx(cache.input_shape);
    const std::size_t L   = sliding_extent(dx, a);
    const std::size_t ch  = span_extent(dx, a);
    const std::size_t out_len = cache.out_length;
    if ( out_len != layer.output_length(L) )
        throw CacheMismatchError("pooling cache does not belong to this layer");
    if ( grad.shape() != oriented_shape(a, ch, out_len) )
        throw DimensionError("pooling gradient shape does not match output");

    for ( std::size_t c = 0; c < ch; ++c )
        for ( std::size_t o = 0; o < out_len; ++o )
        {
            const double go = grad[oriented_index(a, ch, out_len, c, o)];
            if ( layer.mode == PoolMode::mean )
            {
                const std::size_t begin = o * layer.size;
                const std::size_t end   = std::min(begin + layer.size, L);
                for ( std::size_t p = begin; p < end; ++p )
                    dx[oriented_index(a, ch, L, c, p)] += go / static_cast<double>(end - begin);
            }
            else
                dx[oriented_index(a, ch, L, c, cache.argmax[c * out_len + o])] += go;
        }
    return dx;
}

// ---------------------------------------------------------------------------
// Dropout. Masks multiply a layer's output before the next layer's weights;
// at test time nothing is masked and the consuming weights are scaled by p.

struct DropoutSpec
{
    double keep = 1.0;  // p in (0, 1]

    void validate() const
    {
        if ( !(keep > 0.0 && keep <= 1.0) )
            throw DomainError("dropout keep probability must be in (0,1], got " + std::to_string(keep));
    }
};

inline Tensor dropout_apply(const Tensor& y, const Tensor& mask)
{
    if ( mask.size() != y.size() )
        throw DimensionError("dropout mask has " + std::to_string(mask.size()) + " entries for " +
                             std::to_string(y.size()) + " activations");
    Tensor out = y;
    for ( std::size_t i = 0; i < out.size(); ++i )
        out[i] *= mask[i];
    return out;
}

inline Tensor dropout_test_scale(const Tensor& weights, double keep)
{
    DropoutSpec{keep}.validate();
    Tensor out = weights;
    for ( auto& v : out.data() )
        v *= keep;
    return out;
}

// ---------------------------------------------------------------------------
// Softmax classification head.

struct SoftmaxHead
{
    Tensor weights;  // features x 30
    Tensor biases;   // 30

    SoftmaxHead() = default;
    explicit SoftmaxHead(std::size_t features)
        : weights({features, kNumClasses})
        , biases({kNumClasses})
    {}

    std::size_t features() const { return weights.extent(0); }
};

struct LinearCache
{
    Tensor input;
    Tensor::Shape weight_shape;
};

inline std::pair<Tensor, LinearCache> linear_forward(const Tensor& x, const SoftmaxHead& head)
{
    const std::size_t d = head.features(), c = head.weights.extent(1);
    if ( x.size() != d )
        throw DimensionError("softmax head expects " + std::to_string(d) + " features, got " +
                             std::to_string(x.size()));
    Tensor logits = head.biases;
    for ( std::size_t r = 0; r < d; ++r )
        for ( std::size_t j = 0; j < c; ++j )
            logits[j] += x[r] * head.weights(r, j);
    return {std::move(logits), LinearCache{x, head.weights.shape()}};
}

struct LinearGrads
{
    Tensor weights;
    Tensor biases;
};

inline std::pair<Tensor, LinearGrads> linear_backward(const Tensor& grad, const SoftmaxHead& head,
                                                      const LinearCache& cache)
{
    if ( cache.input.empty() || cache.weight_shape != head.weights.shape() )
        throw CacheMismatchError("softmax head cache does not belong to this layer");
    const std::size_t d = head.features(), c = head.weights.extent(1);
    LinearGrads g{Tensor(head.weights.shape()), grad};
    Tensor dx(cache.input.shape());
    for ( std::size_t r = 0; r < d; ++r )
        for ( std::size_t j = 0; j < c; ++j )
        {
            g.weights(r, j) = cache.input[r] * grad[j];
            dx[r] += head.weights(r, j) * grad[j];
        }
    return {std::move(dx), std::move(g)};
}

struct SoftmaxResult
{
    double loss = 0.0;
    Tensor probs;
};

inline void check_label(int label, std::size_t classes)
{
    if ( label < 0 || static_cast<std::size_t>(label) >= classes )
        throw DomainError("label " + std::to_string(label) + " outside [0," + std::to_string(classes - 1) + "]");
}

// Max-subtracted softmax; loss = -ln p[label].
inline SoftmaxResult softmax_xent_forward(const Tensor& logits, int label)
{
    check_label(label, logits.size());
    const double mx = *std::max_element(logits.data().begin(), logits.data().end());
    Tensor probs(logits.shape());
    double sum = 0.0;
    for ( std::size_t i = 0; i < logits.size(); ++i )
    {
        probs[i] = std::exp(logits[i] - mx);
        sum += probs[i];
    }
    for ( auto& p : probs.data() )
        p /= sum;
    const double loss = -((logits[static_cast<std::size_t>(label)] - mx) - std::log(sum));
    return {loss, std::move(probs)};
}

inline Tensor softmax_xent_backward(const Tensor& probs, int label)
{
    check_label(label, probs.size());
    Tensor g = probs;
    g[static_cast<std::size_t>(label)] -= 1.0;
    return g;
}

} // namespace tfcmnn
