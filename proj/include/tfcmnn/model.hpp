#pragma once

// Single-branch 1D-CMNN and two-branch TFCMNN networks.
//
// A branch is a stack of (axis convolution + maxout, pooling) blocks sliding
// along one axis of the 18 x width patch. The TFCMNN runs a time branch and a
// frequency branch built from the same block spec with independent weights,
// flattens and concatenates their outputs (time first), and feeds the result
// to a shared stack of fully connected maxout layers and a softmax head.

#include "tfcmnn/constraints.hpp"
#include "tfcmnn/errors.hpp"
#include "tfcmnn/features.hpp"
#include "tfcmnn/layers.hpp"
#include "tfcmnn/numerics.hpp"
#include "tfcmnn/structure.hpp"

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

namespace tfcmnn {

enum class ModelKind : std::uint8_t
{
    tfcmnn    = 0,
    cmnn_time = 1,
    cmnn_freq = 2,
};

inline const char* model_kind_name(ModelKind k)
{
    switch ( k )
    {
    case ModelKind::tfcmnn: return "tfcmnn";
    case ModelKind::cmnn_time: return "cmnn-time";
    case ModelKind::cmnn_freq: return "cmnn-freq";
    }
    return "?";
}

inline ModelKind parse_model_kind(const std::string& s)
{
    if ( s == "tfcmnn" ) return ModelKind::tfcmnn;
    if ( s == "cmnn-time" ) return ModelKind::cmnn_time;
    if ( s == "cmnn-freq" ) return ModelKind::cmnn_freq;
    throw ConfigurationError("unknown model kind '" + s + "'");
}

enum class Mode
{
    train,
    test,
};

// Identifies the weight initialization recorded in checkpoints.
inline constexpr std::uint32_t kInitUniformFanIn = 1;

struct ModelOptions
{
    PoolMode pool_mode    = PoolMode::max;
    PartialWindow partial = PartialWindow::drop;
    bool conv_bias        = true;
    bool fc_bias          = true;

    bool operator==(const ModelOptions&) const = default;
};

struct ConvStage
{
    Axis axis = Axis::time;
    std::vector<ConvAxisLayer> convs;
    std::vector<MaxPoolLayer> pools;
    Tensor::Shape output_shape;  // oriented, before flattening
    std::size_t flat_size = 0;
};

struct Model
{
    ModelKind kind = ModelKind::tfcmnn;
    StructureSpec spec;
    ModelOptions options;
    std::uint64_t seed       = 0;
    std::uint32_t init_scheme = kInitUniformFanIn;

    std::vector<ConvStage> branches;  // empty when the spec has no conv blocks
    std::vector<DenseMaxoutLayer> fc;
    SoftmaxHead head;

    std::size_t width() const { return spec.width; }
    std::size_t head_input() const { return fc.front().inputs(); }
};

struct ParamRef
{
    std::string name;
    Tensor* tensor = nullptr;
};

struct ConstParamRef
{
    std::string name;
    const Tensor* tensor = nullptr;
};

namespace detail {

template <typename M, typename Ref>
std::vector<Ref> collect_parameters(M& model)
{
    std::vector<Ref> out;
    for ( auto& br : model.branches )
        for ( std::size_t i = 0; i < br.convs.size(); ++i )
        {
            const std::string base = std::string(axis_name(br.axis)) + ".conv" + std::to_string(i);
            out.push_back({base + ".weights", &br.convs[i].weights});
            if ( br.convs[i].use_bias )
                out.push_back({base + ".biases", &br.convs[i].biases});
        }
    for ( std::size_t i = 0; i < model.fc.size(); ++i )
    {
        const std::string base = "fc" + std::to_string(i);
        out.push_back({base + ".weights", &model.fc[i].weights});
        if ( model.fc[i].use_bias )
            out.push_back({base + ".biases", &model.fc[i].biases});
    }
    out.push_back({"softmax.weights", &model.head.weights});
    out.push_back({"softmax.biases", &model.head.biases});
    return out;
}

inline void init_uniform(Tensor& t, std::size_t fan_in, SeededRng& rng)
{
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in));
    for ( auto& v : t.data() )
        v = rng.uniform(-a, a);
}

inline ConvStage build_stage(const StructureSpec& spec, const ModelOptions& opt, Axis axis, const char* branch)
{
    ConvStage st;
    st.axis = axis;
    // (span, extent) of the patch as seen by this branch.
    std::size_t span   = axis == Axis::time ? kNumCoefficients : spec.width;
    std::size_t extent = axis == Axis::time ? spec.width : kNumCoefficients;
    for ( std::size_t b = 0; b < spec.conv_blocks.size(); ++b )
    {
        const auto& blk = spec.conv_blocks[b];
        if ( blk.kernel > extent )
            throw ShapeError(std::string(branch) + " branch: block " + std::to_string(b + 1) + " kernel " +
                             std::to_string(blk.kernel) + " exceeds extent " + std::to_string(extent));
        st.convs.emplace_back(axis, blk.maps, blk.kernel, spec.pieces, span, opt.conv_bias);
        const std::size_t L = extent - blk.kernel + 1;
        MaxPoolLayer pool{axis, blk.pool, opt.pool_mode, opt.partial};
        const std::size_t pooled = pool.output_length(L);
        if ( pooled == 0 )
            throw ShapeError(std::string(branch) + " branch: block " + std::to_string(b + 1) + " pool " +
                             std::to_string(blk.pool) + " exceeds map length " + std::to_string(L));
        st.pools.push_back(pool);
        span   = blk.maps;
        extent = pooled;
    }
    st.output_shape = oriented_shape(axis, span, extent);
    st.flat_size    = span * extent;
    return st;
}

} // namespace detail

inline std::vector<ParamRef> parameters(Model& m) { return detail::collect_parameters<Model, ParamRef>(m); }
inline std::vector<ConstParamRef> parameters(const Model& m)
{
    return detail::collect_parameters<const Model, ConstParamRef>(m);
}

inline void validate_spec(const StructureSpec& spec)
{
    if ( spec.fc_layers.empty() )
        throw ConfigurationError("structure needs at least one F layer");
    if ( spec.pieces == 0 )
        throw ConfigurationError("maxout pieces must be at least 1");
    if ( spec.width == 0 )
        throw ConfigurationError("context width must be at least 1");
    if ( spec.dropout )
        DropoutSpec{*spec.dropout}.validate();
    for ( const auto& b : spec.conv_blocks )
        if ( b.maps == 0 || b.kernel == 0 || b.pool == 0 )
            throw ConfigurationError("conv block counts must be positive");
    for ( auto f : spec.fc_layers )
        if ( f == 0 )
            throw ConfigurationError("fc layer sizes must be positive");
}

// Weights uniform in [-a, a], a = sqrt(6 / fan_in) per linear map; biases zero.
// Initialization order follows parameters().
inline Model build_model(ModelKind kind, const StructureSpec& spec, std::uint64_t seed,
                         const ModelOptions& options = {})
{
    validate_spec(spec);
    Model m;
    m.kind    = kind;
    m.spec    = spec;
    m.options = options;
    m.seed    = seed;

    if ( !spec.conv_blocks.empty() )
    {
        if ( kind != ModelKind::cmnn_freq )
            m.branches.push_back(detail::build_stage(spec, options, Axis::time, "time"));
        if ( kind != ModelKind::cmnn_time )
            m.branches.push_back(detail::build_stage(spec, options, Axis::frequency, "frequency"));
    }

    std::size_t in = 0;
    for ( const auto& br : m.branches )
        in += br.flat_size;
    if ( m.branches.empty() )
        in = kNumCoefficients * spec.width;
    for ( auto units : spec.fc_layers )
    {
        m.fc.emplace_back(in, units, spec.pieces, options.fc_bias);
        in = units;
    }
    m.head = SoftmaxHead(in);

    SeededRng rng(seed);
    for ( auto& br : m.branches )
        for ( auto& c : br.convs )
            detail::init_uniform(c.weights, c.kernel * c.span, rng);
    for ( auto& f : m.fc )
        detail::init_uniform(f.weights, f.inputs(), rng);
    detail::init_uniform(m.head.weights, m.head.features(), rng);
    return m;
}

inline Model build_tfcmnn(const StructureSpec& spec, std::uint64_t seed, const ModelOptions& options = {})
{
    return build_model(ModelKind::tfcmnn, spec, seed, options);
}

inline Model build_cmnn(const StructureSpec& spec, Axis axis, std::uint64_t seed, const ModelOptions& options = {})
{
    return build_model(axis == Axis::time ? ModelKind::cmnn_time : ModelKind::cmnn_freq, spec, seed, options);
}

// ---------------------------------------------------------------------------
// Forward / backward

struct BranchCache
{
    std::vector<ConvCache> conv;
    std::vector<PoolCache> pool;
    Tensor output;  // oriented, pre-flatten
};

struct ForwardCache
{
    Mode mode = Mode::test;
    Tensor::Shape patch_shape;
    std::vector<BranchCache> branches;
    std::vector<std::size_t> offsets;  // start of each branch inside `concat`
    Tensor concat;
    std::vector<DenseCache> fc;
    std::vector<Tensor> masks;  // per fc layer in train mode with dropout
    LinearCache head;
    Tensor logits;
    Tensor probs;
};

struct Gradients
{
    std::vector<Tensor> tensors;  // aligned with parameters()
};

inline Gradients zero_gradients(const Model& m)
{
    Gradients g;
    for ( const auto& p : parameters(m) )
        g.tensors.emplace_back(p.tensor->shape());
    return g;
}

inline Tensor concat_flat(const std::vector<Tensor>& parts, std::vector<std::size_t>* offsets = nullptr)
{
    std::size_t total = 0;
    for ( const auto& p : parts )
        total += p.size();
    Tensor out({total});
    std::size_t at = 0;
    for ( const auto& p : parts )
    {
        if ( offsets )
            offsets->push_back(at);
        std::copy(p.data().begin(), p.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(at));
        at += p.size();
    }
    return out;
}

// Inverse of concat_flat: slices `flat` back into tensors of the given shapes.
inline std::vector<Tensor> split_flat(const Tensor& flat, const std::vector<Tensor::Shape>& shapes)
{
    std::vector<Tensor> out;
    std::size_t at = 0;
    for ( const auto& s : shapes )
    {
        Tensor t(s);
        if ( at + t.size() > flat.size() )
            throw DimensionError("split exceeds concatenated length");
        std::copy(flat.data().begin() + static_cast<std::ptrdiff_t>(at),
                  flat.data().begin() + static_cast<std::ptrdiff_t>(at + t.size()), t.data().begin());
        at += t.size();
        out.push_back(std::move(t));
    }
    if ( at != flat.size() )
        throw DimensionError("split does not cover the concatenated vector");
    return out;
}

inline Tensor branch_forward(const ConvStage& st, const Tensor& patch, BranchCache* cache)
{
    Tensor x = patch;
    for ( std::size_t i = 0; i < st.convs.size(); ++i )
    {
        auto [c, cc] = conv_axis_forward(x, st.convs[i]);
        auto [p, pc] = maxpool_forward(c, st.pools[i]);
        if ( cache )
        {
            cache->conv.push_back(std::move(cc));
            cache->pool.push_back(std::move(pc));
        }
        x = std::move(p);
    }
    return x;
}

// Train mode needs `rng` when the spec has dropout. Test mode scales each
// dropped layer's output by p, which equals scaling the consuming weights by p.
inline ForwardCache forward(const Model& m, const Tensor& patch, Mode mode, SeededRng* rng = nullptr)
{
    if ( patch.rank() != 2 || patch.extent(0) != kNumCoefficients || patch.extent(1) != m.width() )
        throw ShapeError("patch shape " + shape_string(patch.shape()) + " does not match model input [18x" +
                         std::to_string(m.width()) + "]");
    const bool dropout = m.spec.dropout.has_value();
    if ( mode == Mode::train && dropout && !rng )
        throw ConfigurationError("train-mode forward with dropout needs an rng");

    ForwardCache fc;
    fc.mode        = mode;
    fc.patch_shape = patch.shape();

    if ( m.branches.empty() )
    {
        fc.offsets = {0};
        fc.concat  = Tensor({patch.size()}, patch.values());
    }
    else
    {
        std::vector<Tensor> outs;
        for ( const auto& br : m.branches )
        {
            BranchCache bc;
            outs.push_back(branch_forward(br, patch, &bc));
            bc.output = outs.back();
            fc.branches.push_back(std::move(bc));
        }
        fc.concat = concat_flat(outs, &fc.offsets);
    }

    Tensor x = fc.concat;
    for ( const auto& layer : m.fc )
    {
        auto [h, cache] = dense_maxout_forward(x, layer);
        fc.fc.push_back(std::move(cache));
        if ( dropout )
        {
            const double p = *m.spec.dropout;
            if ( mode == Mode::train )
            {
                Tensor mask = bernoulli_mask(*rng, h.size(), p);
                h           = dropout_apply(h, mask);
                fc.masks.push_back(std::move(mask));
            }
            else
                for ( auto& v : h.data() )
                    v *= p;
        }
        x = std::move(h);
    }
    auto [logits, lc] = linear_forward(x, m.head);
    fc.head           = std::move(lc);
    fc.logits         = logits;

    const double mx = *std::max_element(logits.data().begin(), logits.data().end());
    Tensor probs(logits.shape());
    double sum = 0.0;
    for ( std::size_t i = 0; i < logits.size(); ++i )
        sum += (probs[i] = std::exp(logits[i] - mx));
    for ( auto& p : probs.data() )
        p /= sum;
    fc.probs = std::move(probs);
    return fc;
}

inline double loss_of(const ForwardCache& c, int label) { return softmax_xent_forward(c.logits, label).loss; }

inline std::size_t predicted_class(const ForwardCache& c)
{
    const auto& p = c.probs.data();
    return static_cast<std::size_t>(std::max_element(p.begin(), p.end()) - p.begin());
}

// Gradient of -ln p[label] with respect to every parameter.
inline Gradients backward(const Model& m, const ForwardCache& cache, int label)
{
    if ( cache.fc.size() != m.fc.size() || cache.branches.size() != m.branches.size() ||
         cache.patch_shape != Tensor::Shape{kNumCoefficients, m.width()} )
        throw CacheMismatchError("forward cache does not belong to this model");

    Gradients out = zero_gradients(m);
    std::size_t slot = out.tensors.size();
    auto take = [&](Tensor&& t) { out.tensors[--slot] = std::move(t); };

    Tensor g = softmax_xent_backward(cache.probs, label);
    auto [gh, hg] = linear_backward(g, m.head, cache.head);
    take(std::move(hg.biases));
    take(std::move(hg.weights));
    g = std::move(gh);

    const bool dropout = m.spec.dropout.has_value();
    for ( std::size_t i = m.fc.size(); i-- > 0; )
    {
        if ( dropout )
        {
            if ( cache.mode == Mode::train )
                g = dropout_apply(g, cache.masks.at(i));
            else
                for ( auto& v : g.data() )
                    v *= *m.spec.dropout;
        }
        auto [gx, lg] = dense_maxout_backward(g, m.fc[i], cache.fc[i]);
        if ( m.fc[i].use_bias )
            take(std::move(lg.biases));
        take(std::move(lg.weights));
        g = std::move(gx);
    }

    if ( m.branches.empty() )
        return out;

    std::vector<Tensor::Shape> shapes;
    for ( const auto& br : m.branches )
        shapes.push_back(br.output_shape);
    auto parts = split_flat(g, shapes);

    for ( std::size_t b = m.branches.size(); b-- > 0; )
    {
        const auto& st = m.branches[b];
        const auto& bc = cache.branches[b];
        Tensor gb      = std::move(parts[b]);
        for ( std::size_t i = st.convs.size(); i-- > 0; )
        {
            Tensor gc     = maxpool_backward(gb, st.pools[i], bc.pool[i]);
            auto [gx, cg] = conv_axis_backward(gc, st.convs[i], bc.conv[i]);
            if ( st.convs[i].use_bias )
                take(std::move(cg.biases));
            take(std::move(cg.weights));
            gb = std::move(gx);
        }
    }
    return out;
}

// Every discrete choice made in a forward pass (maxout pieces, pooling
// positions) in a fixed order. Two points whose signatures agree lie in the
// same linear region of the network.
inline std::vector<std::uint32_t> decision_signature(const ForwardCache& c)
{
    std::vector<std::uint32_t> sig;
    for ( const auto& bc : c.branches )
    {
        for ( const auto& cc : bc.conv )
            sig.insert(sig.end(), cc.argmax.begin(), cc.argmax.end());
        for ( const auto& pc : bc.pool )
            sig.insert(sig.end(), pc.argmax.begin(), pc.argmax.end());
    }
    for ( const auto& dc : c.fc )
        sig.insert(sig.end(), dc.argmax.begin(), dc.argmax.end());
    return sig;
}

// Smallest winner-minus-runner-up gap over all max decisions.
inline double min_decision_margin(const ForwardCache& c)
{
    double m = std::numeric_limits<double>::infinity();
    auto scan = [&](const std::vector<double>& v) {
        for ( double x : v )
            m = std::min(m, x);
    };
    for ( const auto& bc : c.branches )
    {
        for ( const auto& cc : bc.conv )
            scan(cc.margin);
        for ( const auto& pc : bc.pool )
            scan(pc.margin);
    }
    for ( const auto& dc : c.fc )
        scan(dc.margin);
    return m;
}

// ---------------------------------------------------------------------------

struct ParamCountItem
{
    std::string name;
    std::size_t count = 0;
};

struct ParamCount
{
    std::vector<ParamCountItem> items;
    std::size_t total = 0;
};

inline ParamCount param_count(const Model& m)
{
    ParamCount pc;
    for ( const auto& p : parameters(m) )
    {
        pc.items.push_back({p.name, p.tensor->size()});
        pc.total += p.tensor->size();
    }
    return pc;
}

// Incoming-weight vector of every unit: each conv linear map's K x span
// kernel, each maxout piece's column W[., i, j], each softmax class column.
inline std::vector<StridedRow> constrained_rows(Model& m)
{
    std::vector<StridedRow> rows;
    for ( auto& br : m.branches )
        for ( auto& c : br.convs )
        {
            const std::size_t len = c.kernel * c.span;
            for ( std::size_t lm = 0; lm < c.linear_maps(); ++lm )
                rows.push_back({c.weights.data().data() + lm * len, len, 1});
        }
    for ( auto& f : m.fc )
    {
        const std::size_t cols = f.units() * f.pieces();
        for ( std::size_t c = 0; c < cols; ++c )
            rows.push_back({f.weights.data().data() + c, f.inputs(), cols});
    }
    const std::size_t classes = m.head.weights.extent(1);
    for ( std::size_t c = 0; c < classes; ++c )
        rows.push_back({m.head.weights.data().data() + c, m.head.features(), classes});
    return rows;
}

inline void apply_max_norm(Model& m, const MaxNormSpec& spec)
{
    if ( !spec.enabled )
        return;
    spec.validate();
    for ( const auto& row : constrained_rows(m) )
        max_norm_project(row, spec.radius);
}

} // namespace tfcmnn
