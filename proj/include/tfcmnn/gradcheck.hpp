#pragma once

// Whole-model comparison of backward() against central finite differences.

#include "tfcmnn/model.hpp"
#include "tfcmnn/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace tfcmnn {

// |a - n| / max(|a|, |n|, floor). The floor turns the test into an absolute
// one for gradients so small that finite-difference roundoff dominates.
inline double relative_error(double analytic, double numeric, double floor = 1e-4)
{
    const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
    return std::abs(analytic - numeric) / denom;
}

inline Tensor flatten_parameters(const Model& m)
{
    std::vector<double> flat;
    for ( const auto& p : parameters(m) )
        flat.insert(flat.end(), p.tensor->data().begin(), p.tensor->data().end());
    return Tensor::vector(std::move(flat));
}

inline void assign_parameters(Model& m, const Tensor& flat)
{
    std::size_t at = 0;
    for ( auto& p : parameters(m) )
        for ( auto& v : p.tensor->data() )
            v = flat[at++];
    if ( at != flat.size() )
        throw DimensionError("flat parameter vector length does not match model");
}

inline Tensor flatten_gradients(const Gradients& g)
{
    std::vector<double> flat;
    for ( const auto& t : g.tensors )
        flat.insert(flat.end(), t.data().begin(), t.data().end());
    return Tensor::vector(std::move(flat));
}

struct GradCheckOptions
{
    double step        = 1e-5;
    double tolerance   = 1e-5;
    double denom_floor = 1e-4;
    Mode mode          = Mode::train;
    std::uint64_t mask_seed = 7;  // same dropout masks for every evaluation
};

struct ParamCheck
{
    std::string name;
    std::size_t checked  = 0;
    std::size_t excluded = 0;  // a max decision flipped inside [x - h, x + h]
    std::size_t failed   = 0;
    double max_rel_error = 0.0;
};

struct GradCheckReport
{
    std::vector<ParamCheck> params;
    std::size_t checked  = 0;
    std::size_t excluded = 0;
    std::size_t failed   = 0;

    double fraction_within() const
    {
        return checked ? 1.0 - static_cast<double>(failed) / static_cast<double>(checked) : 1.0;
    }
    bool all_within() const { return failed == 0; }
};

// Test hook: lets a caller tamper with the analytic gradients before comparison.
using GradientHook = std::function<void(Gradients&)>;

inline GradCheckReport gradient_check(const Model& model, const Tensor& patch, int label,
                                      const GradCheckOptions& opt = {}, const GradientHook& hook = {})
{
    auto run = [&](const Model& m) {
        SeededRng rng(opt.mask_seed);
        return forward(m, patch, opt.mode, &rng);
    };

    const ForwardCache base = run(model);
    Gradients analytic      = backward(model, base, label);
    if ( hook )
        hook(analytic);
    const Tensor a_flat = flatten_gradients(analytic);
    const auto base_sig = decision_signature(base);

    // finite_diff_gradient probes +h then -h per coordinate; record whether
    // each probe stayed in the base point's linear region.
    Model probe = model;
    std::vector<bool> same_region;
    auto f = [&](const Tensor& theta) {
        assign_parameters(probe, theta);
        const ForwardCache c = run(probe);
        same_region.push_back(decision_signature(c) == base_sig);
        return loss_of(c, label);
    };
    const Tensor numeric = finite_diff_gradient(f, flatten_parameters(model), opt.step);

    GradCheckReport rep;
    std::size_t at = 0;
    for ( const auto& p : parameters(model) )
    {
        ParamCheck pc{p.name};
        for ( std::size_t i = 0; i < p.tensor->size(); ++i, ++at )
        {
            if ( !same_region[2 * at] || !same_region[2 * at + 1] )
            {
                ++pc.excluded;
                continue;
            }
            const double e = relative_error(a_flat[at], numeric[at], opt.denom_floor);
            ++pc.checked;
            pc.max_rel_error = std::max(pc.max_rel_error, e);
            if ( e > opt.tolerance )
                ++pc.failed;
        }
        rep.checked += pc.checked;
        rep.excluded += pc.excluded;
        rep.failed += pc.failed;
        rep.params.push_back(std::move(pc));
    }
    return rep;
}

} // namespace tfcmnn
