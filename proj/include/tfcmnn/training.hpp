#pragma once

// Mini-batch SGD with max-norm projection, frame recognition scoring and the
// learning-rate halving schedule: whenever the monitored score drops below
// the previous epoch's, the rate is halved; the fifth halving stops training.

#include "tfcmnn/constraints.hpp"
#include "tfcmnn/data.hpp"
#include "tfcmnn/errors.hpp"
#include "tfcmnn/model.hpp"
#include "tfcmnn/parallel.hpp"

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace tfcmnn {

enum class MonitorSplit
{
    dev,
    eval,
};

struct TrainConfig
{
    double lr0             = 0.1;
    std::size_t batch_size = 100;
    MaxNormSpec max_norm{0.8, true};
    std::optional<double> dropout;  // keep p; also recorded in the model spec
    std::size_t pieces     = 2;
    std::size_t width      = 15;
    std::uint64_t seed     = 42;
    std::size_t max_epochs = 100;
    std::size_t max_halvings = 5;
    MonitorSplit monitor   = MonitorSplit::dev;
    std::size_t threads    = 0;  // 0 = serial

    void validate() const
    {
        if ( !(lr0 >= 0.0) )
            throw ConfigurationError("learning rate must be >= 0");
        if ( batch_size == 0 )
            throw ConfigurationError("batch size must be at least 1");
        if ( max_norm.enabled )
            max_norm.validate();
        if ( dropout )
            DropoutSpec{*dropout}.validate();
        if ( pieces == 0 || width == 0 || max_halvings == 0 )
            throw ConfigurationError("pieces, width and halving limit must be positive");
    }
};

struct LRSchedule
{
    double lr0                 = 0.1;
    double current_lr          = 0.1;
    std::size_t halvings_used  = 0;
    std::size_t max_halvings   = 5;
    std::optional<double> prev_score;

    explicit LRSchedule(double initial = 0.1, std::size_t limit = 5)
        : lr0(initial)
        , current_lr(initial)
        , max_halvings(limit)
    {}
};

// Compares against the immediately preceding epoch, not the best so far.
inline std::pair<LRSchedule, bool> lr_schedule_update(LRSchedule sched, double score)
{
    if ( !(score >= 0.0 && score <= 1.0) )
        throw DomainError("recognition score outside [0,1]: " + std::to_string(score));
    if ( sched.prev_score && score < *sched.prev_score )
    {
        ++sched.halvings_used;
        sched.current_lr = sched.lr0 / std::ldexp(1.0, static_cast<int>(sched.halvings_used));
    }
    sched.prev_score = score;
    return {sched, sched.halvings_used >= sched.max_halvings};
}

inline void add_into(Gradients& acc, const Gradients& g)
{
    for ( std::size_t t = 0; t < acc.tensors.size(); ++t )
    {
        auto dst       = acc.tensors[t].data();
        const auto src = g.tensors[t].data();
        for ( std::size_t i = 0; i < dst.size(); ++i )
            dst[i] += src[i];
    }
}

struct StepResult
{
    double mean_loss = 0.0;
};

// Mean-of-batch gradient, w <- w - lr g, then max-norm projection. Each
// example draws its own dropout masks from a seed taken off `rng` in batch
// order, so results do not depend on `threads`.
inline StepResult sgd_step(Model& model, const FrameDataset& data, const std::vector<std::size_t>& batch, double lr,
                           SeededRng& rng, const MaxNormSpec& max_norm, std::size_t batch_index = 0,
                           std::size_t threads = 0)
{
    if ( batch.empty() )
        throw ConfigurationError("empty batch");

    std::vector<std::uint64_t> seeds(batch.size());
    for ( auto& s : seeds )
        s = rng.next_u64();

    Gradients total = zero_gradients(model);
    double loss_sum = 0.0;

    const std::size_t wave = std::max<std::size_t>(threads, 1);
    std::vector<Gradients> grads(std::min(wave, batch.size()));
    std::vector<double> losses(grads.size());
    for ( std::size_t start = 0; start < batch.size(); start += wave )
    {
        const std::size_t n = std::min(wave, batch.size() - start);
        parallel_for(n, threads, [&](std::size_t i) {
            const auto& ex = data.examples[batch[start + i]];
            SeededRng mask_rng(seeds[start + i]);
            const ForwardCache c = forward(model, ex.patch, Mode::train, &mask_rng);
            losses[i]            = loss_of(c, ex.label);
            grads[i]             = backward(model, c, ex.label);
        });
        for ( std::size_t i = 0; i < n; ++i )
        {
            if ( !std::isfinite(losses[i]) )
                throw DivergenceError(batch_index, "non-finite loss");
            loss_sum += losses[i];
            add_into(total, grads[i]);
        }
    }

    const double scale = lr / static_cast<double>(batch.size());
    auto params        = parameters(model);
    for ( std::size_t t = 0; t < params.size(); ++t )
    {
        auto w       = params[t].tensor->data();
        const auto g = total.tensors[t].data();
        for ( std::size_t i = 0; i < w.size(); ++i )
            w[i] -= scale * g[i];
    }
    for ( const auto& p : params )
        for ( double v : p.tensor->data() )
            if ( !std::isfinite(v) )
                throw DivergenceError(batch_index, "non-finite weight after update");

    apply_max_norm(model, max_norm);
    return {loss_sum / static_cast<double>(batch.size())};
}

// Test-mode predicted class per example.
inline std::vector<std::size_t> predict(const Model& model, const FrameDataset& data, std::size_t threads = 0)
{
    std::vector<std::size_t> out(data.size());
    parallel_for(data.size(), threads, [&](std::size_t i) {
        out[i] = predicted_class(forward(model, data.examples[i].patch, Mode::test));
    });
    return out;
}

inline double recognition_score(const std::vector<std::size_t>& predicted, const std::vector<int>& labels)
{
    if ( predicted.empty() || predicted.size() != labels.size() )
        throw DataError("recognition score needs matching, non-empty predictions and labels");
    std::size_t hit = 0;
    for ( std::size_t i = 0; i < predicted.size(); ++i )
        hit += static_cast<int>(predicted[i]) == labels[i];
    return static_cast<double>(hit) / static_cast<double>(predicted.size());
}

// Fraction of frames whose argmax class equals the label.
inline double evaluate(const Model& model, const FrameDataset& data, std::size_t threads = 0)
{
    if ( data.empty() )
        throw DataError("cannot evaluate on an empty dataset");
    std::vector<int> labels;
    labels.reserve(data.size());
    for ( const auto& e : data.examples )
        labels.push_back(e.label);
    return recognition_score(predict(model, data, threads), labels);
}

inline double mean_loss(const Model& model, const FrameDataset& data, std::size_t threads = 0)
{
    std::vector<double> losses(data.size());
    parallel_for(data.size(), threads, [&](std::size_t i) {
        losses[i] = loss_of(forward(model, data.examples[i].patch, Mode::test), data.examples[i].label);
    });
    double s = 0.0;
    for ( double l : losses )
        s += l;
    return data.empty() ? 0.0 : s / static_cast<double>(data.size());
}

struct EpochRecord
{
    std::size_t epoch = 0;
    double lr         = 0.0;
    double train_loss = 0.0;
    double dev_score  = std::numeric_limits<double>::quiet_NaN();  // NaN when the split is empty
    double eval_score = std::numeric_limits<double>::quiet_NaN();
    double seconds    = 0.0;  // cumulative wall time
};

struct TrainingReport
{
    std::vector<EpochRecord> epochs;  // epochs[0] is the untrained model
    std::size_t epochs_run   = 0;
    std::size_t halvings     = 0;
    double final_lr          = 0.0;
    bool stopped_by_schedule = false;
    bool aborted             = false;
    std::string abort_reason;

    double total_seconds() const { return epochs.empty() ? 0.0 : epochs.back().seconds; }
    double total_hours() const { return total_seconds() / 3600.0; }
    double final_dev() const { return epochs.back().dev_score; }
    double final_eval() const { return epochs.back().eval_score; }

    // First epoch whose dev score reaches `threshold`, if any.
    std::optional<std::size_t> epochs_to(double threshold) const
    {
        for ( const auto& e : epochs )
            if ( e.epoch > 0 && e.dev_score >= threshold )
                return e.epoch;
        return std::nullopt;
    }
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Runs until the schedule stops training or max_epochs is reached. A
// divergence ends the run early with `aborted` set; the model keeps the last
// good weights.
inline TrainingReport train(const TrainConfig& cfg, Model& model, const FrameDataset& train_set,
                            const FrameDataset& dev_set, const FrameDataset& eval_set,
                            const EpochCallback& on_epoch = {})
{
    cfg.validate();
    if ( train_set.empty() )
        throw DataError("training set is empty");
    const FrameDataset& monitored = cfg.monitor == MonitorSplit::dev ? dev_set : eval_set;
    if ( monitored.empty() )
        throw DataError(std::string("monitored split (") + (cfg.monitor == MonitorSplit::dev ? "dev" : "eval") +
                        ") is empty");
    for ( const auto* ds : {&train_set, &dev_set, &eval_set} )
        if ( !ds->empty() && ds->width != model.width() )
            throw DataError("dataset width " + std::to_string(ds->width) + " does not match model width " +
                            std::to_string(model.width()));

    const auto t0 = std::chrono::steady_clock::now();
    auto elapsed  = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(); };
    auto score    = [&](const FrameDataset& ds) {
        return ds.empty() ? std::numeric_limits<double>::quiet_NaN() : evaluate(model, ds, cfg.threads);
    };

    // The constraint holds from the first evaluation on.
    apply_max_norm(model, cfg.max_norm);

    TrainingReport rep;
    LRSchedule sched(cfg.lr0, cfg.max_halvings);
    {
        EpochRecord r0{0, cfg.lr0, mean_loss(model, train_set, cfg.threads), score(dev_set), score(eval_set), elapsed()};
        rep.epochs.push_back(r0);
        if ( on_epoch )
            on_epoch(r0);
    }

    SeededRng mask_rng(derive_seed(cfg.seed, 0xd0));
    for ( std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch )
    {
        const double lr      = sched.current_lr;
        const auto batches   = batch_iterator(train_set, cfg.batch_size, cfg.seed, epoch);
        double loss_sum      = 0.0;
        Model backup         = model;
        try
        {
            for ( std::size_t b = 0; b < batches.size(); ++b )
            {
                backup = model;
                const auto res = sgd_step(model, train_set, batches[b], lr, mask_rng, cfg.max_norm, b, cfg.threads);
                loss_sum += res.mean_loss * static_cast<double>(batches[b].size());
            }
        }
        catch ( const DivergenceError& e )
        {
            model            = std::move(backup);
            rep.aborted      = true;
            rep.abort_reason = "epoch " + std::to_string(epoch) + ", " + e.what();
            break;
        }

        EpochRecord r{epoch, lr, loss_sum / static_cast<double>(train_set.size()), score(dev_set), score(eval_set),
                      elapsed()};
        rep.epochs.push_back(r);
        rep.epochs_run = epoch;
        if ( on_epoch )
            on_epoch(r);

        const double monitored_score = cfg.monitor == MonitorSplit::dev ? r.dev_score : r.eval_score;
        auto [next, stop] = lr_schedule_update(sched, monitored_score);
        sched             = next;
        if ( stop )
        {
            rep.stopped_by_schedule = true;
            break;
        }
    }
    rep.halvings = sched.halvings_used;
    rep.final_lr = sched.current_lr;
    return rep;
}

} // namespace tfcmnn
