// Acceptance gate: one PASS/FAIL line per criterion, exit status 1 if any fail.
#include "oracles.hpp"
#include "structures.hpp"

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>

using namespace tfcmnn;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

int g_failures = 0;

void report(const char* name, bool pass, const std::string& detail)
{
    std::printf("%s %-22s %s\n", pass ? "PASS" : "FAIL", name, detail.c_str());
    std::fflush(stdout);
    g_failures += !pass;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(const char* f, auto... args)
{
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double dot(const Tensor& a, const Tensor& b)
{
    double s = 0.0;
    for ( std::size_t i = 0; i < a.size(); ++i )
        s += a[i] * b[i];
    return s;
}

// Counts coordinates within `tol`; the caller's ratio is the pass measure.
struct Tally
{
    std::size_t within = 0, total = 0;
    double worst = 0.0;

    void add(const Tensor& analytic, const Tensor& numeric, double tol = 1e-5)
    {
        for ( std::size_t i = 0; i < analytic.size(); ++i )
        {
            const double e = relative_error(analytic[i], numeric[i]);
            within += e <= tol;
            worst = std::max(worst, e);
            ++total;
        }
    }
    double fraction() const { return total ? static_cast<double>(within) / static_cast<double>(total) : 1.0; }
};

template <typename Layer>
Layer randomized(Layer l, SeededRng& r)
{
    l.weights = oracle::random_tensor(r, l.weights.shape());
    l.biases  = oracle::random_tensor(r, l.biases.shape());
    return l;
}

// ---------------------------------------------------------------------------

void gradient_suite()
{
    const auto t0 = Clock::now();
    const double h = 1e-5;
    SeededRng r(101);
    std::vector<std::string> parts;
    bool ok = true;

    auto close = [&](const char* what, const Tally& t) {
        ok = ok && t.fraction() >= 0.99;
        parts.push_back(fmt("%s %.4f", what, t.fraction()));
    };

    {
        Tally t;
        for ( int trial = 0; trial < 5; ++trial )
        {
            const DenseMaxoutLayer l = randomized(DenseMaxoutLayer(9, 5, 3), r);
            const Tensor x = oracle::random_tensor(r, {9}), g = oracle::random_tensor(r, {5});
            const auto [y, cache] = dense_maxout_forward(x, l);
            const auto [dx, gr]   = dense_maxout_backward(g, l, cache);
            t.add(dx, finite_diff_gradient([&](const Tensor& v) { return dot(g, dense_maxout_forward(v, l).first); }, x, h));
            t.add(gr.weights, finite_diff_gradient(
                                  [&](const Tensor& w) {
                                      auto c    = l;
                                      c.weights = w;
                                      return dot(g, dense_maxout_forward(x, c).first);
                                  },
                                  l.weights, h));
            t.add(gr.biases, finite_diff_gradient(
                                 [&](const Tensor& b) {
                                     auto c   = l;
                                     c.biases = b;
                                     return dot(g, dense_maxout_forward(x, c).first);
                                 },
                                 l.biases, h));
        }
        close("dense", t);
    }
    for ( Axis axis : {Axis::time, Axis::frequency} )
    {
        Tally t;
        for ( int trial = 0; trial < 3; ++trial )
        {
            const Tensor x = oracle::random_tensor(r, {18, 12});
            const ConvAxisLayer l = randomized(ConvAxisLayer(axis, 3, 4, 2, axis == Axis::time ? 18 : 12), r);
            const auto [y, cache] = conv_axis_forward(x, l);
            const Tensor g        = oracle::random_tensor(r, y.shape());
            const auto [dx, gr]   = conv_axis_backward(g, l, cache);
            t.add(dx, finite_diff_gradient([&](const Tensor& v) { return dot(g, conv_axis_forward(v, l).first); }, x, h));
            t.add(gr.weights, finite_diff_gradient(
                                  [&](const Tensor& w) {
                                      auto c    = l;
                                      c.weights = w;
                                      return dot(g, conv_axis_forward(x, c).first);
                                  },
                                  l.weights, h));
            t.add(gr.biases, finite_diff_gradient(
                                 [&](const Tensor& b) {
                                     auto c   = l;
                                     c.biases = b;
                                     return dot(g, conv_axis_forward(x, c).first);
                                 },
                                 l.biases, h));
        }
        close(axis == Axis::time ? "conv-time" : "conv-freq", t);
    }
    {
        Tally t;
        for ( Axis axis : {Axis::time, Axis::frequency} )
            for ( PoolMode mode : {PoolMode::max, PoolMode::mean} )
                for ( PartialWindow pw : {PartialWindow::drop, PartialWindow::keep} )
                {
                    const Tensor x = oracle::random_tensor(r, {7, 11});
                    const MaxPoolLayer l{axis, 3, mode, pw};
                    const auto [y, cache] = maxpool_forward(x, l);
                    const Tensor g        = oracle::random_tensor(r, y.shape());
                    t.add(maxpool_backward(g, l, cache),
                          finite_diff_gradient([&](const Tensor& v) { return dot(g, maxpool_forward(v, l).first); }, x, h));
                }
        close("pool", t);
    }
    {
        Tally t;
        const SoftmaxHead l = randomized(SoftmaxHead(8), r);
        const Tensor x = oracle::random_tensor(r, {8}), g = oracle::random_tensor(r, {30});
        const auto [y, cache] = linear_forward(x, l);
        const auto [dx, gr]   = linear_backward(g, l, cache);
        t.add(dx, finite_diff_gradient([&](const Tensor& v) { return dot(g, linear_forward(v, l).first); }, x, h));
        t.add(gr.weights, finite_diff_gradient(
                              [&](const Tensor& w) {
                                  auto c    = l;
                                  c.weights = w;
                                  return dot(g, linear_forward(x, c).first);
                              },
                              l.weights, h));
        const Tensor logits = oracle::random_tensor(r, {30}, 3.0);
        t.add(softmax_xent_backward(softmax_xent_forward(logits, 4).probs, 4),
              finite_diff_gradient([](const Tensor& v) { return softmax_xent_forward(v, 4).loss; }, logits, h));
        close("head", t);
    }
    {
        StructureSpec spec = parse_structure("C2 K3 S2 F8");
        spec.width         = 12;
        spec.pieces        = 2;
        const Model m      = build_tfcmnn(spec, 42);
        std::size_t checked = 0, failed = 0, excluded = 0;
        for ( int trial = 0; trial < 5; ++trial )
        {
            Tensor patch({kNumCoefficients, 12});
            for ( auto& v : patch.data() )
                v = r.normal();
            const auto rep = gradient_check(m, patch, static_cast<int>(r.below(30)));
            checked += rep.checked;
            failed += rep.failed;
            excluded += rep.excluded;
        }
        const double frac = 1.0 - static_cast<double>(failed) / static_cast<double>(checked);
        ok = ok && param_count(m).total <= 2000 && frac >= 0.99;
        parts.push_back(fmt("model(%zu params) %.4f, %zu ties excluded", param_count(m).total, frac, excluded));
    }
    const double secs = seconds_since(t0);
    ok = ok && secs < 60.0;
    std::string detail;
    for ( const auto& p : parts )
        detail += p + "; ";
    report("gradient-oracle", ok, detail + fmt("need >=0.99 within 1e-5, %.1fs < 60s", secs));
}

void conv_oracle()
{
    const auto t0 = Clock::now();
    SeededRng r(202);
    double worst = 0.0;
    int per_axis[2] = {0, 0};
    for ( int trial = 0; trial < 100; ++trial )
    {
        const Axis axis       = trial % 2 ? Axis::frequency : Axis::time;
        const std::size_t R   = 2 + r.below(20), C = 2 + r.below(20);
        const std::size_t ext = axis == Axis::time ? C : R, span = axis == Axis::time ? R : C;
        const ConvAxisLayer l =
            randomized(ConvAxisLayer(axis, 1 + r.below(5), 1 + r.below(ext), 1 + r.below(3), span), r);
        const Tensor x    = oracle::random_tensor(r, {R, C});
        const Tensor fast = conv_axis_forward(x, l).first, slow = oracle::naive_conv(x, l);
        if ( fast.shape() != slow.shape() )
        {
            worst = INFINITY;
            continue;
        }
        for ( std::size_t i = 0; i < fast.size(); ++i )
            worst = std::max(worst, std::abs(fast[i] - slow[i]));
        ++per_axis[axis == Axis::frequency];
    }
    const double secs = seconds_since(t0);
    report("conv-oracle", worst <= 1e-12 && secs < 10.0 && per_axis[0] == 50 && per_axis[1] == 50,
           fmt("100 cases (%d time, %d freq), max abs diff %.2e <= 1e-12, %.2fs < 10s", per_axis[0], per_axis[1], worst,
               secs));
}

void dropout_consistency()
{
    SeededRng r(303);
    const DenseMaxoutLayer fc = randomized(DenseMaxoutLayer(12, 6, 2), r);
    const Tensor readout      = oracle::random_tensor(r, {6, 4});
    const Tensor x            = oracle::random_tensor(r, {12});
    const Tensor hidden       = dense_maxout_forward(x, fc).first;
    auto read = [&](const Tensor& hv, const Tensor& w) { return matmul(Tensor::matrix(1, 6, hv.values()), w); };

    bool ok = true;
    double worst_sigmas = 0.0;
    for ( double p : {0.3, 0.5, 0.7} )
    {
        const Tensor expect = read(hidden, dropout_test_scale(readout, p));
        const int n         = 100000;
        std::vector<double> s(4, 0.0), s2(4, 0.0);
        for ( int t = 0; t < n; ++t )
        {
            const Tensor o = read(dropout_apply(hidden, bernoulli_mask(r, 6, p)), readout);
            for ( std::size_t j = 0; j < 4; ++j )
            {
                s[j] += o[j];
                s2[j] += o[j] * o[j];
            }
        }
        for ( std::size_t j = 0; j < 4; ++j )
        {
            const double mean = s[j] / n;
            const double sd   = std::sqrt((s2[j] / n - mean * mean) / n);
            const double z    = std::abs(mean - expect[j]) / sd;
            worst_sigmas      = std::max(worst_sigmas, z);
            ok                = ok && z <= 3.0;
        }
    }
    const Tensor exact = read(dropout_apply(hidden, bernoulli_mask(r, 6, 1.0)), readout);
    const bool p1      = exact == read(hidden, dropout_test_scale(readout, 1.0));
    report("dropout-consistency", ok && p1,
           fmt("p in {0.3,0.5,0.7}, 1e5 passes, worst deviation %.2f sigma <= 3; p=1 exact: %s", worst_sigmas,
               p1 ? "yes" : "no"));
}

void max_norm_invariants()
{
    const auto t0 = Clock::now();
    SyntheticSpec ss;
    const FrameDataset data = generate_synthetic(ss);
    StructureSpec spec      = parse_structure("C8 K3 S2 F32");
    Model m                 = build_tfcmnn(spec, 11);
    const MaxNormSpec mn{0.8, true};
    apply_max_norm(m, mn);

    double worst = 0.0;
    auto check_rows = [&] {
        for ( const auto& row : constrained_rows(m) )
            worst = std::max(worst, row.norm());
    };
    check_rows();
    SeededRng mask_rng(5);
    std::size_t steps = 0;
    for ( std::size_t epoch = 1; epoch <= 20; ++epoch )
        for ( const auto& batch : batch_iterator(data, 100, 11, epoch) )
        {
            sgd_step(m, data, batch, 0.1, mask_rng, mn);
            check_rows();
            ++steps;
        }
    const bool run_ok = worst <= 0.8 + 1e-9;

    SeededRng r(404);
    bool idem = true;
    double worst_cos = 0.0;
    for ( int trial = 0; trial < 1000; ++trial )
    {
        std::vector<double> w(1 + r.below(100));
        const double scale = std::exp(r.uniform(-3.0, 5.0));
        for ( auto& v : w )
            v = scale * r.normal();
        const auto once = max_norm_project(w, 0.8);
        idem            = idem && max_norm_project(once, 0.8) == once;
        double d = 0, a = 0, b = 0;
        for ( std::size_t i = 0; i < w.size(); ++i )
        {
            d += w[i] * once[i];
            a += w[i] * w[i];
            b += once[i] * once[i];
        }
        worst_cos = std::max(worst_cos, std::abs(d / std::sqrt(a * b) - 1.0));
    }
    report("max-norm", run_ok && idem && worst_cos <= 1e-12,
           fmt("20 epochs / %zu steps, max row norm %.12f <= 0.8+1e-9; 1000 vectors idempotent: %s, |cos-1| max %.1e; "
               "%.1fs",
               steps, worst, idem ? "yes" : "no", worst_cos, seconds_since(t0)));
}

void structure_grammar()
{
    std::size_t round_trips = 0, strings = 0, matched = 0;
    std::string mismatch;
    for ( const auto& row : kSingleBranchRows )
    {
        ++strings;
        round_trips += parse_structure(row.structure).canonical() == row.structure;
    }
    for ( const auto& row : kTwoBranchRows )
    {
        ++strings;
        round_trips += parse_structure(row.structure).canonical() == row.structure;
        StructureSpec spec = parse_structure(row.structure);
        spec.width         = 15;
        spec.pieces        = 2;
        spec.dropout       = row.keep;
        try
        {
            const auto built    = param_count(build_tfcmnn(spec, 1)).total;
            const auto expected = oracle::enumerate_params(spec, 2, true);
            if ( built == expected )
                ++matched;
            else
                mismatch += fmt(" [%s: %zu vs %zu]", std::string(row.structure).c_str(), built, expected);
        }
        catch ( const Error& e )
        {
            mismatch += fmt(" [%s: %s]", std::string(row.structure).c_str(), e.what());
        }
    }
    report("structure-grammar", strings == 16 && round_trips == 16 && matched == 7,
           fmt("%zu/16 round-trips, %zu/7 two-branch builds match enumeration%s", round_trips, matched,
               mismatch.c_str()));
}

void lhcb_pipeline()
{
    SeededRng r(505);
    auto clip_of = [&](double f0) {
        AudioClip c;
        c.sample_rate = 44100;
        for ( unsigned n = 0; n < 44100; ++n )
            c.samples.push_back(0.2 * std::sin(2 * std::numbers::pi * f0 * n / 44100.0) + 0.05 * r.normal());
        return c;
    };
    const AudioClip clip = clip_of(440.0);
    const Tensor feats   = extract_lhcb(clip);
    const bool shape_ok  = feats.shape() == Tensor::Shape{85, 18};

    double worst_parseval = 0.0;
    for ( const auto& frame : frame_signal(clip) )
    {
        const std::size_t F = next_power_of_two(frame.size());
        const auto p        = power_spectrum(frame);
        double spec = 0.0, time = 0.0;
        for ( std::size_t k = 0; k < p.size(); ++k )
            spec += (k == 0 || k == F / 2) ? p[k] : 2.0 * p[k];
        for ( double v : frame )
            time += v * v;
        worst_parseval = std::max(worst_parseval, std::abs(spec / (static_cast<double>(F) * time) - 1.0));
    }

    std::vector<FeatureMatrix> train;
    for ( double f0 : {220.0, 440.0, 880.0, 1500.0} )
    {
        FeatureMatrix fm;
        fm.frames = extract_lhcb(clip_of(f0));
        fm.labels.assign(fm.n_frames(), 0);
        train.push_back(std::move(fm));
    }
    const NormStats stats = fit_norm_stats(train);
    double worst_mean = 0.0, worst_var = 0.0;
    for ( std::size_t j = 0; j < kNumCoefficients; ++j )
    {
        std::vector<double> vals;
        for ( const auto& fm : train )
        {
            const FeatureMatrix n = normalize(fm, stats);
            for ( std::size_t t = 0; t < n.n_frames(); ++t )
                vals.push_back(n.frames(t, j));
        }
        double mean = 0.0;
        for ( double v : vals )
            mean += v;
        mean /= static_cast<double>(vals.size());
        double var = 0.0;
        for ( double v : vals )
            var += (v - mean) * (v - mean);
        var /= static_cast<double>(vals.size());
        worst_mean = std::max(worst_mean, std::abs(mean));
        worst_var  = std::max(worst_var, std::abs(var - 0.5));
    }
    report("lhcb-pipeline", shape_ok && worst_parseval <= 1e-9 && worst_mean <= 1e-9 && worst_var <= 1e-6,
           fmt("1 s @ 44.1 kHz -> %s; Parseval rel err %.1e <= 1e-9; normalized |mean| %.1e <= 1e-9, |var-0.5| %.1e "
               "<= 1e-6",
               shape_string(feats.shape()).c_str(), worst_parseval, worst_mean, worst_var));
}

double median(std::vector<double> v)
{
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
}

void directional_synthetic()
{
    const auto t0 = Clock::now();
    StructureSpec spec = parse_structure("C8 K3 S2 F32");
    spec.width         = 15;
    spec.pieces        = 2;

    const std::array<ModelKind, 3> kinds{ModelKind::tfcmnn, ModelKind::cmnn_time, ModelKind::cmnn_freq};
    std::array<std::vector<double>, 3> epochs_to, eval_score;
    int tf_reached = 0;
    for ( std::uint64_t seed = 1; seed <= 5; ++seed )
    {
        auto split = [&](std::size_t per_class, std::uint64_t stream) {
            SyntheticSpec s;
            s.frames_per_class = per_class;
            s.seed             = derive_seed(seed, stream);
            return generate_synthetic(s);
        };
        const auto tr = split(500, 1), dv = split(100, 2), ev = split(100, 3);
        for ( std::size_t k = 0; k < kinds.size(); ++k )
        {
            Model m = build_model(kinds[k], spec, seed);
            TrainConfig cfg;
            cfg.seed       = seed;
            cfg.max_epochs = 30;
            const auto rep = train(cfg, m, tr, dv, ev);
            const auto e   = rep.epochs_to(0.95);
            epochs_to[k].push_back(e ? static_cast<double>(*e) : INFINITY);
            eval_score[k].push_back(rep.final_eval());
            if ( k == 0 && e && *e <= 30 )
                ++tf_reached;
            std::printf("  seed %llu %-9s epochs-to-0.95 %s, %zu epochs, eval %.4f\n",
                        static_cast<unsigned long long>(seed), model_kind_name(kinds[k]),
                        e ? std::to_string(*e).c_str() : "never", rep.epochs_run, rep.final_eval());
        }
    }
    const double secs = seconds_since(t0);
    const double m_tf = median(epochs_to[0]), m_t = median(epochs_to[1]), m_f = median(epochs_to[2]);
    const double e_tf = median(eval_score[0]), e_t = median(eval_score[1]), e_f = median(eval_score[2]);
    const bool a = tf_reached >= 4;
    const bool b = m_tf <= m_t && m_tf <= m_f;
    const bool c = e_tf >= std::max(e_t, e_f) - 0.01;
    report("directional-a", a, fmt("TFCMNN reached dev >= 0.95 within 30 epochs for %d/5 seeds (need >= 4)", tf_reached));
    report("directional-b", b,
           fmt("median epochs-to-0.95: tfcmnn %g <= cmnn-time %g and cmnn-freq %g", m_tf, m_t, m_f));
    report("directional-c", c,
           fmt("median eval: tfcmnn %.4f >= max(%.4f, %.4f) - 0.01", e_tf, e_t, e_f));
    report("directional-runtime", secs < 900.0, fmt("%.1fs < 900s serial", secs));
}

std::string slurp(const fs::path& f)
{
    std::ifstream in(f, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int run_cli(const std::string& env, const std::string& args)
{
    const std::string cmd = env + " \"" + TFCMNN_CLI_PATH + "\" " + args + " > /dev/null 2>&1";
    const int status      = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

void determinism()
{
    const fs::path dir = fs::temp_directory_path() / "tfcmnn_acceptance_det";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const std::string d = dir.string();
    bool ok = run_cli("", "synth --per-class 100 --seed 1 --out " + d + "/tr.tfcf") == 0 &&
              run_cli("", "synth --per-class 25 --seed 2 --out " + d + "/dv.tfcf") == 0;
    const std::string args = "train --structure \"C8 K3 S2 F32\" --dropout 0.5 --max-epochs 4 --batch 50 --train " + d +
                             "/tr.tfcf --dev " + d + "/dv.tfcf --out ";
    ok = ok && run_cli("TFCMNN_THREADS=0", args + d + "/a") == 0 && run_cli("TFCMNN_THREADS=0", args + d + "/b") == 0 &&
         run_cli("TFCMNN_THREADS=4", args + d + "/c") == 0;
    std::size_t identical = 0;
    for ( const char* f : {"report.csv", "model.tfcm"} )
    {
        const std::string a = slurp(dir / "a" / f);
        identical += !a.empty() && a == slurp(dir / "b" / f);
        identical += !a.empty() && a == slurp(dir / "c" / f);
    }

    // Library route, independent of the CLI.
    SyntheticSpec ss;
    ss.frames_per_class = 50;
    ss.seed             = 7;
    const auto tr       = generate_synthetic(ss);
    auto lib_run  = [&](std::size_t threads) {
        StructureSpec s = parse_structure("C4 K3 S2 F16");
        s.dropout       = 0.5;
        Model m         = build_tfcmnn(s, 3);
        TrainConfig cfg;
        cfg.max_epochs = 3;
        cfg.batch_size = 25;
        cfg.threads    = threads;
        const auto rep = train(cfg, m, tr, tr, tr);
        const Bytes ck = encode_checkpoint(m);
        return report_csv(rep) + std::string(ck.begin(), ck.end());
    };
    const bool lib_ok = lib_run(0) == lib_run(0) && lib_run(0) == lib_run(3);
    fs::remove_all(dir);
    report("determinism", ok && identical == 4 && lib_ok,
           fmt("CLI reruns and TFCMNN_THREADS 0 vs 4: %zu/4 files identical; library threads 0 vs 3 identical: %s",
               identical, lib_ok ? "yes" : "no"));
}

void lr_schedule()
{
    // Scripted monitored scores: five drops interleaved with gains.
    const std::vector<double> scores{0.40, 0.50, 0.45, 0.55, 0.60, 0.58, 0.62, 0.61, 0.63, 0.64, 0.60, 0.70, 0.69, 0.99};
    LRSchedule s(0.1, 5);
    bool stop           = false;
    std::size_t stopped = 0, seen = 0;
    for ( double v : scores )
    {
        ++seen;
        std::tie(s, stop) = lr_schedule_update(s, v);
        if ( stop )
        {
            stopped = seen;
            break;
        }
    }
    const bool ok = stop && s.halvings_used == 5 && s.current_lr == 0.1 / 32 && stopped == 13;
    report("lr-schedule", ok,
           fmt("%zu halvings, final lr %g (want 0.1/32 = %g), stop after score %zu of 14", s.halvings_used,
               s.current_lr, 0.1 / 32, stopped));
}

} // namespace

int main()
{
    const auto t0 = Clock::now();
    gradient_suite();
    conv_oracle();
    dropout_consistency();
    max_norm_invariants();
    structure_grammar();
    lhcb_pipeline();
    determinism();
    lr_schedule();
    directional_synthetic();
    std::printf("%d criteria failed, %.1fs total\n", g_failures, seconds_since(t0));
    return g_failures ? 1 : 0;
}
