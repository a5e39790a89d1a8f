// tfcmnn: feature extraction, synthetic data, training, evaluation,
// gradient checking and checkpoint inspection.
//
// Exit codes: 0 success, 1 usage/configuration, 2 data/format, 3 numeric divergence.

#include "tfcmnn/tfcmnn.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace tfcmnn;

namespace {

constexpr int kExitUsage      = 1;
constexpr int kExitData       = 2;
constexpr int kExitDivergence = 3;

struct UsageError : Error
{
    using Error::Error;
};

// Speaker id from a file stem: the numeric prefix before the first '_' when
// there is one, otherwise the rank of the prefix among all prefixes.
std::vector<std::uint16_t> speaker_ids(const std::vector<std::string>& stems)
{
    auto prefix = [](const std::string& s) { return s.substr(0, s.find('_')); };
    bool numeric = true;
    for ( const auto& s : stems )
    {
        const auto p = prefix(s);
        numeric &= !p.empty() && p.size() <= 5 &&
                   std::all_of(p.begin(), p.end(), [](char c) { return c >= '0' && c <= '9'; }) &&
                   std::stoul(p) <= 65535;
    }
    std::map<std::string, std::uint16_t> rank;
    for ( const auto& s : stems )
        rank.emplace(prefix(s), 0);
    std::uint16_t next = 0;
    for ( auto& [k, v] : rank )
        v = next++;

    std::vector<std::uint16_t> out;
    for ( const auto& s : stems )
        out.push_back(numeric ? static_cast<std::uint16_t>(std::stoul(prefix(s))) : rank[prefix(s)]);
    return out;
}

nlohmann::json stats_to_json(const NormStats& s)
{
    return {{"mean", s.mean}, {"std", s.std}, {"target_variance", s.target_variance}};
}

NormStats stats_from_json(const fs::path& path)
{
    const Bytes b = read_file_bytes(path);
    try
    {
        const auto j = nlohmann::json::parse(b.begin(), b.end());
        NormStats s;
        s.mean            = j.at("mean").get<std::vector<double>>();
        s.std             = j.at("std").get<std::vector<double>>();
        s.target_variance = j.value("target_variance", 0.5);
        return s;
    }
    catch ( const nlohmann::json::exception& e )
    {
        throw FormatError(path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------------------

struct ExtractArgs
{
    std::string wav_dir, label_dir, out, stats_in, stats_out;
    double window_ms   = 23.0;
    std::size_t width  = 15;
    bool no_normalize  = false;
};

int cmd_extract(const ExtractArgs& a, std::size_t threads)
{
    if ( !fs::is_directory(a.wav_dir) )
        throw DataError("no such directory " + a.wav_dir);
    std::vector<fs::path> wavs;
    for ( const auto& e : fs::directory_iterator(a.wav_dir) )
        if ( e.is_regular_file() && e.path().extension() == ".wav" )
            wavs.push_back(e.path());
    if ( wavs.empty() )
        throw DataError("no input files in " + a.wav_dir);
    std::sort(wavs.begin(), wavs.end());

    std::vector<std::string> stems;
    for ( const auto& w : wavs )
        stems.push_back(w.stem().string());
    const auto speakers = speaker_ids(stems);

    // Check every label file exists before doing any work.
    for ( const auto& s : stems )
    {
        const fs::path lp = fs::path(a.label_dir) / (s + ".csv");
        if ( !fs::exists(lp) )
            throw DataError("missing label file " + lp.string());
    }

    FrontEndConfig fe;
    fe.window_ms = a.window_ms;
    std::vector<FeatureMatrix> utts(wavs.size());
    parallel_for(wavs.size(), threads, [&](std::size_t i) {
        FeatureMatrix fm;
        fm.frames       = extract_lhcb(read_wav(wavs[i]), fe);
        fm.labels       = read_frame_labels(fs::path(a.label_dir) / (stems[i] + ".csv"), fm.frames.extent(0));
        fm.utterance_id = stems[i];
        fm.speaker_id   = speakers[i];
        utts[i]         = std::move(fm);
    });

    if ( !a.no_normalize )
    {
        const NormStats stats = a.stats_in.empty() ? fit_norm_stats(utts) : stats_from_json(a.stats_in);
        if ( !a.stats_out.empty() )
            write_file_atomic(a.stats_out, stats_to_json(stats).dump(2) + "\n");
        for ( auto& u : utts )
            u = normalize(u, stats);
    }

    std::size_t frames = 0;
    for ( const auto& u : utts )
        frames += u.n_frames();
    if ( a.width == 0 )
        write_feature_file(a.out, utts);
    else
        write_feature_file(a.out, window_utterances(utts, a.width));
    std::cout << "extracted " << utts.size() << " utterances, " << frames << " frames -> " << a.out << "\n";
    return 0;
}

struct SynthArgs
{
    SyntheticSpec spec;
    std::string kinds, out;
};

int cmd_synth(SynthArgs a)
{
    if ( !a.kinds.empty() )
    {
        std::stringstream ss(a.kinds);
        std::string k;
        while ( std::getline(ss, k, ',') )
        {
            if ( k == "time" ) a.spec.kinds.push_back(PatternKind::time);
            else if ( k == "frequency" || k == "freq" ) a.spec.kinds.push_back(PatternKind::frequency);
            else if ( k == "both" ) a.spec.kinds.push_back(PatternKind::both);
            else throw UsageError("unknown pattern kind '" + k + "'");
        }
    }
    const FrameDataset ds = generate_synthetic(a.spec);
    const Bytes bytes     = encode_feature_file(ds);
    write_file_atomic(a.out, bytes);
    char crc[16];
    std::snprintf(crc, sizeof crc, "%08x", crc32_of(bytes.data(), bytes.size() - 4));
    std::cout << "wrote " << ds.size() << " patches (width " << ds.width << ") -> " << a.out << " crc32 " << crc
              << "\n";
    return 0;
}

struct ImportArgs
{
    std::string csv, out;
    std::size_t width = 15;
};

int cmd_import_csv(const ImportArgs& a)
{
    const FrameDataset frames = read_frame_csv(a.csv);
    if ( frames.empty() )
        throw DataError("no frames in " + a.csv);
    if ( a.width == 0 )
        write_feature_file(a.out, frames);
    else
        write_feature_file(a.out, window_utterances(frames_to_utterances(frames), a.width));
    std::cout << "imported " << frames.size() << " frames -> " << a.out << "\n";
    return 0;
}

struct TrainArgs
{
    std::string structure = "C40 K7 S2 F400 F400";
    std::string model     = "tfcmnn";
    std::string data, train, dev, eval, out = "run";
    std::string monitor = "dev", pool = "max", partial = "drop";
    std::size_t k          = 2;
    double dropout         = 0.0;
    double lr              = 0.1;
    std::size_t batch      = 100;
    double max_norm        = 0.8;
    std::uint64_t seed     = 42;
    std::size_t max_epochs = 100;
    double dev_fraction    = 0.05;
    std::size_t eval_speakers = 7;
    bool dev_by_speaker    = false;
    bool wall_clock        = false;
    bool quiet             = false;
};

ModelOptions model_options(const std::string& pool, const std::string& partial)
{
    ModelOptions o;
    if ( pool == "max" ) o.pool_mode = PoolMode::max;
    else if ( pool == "mean" ) o.pool_mode = PoolMode::mean;
    else throw UsageError("--pool must be max or mean");
    if ( partial == "drop" ) o.partial = PartialWindow::drop;
    else if ( partial == "keep" ) o.partial = PartialWindow::keep;
    else throw UsageError("--partial must be drop or keep");
    return o;
}

int cmd_train(const TrainArgs& a, std::size_t threads)
{
    DatasetSplit split;
    if ( !a.data.empty() )
    {
        if ( !a.train.empty() )
            throw UsageError("use either --data or --train/--dev/--eval");
        split = split_by_speaker(read_feature_file(a.data), a.dev_fraction, a.eval_speakers, a.seed, a.dev_by_speaker);
    }
    else
    {
        if ( a.train.empty() || a.dev.empty() )
            throw UsageError("--data or --train and --dev are required");
        split.train = read_feature_file(a.train);
        split.dev   = read_feature_file(a.dev);
        if ( !a.eval.empty() )
            split.eval = read_feature_file(a.eval);
        else
            split.eval.width = split.train.width;
    }
    if ( split.train.width == 0 )
        throw DataError("training data holds raw frames; extract with --width to build context windows");

    StructureSpec spec = parse_structure(a.structure);
    spec.pieces        = a.k;
    spec.width         = split.train.width;
    if ( a.dropout > 0.0 )
        spec.dropout = a.dropout;

    TrainConfig cfg;
    cfg.lr0         = a.lr;
    cfg.batch_size  = a.batch;
    cfg.max_norm    = {a.max_norm, a.max_norm > 0.0};
    cfg.dropout     = spec.dropout;
    cfg.pieces      = a.k;
    cfg.width       = spec.width;
    cfg.seed        = a.seed;
    cfg.max_epochs  = a.max_epochs;
    cfg.threads     = threads;
    if ( a.monitor == "dev" ) cfg.monitor = MonitorSplit::dev;
    else if ( a.monitor == "eval" ) cfg.monitor = MonitorSplit::eval;
    else throw UsageError("--monitor must be dev or eval");

    Model model = build_model(parse_model_kind(a.model), spec, a.seed, model_options(a.pool, a.partial));
    std::cout << "seed " << a.seed << "\n"
              << model_kind_name(model.kind) << " " << spec.canonical() << " k=" << spec.pieces
              << " width=" << spec.width << " params=" << param_count(model).total << "\n"
              << "train " << split.train.size() << " / dev " << split.dev.size() << " / eval " << split.eval.size()
              << " patches\n";

    const TrainingReport rep = train(cfg, model, split.train, split.dev, split.eval, [&](const EpochRecord& r) {
        if ( !a.quiet )
            std::cout << "epoch " << r.epoch << " lr " << format_number(r.lr) << " loss " << r.train_loss << " dev "
                      << r.dev_score << " eval " << r.eval_score << "\n";
    });

    fs::create_directories(a.out);
    write_file_atomic(fs::path(a.out) / "report.csv", report_csv(rep, a.wall_clock));
    write_file_atomic(fs::path(a.out) / "summary.json", report_summary(rep, model, a.wall_clock).dump(2) + "\n");
    save_checkpoint(fs::path(a.out) / "model.tfcm", model);

    std::cout << "final dev " << format_number(rep.final_dev()) << " eval " << format_number(rep.final_eval())
              << " after " << rep.epochs_run << " epochs\n";
    if ( rep.aborted )
    {
        std::cerr << "error: training diverged (" << rep.abort_reason << ")\n";
        return kExitDivergence;
    }
    return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data, std::size_t threads)
{
    const Model m         = load_checkpoint(checkpoint);
    const FrameDataset ds = read_feature_file(data);
    if ( ds.width != m.width() )
        throw DataError("data width " + std::to_string(ds.width) + " does not match model width " +
                        std::to_string(m.width()));
    std::cout << "score " << format_number(evaluate(m, ds, threads)) << " on " << ds.size() << " frames\n";
    return 0;
}

struct GradcheckArgs
{
    std::string structure = "C2 K3 S2 F8";
    std::string model     = "tfcmnn";
    std::size_t width     = 12;
    std::size_t k         = 2;
    double dropout        = 0.0;
    std::uint64_t seed    = 42;
    double tolerance      = 1e-5;
    bool corrupt          = false;
};

int cmd_gradcheck(const GradcheckArgs& a)
{
    StructureSpec spec = parse_structure(a.structure);
    spec.pieces        = a.k;
    spec.width         = a.width;
    if ( a.dropout > 0.0 )
        spec.dropout = a.dropout;
    const Model m = build_model(parse_model_kind(a.model), spec, a.seed);

    SeededRng rng(derive_seed(a.seed, 1));
    Tensor patch({kNumCoefficients, a.width});
    for ( auto& v : patch.data() )
        v = rng.normal();
    const int label = static_cast<int>(rng.below(kNumClasses));

    GradCheckOptions opt;
    opt.tolerance = a.tolerance;
    GradientHook hook;
    if ( a.corrupt )
        hook = [](Gradients& g) {
            for ( auto& v : g.tensors.front().data() )
                v *= 1.5;
        };
    const auto rep = gradient_check(m, patch, label, opt, hook);

    std::cout << "seed " << a.seed << "\n"
              << model_kind_name(m.kind) << " " << spec.canonical() << " k=" << spec.pieces
              << " width=" << spec.width << " params=" << param_count(m).total << "\n";
    for ( const auto& p : rep.params )
        std::printf("%-22s max_rel_error %.3e  checked %zu  excluded %zu  failed %zu\n", p.name.c_str(),
                    p.max_rel_error, p.checked, p.excluded, p.failed);
    std::printf("overall: %zu checked, %zu excluded (ties), %zu failed, %.4f within %.0e\n", rep.checked,
                rep.excluded, rep.failed, rep.fraction_within(), a.tolerance);
    return rep.all_within() ? 0 : kExitDivergence;
}

int cmd_inspect(const std::string& checkpoint)
{
    const Model m = load_checkpoint(checkpoint);
    std::cout << "structure " << m.spec.canonical() << "\n"
              << "model " << model_kind_name(m.kind) << "\n"
              << "pieces " << m.spec.pieces << "\n"
              << "dropout " << (m.spec.dropout ? format_number(*m.spec.dropout) : std::string("none")) << "\n"
              << "width " << m.spec.width << "\n"
              << "seed " << m.seed << "\n";
    for ( const auto& br : m.branches )
        std::cout << "branch " << axis_name(br.axis) << " output " << shape_string(br.output_shape) << " flat "
                  << br.flat_size << "\n";
    for ( const auto& p : parameters(m) )
        std::cout << "  " << p.name << " " << shape_string(p.tensor->shape()) << " " << p.tensor->size() << "\n";
    std::cout << "param_count " << param_count(m).total << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Time-frequency convolutional maxout networks for frame-level phone classification"};
    app.require_subcommand(1);
    std::optional<std::size_t> threads_flag;
    app.add_option("--threads", threads_flag, "Worker threads (overrides TFCMNN_THREADS; 0 = serial)");

    ExtractArgs ex;
    auto* extract = app.add_subcommand("extract", "WAV + frame labels -> normalized, context-windowed features");
    extract->add_option("--wav-dir", ex.wav_dir, "Directory of 16-bit PCM mono WAV files")->required();
    extract->add_option("--label-dir", ex.label_dir, "Directory of <stem>.csv frame labels")->required();
    extract->add_option("--out", ex.out, "Output feature file (.tfcf)")->required();
    extract->add_option("--window-ms", ex.window_ms, "Analysis window length in ms")->capture_default_str();
    extract->add_option("--width", ex.width, "Context width in frames (0 = raw frames)")->capture_default_str();
    extract->add_option("--stats-in", ex.stats_in, "Apply normalization statistics from this JSON file");
    extract->add_option("--stats-out", ex.stats_out, "Write fitted normalization statistics here");
    extract->add_flag("--no-normalize", ex.no_normalize, "Skip normalization");

    SynthArgs sy;
    auto* synth = app.add_subcommand("synth", "Write a synthetic time/frequency-pattern dataset");
    synth->add_option("--classes", sy.spec.n_classes)->capture_default_str();
    synth->add_option("--per-class", sy.spec.frames_per_class)->capture_default_str();
    synth->add_option("--sigma", sy.spec.sigma, "Gaussian noise level")->capture_default_str();
    synth->add_option("--amplitude", sy.spec.amplitude)->capture_default_str();
    synth->add_option("--width", sy.spec.width)->capture_default_str();
    synth->add_option("--speakers", sy.spec.n_speakers)->capture_default_str();
    synth->add_option("--kinds", sy.kinds, "Comma-separated time|frequency|both per class");
    synth->add_option("--seed", sy.spec.seed)->capture_default_str();
    synth->add_option("--out", sy.out)->required();

    ImportArgs im;
    auto* import = app.add_subcommand("import-csv", "speaker,label,f1..f18 CSV -> feature file");
    import->add_option("--csv", im.csv)->required();
    import->add_option("--width", im.width, "Context width (0 = raw frames)")->capture_default_str();
    import->add_option("--out", im.out)->required();

    TrainArgs tr;
    auto* trn = app.add_subcommand("train", "Train a model and write report.csv, summary.json, model.tfcm");
    trn->add_option("--structure", tr.structure, "Structure notation, e.g. \"C40 K7 S2 F400 F400\"")->capture_default_str();
    trn->add_option("--model", tr.model, "tfcmnn | cmnn-time | cmnn-freq")->capture_default_str();
    trn->add_option("--k", tr.k, "Maxout pieces")->capture_default_str();
    trn->add_option("--dropout", tr.dropout, "Keep probability (0 = no dropout)")->capture_default_str();
    trn->add_option("--lr", tr.lr)->capture_default_str();
    trn->add_option("--batch", tr.batch)->capture_default_str();
    trn->add_option("--max-norm", tr.max_norm, "Max-norm radius (0 disables)")->capture_default_str();
    trn->add_option("--seed", tr.seed)->capture_default_str();
    trn->add_option("--max-epochs", tr.max_epochs)->capture_default_str();
    trn->add_option("--monitor", tr.monitor, "Split driving the learning-rate schedule: dev | eval")->capture_default_str();
    trn->add_option("--data", tr.data, "Single feature file, split by speaker");
    trn->add_option("--dev-fraction", tr.dev_fraction)->capture_default_str();
    trn->add_option("--eval-speakers", tr.eval_speakers)->capture_default_str();
    trn->add_flag("--dev-by-speaker", tr.dev_by_speaker, "Draw dev as whole speakers");
    trn->add_option("--train", tr.train);
    trn->add_option("--dev", tr.dev);
    trn->add_option("--eval", tr.eval);
    trn->add_option("--pool", tr.pool, "max | mean")->capture_default_str();
    trn->add_option("--partial", tr.partial, "Trailing pool window: drop | keep")->capture_default_str();
    trn->add_option("--out", tr.out, "Output directory")->capture_default_str();
    trn->add_flag("--wall-clock", tr.wall_clock, "Record wall-clock seconds in report.csv");
    trn->add_flag("--quiet", tr.quiet);

    std::string ev_ckpt, ev_data;
    auto* evl = app.add_subcommand("eval", "Frame recognition score of a checkpoint on a feature file");
    evl->add_option("--checkpoint", ev_ckpt)->required();
    evl->add_option("--data", ev_data)->required();

    GradcheckArgs gc;
    auto* grad = app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients");
    grad->add_option("--structure", gc.structure)->capture_default_str();
    grad->add_option("--model", gc.model)->capture_default_str();
    grad->add_option("--width", gc.width)->capture_default_str();
    grad->add_option("--k", gc.k)->capture_default_str();
    grad->add_option("--dropout", gc.dropout)->capture_default_str();
    grad->add_option("--seed", gc.seed)->capture_default_str();
    grad->add_option("--tolerance", gc.tolerance)->capture_default_str();
    grad->add_flag("--corrupt-backward", gc.corrupt)->group("");

    std::string in_ckpt;
    auto* insp = app.add_subcommand("inspect", "Print a checkpoint's structure, shapes and parameter count");
    insp->add_option("checkpoint", in_ckpt)->required();

    try
    {
        app.parse(argc, argv);
    }
    catch ( const CLI::ParseError& e )
    {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : kExitUsage;
    }

    const std::size_t threads = threads_flag.value_or(threads_from_env());
    try
    {
        if ( *extract ) return cmd_extract(ex, threads);
        if ( *synth ) return cmd_synth(sy);
        if ( *import ) return cmd_import_csv(im);
        if ( *trn ) return cmd_train(tr, threads);
        if ( *evl ) return cmd_eval(ev_ckpt, ev_data, threads);
        if ( *grad ) return cmd_gradcheck(gc);
        if ( *insp ) return cmd_inspect(in_ckpt);
    }
    catch ( const DivergenceError& e )
    {
        std::cerr << "error: " << e.what() << "\n";
        return kExitDivergence;
    }
    catch ( const UsageError& e )
    {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    catch ( const ParseError& e )
    {
        std::cerr << "error: structure " << e.what() << "\n";
        return kExitUsage;
    }
    catch ( const ConfigurationError& e )
    {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    catch ( const ShapeError& e )
    {
        std::cerr << "error: " << e.what() << "\n";
        return kExitUsage;
    }
    catch ( const Error& e )
    {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    catch ( const std::filesystem::filesystem_error& e )
    {
        std::cerr << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitUsage;
}
