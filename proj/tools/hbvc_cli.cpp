// hbvc: encode, decode, evaluate and calibrate from the command line.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <iterator>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "hbvc/codec.hpp"
#include "hbvc/error.hpp"
#include "hbvc/metrics.hpp"
#include "hbvc/rate_control.hpp"
#include "hbvc/synthetic.hpp"

namespace fs = std::filesystem;
using namespace hbvc;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitIo = 3;
constexpr int kExitFormat = 4;
constexpr int kExitConfig = 5;

int exit_code(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::Io:
    case ErrorKind::TruncatedInput:
        return kExitIo;
    case ErrorKind::Format:
    case ErrorKind::BitstreamCorruption:
    case ErrorKind::UnsupportedFormat:
    case ErrorKind::InconsistentInput:
        return kExitFormat;
    default:
        return kExitConfig;
    }
}

// Invalid flag combinations found after parsing; reported like parse errors.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Geometry {
    int width = 0;
    int height = 0;
    int bit_depth = 8;
    double fps = 30.0;
};

void add_geometry(CLI::App* app, Geometry& g) {
    app->add_option("--width", g.width, "Luma width of raw input")->check(CLI::PositiveNumber);
    app->add_option("--height", g.height, "Luma height of raw input")->check(CLI::PositiveNumber);
    app->add_option("--bit-depth", g.bit_depth, "Sample bit depth")->check(CLI::IsMember({8, 10}));
    app->add_option("--fps", g.fps, "Frame rate")->check(CLI::PositiveNumber);
}

std::vector<uint8_t> read_bytes(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_bytes(const fs::path& path, const std::vector<uint8_t>& bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorKind::Io, "failed writing " + path.string());
}

std::vector<Frame> load_input(const std::string& input, const std::string& synthetic, const Geometry& g,
                              int frames) {
    if (!synthetic.empty()) {
        if (frames < 0) throw UsageError("--frames is required with --synthetic");
        return make_synthetic_clip(parse_synthetic_kind(synthetic), frames, g.width ? g.width : 128,
                                   g.height ? g.height : 128, g.bit_depth);
    }
    if (g.width <= 0 || g.height <= 0) throw UsageError("raw input needs --width and --height");
    const int available = count_frames_in_file(input, g.width, g.height, g.bit_depth);
    if (available < 1) fail(ErrorKind::TruncatedInput, input + " holds no whole frame");
    return read_yuv420(input, {g.width, g.height, g.bit_depth, g.fps, available},
                       {0, frames < 0 ? -1 : std::min(frames, available)});
}

// ------------------------------------------------------------ encode

struct EncodeArgs {
    std::string input, synthetic, output, recon, log, adapt_log, gains;
    Geometry geo;
    int frames = -1;
    int gop = 0;
    int op = 0;
    std::optional<double> lambda;
    bool lambda_free = false;
    std::optional<double> step;
    bool adapt = false;
    int adapt_budget = 4;
    bool truncate = false;
    uint64_t seed = 1;
    int threads = 1;
    double tau = 0.95;
};

int cmd_encode(const EncodeArgs& a) {
    std::vector<Frame> frames = load_input(a.input, a.synthetic, a.geo, a.frames);
    if (frames.empty()) fail(ErrorKind::InvalidInput, "input holds no frames");
    const int bd = frames.front().bit_depth;
    const int gop = a.gop > 0 ? a.gop : gop_for_fps(a.geo.fps);

    int op = a.op;
    double lambda = kStandardLambdas[op];
    if (a.lambda) {
        const int idx = standard_lambda_index(*a.lambda);
        if (idx < 0 && !a.lambda_free)
            throw UsageError("lambda must be one of 0.05, 0.015, 0.005, 0.001 unless --lambda-free is set");
        lambda = *a.lambda;
        op = idx;
    }
    CodecConfig cfg = op >= 0 ? make_config(op, bd, gop) : make_config(0, bd, gop);
    cfg.weights.lambda = lambda;
    if (op < 0) cfg.base_step = step_for_lambda(lambda, bd);
    if (a.step) cfg.base_step = *a.step;
    cfg.skip.tau = a.tau;
    cfg.threads = a.threads;
    if (!a.gains.empty()) cfg.gains = load_gain_table(a.gains);
    cfg.weights.validate();

    const SequenceInfo info{frames.front().width(), frames.front().height(), bd, a.geo.fps};
    EncodedSequence seq;
    if (a.adapt) {
        AdaptationResult r = content_adapt(frames, info, cfg, a.adapt_budget, a.truncate);
        if (!a.adapt_log.empty()) write_adaptation_csv(r, a.adapt_log);
        seq = std::move(r.stream);
    } else {
        seq = encode_sequence(frames, info, cfg, a.truncate);
    }
    write_bytes(a.output, seq.bytes);
    if (!a.recon.empty()) write_yuv420(a.recon, seq.recon);

    std::ofstream log_file;
    if (!a.log.empty()) {
        log_file.open(a.log);
        if (!log_file) fail(ErrorKind::Io, "cannot write " + a.log);
    }
    std::ostream& log = a.log.empty() ? std::cout : log_file;
    log << "t,kind,level,bits,motion_bits,psnr_y,psnr_u,psnr_v,psnr_yuv\n";
    for (const FrameStats& s : seq.stats) {
        const FrameQuality q = frame_quality(frames[s.t], seq.recon[s.t]);
        log << s.t << ',' << (s.kind == FrameKind::Intra ? 'I' : 'B') << ',' << s.level << ',' << s.total_bits << ','
            << s.motion_bits << ',' << q.y << ',' << q.u << ',' << q.v << ',' << q.weighted << '\n';
    }
    const int n = seq.header.n_frames;
    std::cerr << "encoded " << n << " frames (" << seq.schedule.intra_count() << " I), gop " << gop << ", "
              << seq.bytes.size() << " bytes, " << bitrate_kbps(seq.bytes.size(), a.geo.fps, n) << " kbps\n";
    return 0;
}

// ------------------------------------------------------------ decode

struct DecodeArgs {
    std::string input, output, levels;
    Geometry geo;
};

int cmd_decode(const DecodeArgs& a) {
    const std::vector<uint8_t> bytes = read_bytes(a.input);
    const DecodeResult r = decode_stream(bytes);
    const StreamHeader& h = r.header;
    if ((a.geo.width && a.geo.width != h.width) || (a.geo.height && a.geo.height != h.height) ||
        (a.geo.bit_depth != 8 && a.geo.bit_depth != h.bit_depth))
        std::cerr << "warning: geometry flags differ from the stream header and are ignored\n";

    std::vector<Frame> out;
    if (r.error) {
        out = r.contiguous_prefix();
    } else {
        for (const auto& f : r.frames) {
            if (!f) break;
            out.push_back(*f);
        }
        if (out.size() != r.frames.size()) {
            std::cerr << "warning: stream lacks payloads for " << r.missing().size()
                      << " frames; writing the decodable prefix\n";
        }
    }
    write_yuv420(a.output, out);
    if (!a.levels.empty()) {
        nlohmann::json j = nlohmann::json::array();
        for (size_t t = 0; t < r.levels.size(); ++t) j.push_back({{"t", t}, {"level", r.levels[t]}});
        std::ofstream lf(a.levels);
        lf << j.dump(2) << '\n';
    }
    std::cerr << "decoded " << out.size() << " of " << h.n_frames << " frames (" << h.width << "x" << h.height
              << ", " << h.bit_depth << "-bit)\n";
    if (r.error) {
        std::cerr << "error: " << r.error->message << " (last good frame " << r.error->last_good_frame << ")\n";
        return exit_code(r.error->kind);
    }
    return 0;
}

// ------------------------------------------------------------ eval / bdrate

struct EvalArgs {
    std::string orig, decoded, stream, vmaf, csv, json, frame_csv, label, sequence;
    Geometry geo;
};

int cmd_eval(const EvalArgs& a) {
    if (a.geo.width <= 0 || a.geo.height <= 0) throw UsageError("eval needs --width and --height");
    const size_t bytes = fs::file_size(a.stream);
    EvalReport r = evaluate_stream(a.orig, a.decoded, {a.geo.width, a.geo.height, a.geo.bit_depth, a.geo.fps, 0}, bytes,
                                   a.vmaf.empty() ? std::nullopt : std::optional<fs::path>(a.vmaf));
    if (!a.sequence.empty()) r.sequence = a.sequence;
    r.label = a.label;
    const std::vector<EvalReport> reports{r};
    if (!a.csv.empty()) write_report_csv(reports, a.csv);
    if (!a.json.empty()) write_report_json(reports, a.json);
    if (!a.frame_csv.empty()) write_frame_csv(r, a.frame_csv);
    std::cout << report_to_json(reports).dump(2) << '\n';
    return 0;
}

struct BdArgs {
    std::string anchor, test, method = "pchip";
    int precision = 1;
};

int cmd_bdrate(const BdArgs& a) {
    const RdCurve anchor = read_curve_csv(a.anchor);
    const RdCurve test = read_curve_csv(a.test);
    std::vector<std::string> warnings;
    const double v = bd_rate(anchor, test, a.method == "cubic" ? BdInterpolation::Cubic : BdInterpolation::Pchip,
                             &warnings);
    for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
    const double half_ulp = 0.5 * std::pow(10.0, -a.precision);
    std::printf("%.*f\n", a.precision, std::abs(v) < half_ulp ? 0.0 : v);
    return 0;
}

// ------------------------------------------------------------ calibrate

struct CalibrateArgs {
    std::vector<std::string> inputs;
    std::vector<std::string> synthetic;
    std::string output, log;
    Geometry geo;
    int frames = -1;
    int gop = 8;
    int op = 1;
    int budget = 1;
    int paths = 8;
    uint64_t seed = 1;
};

int cmd_calibrate(const CalibrateArgs& a) {
    std::vector<std::vector<Frame>> clips;
    for (const auto& s : a.synthetic) {
        Geometry g = a.geo;
        if (!g.width) g.width = g.height = 64;
        clips.push_back(load_input({}, s, g, a.frames < 0 ? a.gop + 1 : a.frames));
    }
    for (const auto& in : a.inputs) clips.push_back(load_input(in, {}, a.geo, a.frames));
    if (clips.empty()) fail(ErrorKind::InsufficientData, "calibrate needs --input or --synthetic clips");
    const int bd = clips.front().front().bit_depth;
    const CodecConfig cfg = make_config(a.op, bd, a.gop);
    CalibrationOptions o;
    o.budget = a.budget;
    o.seed = a.seed;
    o.paths_per_clip = a.paths;
    const CalibrationResult r = calibrate_gains(clips, cfg, o);
    save_gain_table(r.table, a.output);
    if (!a.log.empty()) {
        std::ofstream log(a.log);
        if (!log) fail(ErrorKind::Io, "cannot write " + a.log);
        log.precision(12);
        log << "step,pass,stream,level,multiplier,q_enc,objective\n";
        log << "0,-1,,,,," << r.initial_objective << '\n';
        int i = 1;
        for (const CalibrationStep& s : r.accepted)
            log << i++ << ',' << s.pass << ',' << (s.stream == LatentStream::Motion ? "motion" : "rc") << ','
                << s.level << ',' << s.multiplier << ',' << s.q_enc << ',' << s.objective << '\n';
    }
    std::cerr << "objective " << r.initial_objective << " -> " << r.final_objective << " after " << r.evaluations
              << " evaluations, " << r.accepted.size() << " accepted steps\n";
    // Trend of q_enc over levels, for inspection only.
    for (LatentStream stream : {LatentStream::Motion, LatentStream::Rc}) {
        const auto& levels = r.table.levels(stream);
        int up = 0, down = 0;
        double prev = 0.0;
        std::cerr << (stream == LatentStream::Motion ? "motion" : "rc") << " q_enc by level:";
        for (const auto& [level, g] : levels) {
            if (level > levels.begin()->first) {
                up += g.q_enc > prev;
                down += g.q_enc < prev;
            }
            prev = g.q_enc;
            std::cerr << ' ' << g.q_enc;
        }
        std::cerr << (up && !down ? " (increasing)" : down && !up ? " (decreasing)" : up || down ? " (mixed)" : " (flat)")
                  << '\n';
    }
    return 0;
}

// ------------------------------------------------------------ schedule

struct ScheduleArgs {
    int frames = 0;
    int gop = 0;
    double fps = 30.0;
    bool truncate = false;
};

int cmd_schedule(const ScheduleArgs& a) {
    const GopSchedule s = build_schedule(a.frames, a.gop > 0 ? a.gop : gop_for_fps(a.fps), a.truncate);
    std::cout << schedule_to_json(s).dump(2) << '\n';
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Hierarchical B-frame video codec"};
    app.require_subcommand(1);

    EncodeArgs enc;
    auto* e = app.add_subcommand("encode", "Encode raw YUV 4:2:0 into a stream");
    auto* e_in = e->add_option("-i,--input", enc.input, "Raw YUV input");
    auto* e_syn = e->add_option("--synthetic", enc.synthetic, "Generated clip instead of a file (static, pan, noise)");
    e_in->excludes(e_syn);
    e->add_option("-o,--output", enc.output, "Output stream")->required();
    add_geometry(e, enc.geo);
    e->add_option("--frames", enc.frames, "Frames to read (default: all)");
    e->add_option("--gop", enc.gop, "GoP size, a power of two (default: from fps)");
    e->add_option("--op", enc.op, "Operating point 0..3")->check(CLI::Range(0, 3));
    e->add_option("--lambda", enc.lambda, "Rate-distortion lambda");
    e->add_flag("--lambda-free", enc.lambda_free, "Allow lambdas outside the standard set");
    e->add_option("--step", enc.step, "Override the base quantization step");
    e->add_option("--tau", enc.tau, "Skip threshold in [0.5, 1]");
    e->add_option("--gains", enc.gains, "Gain table (.json or .bin)");
    e->add_flag("--adapt", enc.adapt, "Per-frame content adaptation");
    e->add_option("--adapt-budget", enc.adapt_budget, "Trial encodes per frame")->check(CLI::NonNegativeNumber);
    e->add_option("--adapt-log", enc.adapt_log, "Adaptation CSV log");
    e->add_flag("--truncate", enc.truncate, "Drop frames past the last whole GoP");
    e->add_option("--seed", enc.seed, "Seed (encoding is deterministic; kept for reproducible pipelines)");
    e->add_option("--threads", enc.threads, "Worker threads")->check(CLI::PositiveNumber);
    e->add_option("--recon", enc.recon, "Write the encoder reconstruction");
    e->add_option("--log", enc.log, "Per-frame CSV log (default: stdout)");

    DecodeArgs dec;
    auto* d = app.add_subcommand("decode", "Decode a stream to raw YUV");
    d->add_option("-i,--input", dec.input, "Input stream")->required();
    d->add_option("-o,--output", dec.output, "Output YUV")->required();
    d->add_option("--levels", dec.levels, "Write per-frame payload levels as JSON");
    add_geometry(d, dec.geo);

    EvalArgs ev;
    auto* v = app.add_subcommand("eval", "PSNR and bitrate of a decoded sequence");
    v->add_option("--orig", ev.orig, "Original YUV")->required();
    v->add_option("--decoded", ev.decoded, "Decoded YUV")->required();
    v->add_option("--stream", ev.stream, "Stream file (for the bitrate)")->required();
    v->add_option("--vmaf", ev.vmaf, "Optional VMAF CSV (frame,vmaf)");
    v->add_option("--csv", ev.csv, "Summary CSV");
    v->add_option("--json", ev.json, "Summary JSON");
    v->add_option("--frame-csv", ev.frame_csv, "Per-frame CSV");
    v->add_option("--label", ev.label, "Operating point label");
    v->add_option("--sequence", ev.sequence, "Sequence name");
    add_geometry(v, ev.geo);

    BdArgs bd;
    auto* b = app.add_subcommand("bdrate", "BD-rate of a test curve against an anchor");
    b->add_option("--anchor", bd.anchor, "Anchor curve CSV")->required();
    b->add_option("--test", bd.test, "Test curve CSV")->required();
    b->add_option("--method", bd.method, "Interpolation")->check(CLI::IsMember({"pchip", "cubic"}));
    b->add_option("--precision", bd.precision, "Decimals printed")->check(CLI::Range(0, 12));

    CalibrateArgs cal;
    auto* c = app.add_subcommand("calibrate", "Fit per-level gains by random-path coordinate descent");
    c->add_option("-i,--input", cal.inputs, "Raw YUV training clip (repeatable)");
    c->add_option("--synthetic", cal.synthetic, "Generated training clip (repeatable)");
    c->add_option("-o,--output", cal.output, "Output stem; writes .json and .bin")->required();
    c->add_option("--log", cal.log, "Accepted-step CSV log");
    add_geometry(c, cal.geo);
    c->add_option("--frames", cal.frames, "Frames per clip");
    c->add_option("--gop", cal.gop, "GoP size");
    c->add_option("--op", cal.op, "Operating point 0..3")->check(CLI::Range(0, 3));
    c->add_option("--budget", cal.budget, "Coordinate-descent passes")->check(CLI::NonNegativeNumber);
    c->add_option("--paths", cal.paths, "Random paths per clip")->check(CLI::PositiveNumber);
    c->add_option("--seed", cal.seed, "Path sampling seed");

    ScheduleArgs sch;
    auto* s = app.add_subcommand("schedule", "Print the coding schedule as JSON");
    s->add_option("--frames", sch.frames, "Frame count")->required();
    s->add_option("--gop", sch.gop, "GoP size (default: from fps)");
    s->add_option("--fps", sch.fps, "Frame rate for the automatic GoP");
    s->add_flag("--truncate", sch.truncate, "Drop the incomplete tail");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& ex) {
        return app.exit(ex);
    } catch (const CLI::CallForAllHelp& ex) {
        return app.exit(ex);
    } catch (const CLI::ParseError& ex) {
        app.exit(ex);
        return kExitUsage;
    }

    try {
        if (*e) {
            if (enc.input.empty() && enc.synthetic.empty()) {
                std::cerr << "encode: one of --input or --synthetic is required\n";
                return kExitUsage;
            }
            return cmd_encode(enc);
        }
        if (*d) return cmd_decode(dec);
        if (*v) return cmd_eval(ev);
        if (*b) return cmd_bdrate(bd);
        if (*c) return cmd_calibrate(cal);
        if (*s) return cmd_schedule(sch);
    } catch (const UsageError& ex) {
        std::cerr << "usage: " << ex.what() << '\n';
        return kExitUsage;
    } catch (const Error& ex) {
        std::cerr << "error [" << to_string(ex.kind()) << "]: " << ex.what() << '\n';
        return exit_code(ex.kind());
    } catch (const fs::filesystem_error& ex) {
        std::cerr << "error [io]: " << ex.what() << '\n';
        return kExitIo;
    } catch (const std::exception& ex) {
        std::cerr << "error: " << ex.what() << '\n';
        return 1;
    }
    return kExitUsage;
}
