#include "hbvc/rate_control.hpp"

#include <cmath>
#include <fstream>
#include <iterator>
#include <map>
#include <random>

#include <nlohmann/json.hpp>

#include "hbvc/error.hpp"

namespace hbvc {

FrameLoss frame_loss(const FrameStats& stats, const LossWeights& w, int bit_depth) {
    const double scale = static_cast<double>(1 << (bit_depth - 8));
    PlaneMse m = stats.mse;
    m.y /= scale * scale;
    m.u /= scale * scale;
    m.v /= scale * scale;
    FrameLoss out;
    out.t = stats.t;
    out.level = stats.level;
    out.rate_motion = stats.rate_motion_bpp();
    out.rate_residual = stats.rate_residual_bpp();
    out.distortion = weighted_distortion(m, w.c_uv, w.level_coefficient(stats.level));
    return out;
}

double PathLossReport::bframe_term() const {
    double sum = 0.0;
    for (const PathUnitLoss& u : units)
        sum += u.weight * (u.frame.rate_motion + u.frame.rate_residual + lambda * u.frame.distortion);
    return sum;
}

double PathLossReport::recompute() const { return i_rate + lambda * i_dist + bframe_term(); }

PathLossReport path_loss(std::span<const FrameLoss> i_frames, std::span<const FrameLoss> path_units,
                         const LossWeights& w) {
    PathLossReport r;
    r.lambda = w.rd_multiplier(8);
    for (const FrameLoss& f : i_frames) {
        r.i_rate += f.rate();
        r.i_dist += f.distortion;
    }
    for (const FrameLoss& f : path_units) r.units.push_back({f, std::ldexp(1.0, f.level)});
    r.total = r.recompute();
    return r;
}

namespace {

Frame padded_frame(const Frame& f, int t) {
    Frame out = pad_to_block_grid(f, kMacroblock).frame;
    out.frame_index = t;
    return out;
}

void require_gop_frames(std::span<const Frame> clip, int gop_size, int gop_index) {
    if (static_cast<int>(clip.size()) < (gop_index + 1) * gop_size + 1)
        fail(ErrorKind::InsufficientData, "clip of " + std::to_string(clip.size()) +
                                              " frames does not cover GoP " + std::to_string(gop_index) +
                                              " of size " + std::to_string(gop_size));
}

struct IntraPair {
    CodedFrame first;
    CodedFrame last;
};

IntraPair encode_bounds(std::span<const Frame> clip, int gop_index, const CodecConfig& cfg) {
    const int g0 = gop_index * cfg.gop_size, g1 = g0 + cfg.gop_size;
    return {encode_intra(padded_frame(clip[g0], g0), g0, cfg),
            encode_intra(padded_frame(clip[g1], g1), g1, cfg)};
}

// B-frames already coded for one GoP, keyed by offset; paths share ancestors.
using BCache = std::map<int, CodedFrame>;

const CodedFrame& encode_path_unit(std::span<const Frame> clip, int gop_index, const CodingUnit& rel,
                                   const IntraPair& bounds, const CodecConfig& cfg, BCache& cache) {
    if (auto it = cache.find(rel.t); it != cache.end()) return it->second;
    const int g0 = gop_index * cfg.gop_size;
    auto ref = [&](int offset) -> const Frame& {
        if (offset == 0) return bounds.first.recon;
        if (offset == cfg.gop_size) return bounds.last.recon;
        auto it = cache.find(offset);
        if (it == cache.end())
            fail(ErrorKind::ScheduleViolation, "path unit " + std::to_string(rel.t) + " precedes its reference");
        return it->second.recon;
    };
    CodingUnit unit = rel;
    unit.t = g0 + rel.t;
    unit.p = g0 + rel.p;
    unit.f = g0 + rel.f;
    CodedFrame coded = encode_bframe(unit, padded_frame(clip[unit.t], unit.t), ref(rel.p), ref(rel.f), cfg);
    return cache.emplace(rel.t, std::move(coded)).first->second;
}

PathEncoding path_losses(std::span<const Frame> clip, int gop_index, const RandomPath& path,
                         const IntraPair& bounds, const CodecConfig& cfg, BCache& cache) {
    const int bd = clip.front().bit_depth;
    PathEncoding out;
    out.i_frames = {frame_loss(bounds.first.stats, cfg.weights, bd), frame_loss(bounds.last.stats, cfg.weights, bd)};
    for (const CodingUnit& u : path.units)
        out.units.push_back(frame_loss(encode_path_unit(clip, gop_index, u, bounds, cfg, cache).stats, cfg.weights, bd));
    return out;
}

double path_total(const PathEncoding& e, const LossWeights& w) { return path_loss(e.i_frames, e.units, w).total; }

} // namespace

PathEncoding encode_path(std::span<const Frame> clip, int gop_index, const RandomPath& path,
                         const CodecConfig& cfg) {
    require_gop_frames(clip, cfg.gop_size, gop_index);
    const IntraPair bounds = encode_bounds(clip, gop_index, cfg);
    BCache cache;
    return path_losses(clip, gop_index, path, bounds, cfg, cache);
}

double expected_path_loss_exact(std::span<const Frame> clip, const CodecConfig& cfg) {
    require_gop_frames(clip, cfg.gop_size, 0);
    const std::vector<RandomPath> leaves = enumerate_leaves(cfg.gop_size);
    const IntraPair bounds = encode_bounds(clip, 0, cfg);
    double i_term = 0.0, bsum = 0.0;
    for (const RandomPath& path : leaves) {
        // Every path is coded from scratch, as calibration would see it.
        BCache cache;
        const PathEncoding e = path_losses(clip, 0, path, bounds, cfg, cache);
        const PathLossReport r = path_loss(e.i_frames, e.units, cfg.weights);
        i_term = r.i_rate + r.lambda * r.i_dist;
        bsum += r.bframe_term();
    }
    return i_term + bsum / static_cast<double>(leaves.size());
}

GopLoss first_gop_loss(std::span<const Frame> clip, const CodecConfig& cfg) {
    require_gop_frames(clip, cfg.gop_size, 0);
    const int n = cfg.gop_size + 1;
    const Frame& f0 = clip.front();
    const EncodedSequence seq = encode_sequence(clip.first(n), {f0.width(), f0.height(), f0.bit_depth, 30.0}, cfg);
    GopLoss out;
    const double lambda = cfg.weights.rd_multiplier(8);
    for (const FrameStats& s : seq.stats) {
        const FrameLoss l = frame_loss(s, cfg.weights, f0.bit_depth);
        if (s.kind == FrameKind::Intra) {
            out.i_frames.push_back(l);
            out.i_term += l.rate() + lambda * l.distortion;
        } else {
            out.bframes.push_back(l);
            out.bframe_sum += l.rate() + lambda * l.distortion;
        }
    }
    return out;
}

// ------------------------------------------------------------ calibration

std::vector<std::vector<PathSample>> sample_paths(std::span<const std::vector<Frame>> clips,
                                                  int gop_size, int paths_per_clip, uint64_t seed) {
    if (paths_per_clip < 1) fail(ErrorKind::InvalidArgument, "need at least one path per clip");
    std::mt19937_64 rng(seed);
    std::vector<std::vector<PathSample>> out;
    for (const auto& clip : clips) {
        const int gops = clip.empty() ? 0 : (static_cast<int>(clip.size()) - 1) / gop_size;
        if (gops < 1) fail(ErrorKind::InsufficientData, "calibration clip is shorter than one GoP");
        std::vector<PathSample> samples;
        for (int k = 0; k < paths_per_clip; ++k) {
            const int g = static_cast<int>(rng() % static_cast<uint64_t>(gops));
            samples.push_back({g, sample_random_path(gop_size, rng())});
        }
        out.push_back(std::move(samples));
    }
    return out;
}

namespace {

using IntraCache = std::vector<std::map<int, IntraPair>>;

double objective_with(std::span<const std::vector<Frame>> clips,
                      std::span<const std::vector<PathSample>> samples, const CodecConfig& cfg,
                      IntraCache& intra) {
    double sum = 0.0;
    size_t count = 0;
    for (size_t c = 0; c < clips.size(); ++c) {
        std::map<int, BCache> caches;
        for (const PathSample& s : samples[c]) {
            auto it = intra[c].find(s.gop_index);
            if (it == intra[c].end())
                it = intra[c].emplace(s.gop_index, encode_bounds(clips[c], s.gop_index, cfg)).first;
            const PathEncoding e = path_losses(clips[c], s.gop_index, s.path, it->second, cfg, caches[s.gop_index]);
            sum += path_total(e, cfg.weights);
            ++count;
        }
    }
    return count ? sum / static_cast<double>(count) : 0.0;
}

} // namespace

double calibration_objective(std::span<const std::vector<Frame>> clips,
                             std::span<const std::vector<PathSample>> samples, const CodecConfig& cfg) {
    if (clips.size() != samples.size()) fail(ErrorKind::InvalidArgument, "one sample list per clip");
    IntraCache intra(clips.size());
    return objective_with(clips, samples, cfg, intra);
}

CalibrationResult calibrate_gains(std::span<const std::vector<Frame>> clips, const CodecConfig& cfg,
                                  const CalibrationOptions& options) {
    if (clips.empty()) fail(ErrorKind::InsufficientData, "calibration needs at least one clip");
    if (options.budget < 0) fail(ErrorKind::InvalidArgument, "budget must be nonnegative");
    for (const auto& clip : clips) {
        if (static_cast<int>(clip.size()) < cfg.gop_size + 1)
            fail(ErrorKind::InsufficientData, "calibration clip is shorter than gop_size + 1 frames");
    }
    const int levels = log2_exact(cfg.gop_size);
    const auto samples = sample_paths(clips, cfg.gop_size, options.paths_per_clip, options.seed);
    // I-frames do not depend on the gains and are coded once.
    IntraCache intra(clips.size());

    CodecConfig current = cfg;
    for (int level = 1; level <= levels; ++level)
        for (LatentStream s : {LatentStream::Motion, LatentStream::Rc})
            current.gains.set(s, level, current.gains.resolve(s, level));

    CalibrationResult result;
    result.initial_objective = objective_with(clips, samples, current, intra);
    result.evaluations = 1;
    double best = result.initial_objective;

    for (int pass = 0; pass < options.budget; ++pass) {
        bool improved = false;
        for (int level = 1; level <= levels; ++level) {
            for (LatentStream stream : {LatentStream::Motion, LatentStream::Rc}) {
                const LevelGain base = current.gains.resolve(stream, level);
                for (double m : options.multipliers) {
                    const double q = snap_fixed16(base.q_enc * m);
                    if (q <= 0.0 || q == base.q_enc) continue;
                    CodecConfig trial = current;
                    trial.gains.set(stream, level, {q, 1.0 / q});
                    const double obj = objective_with(clips, samples, trial, intra);
                    ++result.evaluations;
                    if (obj < best) {
                        best = obj;
                        current = std::move(trial);
                        result.accepted.push_back({pass, stream, level, m, q, obj});
                        improved = true;
                        break;
                    }
                }
            }
        }
        if (!improved) break;
    }
    result.table = current.gains;
    result.final_objective = best;
    return result;
}

void save_gain_table(const GainTable& table, const std::filesystem::path& stem) {
    std::filesystem::path json_path = stem, bin_path = stem;
    json_path += ".json";
    bin_path += ".bin";
    std::ofstream js(json_path);
    if (!js) fail(ErrorKind::Io, "cannot write " + json_path.string());
    js << table.to_json().dump(2) << '\n';
    const auto bytes = table.serialize();
    std::ofstream bin(bin_path, std::ios::binary);
    if (!bin) fail(ErrorKind::Io, "cannot write " + bin_path.string());
    bin.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!js || !bin) fail(ErrorKind::Io, "failed writing gain table " + stem.string());
}

GainTable load_gain_table(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open gain table " + path.string());
    if (path.extension() == ".json") {
        nlohmann::json j;
        try {
            in >> j;
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorKind::Format, "gain table JSON: " + std::string(e.what()));
        }
        return GainTable::from_json(j);
    }
    const std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    size_t offset = 0;
    GainTable t = GainTable::deserialize(bytes, offset);
    if (offset != bytes.size()) fail(ErrorKind::Format, "gain table file has trailing bytes");
    return t;
}

// ------------------------------------------------------------ adaptation

double frame_cost(const FrameStats& stats, const LossWeights& w, int bit_depth) {
    const FrameLoss l = frame_loss(stats, w, bit_depth);
    return l.rate() + w.rd_multiplier(8) * l.distortion;
}

double sequence_cost(const EncodedSequence& seq, const LossWeights& w) {
    double sum = 0.0;
    for (const FrameStats& s : seq.stats) sum += frame_cost(s, w, seq.header.bit_depth);
    return sum;
}

namespace {

// One searchable dimension: a setter and its non-identity values.
struct Dimension {
    void (*apply)(FrameOverrides&, double);
    std::vector<double> values;
};

std::vector<Dimension> dimensions_for(const CodingUnit& u) {
    if (u.kind == FrameKind::Intra)
        return {{[](FrameOverrides& o, double v) { o.step_mult = v; }, {0.8, 1.25}}};
    std::vector<Dimension> dims;
    dims.push_back({[](FrameOverrides& o, double v) { o.lambda_mult = v; }, {0.75, 1.33}});
    dims.push_back({[](FrameOverrides& o, double v) { o.motion_gain_mult = v; }, {0.8, 1.25}});
    if (u.t % 2 == 1) dims.push_back({[](FrameOverrides& o, double v) { o.rc_gain_mult = v; }, {0.8, 1.25}});
    dims.push_back({[](FrameOverrides& o, double v) { o.search_range_delta = static_cast<int>(v); }, {8.0}});
    return dims;
}

} // namespace

AdaptationResult content_adapt(std::span<const Frame> frames, const SequenceInfo& info,
                               const CodecConfig& cfg, int budget, bool truncate) {
    if (budget < 0) fail(ErrorKind::InvalidArgument, "adaptation budget must be nonnegative");
    AdaptationResult result;
    const GopSchedule schedule = build_schedule(static_cast<int>(frames.size()), cfg.gop_size, truncate);
    const int n = schedule.frame_count();
    result.overrides.assign(n, FrameOverrides{});

    if (budget > 0) {
        std::vector<Frame> padded;
        for (int t = 0; t < n; ++t) padded.push_back(padded_frame(frames[t], t));
        std::vector<std::optional<Frame>> recon(n);
        for (const CodingUnit& u : schedule.units) {
            auto encode = [&](const FrameOverrides& ov) {
                return encode_unit(u, padded[u.t], u.kind == FrameKind::Bidir ? &*recon[u.p] : nullptr,
                                   u.kind == FrameKind::Bidir ? &*recon[u.f] : nullptr, cfg, ov);
            };
            FrameAdaptation fa;
            fa.t = u.t;
            fa.kind = u.kind;
            fa.level = u.level;
            CodedFrame best = encode({});
            fa.cost_before = frame_cost(best.stats, cfg.weights, info.bit_depth);
            double best_cost = fa.cost_before;
            FrameOverrides chosen;
            for (const Dimension& dim : dimensions_for(u)) {
                for (double v : dim.values) {
                    if (fa.trials >= budget) break;
                    FrameOverrides trial = chosen;
                    dim.apply(trial, v);
                    ++fa.trials;
                    CodedFrame coded = encode(trial);
                    const double cost = frame_cost(coded.stats, cfg.weights, info.bit_depth);
                    if (cost < best_cost) {
                        best_cost = cost;
                        chosen = trial;
                        best = std::move(coded);
                        break;
                    }
                }
            }
            fa.chosen = chosen;
            fa.cost_after = best_cost;
            result.overrides[u.t] = chosen;
            recon[u.t] = std::move(best.recon);
            result.frames.push_back(fa);
        }
    }

    result.stream = encode_sequence(frames, info, cfg, truncate, result.overrides);
    if (budget == 0) {
        for (const FrameStats& s : result.stream.stats) {
            FrameAdaptation fa;
            fa.t = s.t;
            fa.kind = s.kind;
            fa.level = s.level;
            fa.cost_before = fa.cost_after = frame_cost(s, cfg.weights, info.bit_depth);
            result.frames.push_back(fa);
        }
    } else {
        // The final stream must reproduce the searched encodes.
        for (size_t i = 0; i < result.frames.size(); ++i) {
            const double c = frame_cost(result.stream.stats[i], cfg.weights, info.bit_depth);
            if (c != result.frames[i].cost_after)
                fail(ErrorKind::InvalidArgument, "internal: adapted stream diverged from the search");
        }
    }
    return result;
}

void write_adaptation_csv(const AdaptationResult& result, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
    out << "frame,kind,level,lambda_mult,motion_gain_mult,rc_gain_mult,step_mult,search_range_delta,"
           "cost_before,cost_after,trials\n";
    out.precision(10);
    for (const FrameAdaptation& f : result.frames) {
        const FrameOverrides& o = f.chosen;
        out << f.t << ',' << (f.kind == FrameKind::Intra ? 'I' : 'B') << ',' << f.level << ',' << o.lambda_mult
            << ',' << o.motion_gain_mult << ',' << o.rc_gain_mult << ',' << o.step_mult << ','
            << o.search_range_delta << ',' << f.cost_before << ',' << f.cost_after << ',' << f.trials << '\n';
    }
    if (!out) fail(ErrorKind::Io, "failed writing " + path.string());
}

} // namespace hbvc
