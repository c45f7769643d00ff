#include "hbvc/codec.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <map>
#include <mutex>
#include <thread>

#include "hbvc/error.hpp"

namespace hbvc {

namespace {

constexpr uint8_t kPriorScaleIndex = 28; // scale ~1.0, used before a frame's own fit
constexpr double kScaleMin = 0.04;
constexpr double kScaleMax = 64.0;

void put_u16(std::vector<uint8_t>& out, uint16_t v) {
    out.push_back(static_cast<uint8_t>(v & 0xFF));
    out.push_back(static_cast<uint8_t>(v >> 8));
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

class Reader {
public:
    Reader(std::span<const uint8_t> bytes, size_t offset, ErrorKind kind)
        : bytes_(bytes), pos_(offset), kind_(kind) {}

    uint8_t u8() {
        need(1);
        return bytes_[pos_++];
    }
    uint16_t u16() {
        need(2);
        const auto v = static_cast<uint16_t>(bytes_[pos_] | (bytes_[pos_ + 1] << 8));
        pos_ += 2;
        return v;
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::vector<uint8_t> bytes(size_t n) {
        need(n);
        std::vector<uint8_t> out(bytes_.begin() + static_cast<ptrdiff_t>(pos_),
                                 bytes_.begin() + static_cast<ptrdiff_t>(pos_ + n));
        pos_ += n;
        return out;
    }
    size_t pos() const { return pos_; }
    size_t remaining() const { return bytes_.size() - pos_; }

private:
    void need(size_t n) const {
        if (pos_ + n > bytes_.size()) fail(kind_, "unexpected end of data");
    }

    std::span<const uint8_t> bytes_;
    size_t pos_;
    ErrorKind kind_;
};

int mid_gray(int bit_depth) { return 1 << (bit_depth - 1); }

void require_macroblock_grid(const Frame& frame) {
    if (frame.width() % kMacroblock != 0 || frame.height() % kMacroblock != 0)
        fail(ErrorKind::InvalidInput, "frame must be padded to the 16-sample macroblock grid");
}

// Block b of a macroblock: 0..3 luma 8x8 quadrants, 4 = U, 5 = V.
int32_t* block_ptr(MacroblockSamples& mb, int b, int i) {
    if (b < 4) return &mb.y[((b / 2) * 8 + i / 8) * 16 + (b % 2) * 8 + i % 8];
    return b == 4 ? &mb.u[i] : &mb.v[i];
}

int32_t block_at(const MacroblockSamples& mb, int b, int i) {
    return *block_ptr(const_cast<MacroblockSamples&>(mb), b, i);
}

uint16_t residual_band(int block, int coeff) {
    return static_cast<uint16_t>(coefficient_band(coeff) + (block >= 4 ? kBandsPerPlaneType : 0));
}

int blend_sample(int candidate, int p, int f, int bit_depth) {
    if (candidate == kIntraLikeCandidate) return mid_gray(bit_depth);
    const auto& c = kConfidenceCandidates[candidate];
    return (c.past * p + c.future * f + 2) >> 2;
}

double weighted_sse(const MacroblockSamples& a, const MacroblockSamples& b, double c_uv, double c_t) {
    auto sse = [](const auto& x, const auto& y) {
        double s = 0;
        for (size_t i = 0; i < x.size(); ++i) {
            const double d = x[i] - y[i];
            s += d * d;
        }
        return s;
    };
    // Per-pixel D of the weighted MSE times the luma pixel count: chroma
    // planes hold a quarter of the samples.
    return (0.8 * sse(a.y, b.y) + 0.4 * c_uv * (sse(a.u, b.u) + sse(a.v, b.v))) * c_t;
}

std::vector<SymbolModel> models_from_indices(std::span<const uint8_t> indices) {
    const auto& all = scale_models();
    std::vector<SymbolModel> out;
    out.reserve(indices.size());
    for (uint8_t idx : indices) {
        if (idx >= kScaleCount) fail(ErrorKind::BitstreamCorruption, "scale index out of range");
        out.push_back(all[idx]);
    }
    return out;
}

SymbolModel confidence_model(const std::array<uint8_t, 6>& counts) {
    std::array<uint32_t, 6> c{};
    for (int i = 0; i < 6; ++i) c[i] = std::max<uint32_t>(1, counts[i]);
    return SymbolModel::categorical(FrequencyTable::from_counts(c));
}

std::array<uint8_t, 6> quantize_counts(const std::array<size_t, 6>& counts) {
    const size_t peak = std::max<size_t>(1, *std::max_element(counts.begin(), counts.end()));
    std::array<uint8_t, 6> out{};
    for (int i = 0; i < 6; ++i)
        out[i] = static_cast<uint8_t>(std::clamp<size_t>((255 * counts[i] + peak / 2) / peak, 1, 255));
    return out;
}

// Per-band split of a symbol stream, for scale fitting.
template <size_t Bands>
std::array<uint8_t, Bands> fit_bands(const SymbolStream& stream, const SkipPolicy& policy) {
    std::array<std::vector<int32_t>, Bands> per_band;
    for (size_t i = 0; i < stream.size(); ++i) per_band[stream.bands[i]].push_back(stream.values[i]);
    std::array<uint8_t, Bands> out{};
    for (size_t b = 0; b < Bands; ++b) out[b] = fit_scale_index(per_band[b], &policy);
    return out;
}

double snap_tau(double tau) {
    if (!(tau >= 0.5 && tau <= 1.0)) fail(ErrorKind::InvalidArgument, "tau must lie in [0.5, 1]");
    return snap_fixed16(tau);
}

PlaneMse frame_mse(const Frame& a, const Frame& b) { return plane_mse(a, b); }

void fill_stats(FrameStats& s, const FramePayload& p, const Frame& source, const Frame& recon) {
    s.t = p.t;
    s.kind = p.kind;
    s.level = p.level;
    s.motion_bits = 8 * p.motion.size();
    s.confidence_bits = 8 * p.confidence.size();
    s.residual_bits = 8 * p.residual.size();
    s.header_bits = 8 * p.header_size();
    s.total_bits = 8 * p.size();
    s.mse = frame_mse(source, recon);
    s.pixels = source.width() * source.height();
}

template <typename Fn>
void parallel_for(size_t n, int threads, Fn&& fn) {
    const size_t workers = std::min<size_t>(n, static_cast<size_t>(std::max(1, threads)));
    if (workers <= 1) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (size_t w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

} // namespace

// ------------------------------------------------------------ configuration

OperatingPoint standard_operating_point(int index, int bit_depth) {
    if (index < 0 || index >= static_cast<int>(kStandardLambdas.size()))
        fail(ErrorKind::InvalidArgument, "operating point must be 0..3");
    return {kStandardLambdas[index], kStandardSteps[index] * (1 << (bit_depth - 8))};
}

double step_for_lambda(double lambda, int bit_depth) {
    if (!(lambda > 0.0)) fail(ErrorKind::InvalidArgument, "lambda must be positive");
    const double lambda_scale = LossWeights{}.lambda_scale;
    const double step = std::sqrt(6.0 / (std::log(2.0) * lambda * lambda_scale));
    return std::max(0.25, std::round(step * 4.0) / 4.0) * (1 << (bit_depth - 8));
}

int standard_lambda_index(double lambda) {
    for (size_t i = 0; i < kStandardLambdas.size(); ++i)
        if (std::abs(lambda - kStandardLambdas[i]) <= 1e-12 * kStandardLambdas[i]) return static_cast<int>(i);
    return -1;
}

CodecConfig make_config(int op_index, int bit_depth, int gop_size) {
    const OperatingPoint op = standard_operating_point(op_index, bit_depth);
    CodecConfig cfg;
    cfg.gop_size = gop_size;
    cfg.base_step = op.base_step;
    cfg.weights.lambda = op.lambda;
    cfg.gains = GainTable::identity(std::max(1, log2_exact(gop_size)));
    return cfg;
}

// ------------------------------------------------------------ models

double scale_for_index(int index) {
    if (index <= 0) return 0.0;
    const double t = static_cast<double>(index - 1) / (kScaleCount - 2);
    return kScaleMin * std::pow(kScaleMax / kScaleMin, t);
}

const std::vector<SymbolModel>& scale_models() {
    static const std::vector<SymbolModel> models = [] {
        std::vector<SymbolModel> m;
        m.reserve(kScaleCount);
        m.push_back(SymbolModel::degenerate(0));
        for (int i = 1; i < kScaleCount; ++i)
            m.push_back(SymbolModel::laplacian(scale_for_index(i), kMaxMagnitude));
        return m;
    }();
    return models;
}

uint8_t fit_scale_index(std::span<const int32_t> values, const SkipPolicy* policy) {
    std::map<int32_t, size_t> hist;
    for (int32_t v : values) ++hist[v];
    if (hist.empty() || (hist.size() == 1 && hist.begin()->first == 0)) return 0;
    const auto& models = scale_models();
    uint8_t best = 1;
    double best_bits = std::numeric_limits<double>::infinity();
    for (int i = 1; i < kScaleCount; ++i) {
        if (policy && policy->skips(models[i]) &&
            !(hist.size() == 1 && hist.begin()->first == models[i].mode()))
            continue;
        double bits = 0;
        for (const auto& [v, n] : hist) bits += static_cast<double>(n) * models[i].cost_bits(v);
        if (bits < best_bits) {
            best_bits = bits;
            best = static_cast<uint8_t>(i);
        }
    }
    return best;
}

// ------------------------------------------------------------ macroblocks

MacroblockSamples load_macroblock(const Frame& frame, int col, int row) {
    MacroblockSamples mb;
    const int x0 = col * kMacroblock, y0 = row * kMacroblock;
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) mb.y[y * 16 + x] = frame.y.at(x0 + x, y0 + y);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
            mb.u[y * 8 + x] = frame.u.at(x0 / 2 + x, y0 / 2 + y);
            mb.v[y * 8 + x] = frame.v.at(x0 / 2 + x, y0 / 2 + y);
        }
    return mb;
}

void store_macroblock(Frame& frame, int col, int row, const MacroblockSamples& mb) {
    const int x0 = col * kMacroblock, y0 = row * kMacroblock;
    for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) frame.y.at(x0 + x, y0 + y) = static_cast<uint16_t>(mb.y[y * 16 + x]);
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
            frame.u.at(x0 / 2 + x, y0 / 2 + y) = static_cast<uint16_t>(mb.u[y * 8 + x]);
            frame.v.at(x0 / 2 + x, y0 / 2 + y) = static_cast<uint16_t>(mb.v[y * 8 + x]);
        }
}

MacroblockSamples reconstruct_macroblock(int candidate, const MacroblockSamples& pred_p,
                                         const MacroblockSamples& pred_f,
                                         std::span<const int32_t> symbols, double q_dec,
                                         double base_step, int bit_depth) {
    const int max_sample = (1 << bit_depth) - 1;
    MacroblockSamples out;
    for (int b = 0; b < 6; ++b) {
        Block8 coeffs{};
        bool any = false;
        for (int i = 0; i < 64; ++i) {
            const int32_t s = symbols[b * 64 + i];
            coeffs[i] = dequantize_scaled(s, q_dec, base_step);
            any = any || s != 0;
        }
        Block8 res{};
        if (any) res = dct8_inverse(coeffs);
        for (int i = 0; i < 64; ++i) {
            const int base = blend_sample(candidate, block_at(pred_p, b, i), block_at(pred_f, b, i), bit_depth);
            const int value = base + static_cast<int>(std::lround(res[i]));
            *block_ptr(out, b, i) = std::clamp(value, 0, max_sample);
        }
    }
    return out;
}

int select_min_cost(std::span<const std::optional<CandidateCost>> costs, double lambda,
                    double rate_scale) {
    int best = -1;
    double best_j = 0;
    for (size_t i = 0; i < costs.size(); ++i) {
        if (!costs[i]) continue;
        const double j = rate_scale * costs[i]->bits + lambda * costs[i]->weighted_sse;
        if (best < 0 || j < best_j) {
            best = static_cast<int>(i);
            best_j = j;
        }
    }
    if (best < 0) fail(ErrorKind::InvalidArgument, "no candidate cost to select from");
    return best;
}

ConfidenceDecision rd_select_confidence(const MacroblockSamples& target,
                                        const MacroblockSamples& pred_p,
                                        const MacroblockSamples& pred_f, const RdContext& ctx) {
    if (!(ctx.lambda > 0.0)) fail(ErrorKind::InvalidArgument, "lambda must be positive");
    const ResidualCoding& rc = ctx.residual;
    if (rc.models.size() != kResidualBands)
        fail(ErrorKind::InvalidArgument, "residual coding needs one model per band");

    ConfidenceDecision decision;
    std::array<std::array<int32_t, kMacroblockSymbols>, 6> symbols{};
    std::array<MacroblockSamples, 6> recon{};
    for (int c = 0; c < 6; ++c) {
        if (!ctx.allowed[c]) continue;
        double bits = ctx.confidence_bits[c];
        for (int b = 0; b < 6; ++b) {
            Block8 block{};
            for (int i = 0; i < 64; ++i)
                block[i] = block_at(target, b, i) -
                           blend_sample(c, block_at(pred_p, b, i), block_at(pred_f, b, i), ctx.bit_depth);
            const Block8 coeffs = dct8_forward(block);
            for (int i = 0; i < 64; ++i) {
                const uint16_t band = residual_band(b, i);
                const SymbolModel& m = rc.models[band];
                int32_t s = rc.skipped[band] ? m.mode() : quantize_scaled(coeffs[i], rc.q_enc, rc.base_step);
                symbols[c][b * 64 + i] = s;
                if (!rc.skipped[band]) bits += m.cost_bits(s);
            }
        }
        recon[c] = reconstruct_macroblock(c, pred_p, pred_f, symbols[c], rc.q_dec, rc.base_step, ctx.bit_depth);
        decision.costs[c] = CandidateCost{bits, weighted_sse(target, recon[c], ctx.c_uv, ctx.c_t)};
    }
    decision.candidate = select_min_cost(decision.costs, ctx.lambda, ctx.rate_scale);
    decision.symbols = symbols[decision.candidate];
    decision.recon = recon[decision.candidate];
    return decision;
}

Frame cfr_reconstruct(const Frame& pred_p, const Frame& pred_f, const ConfidencePlan& plan,
                      const ResidualFrame& residual) {
    if (!pred_p.same_geometry(pred_f)) fail(ErrorKind::InvalidInput, "prediction geometry differs");
    require_macroblock_grid(pred_p);
    if (plan.cols * kMacroblock != pred_p.width() || plan.rows * kMacroblock != pred_p.height() ||
        residual.y.width != pred_p.width() || residual.y.height != pred_p.height() ||
        residual.u.width != pred_p.u.width || residual.v.width != pred_p.v.width)
        fail(ErrorKind::InvalidInput, "confidence plan or residual does not match the frame");
    Frame out = pred_p;
    const int max_sample = out.max_sample();
    for (PlaneId id : {PlaneId::Y, PlaneId::U, PlaneId::V}) {
        const int div = id == PlaneId::Y ? 1 : 2;
        const Plane& pp = pred_p.plane(id);
        const Plane& pf = pred_f.plane(id);
        const SignedPlane& r = id == PlaneId::Y ? residual.y : (id == PlaneId::U ? residual.u : residual.v);
        Plane& dst = out.plane(id);
        for (int y = 0; y < dst.height; ++y)
            for (int x = 0; x < dst.width; ++x) {
                const int mb = (y * div / kMacroblock) * plan.cols + (x * div / kMacroblock);
                const auto& c = kConfidenceCandidates[plan.index[mb]];
                const int blend = (c.past * pp.at(x, y) + c.future * pf.at(x, y) + 2) >> 2;
                dst.at(x, y) = static_cast<uint16_t>(std::clamp(blend + r.at(x, y), 0, max_sample));
            }
    }
    return out;
}

// ------------------------------------------------------------ payload

size_t FramePayload::header_size() const {
    // kind, level, t, step, tau, residual scales, residual length
    size_t n = 1 + 1 + 4 + 4 + 4 + kResidualBands + 4;
    // motion block, motion scales, confidence counts, two more lengths
    if (kind == FrameKind::Bidir) n += 1 + kMotionBands + 6 + 4 + 4;
    return n;
}

std::vector<uint8_t> FramePayload::serialize() const {
    std::vector<uint8_t> out;
    out.reserve(size());
    out.push_back(static_cast<uint8_t>(kind));
    out.push_back(static_cast<uint8_t>(level));
    put_u32(out, static_cast<uint32_t>(t));
    put_u32(out, to_fixed16(base_step));
    put_u32(out, to_fixed16(tau));
    if (kind == FrameKind::Bidir) {
        out.push_back(static_cast<uint8_t>(motion_block));
        out.insert(out.end(), motion_scales.begin(), motion_scales.end());
        out.insert(out.end(), confidence_counts.begin(), confidence_counts.end());
    }
    out.insert(out.end(), residual_scales.begin(), residual_scales.end());
    if (kind == FrameKind::Bidir) {
        put_u32(out, static_cast<uint32_t>(motion.size()));
        put_u32(out, static_cast<uint32_t>(confidence.size()));
    }
    put_u32(out, static_cast<uint32_t>(residual.size()));
    out.insert(out.end(), motion.begin(), motion.end());
    out.insert(out.end(), confidence.begin(), confidence.end());
    out.insert(out.end(), residual.begin(), residual.end());
    return out;
}

FramePayload FramePayload::parse(std::span<const uint8_t> bytes) {
    Reader r(bytes, 0, ErrorKind::BitstreamCorruption);
    FramePayload p;
    const uint8_t kind = r.u8();
    if (kind > 1) fail(ErrorKind::BitstreamCorruption, "unknown frame kind");
    p.kind = static_cast<FrameKind>(kind);
    p.level = r.u8();
    p.t = static_cast<int>(r.u32());
    p.base_step = from_fixed16(r.u32());
    p.tau = from_fixed16(r.u32());
    if (p.base_step <= 0.0 || p.tau < 0.5 || p.tau > 1.0)
        fail(ErrorKind::BitstreamCorruption, "payload header out of range");
    if (p.kind == FrameKind::Bidir) {
        p.motion_block = r.u8();
        if (p.motion_block != 8 && p.motion_block != 16 && p.motion_block != 32)
            fail(ErrorKind::BitstreamCorruption, "bad motion block size");
        for (auto& s : p.motion_scales) s = r.u8();
        for (auto& c : p.confidence_counts) c = r.u8();
    }
    for (auto& s : p.residual_scales) s = r.u8();
    size_t motion_len = 0, conf_len = 0;
    if (p.kind == FrameKind::Bidir) {
        motion_len = r.u32();
        conf_len = r.u32();
    }
    const size_t residual_len = r.u32();
    p.motion = r.bytes(motion_len);
    p.confidence = r.bytes(conf_len);
    p.residual = r.bytes(residual_len);
    if (r.remaining() != 0) fail(ErrorKind::BitstreamCorruption, "payload has trailing bytes");
    return p;
}

// ------------------------------------------------------------ intra

namespace {

struct IntraLayout {
    SymbolStream stream;
    std::vector<std::array<int32_t, 64>> raw; // per block, before DC prediction
};

// Blocks in plane order Y, U, V, raster within each plane.
template <typename Fn>
void for_each_intra_block(const Frame& f, Fn&& fn) {
    for (PlaneId id : {PlaneId::Y, PlaneId::U, PlaneId::V}) {
        const Plane& p = f.plane(id);
        for (int by = 0; by < p.height / 8; ++by)
            for (int bx = 0; bx < p.width / 8; ++bx) fn(id, bx, by);
    }
}

uint16_t intra_band(PlaneId id, int coeff) {
    return static_cast<uint16_t>(coefficient_band(coeff) + (id == PlaneId::Y ? 0 : kBandsPerPlaneType));
}

int32_t dc_origin(int bit_depth, double step) {
    return quantize_scaled(8.0 * mid_gray(bit_depth), 1.0, step);
}

// Applies DC prediction and band skipping, producing the coded stream and
// the symbols the decoder will see.
SymbolStream build_intra_stream(const std::vector<std::array<int32_t, 64>>& raw,
                                const std::vector<PlaneId>& planes, int bit_depth, double step,
                                std::span<const SymbolModel> models, const SkipPolicy& skip,
                                std::vector<std::array<int32_t, 64>>* effective) {
    SymbolStream s;
    s.values.reserve(raw.size() * 64);
    s.bands.reserve(raw.size() * 64);
    if (effective) effective->resize(raw.size());
    PlaneId current = PlaneId::Y;
    int32_t prev = dc_origin(bit_depth, step);
    for (size_t k = 0; k < raw.size(); ++k) {
        if (planes[k] != current) {
            current = planes[k];
            prev = dc_origin(bit_depth, step);
        }
        std::array<int32_t, 64> eff = raw[k];
        for (int i = 0; i < 64; ++i) {
            const uint16_t band = intra_band(planes[k], i);
            const bool skipped = !models.empty() && skip.skips(models[band]);
            int32_t coded = i == 0 ? raw[k][0] - prev : raw[k][i];
            if (skipped) coded = models[band].mode();
            if (i == 0) eff[0] = prev + coded;
            else eff[i] = coded;
            s.push(coded, band);
        }
        prev = eff[0];
        if (effective) (*effective)[k] = eff;
    }
    return s;
}

Frame reconstruct_intra(const std::vector<std::array<int32_t, 64>>& symbols, const Frame& shape,
                        double step) {
    Frame out = shape;
    const int max_sample = out.max_sample();
    size_t k = 0;
    for_each_intra_block(shape, [&](PlaneId id, int bx, int by) {
        Block8 coeffs{};
        for (int i = 0; i < 64; ++i) coeffs[i] = dequantize_scaled(symbols[k][i], 1.0, step);
        const Block8 px = dct8_inverse(coeffs);
        Plane& p = out.plane(id);
        for (int i = 0; i < 64; ++i)
            p.at(bx * 8 + i % 8, by * 8 + i / 8) =
                static_cast<uint16_t>(std::clamp(static_cast<int>(std::lround(px[i])), 0, max_sample));
        ++k;
    });
    return out;
}

std::vector<PlaneId> intra_block_planes(const Frame& f) {
    std::vector<PlaneId> planes;
    for_each_intra_block(f, [&](PlaneId id, int, int) { planes.push_back(id); });
    return planes;
}

} // namespace

CodedFrame encode_intra(const Frame& frame, int t, const CodecConfig& cfg, const FrameOverrides& ov) {
    require_macroblock_grid(frame);
    const double step = snap_fixed16(cfg.base_step * ov.step_mult);
    const double tau = snap_tau(cfg.skip.tau);
    const SkipPolicy skip{tau};

    std::vector<std::array<int32_t, 64>> raw;
    for_each_intra_block(frame, [&](PlaneId id, int bx, int by) {
        const Plane& p = frame.plane(id);
        Block8 block{};
        for (int i = 0; i < 64; ++i) block[i] = p.at(bx * 8 + i % 8, by * 8 + i / 8);
        const Block8 coeffs = dct8_forward(block);
        std::array<int32_t, 64> q{};
        for (int i = 0; i < 64; ++i) q[i] = quantize_scaled(coeffs[i], 1.0, step);
        raw.push_back(q);
    });
    const std::vector<PlaneId> planes = intra_block_planes(frame);

    const SymbolStream unskipped = build_intra_stream(raw, planes, frame.bit_depth, step, {}, skip, nullptr);
    CodedFrame out;
    FramePayload& p = out.payload;
    p.kind = FrameKind::Intra;
    p.level = 0;
    p.t = t;
    p.base_step = step;
    p.tau = tau;
    p.residual_scales = fit_bands<kResidualBands>(unskipped, skip);
    const auto models = models_from_indices(p.residual_scales);

    std::vector<std::array<int32_t, 64>> effective;
    const SymbolStream coded = build_intra_stream(raw, planes, frame.bit_depth, step, models, skip, &effective);
    EncodedSymbols enc = encode_symbols(coded, models, skip);
    p.residual = std::move(enc.bytes);

    out.recon = reconstruct_intra(effective, frame, step);
    out.recon.frame_index = frame.frame_index;
    fill_stats(out.stats, p, frame, out.recon);
    out.stats.skipped_symbols = enc.skipped;
    return out;
}

// ------------------------------------------------------------ bidirectional

namespace {

SymbolStream motion_stream(const std::vector<int32_t>& symbols) {
    SymbolStream s;
    for (size_t i = 0; i < symbols.size(); ++i) s.push(symbols[i], static_cast<uint16_t>(i % 2));
    return s;
}

std::vector<uint16_t> residual_bands_for(size_t macroblocks) {
    std::vector<uint16_t> bands;
    bands.reserve(macroblocks * kMacroblockSymbols);
    for (size_t m = 0; m < macroblocks; ++m)
        for (int b = 0; b < 6; ++b)
            for (int i = 0; i < 64; ++i) bands.push_back(residual_band(b, i));
    return bands;
}

struct ResidualPass {
    SymbolStream stream;
    ConfidencePlan plan;
    Frame recon;
    std::array<size_t, 6> counts{};
};

ResidualPass run_residual_pass(const Frame& frame, const Frame& pred_p, const Frame& pred_f,
                               const RdContext& ctx) {
    ResidualPass pass;
    pass.plan.cols = frame.width() / kMacroblock;
    pass.plan.rows = frame.height() / kMacroblock;
    pass.recon = frame;
    pass.stream.values.reserve(static_cast<size_t>(pass.plan.cols) * pass.plan.rows * kMacroblockSymbols);
    for (int row = 0; row < pass.plan.rows; ++row)
        for (int col = 0; col < pass.plan.cols; ++col) {
            const ConfidenceDecision d =
                rd_select_confidence(load_macroblock(frame, col, row), load_macroblock(pred_p, col, row),
                                     load_macroblock(pred_f, col, row), ctx);
            pass.plan.index.push_back(static_cast<uint8_t>(d.candidate));
            ++pass.counts[d.candidate];
            for (int b = 0; b < 6; ++b)
                for (int i = 0; i < 64; ++i) pass.stream.push(d.symbols[b * 64 + i], residual_band(b, i));
            store_macroblock(pass.recon, col, row, d.recon);
        }
    return pass;
}

} // namespace

CodedFrame encode_bframe(const CodingUnit& unit, const Frame& frame, const Frame& ref_p,
                         const Frame& ref_f, const CodecConfig& cfg, const FrameOverrides& ov) {
    if (unit.kind != FrameKind::Bidir) fail(ErrorKind::ScheduleViolation, "unit is not a B-frame");
    require_macroblock_grid(frame);
    if (!frame.same_geometry(ref_p) || !frame.same_geometry(ref_f))
        fail(ErrorKind::InvalidInput, "reference geometry does not match the frame");

    const double tau = snap_tau(cfg.skip.tau);
    const SkipPolicy skip{tau};
    const double step = snap_fixed16(cfg.base_step);
    const double lambda = cfg.weights.rd_multiplier(frame.bit_depth) * ov.lambda_mult;

    MotionParams mp = cfg.motion;
    mp.search_range = std::max(1, mp.search_range + ov.search_range_delta);
    mp.lambda_me = cfg.me_lambda_factor / std::sqrt(lambda) / (1 << (frame.bit_depth - 8));

    const LevelGain gm = cfg.gains.resolve(LatentStream::Motion, unit.level);
    const LevelGain grc = cfg.gains.resolve(LatentStream::Rc, unit.level);
    const double qm_enc = gm.q_enc * ov.motion_gain_mult;
    const double qrc_enc = grc.q_enc * ov.rc_gain_mult;

    CodedFrame out;
    FramePayload& p = out.payload;
    p.kind = FrameKind::Bidir;
    p.level = unit.level;
    p.t = unit.t;
    p.base_step = step;
    p.tau = tau;
    p.motion_block = mp.block_size;

    // Motion: estimate, code against decoded neighbours, skip-aware recode.
    auto [est_p, est_f] = estimate_bidir(frame, ref_p, ref_f, mp);
    MotionLatent latent = code_motion(est_p, est_f, qm_enc, gm.q_dec, kMotionStep);
    p.motion_scales = fit_bands<kMotionBands>(motion_stream(latent.symbols), skip);
    const auto motion_models = models_from_indices(p.motion_scales);
    std::array<std::optional<int32_t>, 2> forced{};
    for (int c = 0; c < kMotionBands; ++c)
        if (skip.skips(motion_models[c]) && !motion_models[c].is_degenerate()) forced[c] = motion_models[c].mode();
    if (forced[0] || forced[1]) latent = code_motion(est_p, est_f, qm_enc, gm.q_dec, kMotionStep, forced);
    EncodedSymbols motion_enc = encode_symbols(motion_stream(latent.symbols), motion_models, skip);
    p.motion = std::move(motion_enc.bytes);

    const Frame pred_p = compensate(ref_p, latent.decoded_p);
    const Frame pred_f = compensate(ref_f, latent.decoded_f);

    // Residual: a first pass under a generic prior fits the band models, the
    // second pass decides under the models that are actually transmitted.
    RdContext ctx;
    ctx.lambda = lambda;
    ctx.c_uv = cfg.weights.c_uv;
    ctx.c_t = cfg.weights.level_coefficient(unit.level);
    ctx.bit_depth = frame.bit_depth;
    ctx.residual.q_enc = qrc_enc;
    ctx.residual.q_dec = grc.q_dec;
    ctx.residual.base_step = step;
    const std::vector<SymbolModel> prior(kResidualBands, scale_models()[kPriorScaleIndex]);
    ctx.residual.models = prior;
    ctx.confidence_bits.fill(std::log2(6.0));
    const ResidualPass first = run_residual_pass(frame, pred_p, pred_f, ctx);

    SymbolStream fit_stream = first.stream;
    p.residual_scales = fit_bands<kResidualBands>(fit_stream, skip);
    p.confidence_counts = quantize_counts(first.counts);
    const auto residual_models = models_from_indices(p.residual_scales);
    const SymbolModel conf_model = confidence_model(p.confidence_counts);
    ctx.residual.models = residual_models;
    for (int b = 0; b < kResidualBands; ++b) ctx.residual.skipped[b] = skip.skips(residual_models[b]);
    if (skip.skips(conf_model)) {
        ctx.allowed.fill(false);
        ctx.allowed[conf_model.mode()] = true;
        ctx.confidence_bits.fill(0.0);
    } else {
        for (int c = 0; c < 6; ++c) ctx.confidence_bits[c] = conf_model.cost_bits(c);
    }
    ResidualPass second = run_residual_pass(frame, pred_p, pred_f, ctx);

    SymbolStream conf_stream;
    for (uint8_t c : second.plan.index) conf_stream.push(c, 0);
    const std::array<SymbolModel, 1> conf_models{conf_model};
    EncodedSymbols conf_enc = encode_symbols(conf_stream, conf_models, skip);
    EncodedSymbols res_enc = encode_symbols(second.stream, residual_models, skip);
    if (res_enc.values != second.stream.values || conf_enc.values != conf_stream.values)
        fail(ErrorKind::InvalidArgument, "internal: skipped symbols were not pre-substituted");
    p.confidence = std::move(conf_enc.bytes);
    p.residual = std::move(res_enc.bytes);

    out.recon = std::move(second.recon);
    out.recon.frame_index = frame.frame_index;
    out.plan = std::move(second.plan);
    out.field_p = std::move(latent.decoded_p);
    out.field_f = std::move(latent.decoded_f);
    fill_stats(out.stats, p, frame, out.recon);
    out.stats.skipped_symbols = motion_enc.skipped + conf_enc.skipped + res_enc.skipped;
    return out;
}

CodedFrame encode_unit(const CodingUnit& unit, const Frame& frame, const Frame* ref_p,
                       const Frame* ref_f, const CodecConfig& cfg, const FrameOverrides& ov) {
    if (unit.kind == FrameKind::Intra) return encode_intra(frame, unit.t, cfg, ov);
    if (!ref_p || !ref_f)
        fail(ErrorKind::ScheduleViolation, "B-frame " + std::to_string(unit.t) + " is missing a reference");
    return encode_bframe(unit, frame, *ref_p, *ref_f, cfg, ov);
}

Frame decode_payload(const FramePayload& payload, const GainTable& gains, int width, int height,
                     int bit_depth, const Frame* ref_p, const Frame* ref_f) {
    const SkipPolicy skip = payload.skip_policy();
    const auto residual_models = models_from_indices(payload.residual_scales);
    Frame shape(width, height, bit_depth);
    require_macroblock_grid(shape);

    if (payload.kind == FrameKind::Intra) {
        const std::vector<PlaneId> planes = intra_block_planes(shape);
        std::vector<uint16_t> bands;
        bands.reserve(planes.size() * 64);
        for (PlaneId id : planes)
            for (int i = 0; i < 64; ++i) bands.push_back(intra_band(id, i));
        const auto values = decode_symbols(payload.residual, bands, residual_models, skip);
        std::vector<std::array<int32_t, 64>> symbols(planes.size());
        PlaneId current = PlaneId::Y;
        int32_t prev = dc_origin(bit_depth, payload.base_step);
        for (size_t k = 0; k < planes.size(); ++k) {
            if (planes[k] != current) {
                current = planes[k];
                prev = dc_origin(bit_depth, payload.base_step);
            }
            for (int i = 0; i < 64; ++i) symbols[k][i] = values[k * 64 + i];
            symbols[k][0] += prev;
            prev = symbols[k][0];
        }
        Frame out = reconstruct_intra(symbols, shape, payload.base_step);
        out.frame_index = payload.t;
        return out;
    }

    if (!ref_p || !ref_f) fail(ErrorKind::ScheduleViolation, "B-frame decode needs both references");
    if (!ref_p->same_geometry(shape) || !ref_f->same_geometry(shape))
        fail(ErrorKind::BitstreamCorruption, "reference geometry does not match the stream");
    const LevelGain gm = gains.resolve(LatentStream::Motion, payload.level);
    const LevelGain grc = gains.resolve(LatentStream::Rc, payload.level);

    const auto motion_models = models_from_indices(payload.motion_scales);
    const MotionField grid(payload.motion_block, width, height);
    std::vector<uint16_t> motion_bands(4 * grid.vectors.size());
    for (size_t i = 0; i < motion_bands.size(); ++i) motion_bands[i] = static_cast<uint16_t>(i % 2);
    const auto motion_symbols = decode_symbols(payload.motion, motion_bands, motion_models, skip);
    const auto [field_p, field_f] =
        decode_motion(motion_symbols, payload.motion_block, width, height, gm.q_dec, kMotionStep);
    const Frame pred_p = compensate(*ref_p, field_p);
    const Frame pred_f = compensate(*ref_f, field_f);

    const int cols = width / kMacroblock, rows = height / kMacroblock;
    const size_t mbs = static_cast<size_t>(cols) * rows;
    const std::array<SymbolModel, 1> conf_models{confidence_model(payload.confidence_counts)};
    const std::vector<uint16_t> conf_bands(mbs, 0);
    const auto plan = decode_symbols(payload.confidence, conf_bands, conf_models, skip);
    const auto residual = decode_symbols(payload.residual, residual_bands_for(mbs), residual_models, skip);

    Frame out = shape;
    for (int row = 0; row < rows; ++row)
        for (int col = 0; col < cols; ++col) {
            const size_t m = static_cast<size_t>(row) * cols + col;
            if (plan[m] < 0 || plan[m] >= 6) fail(ErrorKind::BitstreamCorruption, "bad confidence index");
            const MacroblockSamples mb = reconstruct_macroblock(
                plan[m], load_macroblock(pred_p, col, row), load_macroblock(pred_f, col, row),
                std::span<const int32_t>(residual).subspan(m * kMacroblockSymbols, kMacroblockSymbols),
                grc.q_dec, payload.base_step, bit_depth);
            store_macroblock(out, col, row, mb);
        }
    out.frame_index = payload.t;
    return out;
}

// ------------------------------------------------------------ container

std::vector<uint8_t> StreamHeader::serialize() const {
    std::vector<uint8_t> out{'H', 'B', 'V', 'C'};
    put_u16(out, version);
    put_u32(out, static_cast<uint32_t>(width));
    put_u32(out, static_cast<uint32_t>(height));
    put_u32(out, static_cast<uint32_t>(bit_depth));
    put_u32(out, static_cast<uint32_t>(std::llround(fps * 1000.0)));
    put_u32(out, static_cast<uint32_t>(gop_size));
    put_u32(out, static_cast<uint32_t>(n_frames));
    const auto g = gains.serialize();
    out.insert(out.end(), g.begin(), g.end());
    return out;
}

StreamHeader StreamHeader::parse(std::span<const uint8_t> bytes, size_t& offset) {
    if (bytes.size() < offset + 6 || std::memcmp(bytes.data() + offset, "HBVC", 4) != 0)
        fail(ErrorKind::Format, "not an HBVC stream (bad magic)");
    Reader r(bytes, offset + 4, ErrorKind::Format);
    StreamHeader h;
    h.version = r.u16();
    if (h.version != kStreamVersion)
        fail(ErrorKind::Format, "unsupported stream version " + std::to_string(h.version));
    h.width = static_cast<int>(r.u32());
    h.height = static_cast<int>(r.u32());
    h.bit_depth = static_cast<int>(r.u32());
    h.fps = r.u32() / 1000.0;
    h.gop_size = static_cast<int>(r.u32());
    h.n_frames = static_cast<int>(r.u32());
    if ((h.bit_depth != 8 && h.bit_depth != 10) || h.width <= 0 || h.height <= 0 ||
        h.width % 2 || h.height % 2 || !is_power_of_two(h.gop_size) || h.n_frames < 0)
        fail(ErrorKind::Format, "stream header holds invalid geometry");
    offset = r.pos();
    try {
        h.gains = GainTable::deserialize(bytes, offset);
    } catch (const Error& e) {
        fail(ErrorKind::Format, std::string("bad gain table: ") + e.what());
    }
    return h;
}

StreamIndex index_stream(std::span<const uint8_t> bytes) {
    StreamIndex idx;
    size_t offset = 0;
    idx.header = StreamHeader::parse(bytes, offset);
    idx.header_bytes = offset;
    while (offset < bytes.size()) {
        if (bytes.size() - offset < 4) {
            idx.truncated = true;
            break;
        }
        Reader r(bytes, offset, ErrorKind::BitstreamCorruption);
        const size_t len = r.u32();
        if (r.remaining() < len || len < 6) {
            idx.truncated = true;
            break;
        }
        const size_t body = offset + 4;
        Reader pr(bytes, body + 2, ErrorKind::BitstreamCorruption);
        idx.payloads.push_back({static_cast<int>(pr.u32()), body, len});
        offset = body + len;
    }
    return idx;
}

std::vector<uint8_t> filter_payloads(std::span<const uint8_t> bytes, const std::function<bool(int)>& keep) {
    const StreamIndex idx = index_stream(bytes);
    std::vector<uint8_t> out(bytes.begin(), bytes.begin() + static_cast<ptrdiff_t>(idx.header_bytes));
    for (const PayloadEntry& e : idx.payloads) {
        if (!keep(e.t)) continue;
        const size_t start = e.offset - 4;
        out.insert(out.end(), bytes.begin() + static_cast<ptrdiff_t>(start),
                   bytes.begin() + static_cast<ptrdiff_t>(e.offset + e.length));
    }
    return out;
}

EncodedSequence encode_sequence(std::span<const Frame> frames, const SequenceInfo& info,
                                const CodecConfig& cfg, bool truncate,
                                std::span<const FrameOverrides> overrides) {
    EncodedSequence out;
    StreamHeader& h = out.header;
    h.width = info.width;
    h.height = info.height;
    h.bit_depth = info.bit_depth;
    h.fps = info.fps;
    h.gop_size = cfg.gop_size;
    h.gains = cfg.gains;

    if (frames.empty()) {
        out.bytes = h.serialize();
        out.schedule.gop_size = cfg.gop_size;
        return out;
    }
    for (const Frame& f : frames) {
        if (f.width() != info.width || f.height() != info.height || f.bit_depth != info.bit_depth)
            fail(ErrorKind::InconsistentInput, "frame geometry differs from the sequence geometry");
    }
    out.schedule = build_schedule(static_cast<int>(frames.size()), cfg.gop_size, truncate);
    const int n = out.schedule.frame_count();
    h.n_frames = n;
    if (!overrides.empty() && overrides.size() < static_cast<size_t>(n))
        fail(ErrorKind::InvalidArgument, "override list shorter than the scheduled frames");
    for (int level = 1; level <= log2_exact(cfg.gop_size); ++level) {
        cfg.gains.resolve(LatentStream::Motion, level);
        cfg.gains.resolve(LatentStream::Rc, level);
    }

    std::vector<Frame> padded;
    padded.reserve(n);
    for (int t = 0; t < n; ++t) {
        padded.push_back(pad_to_block_grid(frames[t], kMacroblock).frame);
        padded.back().frame_index = t;
    }

    std::vector<std::optional<CodedFrame>> coded(n);
    auto override_for = [&](int t) { return overrides.empty() ? FrameOverrides{} : overrides[t]; };

    std::vector<CodingUnit> intra, bidir;
    for (const CodingUnit& u : out.schedule.units)
        (u.kind == FrameKind::Intra ? intra : bidir).push_back(u);
    parallel_for(intra.size(), cfg.threads, [&](size_t i) {
        const CodingUnit& u = intra[i];
        coded[u.t] = encode_intra(padded[u.t], u.t, cfg, override_for(u.t));
    });
    // Each GoP only depends on its two bounding I-frames.
    const int gops = (n - 1) / cfg.gop_size;
    parallel_for(static_cast<size_t>(gops), cfg.threads, [&](size_t g) {
        const int lo = static_cast<int>(g) * cfg.gop_size, hi = lo + cfg.gop_size;
        for (const CodingUnit& u : bidir) {
            if (u.t <= lo || u.t >= hi) continue;
            coded[u.t] = encode_bframe(u, padded[u.t], coded[u.p]->recon, coded[u.f]->recon, cfg,
                                       override_for(u.t));
        }
    });

    out.bytes = h.serialize();
    for (const CodingUnit& u : out.schedule.units) {
        const std::vector<uint8_t> body = coded[u.t]->payload.serialize();
        put_u32(out.bytes, static_cast<uint32_t>(body.size()));
        out.bytes.insert(out.bytes.end(), body.begin(), body.end());
        out.stats.push_back(coded[u.t]->stats);
    }
    for (int t = 0; t < n; ++t) {
        out.recon.push_back(crop(coded[t]->recon, info.width, info.height));
        out.padded_recon.push_back(std::move(coded[t]->recon));
    }
    return out;
}

std::vector<int> DecodeResult::missing() const {
    std::vector<int> out;
    for (size_t t = 0; t < frames.size(); ++t)
        if (!frames[t]) out.push_back(static_cast<int>(t));
    return out;
}

std::vector<Frame> DecodeResult::contiguous_prefix() const {
    std::vector<Frame> out;
    for (const auto& f : frames) {
        if (!f) break;
        out.push_back(*f);
    }
    return out;
}

DecodeResult decode_stream(std::span<const uint8_t> bytes) {
    DecodeResult result;
    const StreamIndex idx = index_stream(bytes);
    const StreamHeader& h = idx.header;
    result.header = h;
    const int n = h.n_frames;
    result.frames.assign(n, std::nullopt);
    result.levels.assign(n, -1);
    if (n == 0) return result;

    GopSchedule schedule;
    try {
        schedule = build_schedule(n, h.gop_size);
    } catch (const Error& e) {
        fail(ErrorKind::Format, std::string("stream header schedule: ") + e.what());
    }
    const int pw = h.padded_width(), ph = h.padded_height();
    std::vector<std::optional<Frame>> decoded(n);
    int last_good = -1;
    for (const PayloadEntry& e : idx.payloads) {
        try {
            const FramePayload payload = FramePayload::parse(bytes.subspan(e.offset, e.length));
            if (payload.t < 0 || payload.t >= n)
                fail(ErrorKind::BitstreamCorruption, "payload for unscheduled frame " + std::to_string(payload.t));
            const CodingUnit& u = schedule.unit_for(payload.t);
            if (u.kind != payload.kind || u.level != payload.level)
                fail(ErrorKind::BitstreamCorruption,
                     "payload " + std::to_string(payload.t) + " disagrees with the schedule (kind/level)");
            if (decoded[u.t]) fail(ErrorKind::BitstreamCorruption, "frame " + std::to_string(u.t) + " coded twice");
            const Frame* rp = u.kind == FrameKind::Bidir && decoded[u.p] ? &*decoded[u.p] : nullptr;
            const Frame* rf = u.kind == FrameKind::Bidir && decoded[u.f] ? &*decoded[u.f] : nullptr;
            if (u.kind == FrameKind::Bidir && (!rp || !rf)) continue; // reference not in this stream
            decoded[u.t] = decode_payload(payload, h.gains, pw, ph, h.bit_depth, rp, rf);
            result.levels[u.t] = payload.level;
            last_good = u.t;
        } catch (const Error& err) {
            result.error = DecodeError{err.kind(), err.what(), last_good};
            break;
        }
    }
    if (!result.error && idx.truncated)
        result.error = DecodeError{ErrorKind::TruncatedInput, "stream truncated inside a payload", last_good};
    for (int t = 0; t < n; ++t)
        if (decoded[t]) result.frames[t] = crop(*decoded[t], h.width, h.height);
    return result;
}

} // namespace hbvc
