#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hbvc/entropy.hpp"
#include "hbvc/error.hpp"
#include "hbvc/frame.hpp"
#include "hbvc/gop.hpp"
#include "hbvc/loss.hpp"
#include "hbvc/motion.hpp"
#include "hbvc/transform.hpp"

namespace hbvc {

constexpr int kMacroblock = 16;
constexpr uint16_t kStreamVersion = 1;
constexpr int kResidualBands = 2 * kBandsPerPlaneType; // luma 0..14, chroma 15..29
constexpr int kMaxMagnitude = 32;                      // model support before escape
constexpr int kScaleCount = 64;                        // index 0 is the degenerate model
constexpr double kMotionStep = 1.0;                    // base step of the motion latent, quarter-pel

// ------------------------------------------------------------ operating points

constexpr std::array<double, 4> kStandardLambdas{0.05, 0.015, 0.005, 0.001};
// Base quantization steps for 8-bit content, one per standard lambda.
constexpr std::array<double, 4> kStandardSteps{4.25, 7.5, 13.25, 29.5};

struct OperatingPoint {
    double lambda = kStandardLambdas[0];
    double base_step = kStandardSteps[0];
};

OperatingPoint standard_operating_point(int index, int bit_depth = 8);

// Step whose high-rate optimum matches lambda: sqrt(6 / (ln 2 * lambda * 10))
// on the 8-bit scale, rounded to a quarter; the standard table follows it.
double step_for_lambda(double lambda, int bit_depth = 8);

// Index of a standard lambda, or -1.
int standard_lambda_index(double lambda);

// Encoder-side per-frame offsets searched by content adaptation. None of
// them changes what the decoder needs besides the per-frame payload.
struct FrameOverrides {
    double lambda_mult = 1.0;
    double motion_gain_mult = 1.0;
    double rc_gain_mult = 1.0;
    double step_mult = 1.0; // I-frames
    int search_range_delta = 0;

    bool is_identity() const {
        return lambda_mult == 1.0 && motion_gain_mult == 1.0 && rc_gain_mult == 1.0 &&
               step_mult == 1.0 && search_range_delta == 0;
    }
};

struct CodecConfig {
    int gop_size = 32;
    double base_step = kStandardSteps[0];
    LossWeights weights;
    GainTable gains = GainTable::identity(6);
    MotionParams motion;
    SkipPolicy skip;
    double me_lambda_factor = 1.0;  // lambda_me = factor / sqrt(rd multiplier)
    int threads = 1;
};

CodecConfig make_config(int op_index, int bit_depth = 8, int gop_size = 32);

// ------------------------------------------------------------ confidence

struct ConfidenceWeights {
    int past = 0;   // in quarters
    int future = 0; // in quarters
};

// (1,0) (0,1) (1/2,1/2) (3/4,1/4) (1/4,3/4) (0,0)
constexpr std::array<ConfidenceWeights, 6> kConfidenceCandidates{
    {{4, 0}, {0, 4}, {2, 2}, {3, 1}, {1, 3}, {0, 0}}};
constexpr int kIntraLikeCandidate = 5;

struct ConfidencePlan {
    int cols = 0;
    int rows = 0;
    std::vector<uint8_t> index; // per macroblock, into kConfidenceCandidates
};

struct SignedPlane {
    int width = 0;
    int height = 0;
    std::vector<int32_t> samples;

    SignedPlane() = default;
    SignedPlane(int w, int h) : width(w), height(h), samples(static_cast<size_t>(w) * h, 0) {}
    int32_t& at(int x, int y) { return samples[static_cast<size_t>(y) * width + x]; }
    int32_t at(int x, int y) const { return samples[static_cast<size_t>(y) * width + x]; }
};

struct ResidualFrame {
    SignedPlane y, u, v;
};

// value = clamp(C_p * pred_p + C_f * pred_f + residual) with block-constant C
// (the blend is rounded to the sample grid before the residual is added).
// The (0,0) candidate blends to zero here, so the residual carries the whole
// sample; the coded path instead predicts mid-gray (see reconstruct_macroblock).
Frame cfr_reconstruct(const Frame& pred_p, const Frame& pred_f, const ConfidencePlan& plan,
                      const ResidualFrame& residual);

// Samples of one macroblock: 16x16 luma then 8x8 U and V.
struct MacroblockSamples {
    std::array<int32_t, 256> y{};
    std::array<int32_t, 64> u{};
    std::array<int32_t, 64> v{};
};

MacroblockSamples load_macroblock(const Frame& frame, int col, int row);
void store_macroblock(Frame& frame, int col, int row, const MacroblockSamples& mb);

constexpr int kMacroblockSymbols = 6 * 64;

// What the encoder knows about coding a residual macroblock.
struct ResidualCoding {
    double q_enc = 1.0;
    double q_dec = 1.0;
    double base_step = 1.0;
    std::span<const SymbolModel> models; // kResidualBands entries
    std::array<bool, kResidualBands> skipped{};
};

struct RdContext {
    double lambda = 1.0;     // distortion multiplier against bits
    double rate_scale = 1.0; // multiplies bits; argmin is invariant to common scaling
    double c_uv = 1.0;
    double c_t = 1.0;
    int bit_depth = 8;
    ResidualCoding residual;
    std::array<double, 6> confidence_bits{};
    std::array<bool, 6> allowed{true, true, true, true, true, true};
};

struct CandidateCost {
    double bits = 0.0;
    double weighted_sse = 0.0;
};

struct ConfidenceDecision {
    int candidate = 0;
    std::array<int32_t, kMacroblockSymbols> symbols{};
    MacroblockSamples recon;
    std::array<std::optional<CandidateCost>, 6> costs;
};

// Index of the minimum of rate_scale * bits + lambda * weighted_sse; ties go
// to the lower index.
int select_min_cost(std::span<const std::optional<CandidateCost>> costs, double lambda,
                    double rate_scale = 1.0);

// Codes the residual under each allowed confidence candidate and keeps the
// cheapest in J = bits + lambda * weighted SSE.
ConfidenceDecision rd_select_confidence(const MacroblockSamples& target,
                                        const MacroblockSamples& pred_p,
                                        const MacroblockSamples& pred_f, const RdContext& ctx);

// Decoder-side reconstruction of one macroblock (shared with the encoder).
MacroblockSamples reconstruct_macroblock(int candidate, const MacroblockSamples& pred_p,
                                         const MacroblockSamples& pred_f,
                                         std::span<const int32_t> symbols, double q_dec,
                                         double base_step, int bit_depth);

// ------------------------------------------------------------ models

// Fixed scale table shared by encoder and decoder; index 0 is degenerate at 0.
const std::vector<SymbolModel>& scale_models();
double scale_for_index(int index);
// Encoder-side: index minimizing the ideal code length of `values`. With a
// policy, models that would skip the band are only eligible when every value
// already equals their mode, so fitting never discards information.
uint8_t fit_scale_index(std::span<const int32_t> values, const SkipPolicy* policy = nullptr);

// ------------------------------------------------------------ payloads

struct FramePayload {
    FrameKind kind = FrameKind::Intra;
    int level = 0;
    int t = 0;
    double base_step = 1.0; // 16.16 on the wire
    double tau = 0.95;      // 16.16 on the wire
    int motion_block = 16;  // B-frames only
    std::array<uint8_t, kMotionBands> motion_scales{};
    std::array<uint8_t, 6> confidence_counts{};
    std::array<uint8_t, kResidualBands> residual_scales{};
    std::vector<uint8_t> motion;
    std::vector<uint8_t> confidence;
    std::vector<uint8_t> residual;

    std::vector<uint8_t> serialize() const;
    static FramePayload parse(std::span<const uint8_t> bytes);
    size_t header_size() const;
    size_t size() const { return header_size() + motion.size() + confidence.size() + residual.size(); }
    SkipPolicy skip_policy() const { return {tau}; }
};

struct FrameStats {
    int t = 0;
    FrameKind kind = FrameKind::Intra;
    int level = 0;
    size_t motion_bits = 0;
    size_t confidence_bits = 0;
    size_t residual_bits = 0;
    size_t header_bits = 0;
    size_t total_bits = 0;
    size_t skipped_symbols = 0;
    PlaneMse mse;
    int pixels = 0; // luma samples of the coded frame

    double rate_motion_bpp() const { return static_cast<double>(motion_bits) / pixels; }
    // Everything else in the payload: header, confidence and residual.
    double rate_residual_bpp() const { return static_cast<double>(total_bits - motion_bits) / pixels; }
    double rate_bpp() const { return static_cast<double>(total_bits) / pixels; }
};

struct CodedFrame {
    FramePayload payload;
    Frame recon;
    FrameStats stats;
    ConfidencePlan plan;
    MotionField field_p;
    MotionField field_f;
};

CodedFrame encode_intra(const Frame& frame, int t, const CodecConfig& cfg,
                        const FrameOverrides& ov = {});

CodedFrame encode_bframe(const CodingUnit& unit, const Frame& frame, const Frame& ref_p,
                         const Frame& ref_f, const CodecConfig& cfg, const FrameOverrides& ov = {});

// Dispatches on the unit kind; references are required for Bidir units.
CodedFrame encode_unit(const CodingUnit& unit, const Frame& frame, const Frame* ref_p,
                       const Frame* ref_f, const CodecConfig& cfg, const FrameOverrides& ov = {});

// Decodes one payload of the padded geometry.
Frame decode_payload(const FramePayload& payload, const GainTable& gains, int width, int height,
                     int bit_depth, const Frame* ref_p, const Frame* ref_f);

// ------------------------------------------------------------ container

struct StreamHeader {
    uint16_t version = kStreamVersion;
    int width = 0;  // display geometry; coded frames are padded to kMacroblock
    int height = 0;
    int bit_depth = 8;
    double fps = 30.0; // stored as milli-frames per second
    int gop_size = 32;
    int n_frames = 0;
    GainTable gains;

    int padded_width() const { return (width + kMacroblock - 1) / kMacroblock * kMacroblock; }
    int padded_height() const { return (height + kMacroblock - 1) / kMacroblock * kMacroblock; }

    std::vector<uint8_t> serialize() const;
    static StreamHeader parse(std::span<const uint8_t> bytes, size_t& offset);
};

struct PayloadEntry {
    int t = 0;
    size_t offset = 0; // of the payload body, after its length prefix
    size_t length = 0;
};

struct StreamIndex {
    StreamHeader header;
    size_t header_bytes = 0;
    std::vector<PayloadEntry> payloads;
    bool truncated = false;
};

// Walks the length-prefixed payloads without decoding them.
StreamIndex index_stream(std::span<const uint8_t> bytes);

// Stream surgery: header plus the payloads whose frame index passes `keep`.
std::vector<uint8_t> filter_payloads(std::span<const uint8_t> bytes,
                                     const std::function<bool(int)>& keep);

struct SequenceInfo {
    int width = 0; // display geometry
    int height = 0;
    int bit_depth = 8;
    double fps = 30.0;
};

struct EncodedSequence {
    std::vector<uint8_t> bytes;
    StreamHeader header;
    GopSchedule schedule;
    std::vector<FrameStats> stats;   // decode order
    std::vector<Frame> recon;        // display order, display geometry
    std::vector<Frame> padded_recon; // display order, coded geometry
};

// Pads the input to the macroblock grid, codes every scheduled frame in
// decode order and returns the container. `overrides` is indexed by display
// frame and may be empty.
EncodedSequence encode_sequence(std::span<const Frame> frames, const SequenceInfo& info,
                                const CodecConfig& cfg, bool truncate = false,
                                std::span<const FrameOverrides> overrides = {});

struct DecodeError {
    ErrorKind kind = ErrorKind::BitstreamCorruption;
    std::string message;
    int last_good_frame = -1; // display index of the last payload decoded
};

struct DecodeResult {
    StreamHeader header;
    std::vector<std::optional<Frame>> frames; // display order, display geometry
    std::vector<int> levels;                  // payload level per frame, -1 if absent
    std::optional<DecodeError> error;

    std::vector<int> missing() const;
    // Longest prefix of decoded frames in display order.
    std::vector<Frame> contiguous_prefix() const;
};

// Throws Format on a bad magic or version; payload-level problems are
// reported in DecodeResult::error with the frames decoded so far.
DecodeResult decode_stream(std::span<const uint8_t> bytes);

} // namespace hbvc
