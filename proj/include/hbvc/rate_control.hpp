#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "hbvc/codec.hpp"

namespace hbvc {

// Rate (bits per luma pixel) and weighted distortion of one coded frame.
struct FrameLoss {
    int t = 0;
    int level = 0;
    double rate_motion = 0.0;
    double rate_residual = 0.0; // everything that is not motion
    double distortion = 0.0;    // weighted, 8-bit scale, includes c_t

    double rate() const { return rate_motion + rate_residual; }
};

FrameLoss frame_loss(const FrameStats& stats, const LossWeights& w, int bit_depth);

struct PathUnitLoss {
    FrameLoss frame;
    double weight = 1.0; // 2^level
};

struct PathLossReport {
    double lambda = 0.0; // effective multiplier of distortion
    double i_rate = 0.0;
    double i_dist = 0.0;
    std::vector<PathUnitLoss> units;
    double total = 0.0;

    // Recomputes the total from its parts.
    double recompute() const;
    // Weighted B-frame part only.
    double bframe_term() const;
};

// L = R^I + lambda D^I + sum over the path of 2^level (R^m + R^res + lambda D).
PathLossReport path_loss(std::span<const FrameLoss> i_frames, std::span<const FrameLoss> path_units,
                         const LossWeights& w);

// Codes the two I-frames bounding GoP `gop_index` and the B-frames of `path`
// (offsets relative to the GoP start) and returns their losses.
struct PathEncoding {
    std::vector<FrameLoss> i_frames;
    std::vector<FrameLoss> units;
};
PathEncoding encode_path(std::span<const Frame> clip, int gop_index, const RandomPath& path,
                         const CodecConfig& cfg);

// Mean path loss over every leaf of the first GoP, each path coded on its
// own; the I-frame terms are counted once.
double expected_path_loss_exact(std::span<const Frame> clip, const CodecConfig& cfg);

// Per-frame losses of the first GoP coded as a whole (I-frames and all B-frames).
struct GopLoss {
    std::vector<FrameLoss> i_frames;
    std::vector<FrameLoss> bframes;
    double i_term = 0.0;      // R^I + lambda D^I
    double bframe_sum = 0.0;  // sum over B-frames of R + lambda D
};
GopLoss first_gop_loss(std::span<const Frame> clip, const CodecConfig& cfg);

// ------------------------------------------------------------ calibration

struct CalibrationStep {
    int pass = 0;
    LatentStream stream = LatentStream::Rc;
    int level = 0;
    double multiplier = 1.0;
    double q_enc = 1.0;
    double objective = 0.0;
};

struct CalibrationResult {
    GainTable table;
    double initial_objective = 0.0;
    double final_objective = 0.0;
    int evaluations = 0;
    std::vector<CalibrationStep> accepted; // objective strictly decreasing
};

struct CalibrationOptions {
    int budget = 1;          // coordinate-descent passes
    uint64_t seed = 1;
    int paths_per_clip = 8;
    std::array<double, 2> multipliers{0.8, 1.25};
};

// Coordinate descent over the per-level gains of both streams. The objective
// is the mean path loss over paths sampled once per clip; q_dec follows
// 1/q_enc. Starts from cfg.gains.
CalibrationResult calibrate_gains(std::span<const std::vector<Frame>> clips, const CodecConfig& cfg,
                                  const CalibrationOptions& options);

// Mean path loss of `cfg` over the given (gop index, path) samples per clip.
struct PathSample {
    int gop_index = 0;
    RandomPath path;
};
std::vector<std::vector<PathSample>> sample_paths(std::span<const std::vector<Frame>> clips,
                                                  int gop_size, int paths_per_clip, uint64_t seed);
double calibration_objective(std::span<const std::vector<Frame>> clips,
                             std::span<const std::vector<PathSample>> samples, const CodecConfig& cfg);

// Writes <stem>.json and <stem>.bin.
void save_gain_table(const GainTable& table, const std::filesystem::path& stem);
GainTable load_gain_table(const std::filesystem::path& path);

// ------------------------------------------------------------ adaptation

struct FrameAdaptation {
    int t = 0;
    FrameKind kind = FrameKind::Intra;
    int level = 0;
    FrameOverrides chosen;
    double cost_before = 0.0; // identity overrides, same references
    double cost_after = 0.0;
    int trials = 0;
};

struct AdaptationResult {
    std::vector<FrameAdaptation> frames; // decode order
    EncodedSequence stream;              // coded with the chosen overrides
    std::vector<FrameOverrides> overrides; // display order
};

// Per-frame greedy search over encoder-side offsets in decode order. `budget`
// caps the trial encodes per frame; 0 keeps every frame at identity.
AdaptationResult content_adapt(std::span<const Frame> frames, const SequenceInfo& info,
                               const CodecConfig& cfg, int budget, bool truncate = false);

// R + lambda D of one frame.
double frame_cost(const FrameStats& stats, const LossWeights& w, int bit_depth);

// Sum of frame costs of a coded sequence.
double sequence_cost(const EncodedSequence& seq, const LossWeights& w);

void write_adaptation_csv(const AdaptationResult& result, const std::filesystem::path& path);

} // namespace hbvc
