#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "hbvc/frame.hpp"

namespace hbvc {

// Displacement in quarter-pel units: the prediction of sample (x, y) is read
// from the reference at (x + dx/4, y + dy/4).
struct MotionVector {
    int dx = 0;
    int dy = 0;
    bool operator==(const MotionVector&) const = default;
};

struct MotionField {
    int block_size = 16;
    int cols = 0;
    int rows = 0;
    std::vector<MotionVector> vectors; // raster order

    MotionField() = default;
    MotionField(int block, int frame_width, int frame_height);

    const MotionVector& at(int col, int row) const { return vectors[static_cast<size_t>(row) * cols + col]; }
    MotionVector& at(int col, int row) { return vectors[static_cast<size_t>(row) * cols + col]; }
    bool operator==(const MotionField&) const = default;
};

struct MotionParams {
    int block_size = 16;
    int search_range = 32;  // integer pels
    int subpel_divisor = 4; // 1, 2 or 4
    double lambda_me = 0.0; // weight of the vector rate against SAD
};

void validate(const MotionParams& params);

// Integer-pel full search (SAD + lambda_me * bits) followed by half- and
// quarter-pel refinement; vector rates are measured against the median
// predictor of already chosen neighbours.
MotionField estimate_motion(const Frame& target, const Frame& ref, const MotionParams& params);

// Past and future fields, estimated independently.
std::pair<MotionField, MotionField> estimate_bidir(const Frame& target, const Frame& ref_p,
                                                   const Frame& ref_f, const MotionParams& params);

// Block copy with separable 4-tap sub-pel interpolation and edge clamping.
Frame compensate(const Frame& ref, const MotionField& field);

// Luma SAD of one block for a given vector (quarter-pel), edge clamped.
int64_t block_sad(const Plane& target, const Plane& ref, int x0, int y0, int size,
                  const MotionVector& mv);

// Interpolated prediction of a w x h block at (x0, y0) displaced by
// (qx, qy) quarter samples of `ref`.
void predict_block(const Plane& ref, int x0, int y0, int w, int h, int qx, int qy,
                   std::span<int32_t> out, int max_sample);

// Chroma displacement in chroma quarter samples for a luma quarter-pel component.
int chroma_component(int luma_quarter);

// Median of left, top and top-left; first row uses left, first column top.
MotionVector median_predictor(const MotionField& decoded, int col, int row);

// Approximate bits of a signed Exp-Golomb code, used as the search rate term.
int vector_component_bits(int value);

constexpr int kMotionBands = 2; // dx, dy

struct MotionLatent {
    std::vector<int32_t> symbols; // per block dx, dy; past field then future field
    MotionField decoded_p;
    MotionField decoded_f;
};

// Spatially predicted vector residuals scaled by q_enc / base_step and
// rounded. Prediction runs on decoded vectors so the decoder can mirror it.
// `forced[c]` pins every symbol of component c (used when a band is skipped).
MotionLatent code_motion(const MotionField& past, const MotionField& future, double q_enc,
                         double q_dec, double base_step,
                         std::array<std::optional<int32_t>, 2> forced = {});

std::pair<MotionField, MotionField> decode_motion(std::span<const int32_t> symbols, int block,
                                                  int frame_width, int frame_height,
                                                  double q_dec, double base_step);

nlohmann::json field_to_json(const MotionField& field);

} // namespace hbvc
