#include "hbvc/motion.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <string>

#include <nlohmann/json.hpp>

#include "hbvc/error.hpp"
#include "hbvc/transform.hpp"

namespace hbvc {

namespace {

// Quarter-sample taps at positions -1, 0, +1, +2; each row sums to 64.
constexpr int kTaps[4][4] = {
    {0, 64, 0, 0},
    {-4, 54, 16, -2},
    {-4, 36, 36, -4},
    {-2, 16, 54, -4},
};

int floor_div4(int v) { return v >= 0 ? v / 4 : -((-v + 3) / 4); }

// Edge-replicated copy of a plane with a margin, so integer-offset reads
// inside the margin need no clamping.
class PaddedPlane {
public:
    PaddedPlane(const Plane& p, int margin)
        : margin_(margin), stride_(p.width + 2 * margin),
          data_(static_cast<size_t>(stride_) * (p.height + 2 * margin)) {
        for (int y = -margin; y < p.height + margin; ++y) {
            uint16_t* row = data_.data() + static_cast<size_t>(y + margin) * stride_;
            for (int x = -margin; x < p.width + margin; ++x) row[x + margin] = p.clamped(x, y);
        }
    }

    const uint16_t* row(int y) const {
        return data_.data() + static_cast<size_t>(y + margin_) * stride_ + margin_;
    }

private:
    int margin_;
    int stride_;
    std::vector<uint16_t> data_;
};

struct Candidate {
    MotionVector mv;
    double cost = std::numeric_limits<double>::infinity();
    int rate = 0;
    bool valid = false;
};

bool better(double cost, int rate, const MotionVector& mv, const Candidate& best) {
    if (!best.valid) return true;
    if (cost != best.cost) return cost < best.cost;
    if (rate != best.rate) return rate < best.rate;
    return std::abs(mv.dx) + std::abs(mv.dy) < std::abs(best.mv.dx) + std::abs(best.mv.dy);
}

int vector_bits(const MotionVector& mv, const MotionVector& pred) {
    return vector_component_bits(mv.dx - pred.dx) + vector_component_bits(mv.dy - pred.dy);
}

int64_t subpel_sad(const Plane& target, const Plane& ref, int x0, int y0, int size,
                   const MotionVector& mv, std::vector<int32_t>& scratch, int max_sample) {
    scratch.resize(static_cast<size_t>(size) * size);
    predict_block(ref, x0, y0, size, size, mv.dx, mv.dy, scratch, max_sample);
    int64_t sad = 0;
    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x)
            sad += std::abs(static_cast<int>(target.at(x0 + x, y0 + y)) -
                            scratch[static_cast<size_t>(y) * size + x]);
    return sad;
}

} // namespace

MotionField::MotionField(int block, int frame_width, int frame_height)
    : block_size(block), cols((frame_width + block - 1) / block),
      rows((frame_height + block - 1) / block), vectors(static_cast<size_t>(cols) * rows) {}

void validate(const MotionParams& params) {
    if (params.block_size != 8 && params.block_size != 16 && params.block_size != 32)
        fail(ErrorKind::InvalidArgument, "motion block size must be 8, 16 or 32");
    if (params.search_range < 1) fail(ErrorKind::InvalidArgument, "search range must be >= 1");
    if (params.subpel_divisor != 1 && params.subpel_divisor != 2 && params.subpel_divisor != 4)
        fail(ErrorKind::InvalidArgument, "sub-pel divisor must be 1, 2 or 4");
    if (params.lambda_me < 0.0) fail(ErrorKind::InvalidArgument, "lambda_me must be >= 0");
}

int vector_component_bits(int value) {
    const unsigned mapped = value > 0 ? 2u * value - 1u : 2u * static_cast<unsigned>(-value);
    int len = 0;
    while ((mapped + 1) >> (len + 1)) ++len;
    return 2 * len + 1;
}

int chroma_component(int luma_quarter) {
    return luma_quarter >= 0 ? (luma_quarter + 1) / 2 : -((-luma_quarter + 1) / 2);
}

void predict_block(const Plane& ref, int x0, int y0, int w, int h, int qx, int qy,
                   std::span<int32_t> out, int max_sample) {
    const int ix = x0 + floor_div4(qx);
    const int iy = y0 + floor_div4(qy);
    const int fx = qx - 4 * floor_div4(qx);
    const int fy = qy - 4 * floor_div4(qy);
    if (fx == 0 && fy == 0) {
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                out[static_cast<size_t>(y) * w + x] = ref.clamped(ix + x, iy + y);
        return;
    }
    // Horizontal pass over h + 3 rows, then vertical.
    std::vector<int32_t> tmp(static_cast<size_t>(h + 3) * w);
    for (int y = -1; y < h + 2; ++y)
        for (int x = 0; x < w; ++x) {
            int32_t s = 0;
            for (int k = 0; k < 4; ++k) s += kTaps[fx][k] * ref.clamped(ix + x - 1 + k, iy + y);
            tmp[static_cast<size_t>(y + 1) * w + x] = s;
        }
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            int32_t s = 0;
            for (int k = 0; k < 4; ++k) s += kTaps[fy][k] * tmp[static_cast<size_t>(y + k) * w + x];
            const int32_t v = (s + 2048) >> 12;
            out[static_cast<size_t>(y) * w + x] = std::clamp(v, 0, max_sample);
        }
}

int64_t block_sad(const Plane& target, const Plane& ref, int x0, int y0, int size,
                  const MotionVector& mv) {
    std::vector<int32_t> scratch;
    return subpel_sad(target, ref, x0, y0, size, mv, scratch, 65535);
}

MotionVector median_predictor(const MotionField& decoded, int col, int row) {
    if (row == 0 && col == 0) return {};
    if (row == 0) return decoded.at(col - 1, row);
    if (col == 0) return decoded.at(col, row - 1);
    const MotionVector& l = decoded.at(col - 1, row);
    const MotionVector& t = decoded.at(col, row - 1);
    const MotionVector& tl = decoded.at(col - 1, row - 1);
    auto med = [](int a, int b, int c) { return std::max(std::min(a, b), std::min(std::max(a, b), c)); };
    return {med(l.dx, t.dx, tl.dx), med(l.dy, t.dy, tl.dy)};
}

MotionField estimate_motion(const Frame& target, const Frame& ref, const MotionParams& params) {
    validate(params);
    if (!target.same_geometry(ref))
        fail(ErrorKind::InvalidInput, "motion estimation needs frames of identical geometry");
    const int bs = params.block_size;
    if (target.width() % bs != 0 || target.height() % bs != 0)
        fail(ErrorKind::InvalidInput, "frame must be padded to the motion block grid");
    const int range = params.search_range;
    const PaddedPlane padded(ref.y, range + bs + 4);
    MotionField field(bs, target.width(), target.height());
    std::vector<int32_t> scratch;
    const Plane& tgt = target.y;

    for (int row = 0; row < field.rows; ++row) {
        for (int col = 0; col < field.cols; ++col) {
            const int x0 = col * bs;
            const int y0 = row * bs;
            const int w = std::min(bs, tgt.width - x0);
            const int h = std::min(bs, tgt.height - y0);
            const MotionVector pred = median_predictor(field, col, row);

            Candidate best;
            auto try_integer = [&](int dx, int dy) {
                const MotionVector mv{4 * dx, 4 * dy};
                const int rate = vector_bits(mv, pred);
                const double rate_cost = params.lambda_me * rate;
                const double bound = best.valid ? best.cost - rate_cost : std::numeric_limits<double>::infinity();
                int64_t sad = 0;
                for (int y = 0; y < h; ++y) {
                    const uint16_t* t = tgt.samples.data() + static_cast<size_t>(y0 + y) * tgt.width + x0;
                    const uint16_t* r = padded.row(y0 + y + dy) + x0 + dx;
                    int row_sad = 0;
                    for (int x = 0; x < w; ++x) row_sad += std::abs(static_cast<int>(t[x]) - static_cast<int>(r[x]));
                    sad += row_sad;
                    if (static_cast<double>(sad) > bound) return;
                }
                const double cost = static_cast<double>(sad) + rate_cost;
                if (better(cost, rate, mv, best)) best = {mv, cost, rate, true};
            };
            // The selection order is total, so seeding only tightens pruning.
            try_integer(0, 0);
            try_integer(std::clamp(pred.dx / 4, -range, range), std::clamp(pred.dy / 4, -range, range));
            for (int dy = -range; dy <= range; ++dy)
                for (int dx = -range; dx <= range; ++dx) try_integer(dx, dy);

            for (int step = 2; step >= 1; step /= 2) {
                if (params.subpel_divisor < 4 / step) break;
                const MotionVector center = best.mv;
                for (int sy = -1; sy <= 1; ++sy)
                    for (int sx = -1; sx <= 1; ++sx) {
                        if (sx == 0 && sy == 0) continue;
                        const MotionVector mv{center.dx + sx * step, center.dy + sy * step};
                        if (std::abs(mv.dx) > 4 * range || std::abs(mv.dy) > 4 * range) continue;
                        const int rate = vector_bits(mv, pred);
                        const double cost =
                            static_cast<double>(subpel_sad(tgt, ref.y, x0, y0, bs, mv, scratch, ref.max_sample())) +
                            params.lambda_me * rate;
                        if (better(cost, rate, mv, best)) best = {mv, cost, rate, true};
                    }
            }
            field.at(col, row) = best.mv;
        }
    }
    return field;
}

std::pair<MotionField, MotionField> estimate_bidir(const Frame& target, const Frame& ref_p,
                                                   const Frame& ref_f, const MotionParams& params) {
    if (!target.same_geometry(ref_p) || !target.same_geometry(ref_f))
        fail(ErrorKind::InvalidInput, "bidirectional estimation needs matching geometry");
    return {estimate_motion(target, ref_p, params), estimate_motion(target, ref_f, params)};
}

Frame compensate(const Frame& ref, const MotionField& field) {
    const int bs = field.block_size;
    if (field.cols != (ref.width() + bs - 1) / bs || field.rows != (ref.height() + bs - 1) / bs)
        fail(ErrorKind::InvalidInput, "motion field grid does not match the frame");
    Frame out = ref;
    std::vector<int32_t> buf;
    const int max_sample = ref.max_sample();
    for (int row = 0; row < field.rows; ++row)
        for (int col = 0; col < field.cols; ++col) {
            const MotionVector& mv = field.at(col, row);
            for (PlaneId id : {PlaneId::Y, PlaneId::U, PlaneId::V}) {
                const bool luma = id == PlaneId::Y;
                const Plane& src = ref.plane(id);
                Plane& dst = out.plane(id);
                const int b = luma ? bs : bs / 2;
                const int x0 = col * b;
                const int y0 = row * b;
                const int w = std::min(b, src.width - x0);
                const int h = std::min(b, src.height - y0);
                if (w <= 0 || h <= 0) continue;
                const int qx = luma ? mv.dx : chroma_component(mv.dx);
                const int qy = luma ? mv.dy : chroma_component(mv.dy);
                buf.resize(static_cast<size_t>(w) * h);
                predict_block(src, x0, y0, w, h, qx, qy, buf, max_sample);
                for (int y = 0; y < h; ++y)
                    for (int x = 0; x < w; ++x)
                        dst.at(x0 + x, y0 + y) = static_cast<uint16_t>(buf[static_cast<size_t>(y) * w + x]);
            }
        }
    return out;
}

namespace {

void code_field(const MotionField& field, double q_enc, double q_dec, double base_step,
                const std::array<std::optional<int32_t>, 2>& forced, std::vector<int32_t>& symbols,
                MotionField& decoded) {
    decoded = MotionField();
    decoded.block_size = field.block_size;
    decoded.cols = field.cols;
    decoded.rows = field.rows;
    decoded.vectors.assign(field.vectors.size(), {});
    for (int row = 0; row < field.rows; ++row)
        for (int col = 0; col < field.cols; ++col) {
            const MotionVector pred = median_predictor(decoded, col, row);
            const MotionVector& mv = field.at(col, row);
            const int latent[2] = {mv.dx - pred.dx, mv.dy - pred.dy};
            int rec[2];
            for (int c = 0; c < 2; ++c) {
                const int32_t sym = forced[c] ? *forced[c] : quantize_scaled(latent[c], q_enc, base_step);
                symbols.push_back(sym);
                rec[c] = static_cast<int>(std::lround(dequantize_scaled(sym, q_dec, base_step)));
            }
            decoded.at(col, row) = {pred.dx + rec[0], pred.dy + rec[1]};
        }
}

} // namespace

MotionLatent code_motion(const MotionField& past, const MotionField& future, double q_enc,
                         double q_dec, double base_step,
                         std::array<std::optional<int32_t>, 2> forced) {
    if (!(q_enc > 0.0) || !(q_dec > 0.0)) fail(ErrorKind::InvalidGain, "motion gains must be positive");
    MotionLatent out;
    out.symbols.reserve(2 * (past.vectors.size() + future.vectors.size()));
    code_field(past, q_enc, q_dec, base_step, forced, out.symbols, out.decoded_p);
    code_field(future, q_enc, q_dec, base_step, forced, out.symbols, out.decoded_f);
    return out;
}

std::pair<MotionField, MotionField> decode_motion(std::span<const int32_t> symbols, int block,
                                                  int frame_width, int frame_height, double q_dec,
                                                  double base_step) {
    MotionField p(block, frame_width, frame_height);
    MotionField f(block, frame_width, frame_height);
    if (symbols.size() != 2 * (p.vectors.size() + f.vectors.size()))
        fail(ErrorKind::BitstreamCorruption, "motion symbol count does not match the block grid");
    size_t i = 0;
    for (MotionField* field : {&p, &f})
        for (int row = 0; row < field->rows; ++row)
            for (int col = 0; col < field->cols; ++col) {
                const MotionVector pred = median_predictor(*field, col, row);
                const int rx = static_cast<int>(std::lround(dequantize_scaled(symbols[i++], q_dec, base_step)));
                const int ry = static_cast<int>(std::lround(dequantize_scaled(symbols[i++], q_dec, base_step)));
                field->at(col, row) = {pred.dx + rx, pred.dy + ry};
            }
    return {std::move(p), std::move(f)};
}

nlohmann::json field_to_json(const MotionField& field) {
    nlohmann::json rows = nlohmann::json::array();
    for (int r = 0; r < field.rows; ++r) {
        nlohmann::json row = nlohmann::json::array();
        for (int c = 0; c < field.cols; ++c) row.push_back({field.at(c, r).dx, field.at(c, r).dy});
        rows.push_back(std::move(row));
    }
    return {{"block_size", field.block_size}, {"unit", "quarter-pel"}, {"vectors", std::move(rows)}};
}

} // namespace hbvc
