#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace hbvc {

using Block8 = std::array<double, 64>;

// Orthonormal 2-D DCT-II on 8x8 blocks, row-major (index = 8*row + col).
Block8 dct8_forward(const Block8& block);
Block8 dct8_inverse(const Block8& coeffs);

constexpr int kBandsPerPlaneType = 15;

// Frequency band of a coefficient: its anti-diagonal u+v in [0, 14].
constexpr int coefficient_band(int index) { return index / 8 + index % 8; }

enum class LatentStream : uint8_t { Motion = 0, Rc = 1 };

struct LevelGain {
    double q_enc = 1.0;
    double q_dec = 1.0;
    bool operator==(const LevelGain&) const = default;
};

// Per-level HGU scaling factors for the motion and residual/confidence latents.
// Values live on the 16.16 fixed-point grid used by the bitstream header, so
// what the encoder uses is exactly what the decoder reads back.
class GainTable {
public:
    GainTable() = default;

    // Unit gains for levels 1..max_level on both streams.
    static GainTable identity(int max_level);

    void set(LatentStream stream, int level, LevelGain gain);
    std::optional<LevelGain> find(LatentStream stream, int level) const;
    // Exact entry if present, otherwise the exponential extrapolation.
    LevelGain resolve(LatentStream stream, int level, bool allow_extrapolation = true) const;

    const std::map<int, LevelGain>& levels(LatentStream stream) const;
    int max_level() const;

    std::vector<uint8_t> serialize() const;
    // Parses a table starting at `offset`, advancing it past the table.
    static GainTable deserialize(std::span<const uint8_t> bytes, size_t& offset);

    nlohmann::json to_json() const;
    static GainTable from_json(const nlohmann::json& j);

    bool operator==(const GainTable&) const = default;

private:
    std::map<int, LevelGain> motion_;
    std::map<int, LevelGain> rc_;
};

// Rounds to the nearest representable 16.16 value.
double snap_fixed16(double value);
uint32_t to_fixed16(double value);
double from_fixed16(uint32_t raw);

struct LatentBlock {
    LatentStream stream = LatentStream::Rc;
    int level = 1;
    std::vector<double> coeffs;
    std::vector<uint16_t> bands;
};

// symbol = round(value * q_enc / base_step), ties away from zero.
int32_t quantize_scaled(double value, double q_enc, double base_step);
// value = symbol * base_step * q_dec
double dequantize_scaled(int32_t symbol, double q_dec, double base_step);

std::vector<int32_t> hgu_quantize(const LatentBlock& latent, const GainTable& table,
                                  double base_step);
LatentBlock hgu_dequantize(std::span<const int32_t> symbols, LatentStream stream, int level,
                           const GainTable& table, double base_step,
                           bool allow_extrapolation = true);

// Least-squares fit of log(gain) against level, evaluated at target_level.
LevelGain extrapolate_gains(const GainTable& table, LatentStream stream, int target_level);

} // namespace hbvc
