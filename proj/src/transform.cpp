#include "hbvc/transform.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include <nlohmann/json.hpp>

#include "hbvc/error.hpp"

namespace hbvc {

namespace {

struct DctBasis {
    std::array<double, 64> m{}; // m[8*k + n] = c_k cos((2n+1)k pi / 16)

    DctBasis() {
        for (int k = 0; k < 8; ++k) {
            const double c = k == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
            for (int n = 0; n < 8; ++n)
                m[8 * k + n] = c * std::cos((2 * n + 1) * k * std::numbers::pi / 16.0);
        }
    }
};

const DctBasis& basis() {
    static const DctBasis b;
    return b;
}

void check_gain(const LevelGain& g) {
    if (!(g.q_enc > 0.0) || !(g.q_dec > 0.0) || !std::isfinite(g.q_enc) ||
        !std::isfinite(g.q_dec))
        fail(ErrorKind::InvalidGain, "HGU gains must be finite and positive");
}

const char* stream_name(LatentStream s) { return s == LatentStream::Motion ? "motion" : "rc"; }

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

uint32_t get_u32(std::span<const uint8_t> bytes, size_t& offset) {
    if (offset + 4 > bytes.size()) fail(ErrorKind::BitstreamCorruption, "gain table truncated");
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(bytes[offset + i]) << (8 * i);
    offset += 4;
    return v;
}

} // namespace

Block8 dct8_forward(const Block8& block) {
    const auto& m = basis().m;
    Block8 tmp{}, out{};
    // rows
    for (int r = 0; r < 8; ++r)
        for (int k = 0; k < 8; ++k) {
            double s = 0;
            for (int n = 0; n < 8; ++n) s += m[8 * k + n] * block[8 * r + n];
            tmp[8 * r + k] = s;
        }
    // columns
    for (int c = 0; c < 8; ++c)
        for (int k = 0; k < 8; ++k) {
            double s = 0;
            for (int n = 0; n < 8; ++n) s += m[8 * k + n] * tmp[8 * n + c];
            out[8 * k + c] = s;
        }
    return out;
}

Block8 dct8_inverse(const Block8& coeffs) {
    const auto& m = basis().m;
    Block8 tmp{}, out{};
    for (int c = 0; c < 8; ++c)
        for (int n = 0; n < 8; ++n) {
            double s = 0;
            for (int k = 0; k < 8; ++k) s += m[8 * k + n] * coeffs[8 * k + c];
            tmp[8 * n + c] = s;
        }
    for (int r = 0; r < 8; ++r)
        for (int n = 0; n < 8; ++n) {
            double s = 0;
            for (int k = 0; k < 8; ++k) s += m[8 * k + n] * tmp[8 * r + k];
            out[8 * r + n] = s;
        }
    return out;
}

double snap_fixed16(double value) { return from_fixed16(to_fixed16(value)); }

uint32_t to_fixed16(double value) {
    if (!(value >= 0.0) || value >= 65536.0)
        fail(ErrorKind::InvalidGain, "value outside the 16.16 range");
    const auto raw = static_cast<uint32_t>(std::llround(value * 65536.0));
    return raw == 0 ? 1u : raw;
}

double from_fixed16(uint32_t raw) { return static_cast<double>(raw) / 65536.0; }

GainTable GainTable::identity(int max_level) {
    GainTable t;
    for (int level = 1; level <= max_level; ++level) {
        t.set(LatentStream::Motion, level, {1.0, 1.0});
        t.set(LatentStream::Rc, level, {1.0, 1.0});
    }
    return t;
}

void GainTable::set(LatentStream stream, int level, LevelGain gain) {
    check_gain(gain);
    if (level < 1 || level > 255) fail(ErrorKind::InvalidArgument, "gain level must be in [1, 255]");
    auto& map = stream == LatentStream::Motion ? motion_ : rc_;
    map[level] = {snap_fixed16(gain.q_enc), snap_fixed16(gain.q_dec)};
}

std::optional<LevelGain> GainTable::find(LatentStream stream, int level) const {
    const auto& map = levels(stream);
    if (auto it = map.find(level); it != map.end()) return it->second;
    return std::nullopt;
}

LevelGain GainTable::resolve(LatentStream stream, int level, bool allow_extrapolation) const {
    if (auto g = find(stream, level)) return *g;
    if (!allow_extrapolation)
        fail(ErrorKind::MissingLevel, std::string("no ") + stream_name(stream) +
                                          " gain for level " + std::to_string(level));
    const LevelGain g = extrapolate_gains(*this, stream, level);
    return {snap_fixed16(g.q_enc), snap_fixed16(g.q_dec)};
}

const std::map<int, LevelGain>& GainTable::levels(LatentStream stream) const {
    return stream == LatentStream::Motion ? motion_ : rc_;
}

int GainTable::max_level() const {
    int m = 0;
    if (!motion_.empty()) m = std::max(m, motion_.rbegin()->first);
    if (!rc_.empty()) m = std::max(m, rc_.rbegin()->first);
    return m;
}

// Layout per stream (motion, then rc): u8 count, then per entry
// u8 level, u32 q_enc (16.16), u32 q_dec (16.16), little-endian.
std::vector<uint8_t> GainTable::serialize() const {
    std::vector<uint8_t> out;
    for (const auto* map : {&motion_, &rc_}) {
        out.push_back(static_cast<uint8_t>(map->size()));
        for (const auto& [level, g] : *map) {
            out.push_back(static_cast<uint8_t>(level));
            put_u32(out, to_fixed16(g.q_enc));
            put_u32(out, to_fixed16(g.q_dec));
        }
    }
    return out;
}

GainTable GainTable::deserialize(std::span<const uint8_t> bytes, size_t& offset) {
    GainTable t;
    for (LatentStream s : {LatentStream::Motion, LatentStream::Rc}) {
        if (offset >= bytes.size()) fail(ErrorKind::BitstreamCorruption, "gain table truncated");
        const int count = bytes[offset++];
        for (int i = 0; i < count; ++i) {
            if (offset >= bytes.size()) fail(ErrorKind::BitstreamCorruption, "gain table truncated");
            const int level = bytes[offset++];
            const uint32_t enc = get_u32(bytes, offset);
            const uint32_t dec = get_u32(bytes, offset);
            if (enc == 0 || dec == 0 || level == 0)
                fail(ErrorKind::BitstreamCorruption, "gain table holds a zero entry");
            t.set(s, level, {from_fixed16(enc), from_fixed16(dec)});
        }
    }
    return t;
}

nlohmann::json GainTable::to_json() const {
    nlohmann::json j;
    for (LatentStream s : {LatentStream::Motion, LatentStream::Rc}) {
        nlohmann::json arr = nlohmann::json::array();
        for (const auto& [level, g] : levels(s))
            arr.push_back({{"level", level}, {"q_enc", g.q_enc}, {"q_dec", g.q_dec}});
        j[stream_name(s)] = std::move(arr);
    }
    return j;
}

GainTable GainTable::from_json(const nlohmann::json& j) {
    GainTable t;
    for (LatentStream s : {LatentStream::Motion, LatentStream::Rc}) {
        if (!j.contains(stream_name(s))) continue;
        for (const auto& e : j.at(stream_name(s)))
            t.set(s, e.at("level").get<int>(), {e.at("q_enc").get<double>(), e.at("q_dec").get<double>()});
    }
    return t;
}

int32_t quantize_scaled(double value, double q_enc, double base_step) {
    if (!(q_enc > 0.0)) fail(ErrorKind::InvalidGain, "q_enc must be positive");
    if (!(base_step > 0.0)) fail(ErrorKind::InvalidArgument, "base_step must be positive");
    return static_cast<int32_t>(std::round(value * q_enc / base_step));
}

double dequantize_scaled(int32_t symbol, double q_dec, double base_step) {
    return static_cast<double>(symbol) * base_step * q_dec;
}

std::vector<int32_t> hgu_quantize(const LatentBlock& latent, const GainTable& table,
                                  double base_step) {
    const LevelGain g = table.resolve(latent.stream, latent.level);
    check_gain(g);
    std::vector<int32_t> out;
    out.reserve(latent.coeffs.size());
    for (double v : latent.coeffs) {
        if (!std::isfinite(v)) fail(ErrorKind::InvalidInput, "latent values must be finite");
        out.push_back(quantize_scaled(v, g.q_enc, base_step));
    }
    return out;
}

LatentBlock hgu_dequantize(std::span<const int32_t> symbols, LatentStream stream, int level,
                           const GainTable& table, double base_step, bool allow_extrapolation) {
    const LevelGain g = table.resolve(stream, level, allow_extrapolation);
    LatentBlock out;
    out.stream = stream;
    out.level = level;
    out.coeffs.reserve(symbols.size());
    for (int32_t s : symbols) out.coeffs.push_back(dequantize_scaled(s, g.q_dec, base_step));
    return out;
}

LevelGain extrapolate_gains(const GainTable& table, LatentStream stream, int target_level) {
    const auto& map = table.levels(stream);
    if (map.size() < 2)
        fail(ErrorKind::UnderdeterminedFit,
             std::string("need at least two ") + stream_name(stream) + " levels to extrapolate");
    const double n = static_cast<double>(map.size());
    double mean_x = 0, mean_enc = 0, mean_dec = 0;
    for (const auto& [level, g] : map) {
        mean_x += level;
        mean_enc += std::log(g.q_enc);
        mean_dec += std::log(g.q_dec);
    }
    mean_x /= n;
    mean_enc /= n;
    mean_dec /= n;
    double sxx = 0, sxe = 0, sxd = 0;
    for (const auto& [level, g] : map) {
        const double dx = level - mean_x;
        sxx += dx * dx;
        sxe += dx * (std::log(g.q_enc) - mean_enc);
        sxd += dx * (std::log(g.q_dec) - mean_dec);
    }
    const double dx = target_level - mean_x;
    return {std::exp(mean_enc + sxe / sxx * dx), std::exp(mean_dec + sxd / sxx * dx)};
}

} // namespace hbvc
