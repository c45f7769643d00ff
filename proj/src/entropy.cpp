#include "hbvc/entropy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "hbvc/error.hpp"

namespace hbvc {

namespace {

constexpr uint32_t kTopValue = 1u << 24;

[[noreturn]] void corrupt(const std::string& what) {
    fail(ErrorKind::BitstreamCorruption, what);
}

} // namespace

// ---------------------------------------------------------------- tables

FrequencyTable FrequencyTable::from_weights(std::span<const double> weights) {
    if (weights.empty() || weights.size() > kProbabilityTotal / 2)
        fail(ErrorKind::InvalidArgument, "frequency table size out of range");
    const double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
    const auto n = static_cast<uint32_t>(weights.size());
    std::vector<uint32_t> freq(n, 1);
    if (sum > 0.0) {
        for (uint32_t i = 0; i < n; ++i) {
            const double share = std::max(0.0, weights[i]) / sum * kProbabilityTotal;
            freq[i] = std::max<uint32_t>(1, static_cast<uint32_t>(share));
        }
    }
    int64_t diff = static_cast<int64_t>(kProbabilityTotal) -
                   std::accumulate(freq.begin(), freq.end(), int64_t{0});
    while (diff != 0) {
        const auto it = std::max_element(freq.begin(), freq.end());
        if (diff > 0) {
            *it += static_cast<uint32_t>(diff);
            diff = 0;
        } else {
            const auto take = static_cast<uint32_t>(std::min<int64_t>(-diff, *it - 1));
            *it -= take;
            diff += take;
        }
    }
    FrequencyTable t;
    t.cdf_.resize(n + 1);
    t.cdf_[0] = 0;
    for (uint32_t i = 0; i < n; ++i) t.cdf_[i + 1] = t.cdf_[i] + freq[i];
    return t;
}

FrequencyTable FrequencyTable::from_counts(std::span<const uint32_t> counts) {
    std::vector<double> w(counts.begin(), counts.end());
    return from_weights(w);
}

FrequencyTable FrequencyTable::uniform(int n) {
    std::vector<double> w(static_cast<size_t>(n), 1.0);
    return from_weights(w);
}

int FrequencyTable::most_probable() const {
    int best = 0;
    for (int i = 1; i < size(); ++i)
        if (freq(i) > freq(best)) best = i;
    return best;
}

int FrequencyTable::lookup(uint32_t target) const {
    const auto it = std::upper_bound(cdf_.begin() + 1, cdf_.end(), target);
    return static_cast<int>(it - cdf_.begin()) - 1;
}

// ---------------------------------------------------------------- models

SymbolModel SymbolModel::laplacian(double scale, int max_magnitude) {
    if (!(scale > 0.0) || max_magnitude < 1)
        fail(ErrorKind::InvalidArgument, "laplacian model needs scale > 0 and max_magnitude >= 1");
    const double r = std::exp(-1.0 / scale);
    std::vector<double> w;
    w.reserve(2 * max_magnitude + 2);
    for (int k = -max_magnitude; k <= max_magnitude; ++k) w.push_back(std::pow(r, std::abs(k)));
    w.push_back(2.0 * std::pow(r, max_magnitude + 1) / (1.0 - r));
    SymbolModel m;
    m.table_ = FrequencyTable::from_weights(w);
    m.min_value_ = -max_magnitude;
    m.max_value_ = max_magnitude;
    m.has_escape_ = true;
    m.cache_mode();
    return m;
}

SymbolModel SymbolModel::degenerate(int32_t value) {
    SymbolModel m;
    m.degenerate_ = true;
    m.degenerate_value_ = value;
    m.min_value_ = m.max_value_ = value;
    m.mode_ = value;
    m.p_max_ = 1.0;
    return m;
}

SymbolModel SymbolModel::categorical(FrequencyTable table) {
    SymbolModel m;
    m.min_value_ = 0;
    m.max_value_ = table.size() - 1;
    m.table_ = std::move(table);
    m.cache_mode();
    return m;
}

void SymbolModel::cache_mode() {
    int idx = table_.most_probable();
    if (has_escape_ && idx == table_.size() - 1) {
        // Escape cannot be substituted; fall back to the best in-range value.
        idx = 0;
        for (int i = 1; i < table_.size() - 1; ++i)
            if (table_.freq(i) > table_.freq(idx)) idx = i;
    }
    mode_ = min_value_ + idx;
    p_max_ = table_.probability(idx);
}

int escape_bits(int32_t value, int max_magnitude) {
    const uint64_t m = static_cast<uint64_t>(std::abs(static_cast<int64_t>(value))) - max_magnitude - 1;
    int len = 0;
    while ((m + 1) >> (len + 1)) ++len;
    return 2 * len + 1 + 1;
}

double SymbolModel::cost_bits(int32_t value) const {
    if (degenerate_)
        return value == degenerate_value_ ? 0.0 : std::numeric_limits<double>::infinity();
    if (value >= min_value_ && value <= max_value_)
        return -std::log2(table_.probability(value - min_value_));
    if (!has_escape_) return std::numeric_limits<double>::infinity();
    return -std::log2(table_.probability(table_.size() - 1)) + escape_bits(value, max_value_);
}

// ---------------------------------------------------------------- coder

void RangeEncoder::encode(uint32_t cum, uint32_t freq) {
    const uint32_t r = range_ >> kProbabilityBits;
    low_ += static_cast<uint64_t>(r) * cum;
    range_ = r * freq;
    while (range_ < kTopValue) {
        range_ <<= 8;
        shift_low();
    }
    ++symbols_;
}

void RangeEncoder::shift_low() {
    if (static_cast<uint32_t>(low_) < 0xFF000000u || (low_ >> 32) != 0) {
        const auto carry = static_cast<uint8_t>(low_ >> 32);
        uint8_t temp = cache_;
        do {
            if (!first_) out_.push_back(static_cast<uint8_t>(temp + carry));
            first_ = false;
            temp = 0xFF;
        } while (--cache_size_ != 0);
        cache_ = static_cast<uint8_t>(low_ >> 24);
    }
    ++cache_size_;
    low_ = (low_ & 0x00FFFFFFu) << 8;
}

std::vector<uint8_t> RangeEncoder::finish() {
    if (symbols_ == 0) return {};
    for (int i = 0; i < 5; ++i) shift_low();
    return std::move(out_);
}

RangeDecoder::RangeDecoder(std::span<const uint8_t> bytes) : bytes_(bytes) {
    for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | next_byte();
}

uint8_t RangeDecoder::next_byte() {
    if (pos_ >= bytes_.size()) corrupt("range-coded payload exhausted");
    return bytes_[pos_++];
}

uint32_t RangeDecoder::peek() const {
    const uint32_t r = range_ >> kProbabilityBits;
    const uint32_t v = code_ / r;
    return std::min(v, kProbabilityTotal - 1);
}

void RangeDecoder::consume(uint32_t cum, uint32_t freq) {
    const uint32_t r = range_ >> kProbabilityBits;
    code_ -= r * cum;
    range_ = r * freq;
    while (range_ < kTopValue) {
        code_ = (code_ << 8) | next_byte();
        range_ <<= 8;
    }
}

bool RangeDecoder::decode_bit() {
    const bool bit = peek() >= kProbabilityTotal / 2;
    consume(bit ? kProbabilityTotal / 2 : 0, kProbabilityTotal / 2);
    return bit;
}

// ---------------------------------------------------------------- streams

namespace {

void encode_escape(RangeEncoder& enc, int32_t value, int max_magnitude) {
    enc.encode_bit(value < 0);
    const uint64_t m1 = static_cast<uint64_t>(std::abs(static_cast<int64_t>(value))) - max_magnitude;
    int len = 0;
    while (m1 >> (len + 1)) ++len;
    for (int i = 0; i < len; ++i) enc.encode_bit(false);
    for (int i = len; i >= 0; --i) enc.encode_bit((m1 >> i) & 1u);
}

int32_t decode_escape(RangeDecoder& dec, int max_magnitude) {
    const bool negative = dec.decode_bit();
    int len = 0;
    while (!dec.decode_bit()) {
        if (++len > 30) corrupt("escape code too long");
    }
    uint64_t m1 = 1;
    for (int i = 0; i < len; ++i) m1 = (m1 << 1) | (dec.decode_bit() ? 1u : 0u);
    const auto magnitude = static_cast<int64_t>(m1) + max_magnitude;
    if (magnitude > std::numeric_limits<int32_t>::max()) corrupt("escape value overflows");
    return static_cast<int32_t>(negative ? -magnitude : magnitude);
}

const SymbolModel& model_for(std::span<const SymbolModel> models, uint16_t band) {
    if (band >= models.size())
        fail(ErrorKind::InvalidArgument, "band " + std::to_string(band) + " has no model");
    return models[band];
}

} // namespace

EncodedSymbols encode_symbols(const SymbolStream& stream, std::span<const SymbolModel> models,
                              const SkipPolicy& policy) {
    if (stream.values.size() != stream.bands.size())
        fail(ErrorKind::InvalidArgument, "symbol and band counts differ");
    EncodedSymbols out;
    out.values.reserve(stream.size());
    RangeEncoder enc;
    for (size_t i = 0; i < stream.size(); ++i) {
        const SymbolModel& m = model_for(models, stream.bands[i]);
        const int32_t v = stream.values[i];
        if (policy.skips(m)) {
            out.values.push_back(m.mode());
            ++out.skipped;
            continue;
        }
        const auto& table = m.table();
        if (v >= m.min_value() && v <= m.max_value()) {
            const int idx = v - m.min_value();
            enc.encode(table.cum(idx), table.freq(idx));
        } else if (m.has_escape()) {
            const int idx = table.size() - 1;
            enc.encode(table.cum(idx), table.freq(idx));
            encode_escape(enc, v, m.max_value());
        } else {
            fail(ErrorKind::InvalidArgument,
                 "value " + std::to_string(v) + " outside a model without escape");
        }
        out.values.push_back(v);
    }
    out.bytes = enc.finish();
    return out;
}

std::vector<int32_t> decode_symbols(std::span<const uint8_t> bytes,
                                    std::span<const uint16_t> bands,
                                    std::span<const SymbolModel> models, const SkipPolicy& policy) {
    std::vector<int32_t> out;
    out.reserve(bands.size());
    size_t coded = 0;
    for (uint16_t b : bands)
        if (!policy.skips(model_for(models, b))) ++coded;
    if (coded == 0) {
        if (!bytes.empty()) corrupt("payload present but every symbol is skipped");
        for (uint16_t b : bands) out.push_back(models[b].mode());
        return out;
    }

    RangeDecoder dec(bytes);
    for (uint16_t b : bands) {
        const SymbolModel& m = models[b];
        if (policy.skips(m)) {
            out.push_back(m.mode());
            continue;
        }
        const auto& table = m.table();
        const int idx = table.lookup(dec.peek());
        dec.consume(table.cum(idx), table.freq(idx));
        if (m.has_escape() && idx == table.size() - 1)
            out.push_back(decode_escape(dec, m.max_value()));
        else
            out.push_back(m.min_value() + idx);
    }
    if (!dec.at_end()) corrupt("range-coded payload has trailing bytes (symbol count mismatch)");
    return out;
}

double estimate_bits(const SymbolStream& stream, std::span<const SymbolModel> models,
                     const SkipPolicy& policy) {
    double bits = 0.0;
    for (size_t i = 0; i < stream.size(); ++i) {
        const SymbolModel& m = model_for(models, stream.bands[i]);
        if (policy.skips(m)) continue;
        bits += m.cost_bits(stream.values[i]);
    }
    return bits;
}

} // namespace hbvc
