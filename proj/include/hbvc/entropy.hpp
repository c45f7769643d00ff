#pragma once

#include <cstdint>
#include <span>
#include <vector>

namespace hbvc {

constexpr int kProbabilityBits = 16;
constexpr uint32_t kProbabilityTotal = 1u << kProbabilityBits;

// Cumulative frequency table normalized to kProbabilityTotal, every entry >= 1.
class FrequencyTable {
public:
    FrequencyTable() = default;
    // Rescales arbitrary nonnegative weights; zero weights are lifted to 1.
    static FrequencyTable from_weights(std::span<const double> weights);
    static FrequencyTable from_counts(std::span<const uint32_t> counts);
    static FrequencyTable uniform(int n);

    int size() const { return static_cast<int>(cdf_.size()) - 1; }
    uint32_t cum(int i) const { return cdf_[i]; }
    uint32_t freq(int i) const { return cdf_[i + 1] - cdf_[i]; }
    double probability(int i) const { return static_cast<double>(freq(i)) / kProbabilityTotal; }
    // Index with the largest frequency; lowest index on ties.
    int most_probable() const;
    // Symbol whose cumulative interval contains `target`.
    int lookup(uint32_t target) const;

private:
    std::vector<uint32_t> cdf_;
};

// Probability model for one band. Values in [min_value, max_value] map to
// table entries; optional escape codes out-of-range values with bypass bits.
// A degenerate model puts all mass on a single value and is never coded.
class SymbolModel {
public:
    SymbolModel() = default;

    // Discretized two-sided geometric distribution p(k) ~ exp(-|k|/scale)
    // over [-max_magnitude, max_magnitude] plus an escape for the tails.
    static SymbolModel laplacian(double scale, int max_magnitude);
    static SymbolModel degenerate(int32_t value);
    // Values 0..n-1, no escape.
    static SymbolModel categorical(FrequencyTable table);

    bool is_degenerate() const { return degenerate_; }
    int32_t mode() const { return mode_; }
    double p_max() const { return p_max_; }
    bool has_escape() const { return has_escape_; }
    int32_t min_value() const { return min_value_; }
    int32_t max_value() const { return max_value_; }
    const FrequencyTable& table() const { return table_; }

    // Ideal code length in bits; escapes include their bypass bits.
    double cost_bits(int32_t value) const;

private:
    void cache_mode();

    FrequencyTable table_;
    int32_t min_value_ = 0;
    int32_t max_value_ = 0;
    bool has_escape_ = false;
    bool degenerate_ = false;
    int32_t degenerate_value_ = 0;
    int32_t mode_ = 0;
    double p_max_ = 1.0;
};

struct SkipPolicy {
    double tau = 0.95; // in [0.5, 1]

    bool skips(const SymbolModel& model) const { return model.p_max() >= tau; }
};

// Symbols with their band ids; the band sequence is structural and known to
// the decoder.
struct SymbolStream {
    std::vector<int32_t> values;
    std::vector<uint16_t> bands;

    void push(int32_t value, uint16_t band) {
        values.push_back(value);
        bands.push_back(band);
    }
    size_t size() const { return values.size(); }
};

struct EncodedSymbols {
    std::vector<uint8_t> bytes;
    std::vector<int32_t> values; // post-skip stream, what the decoder returns
    size_t skipped = 0;
};

EncodedSymbols encode_symbols(const SymbolStream& stream, std::span<const SymbolModel> models,
                              const SkipPolicy& policy);

// Decodes bands.size() symbols. Throws BitstreamCorruption when the payload
// is exhausted early or has bytes left over.
std::vector<int32_t> decode_symbols(std::span<const uint8_t> bytes,
                                    std::span<const uint16_t> bands,
                                    std::span<const SymbolModel> models, const SkipPolicy& policy);

double estimate_bits(const SymbolStream& stream, std::span<const SymbolModel> models,
                     const SkipPolicy& policy);

// Bits of the Exp-Golomb (k = 0) code for the escape magnitude plus sign.
int escape_bits(int32_t value, int max_magnitude);

// Low-level coder, exposed for tests. Output is big-endian; the encoder's
// constant leading zero byte is dropped, so the decoder consumes exactly the
// bytes the encoder wrote.
class RangeEncoder {
public:
    void encode(uint32_t cum, uint32_t freq);
    void encode_bit(bool bit) { encode(bit ? kProbabilityTotal / 2 : 0, kProbabilityTotal / 2); }
    std::vector<uint8_t> finish();
    bool empty() const { return symbols_ == 0; }

private:
    void shift_low();

    uint64_t low_ = 0;
    uint32_t range_ = 0xFFFFFFFFu;
    uint8_t cache_ = 0;
    uint64_t cache_size_ = 1;
    bool first_ = true;
    size_t symbols_ = 0;
    std::vector<uint8_t> out_;
};

class RangeDecoder {
public:
    explicit RangeDecoder(std::span<const uint8_t> bytes);
    // Returns the target in [0, total) and must be followed by consume().
    uint32_t peek() const;
    void consume(uint32_t cum, uint32_t freq);
    bool decode_bit();
    // True when every byte has been read.
    bool at_end() const { return pos_ == bytes_.size(); }

private:
    uint8_t next_byte();

    std::span<const uint8_t> bytes_;
    size_t pos_ = 0;
    uint32_t code_ = 0;
    uint32_t range_ = 0xFFFFFFFFu;
};

} // namespace hbvc
