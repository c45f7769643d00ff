#include <doctest.h>

#include <cmath>
#include <random>

#include "hbvc/entropy.hpp"
#include "hbvc/error.hpp"

using namespace hbvc;

namespace {

SymbolStream laplacian_stream(size_t n, double scale, std::mt19937_64& rng, uint16_t band = 0) {
    std::geometric_distribution<int> g(1.0 - std::exp(-1.0 / scale));
    std::bernoulli_distribution sign(0.5);
    SymbolStream s;
    for (size_t i = 0; i < n; ++i) {
        const int m = g(rng);
        s.push(sign(rng) ? m : -m, band);
    }
    return s;
}

double cross_entropy_bits(const SymbolStream& s, std::span<const SymbolModel> models, const SkipPolicy& p) {
    return estimate_bits(s, models, p);
}

SymbolModel random_model(std::mt19937_64& rng) {
    std::uniform_int_distribution<int> kind(0, 3);
    switch (kind(rng)) {
    case 0: return SymbolModel::laplacian(std::uniform_real_distribution<double>(0.05, 40.0)(rng), 32);
    case 1: return SymbolModel::degenerate(static_cast<int32_t>(rng() % 5) - 2);
    default: {
        const int n = 2 + static_cast<int>(rng() % 40);
        std::vector<uint32_t> counts(n);
        for (auto& c : counts) c = static_cast<uint32_t>(rng() % 1000);
        return SymbolModel::categorical(FrequencyTable::from_counts(counts));
    }
    }
}

int32_t draw(const SymbolModel& m, std::mt19937_64& rng) {
    if (m.is_degenerate()) return m.mode();
    if (m.has_escape()) {
        // mostly in range with occasional escapes
        if (rng() % 50 == 0) return static_cast<int32_t>(rng() % 200) - 100;
        return m.min_value() + static_cast<int32_t>(rng() % (m.max_value() - m.min_value() + 1));
    }
    return m.min_value() + static_cast<int32_t>(rng() % (m.max_value() - m.min_value() + 1));
}

} // namespace

TEST_SUITE("entropy") {

TEST_CASE("frequency tables") {
    const std::vector<double> w{0.0, 1e-9, 3.0, 1.0, 1e6};
    const FrequencyTable t = FrequencyTable::from_weights(w);
    uint32_t total = 0;
    for (int i = 0; i < t.size(); ++i) {
        CHECK(t.freq(i) >= 1);
        CHECK(t.cum(i) == total);
        total += t.freq(i);
    }
    CHECK(total == kProbabilityTotal);
    CHECK(t.most_probable() == 4);
    for (int i = 0; i < t.size(); ++i) {
        CHECK(t.lookup(t.cum(i)) == i);
        CHECK(t.lookup(t.cum(i) + t.freq(i) - 1) == i);
    }
    const FrequencyTable u = FrequencyTable::uniform(256);
    CHECK(u.freq(0) == 256);
}

TEST_CASE("laplacian model shape") {
    const SymbolModel m = SymbolModel::laplacian(2.0, 32);
    CHECK(m.mode() == 0);
    CHECK(m.has_escape());
    CHECK(m.cost_bits(1) == doctest::Approx(m.cost_bits(-1)).epsilon(1e-3));
    CHECK(m.cost_bits(0) < m.cost_bits(1));
    CHECK(m.cost_bits(40) > m.cost_bits(32));
    CHECK(escape_bits(33, 32) == 2);
    CHECK(escape_bits(-35, 32) == 4);
}

TEST_CASE("degenerate bands cost nothing") {
    const std::vector<SymbolModel> models{SymbolModel::degenerate(0)};
    SymbolStream s;
    for (int i = 0; i < 500; ++i) s.push(0, 0);
    for (double tau : {0.5, 0.95, 1.0}) {
        const EncodedSymbols e = encode_symbols(s, models, {tau});
        CHECK(e.bytes.empty());
        CHECK(e.skipped == 500);
        const auto back = decode_symbols(e.bytes, s.bands, models, {tau});
        CHECK(back == s.values);
    }
    CHECK(estimate_bits(s, models, {0.95}) == 0.0);
}

TEST_CASE("tau 1 codes everything") {
    std::mt19937_64 rng(21);
    const std::vector<SymbolModel> models{SymbolModel::laplacian(0.2, 32)};
    const SymbolStream s = laplacian_stream(1000, 0.3, rng);
    const EncodedSymbols e = encode_symbols(s, models, {1.0});
    CHECK(e.skipped == 0);
    CHECK(e.values == s.values);
    CHECK(decode_symbols(e.bytes, s.bands, models, {1.0}) == s.values);
}

TEST_CASE("uniform 256-symbol stream") {
    std::mt19937_64 rng(22);
    const std::vector<SymbolModel> models{SymbolModel::categorical(FrequencyTable::uniform(256))};
    SymbolStream s;
    for (int i = 0; i < 10000; ++i) s.push(static_cast<int32_t>(rng() % 256), 0);
    const EncodedSymbols e = encode_symbols(s, models, {0.95});
    CHECK(e.bytes.size() >= 10000 - 40);
    CHECK(e.bytes.size() <= 10000 + 40);
    CHECK(decode_symbols(e.bytes, s.bands, models, {0.95}) == s.values);
}

TEST_CASE("skipping substitutes the mode") {
    std::mt19937_64 rng(23);
    const std::vector<SymbolModel> models{SymbolModel::laplacian(0.15, 32), SymbolModel::laplacian(4.0, 32)};
    SymbolStream s;
    for (int i = 0; i < 4000; ++i) s.push(static_cast<int32_t>(rng() % 3) - 1, static_cast<uint16_t>(i % 2));
    const SkipPolicy p{0.9};
    REQUIRE(p.skips(models[0]));
    REQUIRE(!p.skips(models[1]));
    const EncodedSymbols e = encode_symbols(s, models, p);
    CHECK(e.skipped == 2000);
    const auto back = decode_symbols(e.bytes, s.bands, models, p);
    CHECK(back == e.values);
    for (size_t i = 0; i < s.size(); ++i) {
        if (s.bands[i] == 0) CHECK(back[i] == 0);
        else CHECK(back[i] == s.values[i]);
    }
}

TEST_CASE("corrupt or mismatched payloads") {
    std::mt19937_64 rng(24);
    const std::vector<SymbolModel> models{SymbolModel::laplacian(3.0, 32)};
    const SymbolStream s = laplacian_stream(2000, 3.0, rng);
    const EncodedSymbols e = encode_symbols(s, models, {0.95});
    auto kind_of = [&](std::span<const uint8_t> bytes, size_t count) {
        std::vector<uint16_t> bands(count, 0);
        try {
            decode_symbols(bytes, bands, models, {0.95});
        } catch (const Error& err) {
            return err.kind();
        }
        return ErrorKind::InvalidArgument;
    };
    CHECK(kind_of(std::span(e.bytes).first(e.bytes.size() / 2), s.size()) == ErrorKind::BitstreamCorruption);
    CHECK(kind_of(e.bytes, s.size() / 2) == ErrorKind::BitstreamCorruption);
    std::vector<uint8_t> extra = e.bytes;
    extra.push_back(0x55);
    CHECK(kind_of(extra, s.size()) == ErrorKind::BitstreamCorruption);
    CHECK(kind_of({}, 10) == ErrorKind::BitstreamCorruption);
}

TEST_CASE("empty payload for an all-skippable stream") {
    const std::vector<SymbolModel> models{SymbolModel::laplacian(0.1, 32)};
    SymbolStream s;
    for (int i = 0; i < 100; ++i) s.push(i % 7 == 0 ? 1 : 0, 0);
    const EncodedSymbols e = encode_symbols(s, models, {0.95});
    CHECK(e.bytes.empty());
    CHECK(decode_symbols(e.bytes, s.bands, models, {0.95}) == std::vector<int32_t>(100, 0));
}

TEST_CASE("bit estimates") {
    const std::vector<SymbolModel> half{SymbolModel::categorical(FrequencyTable::from_counts(std::vector<uint32_t>{1, 1}))};
    SymbolStream one;
    one.push(1, 0);
    CHECK(estimate_bits(one, half, {0.95}) == doctest::Approx(1.0).epsilon(1e-12));

    std::mt19937_64 rng(25);
    const std::vector<SymbolModel> models{SymbolModel::laplacian(6.0, 32)};
    const SymbolStream s = laplacian_stream(20000, 6.0, rng);
    const EncodedSymbols e = encode_symbols(s, models, {0.95});
    REQUIRE(e.bytes.size() >= 10000);
    const double est = estimate_bits(s, models, {0.95});
    CHECK(std::abs(est - 8.0 * e.bytes.size()) / (8.0 * e.bytes.size()) <= 0.01);
}

TEST_CASE("random models round trip within the cross-entropy bound") {
    std::mt19937_64 rng(26);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<SymbolModel> models;
        const int bands = 1 + static_cast<int>(rng() % 6);
        for (int b = 0; b < bands; ++b) models.push_back(random_model(rng));
        SymbolStream s;
        const size_t n = 1 + rng() % 3000;
        for (size_t i = 0; i < n; ++i) {
            const auto band = static_cast<uint16_t>(rng() % bands);
            s.push(draw(models[band], rng), band);
        }
        const SkipPolicy p{0.5 + 0.5 * std::uniform_real_distribution<double>(0, 1)(rng)};
        const EncodedSymbols e = encode_symbols(s, models, p);
        CHECK(decode_symbols(e.bytes, s.bands, models, p) == e.values);
        CHECK(8.0 * e.bytes.size() <= cross_entropy_bits(s, models, p) + 8.0 * 32);
    }
}

TEST_CASE("raising tau never lengthens the payload") {
    std::mt19937_64 rng(27);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<SymbolModel> models;
        for (int b = 0; b < 8; ++b) models.push_back(SymbolModel::laplacian(0.05 + 0.4 * b, 32));
        SymbolStream s;
        for (int i = 0; i < 3000; ++i) {
            const auto band = static_cast<uint16_t>(rng() % 8);
            s.push(static_cast<int32_t>(rng() % 5) - 2, band);
        }
        size_t prev = 0;
        for (double tau = 0.5; tau <= 1.0001; tau += 0.05) {
            const size_t len = encode_symbols(s, models, {std::min(tau, 1.0)}).bytes.size();
            CHECK(len >= prev);
            prev = len;
        }
    }
}

TEST_CASE("coder determinism and bit coding") {
    RangeEncoder enc;
    for (int i = 0; i < 100; ++i) enc.encode_bit(i % 3 == 0);
    const auto bytes = enc.finish();
    RangeDecoder dec(bytes);
    for (int i = 0; i < 100; ++i) CHECK(dec.decode_bit() == (i % 3 == 0));
    CHECK(dec.at_end());
    RangeEncoder again;
    for (int i = 0; i < 100; ++i) again.encode_bit(i % 3 == 0);
    CHECK(again.finish() == bytes);
}

}
