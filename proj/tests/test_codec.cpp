#include <doctest.h>

#include <fstream>
#include <random>

#include "hbvc/codec.hpp"
#include "hbvc/synthetic.hpp"
#include "test_util.hpp"

using namespace hbvc;

namespace {

Frame flat(int w, int h, uint16_t value) { return Frame(w, h, 8, value); }

ResidualFrame residual_for(const Frame& f) {
    ResidualFrame r{SignedPlane(f.y.width, f.y.height), SignedPlane(f.u.width, f.u.height),
                    SignedPlane(f.v.width, f.v.height)};
    return r;
}

ConfidencePlan uniform_plan(const Frame& f, uint8_t idx) {
    ConfidencePlan p{f.width() / kMacroblock, f.height() / kMacroblock, {}};
    p.index.assign(static_cast<size_t>(p.cols) * p.rows, idx);
    return p;
}

MacroblockSamples random_mb(std::mt19937_64& rng, int lo = 0, int hi = 255) {
    std::uniform_int_distribution<int> d(lo, hi);
    MacroblockSamples m;
    for (auto& v : m.y) v = d(rng);
    for (auto& v : m.u) v = d(rng);
    for (auto& v : m.v) v = d(rng);
    return m;
}

MacroblockSamples fill_mb(int value) {
    MacroblockSamples m;
    m.y.fill(value);
    m.u.fill(value);
    m.v.fill(value);
    return m;
}

struct Ctx {
    std::vector<SymbolModel> models;
    RdContext rd;
    explicit Ctx(double lambda, double step = 4.0) : models(kResidualBands, scale_models()[28]) {
        rd.lambda = lambda;
        rd.residual = {1.0, 1.0, step, models, {}};
        rd.confidence_bits.fill(std::log2(6.0));
    }
};

double sse(const MacroblockSamples& a, const MacroblockSamples& b, double c_uv) {
    double y = 0, uv = 0;
    for (size_t i = 0; i < a.y.size(); ++i) y += (a.y[i] - b.y[i]) * double(a.y[i] - b.y[i]);
    for (size_t i = 0; i < a.u.size(); ++i) {
        uv += (a.u[i] - b.u[i]) * double(a.u[i] - b.u[i]);
        uv += (a.v[i] - b.v[i]) * double(a.v[i] - b.v[i]);
    }
    return 0.8 * y + 0.4 * c_uv * uv;
}

std::vector<Frame> pan_clip(int frames, int size = 64) {
    return make_synthetic_clip(SyntheticKind::Pan, frames, size, size, 8, 1);
}

SequenceInfo info_for(const std::vector<Frame>& clip) {
    return {clip[0].width(), clip[0].height(), 8, 30.0};
}

} // namespace

TEST_SUITE("codec") {

TEST_CASE("confidence-weighted reconstruction") {
    std::mt19937_64 rng(41);
    const Frame p = test::random_frame(32, 32, 8, rng);
    const Frame f = test::random_frame(32, 32, 8, rng);
    const Frame orig = test::random_frame(32, 32, 8, rng);

    CHECK(cfr_reconstruct(p, f, uniform_plan(p, 0), residual_for(p)).samples_equal(p));
    CHECK(cfr_reconstruct(p, f, uniform_plan(p, 1), residual_for(p)).samples_equal(f));

    ResidualFrame whole = residual_for(p);
    for (size_t i = 0; i < orig.y.samples.size(); ++i) whole.y.samples[i] = orig.y.samples[i];
    for (size_t i = 0; i < orig.u.samples.size(); ++i) {
        whole.u.samples[i] = orig.u.samples[i];
        whole.v.samples[i] = orig.v.samples[i];
    }
    CHECK(cfr_reconstruct(p, f, uniform_plan(p, kIntraLikeCandidate), whole).samples_equal(orig));

    ResidualFrame r = residual_for(p);
    for (auto& s : r.y.samples) s = -22;
    const Frame out = cfr_reconstruct(flat(32, 32, 100), flat(32, 32, 200), uniform_plan(p, 2), r);
    CHECK(out.y.at(5, 7) == 128);
    CHECK(out.u.at(3, 3) == 150);

    for (auto& s : r.y.samples) s = 5000;
    CHECK(cfr_reconstruct(p, f, uniform_plan(p, 0), r).y.at(0, 0) == 255);
    CHECK_THROWS_AS(cfr_reconstruct(p, flat(16, 32, 0), uniform_plan(p, 0), r), Error);
}

TEST_CASE("macroblock load and store") {
    std::mt19937_64 rng(42);
    const Frame f = test::random_frame(48, 32, 8, rng);
    Frame g(48, 32, 8);
    for (int row = 0; row < 2; ++row)
        for (int col = 0; col < 3; ++col) store_macroblock(g, col, row, load_macroblock(f, col, row));
    CHECK(g.samples_equal(f));
    CHECK(load_macroblock(f, 1, 1).y[17] == f.y.at(17, 17));
    CHECK(load_macroblock(f, 2, 0).u[9] == f.u.at(17, 1));
}

TEST_CASE("candidate selection") {
    std::mt19937_64 rng(43);
    for (int trial = 0; trial < 10; ++trial) {
        const MacroblockSamples target = random_mb(rng, 20, 235);
        const MacroblockSamples other = random_mb(rng);
        Ctx c(5.0);
        CHECK(rd_select_confidence(target, target, other, c.rd).candidate == 0);
        CHECK(rd_select_confidence(target, other, target, c.rd).candidate == 1);

        // flat mid-gray content under noisy predictions
        CHECK(rd_select_confidence(fill_mb(128), other, random_mb(rng), c.rd).candidate == kIntraLikeCandidate);

        // the exact half blend
        const MacroblockSamples q = random_mb(rng);
        MacroblockSamples half;
        for (size_t i = 0; i < half.y.size(); ++i) half.y[i] = (2 * other.y[i] + 2 * q.y[i] + 2) >> 2;
        for (size_t i = 0; i < half.u.size(); ++i) {
            half.u[i] = (2 * other.u[i] + 2 * q.u[i] + 2) >> 2;
            half.v[i] = (2 * other.v[i] + 2 * q.v[i] + 2) >> 2;
        }
        const ConfidenceDecision d = rd_select_confidence(half, other, q, c.rd);
        CHECK(d.candidate == 2);
        CHECK(d.costs[2]->weighted_sse == 0.0);
    }
}

TEST_CASE("selection follows the recomputed costs") {
    std::mt19937_64 rng(44);
    for (int trial = 0; trial < 20; ++trial) {
        const MacroblockSamples target = random_mb(rng);
        const MacroblockSamples p = random_mb(rng);
        MacroblockSamples f = target;
        // an occluded lower half only the future reference sees
        for (int i = 0; i < 128; ++i) f.y[i] = p.y[i];
        Ctx c(std::uniform_real_distribution<double>(0.01, 20.0)(rng), 2.0 + trial);
        c.rd.c_uv = 0.5 + 0.1 * trial;
        const ConfidenceDecision d = rd_select_confidence(target, p, f, c.rd);
        const MacroblockSamples rec =
            reconstruct_macroblock(d.candidate, p, f, d.symbols, 1.0, c.rd.residual.base_step, 8);
        CHECK(rec.y == d.recon.y);
        CHECK(std::abs(d.costs[d.candidate]->weighted_sse - sse(target, rec, c.rd.c_uv)) < 1e-6);
        double best = 1e300;
        int arg = -1;
        for (int k = 0; k < 6; ++k) {
            const double j = d.costs[k]->bits + c.rd.lambda * d.costs[k]->weighted_sse;
            if (j < best) best = j, arg = k;
        }
        CHECK(d.candidate == arg);
        for (double s : {0.5, 3.0, 1000.0})
            CHECK(select_min_cost(d.costs, s * c.rd.lambda, s) == d.candidate);

        c.rd.allowed = {false, false, true, true, false, false};
        const int restricted = rd_select_confidence(target, p, f, c.rd).candidate;
        CHECK((restricted == 2 || restricted == 3));
    }
    std::array<std::optional<CandidateCost>, 6> none{};
    CHECK_THROWS_AS(select_min_cost(none, 1.0), Error);
}

TEST_CASE("operating points") {
    for (int i = 0; i < 4; ++i) {
        CHECK(step_for_lambda(kStandardLambdas[i]) == kStandardSteps[i]);
        CHECK(standard_operating_point(i, 10).base_step == 4 * kStandardSteps[i]);
        CHECK(standard_lambda_index(kStandardLambdas[i]) == i);
    }
    CHECK(standard_lambda_index(0.02) == -1);
    CHECK(scale_for_index(1) == doctest::Approx(0.04));
    CHECK(scale_for_index(63) == doctest::Approx(64.0));
    CHECK(scale_models()[0].is_degenerate());
}

TEST_CASE("fitted scales never skip information") {
    const SkipPolicy p{0.9};
    std::vector<int32_t> mostly_zero(500, 0);
    mostly_zero[7] = 1;
    const uint8_t idx = fit_scale_index(mostly_zero, &p);
    CHECK(!p.skips(scale_models()[idx]));
    const std::vector<int32_t> zeros(500, 0);
    CHECK(p.skips(scale_models()[fit_scale_index(zeros, &p)]));
    CHECK(fit_scale_index(zeros) == 0);
}

TEST_CASE("intra coding of a constant frame") {
    const CodecConfig cfg = make_config(1, 8, 4);
    const CodedFrame c = encode_intra(flat(32, 32, 128), 0, cfg);
    CHECK(c.recon.samples_equal(flat(32, 32, 128)));
    CHECK(c.payload.residual.size() <= 8);
    const Frame d = decode_payload(c.payload, cfg.gains, 32, 32, 8, nullptr, nullptr);
    CHECK(d.samples_equal(c.recon));
}

TEST_CASE("payload and header round trips") {
    const auto clip = pan_clip(5);
    const EncodedSequence seq = encode_sequence(clip, info_for(clip), make_config(1, 8, 4));
    size_t off = 0;
    const StreamHeader h = StreamHeader::parse(seq.bytes, off);
    CHECK(h.serialize() == seq.header.serialize());
    CHECK(h.width == 64);
    CHECK(h.gop_size == 4);
    CHECK(h.n_frames == 5);
    CHECK(h.fps == 30.0);
    CHECK(h.gains == make_config(1, 8, 4).gains);

    const StreamIndex idx = index_stream(seq.bytes);
    CHECK(idx.payloads.size() == 5);
    CHECK(!idx.truncated);
    for (const auto& e : idx.payloads) {
        const FramePayload p = FramePayload::parse(std::span(seq.bytes).subspan(e.offset, e.length));
        CHECK(p.t == e.t);
        CHECK(p.serialize().size() == e.length);
        CHECK(p.size() == e.length);
    }
    // decode order
    std::vector<int> order;
    for (const auto& e : idx.payloads) order.push_back(e.t);
    CHECK(order == std::vector<int>{0, 4, 2, 1, 3});

    auto bad = seq.bytes;
    bad[0] = 'X';
    try {
        decode_stream(bad);
        FAIL("expected a format error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Format);
    }
    bad = seq.bytes;
    bad[4] = 9;
    try {
        decode_stream(bad);
        FAIL("expected a format error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::Format);
    }
}

TEST_CASE("closed-loop decoding") {
    for (int op : {0, 3}) {
        const auto clip = pan_clip(9);
        const EncodedSequence seq = encode_sequence(clip, info_for(clip), make_config(op, 8, 8));
        const DecodeResult r = decode_stream(seq.bytes);
        REQUIRE(!r.error);
        REQUIRE(r.frames.size() == 9);
        for (int t = 0; t < 9; ++t) {
            REQUIRE(r.frames[t]);
            CHECK(r.frames[t]->samples_equal(seq.recon[t]));
            CHECK(r.levels[t] == seq.schedule.unit_for(t).level);
        }
    }
}

TEST_CASE("odd geometry is padded and cropped") {
    const auto clip = make_synthetic_clip(SyntheticKind::Static, 3, 40, 22, 8, 2);
    const EncodedSequence seq = encode_sequence(clip, info_for(clip), make_config(1, 8, 2));
    CHECK(seq.header.padded_width() == 48);
    CHECK(seq.header.padded_height() == 32);
    const DecodeResult r = decode_stream(seq.bytes);
    REQUIRE(!r.error);
    CHECK(r.frames[1]->width() == 40);
    CHECK(r.frames[1]->samples_equal(seq.recon[1]));
}

TEST_CASE("header-only stream") {
    StreamHeader h;
    h.width = 32;
    h.height = 32;
    h.gop_size = 4;
    h.n_frames = 0;
    h.gains = GainTable::identity(2);
    const DecodeResult r = decode_stream(h.serialize());
    CHECK(r.frames.empty());
    CHECK(!r.error);
}

TEST_CASE("truncation keeps the decoded prefix") {
    const auto clip = pan_clip(9);
    const EncodedSequence seq = encode_sequence(clip, info_for(clip), make_config(1, 8, 8));
    const StreamIndex idx = index_stream(seq.bytes);
    // cut inside the payload of the fourth coded frame (t = 2)
    const auto& e = idx.payloads[3];
    std::vector<uint8_t> cut(seq.bytes.begin(), seq.bytes.begin() + static_cast<ptrdiff_t>(e.offset + e.length / 2));
    const DecodeResult r = decode_stream(cut);
    REQUIRE(r.error);
    CHECK(r.error->kind == ErrorKind::TruncatedInput);
    CHECK(r.error->last_good_frame == 4);
    CHECK(r.missing() == std::vector<int>{1, 2, 3, 5, 6, 7});
    const auto prefix = r.contiguous_prefix();
    REQUIRE(prefix.size() == 1);
    CHECK(prefix[0].samples_equal(seq.recon[0]));

    // corrupt payload body
    auto broken = seq.bytes;
    const auto& e2 = idx.payloads[2];
    broken[e2.offset] = 7; // kind byte
    const DecodeResult r2 = decode_stream(broken);
    REQUIRE(r2.error);
    CHECK(r2.error->last_good_frame == 8);
}

TEST_CASE("payload surgery gives random access") {
    const auto clip = pan_clip(33);
    const EncodedSequence seq = encode_sequence(clip, info_for(clip), make_config(1, 8, 16));
    for (int max_level : {0, 1, 2}) {
        const auto sub = filter_payloads(seq.bytes, [&](int t) { return seq.schedule.unit_for(t).level <= max_level; });
        const DecodeResult r = decode_stream(sub);
        REQUIRE(!r.error);
        for (int t = 0; t < 33; ++t) {
            const bool kept = seq.schedule.unit_for(t).level <= max_level;
            CHECK(r.frames[t].has_value() == kept);
            if (kept) CHECK(r.frames[t]->samples_equal(seq.recon[t]));
        }
    }
    // a B-frame without its references is skipped, not an error
    const auto orphan = filter_payloads(seq.bytes, [](int t) { return t == 0 || t == 3; });
    const DecodeResult r = decode_stream(orphan);
    CHECK(!r.error);
    CHECK(!r.frames[3]);
}

TEST_CASE("overrides only touch the encoder") {
    const auto clip = pan_clip(5);
    std::vector<FrameOverrides> ov(5);
    ov[2].lambda_mult = 1.33;
    ov[2].rc_gain_mult = 0.8;
    ov[0].step_mult = 1.25;
    const EncodedSequence seq = encode_sequence(clip, info_for(clip), make_config(1, 8, 4), false, ov);
    const DecodeResult r = decode_stream(seq.bytes);
    REQUIRE(!r.error);
    for (int t = 0; t < 5; ++t) CHECK(r.frames[t]->samples_equal(seq.recon[t]));
    const EncodedSequence plain = encode_sequence(clip, info_for(clip), make_config(1, 8, 4));
    CHECK(seq.header.serialize() == plain.header.serialize());
}

TEST_CASE("thread count does not change the stream") {
    const auto clip = pan_clip(17);
    CodecConfig cfg = make_config(1, 8, 4);
    const EncodedSequence one = encode_sequence(clip, info_for(clip), cfg);
    cfg.threads = 3;
    CHECK(encode_sequence(clip, info_for(clip), cfg).bytes == one.bytes);
}

TEST_CASE("golden stream") {
    const auto clip = make_synthetic_clip(SyntheticKind::Pan, 5, 32, 32, 8, 7);
    const EncodedSequence seq = encode_sequence(clip, info_for(clip), make_config(1, 8, 4));
    const auto path = std::filesystem::path(HBVC_TEST_DATA) / "golden_pan_32x32_op1.hbvc";
    if (std::getenv("HBVC_WRITE_GOLDEN")) {
        std::ofstream(path, std::ios::binary).write(reinterpret_cast<const char*>(seq.bytes.data()),
                                                    static_cast<std::streamsize>(seq.bytes.size()));
    }
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    const std::vector<uint8_t> golden((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    CHECK(golden == seq.bytes);
    const DecodeResult r = decode_stream(golden);
    REQUIRE(!r.error);
    for (int t = 0; t < 5; ++t) CHECK(r.frames[t]->samples_equal(seq.recon[t]));
}

}
