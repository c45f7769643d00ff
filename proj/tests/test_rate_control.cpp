#include <doctest.h>

#include <cmath>

#include "hbvc/rate_control.hpp"
#include "hbvc/synthetic.hpp"
#include "test_util.hpp"

using namespace hbvc;

namespace {

FrameLoss loss(int level, double rm, double rr, double d) {
    FrameLoss l;
    l.level = level;
    l.rate_motion = rm;
    l.rate_residual = rr;
    l.distortion = d;
    return l;
}

std::vector<Frame> clip(SyntheticKind k, int frames, int size, uint64_t seed = 1) {
    return make_synthetic_clip(k, frames, size, size, 8, seed);
}

} // namespace

TEST_SUITE("rate_control") {

TEST_CASE("path loss arithmetic") {
    LossWeights w; // lambda 0.05 -> multiplier 0.5
    const std::vector<FrameLoss> i{loss(0, 0.0, 1.0, 10.0), loss(0, 0.0, 0.5, 20.0)};
    const std::vector<FrameLoss> gop2{loss(1, 0.1, 0.2, 4.0)};
    const PathLossReport r = path_loss(i, gop2, w);
    CHECK(r.lambda == 0.5);
    CHECK(r.total == doctest::Approx(1.5 + 0.5 * 30.0 + 2.0 * (0.3 + 0.5 * 4.0)).epsilon(1e-12));

    const std::vector<FrameLoss> deep{loss(1, 0.1, 0.1, 1.0), loss(2, 0.2, 0.2, 2.0), loss(3, 0.3, 0.3, 3.0)};
    const PathLossReport d = path_loss({}, deep, w);
    CHECK(d.units[0].weight == 2.0);
    CHECK(d.units[1].weight == 4.0);
    CHECK(d.units[2].weight == 8.0);
    CHECK(d.total == doctest::Approx(2 * 0.7 + 4 * 1.4 + 8 * 2.1).epsilon(1e-12));
    CHECK(std::abs(d.recompute() - d.total) <= 1e-9);

    const std::vector<FrameLoss> zeros(3, loss(2, 0, 0, 0));
    CHECK(path_loss(zeros, zeros, w).total == 0.0);
}

TEST_CASE("frame loss from stats") {
    FrameStats s;
    s.level = 2;
    s.pixels = 1000;
    s.motion_bits = 200;
    s.total_bits = 1000;
    s.mse = {10.0, 20.0, 30.0};
    LossWeights w;
    w.c_t[2] = 0.5;
    const FrameLoss l = frame_loss(s, w, 8);
    CHECK(l.rate_motion == 0.2);
    CHECK(l.rate_residual == 0.8);
    CHECK(l.distortion == doctest::Approx((80.0 + 50.0) / 10.0 * 0.5));
    s.mse = {160.0, 320.0, 480.0};
    CHECK(frame_loss(s, w, 10).distortion == doctest::Approx(l.distortion));
}

TEST_CASE("sampled path estimator matches the whole-GoP loss") {
    const auto c = clip(SyntheticKind::Pan, 17, 32);
    for (int gop : {2, 4, 8, 16}) {
        const CodecConfig cfg = make_config(1, 8, gop);
        const double expected = expected_path_loss_exact(c, cfg);
        const GopLoss g = first_gop_loss(c, cfg);
        const double identity = g.i_term + 2.0 * g.bframe_sum;
        CHECK(std::abs(expected - identity) <= 1e-9 * std::abs(identity));
    }
}

TEST_CASE("path encoding shares references") {
    const auto c = clip(SyntheticKind::Pan, 9, 32);
    const CodecConfig cfg = make_config(1, 8, 8);
    const PathEncoding e = encode_path(c, 0, path_to_leaf(8, 5), cfg);
    CHECK(e.i_frames.size() == 2);
    REQUIRE(e.units.size() == 3);
    CHECK(e.units[0].t == 4);
    CHECK(e.units[1].t == 6);
    CHECK(e.units[2].t == 5);
    const GopLoss g = first_gop_loss(c, cfg);
    for (const FrameLoss& u : e.units)
        for (const FrameLoss& b : g.bframes)
            if (b.t == u.t) CHECK(b.rate() == u.rate());
}

TEST_CASE("calibration") {
    const std::vector<std::vector<Frame>> clips{clip(SyntheticKind::Pan, 5, 32), clip(SyntheticKind::Static, 5, 32)};
    const CodecConfig cfg = make_config(1, 8, 4);
    CalibrationOptions opt;
    opt.budget = 20;
    opt.paths_per_clip = 4;
    opt.seed = 5;
    const CalibrationResult r = calibrate_gains(clips, cfg, opt);
    CHECK(!r.accepted.empty());
    CHECK(r.final_objective < r.initial_objective);
    double prev = r.initial_objective;
    for (const auto& s : r.accepted) {
        CHECK(s.objective < prev);
        prev = s.objective;
        CHECK(std::abs(r.table.resolve(s.stream, s.level).q_enc) > 0.0);
    }
    CHECK(prev == r.final_objective);

    // recomputed objective of the final table
    const auto samples = sample_paths(clips, 4, opt.paths_per_clip, opt.seed);
    CodecConfig final_cfg = cfg;
    final_cfg.gains = r.table;
    CHECK(calibration_objective(clips, samples, final_cfg) == r.final_objective);

    // converged: no single move from the final table improves
    for (int level = 1; level <= 2; ++level)
        for (LatentStream s : {LatentStream::Motion, LatentStream::Rc})
            for (double m : opt.multipliers) {
                CodecConfig t = final_cfg;
                const double q = snap_fixed16(r.table.resolve(s, level).q_enc * m);
                t.gains.set(s, level, {q, 1.0 / q});
                CHECK(calibration_objective(clips, samples, t) >= r.final_objective);
            }
    for (int level = 1; level <= 2; ++level)
        for (LatentStream s : {LatentStream::Motion, LatentStream::Rc}) {
            const LevelGain g = r.table.resolve(s, level);
            CHECK(g.q_dec == snap_fixed16(1.0 / g.q_enc));
        }

    const CalibrationResult again = calibrate_gains(clips, cfg, opt);
    CHECK(again.table == r.table);
    CHECK(again.final_objective == r.final_objective);

    opt.budget = 0;
    const CalibrationResult none = calibrate_gains(clips, cfg, opt);
    CHECK(none.accepted.empty());
    CHECK(none.final_objective == none.initial_objective);
    CHECK(none.initial_objective == r.initial_objective);

    const std::vector<std::vector<Frame>> short_clip{clip(SyntheticKind::Pan, 3, 32)};
    try {
        calibrate_gains(short_clip, cfg, opt);
        FAIL("expected insufficient data");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::InsufficientData);
    }
}

TEST_CASE("gain table files") {
    GainTable t = GainTable::identity(3);
    t.set(LatentStream::Rc, 2, {1.25, 0.8});
    const auto dir = test::scratch_dir("gains");
    save_gain_table(t, dir / "table");
    CHECK(load_gain_table(dir / "table.json") == t);
    CHECK(load_gain_table(dir / "table.bin") == t);
    CHECK_THROWS_AS(load_gain_table(dir / "missing.bin"), Error);
}

TEST_CASE("content adaptation") {
    const auto c = clip(SyntheticKind::Pan, 9, 32);
    const SequenceInfo info{32, 32, 8, 30.0};
    const CodecConfig cfg = make_config(1, 8, 8);
    const EncodedSequence plain = encode_sequence(c, info, cfg);

    const AdaptationResult none = content_adapt(c, info, cfg, 0);
    CHECK(none.stream.bytes == plain.bytes);
    for (const auto& o : none.overrides) CHECK(o.is_identity());

    const AdaptationResult a = content_adapt(c, info, cfg, 3);
    REQUIRE(a.frames.size() == 9);
    for (const auto& f : a.frames) {
        CHECK(f.cost_after <= f.cost_before);
        CHECK(f.trials <= 3);
    }
    CHECK(a.stream.header.serialize() == plain.header.serialize());
    const DecodeResult r = decode_stream(a.stream.bytes);
    REQUIRE(!r.error);
    for (int t = 0; t < 9; ++t) CHECK(r.frames[t]->samples_equal(a.stream.recon[t]));
    // the first I-frame is coded identically either way, so its costs agree
    CHECK(a.frames[0].cost_before == frame_cost(plain.stats[0], cfg.weights, 8));
    CHECK_THROWS_AS(content_adapt(c, info, cfg, -1), Error);

    const auto dir = test::scratch_dir("adapt");
    write_adaptation_csv(a, dir / "a.csv");
    CHECK(std::filesystem::file_size(dir / "a.csv") > 100);
}

}
