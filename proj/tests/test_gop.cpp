#include <doctest.h>

#include <map>
#include <random>
#include <set>

#include <nlohmann/json.hpp>

#include "hbvc/error.hpp"
#include "hbvc/gop.hpp"

using namespace hbvc;

TEST_SUITE("gop") {

TEST_CASE("hierarchy levels") {
    CHECK(hierarchy_level(8, 4) == 1);
    CHECK(hierarchy_level(8, 6) == 2);
    CHECK(hierarchy_level(32, 1) == 5);
    CHECK(hierarchy_level(8, 0) == 0);
    CHECK(hierarchy_level(8, 8) == 0);
    CHECK_THROWS_AS(hierarchy_level(12, 3), Error);
    // closed form against a direct delta computation
    for (int g = 2; g <= 64; g *= 2)
        for (int t = 1; t < g; ++t) {
            int delta = 1;
            while (t % (2 * delta) == 0) delta *= 2;
            int level = 0;
            for (int q = g / delta; q > 1; q /= 2) ++level;
            CHECK(hierarchy_level(g, t) == level);
        }
}

TEST_CASE("gop 8 schedule") {
    const GopSchedule s = build_schedule(9, 8);
    std::vector<int> order;
    for (const auto& u : s.units) order.push_back(u.t);
    CHECK(order == std::vector<int>{0, 8, 4, 2, 6, 1, 3, 5, 7});
    const CodingUnit& u5 = s.unit_for(5);
    CHECK(u5.kind == FrameKind::Bidir);
    CHECK(u5.p == 4);
    CHECK(u5.f == 6);
    CHECK(u5.delta == 1);
    CHECK(u5.level == 3);
    CHECK(s.unit_for(8).kind == FrameKind::Intra);
    CHECK(s.intra_count() == 2);
}

TEST_CASE("129 frames at gop 32") {
    const GopSchedule s = build_schedule(129, 32);
    CHECK(s.intra_count() == 5);
    for (int k = 0; k < 5; ++k) CHECK(s.units[k].t == 32 * k);
    CHECK(s.frame_count() - s.intra_count() == 124);
}

TEST_CASE("alignment and truncation") {
    try {
        build_schedule(10, 8);
        FAIL("expected misalignment");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::ScheduleAlignment);
    }
    CHECK(build_schedule(10, 8, true).frame_count() == 9);
    CHECK(build_schedule(20, 8, true).frame_count() == 17);
    CHECK_THROWS_AS(build_schedule(9, 6), Error);
    CHECK(build_schedule(1, 8).frame_count() == 1);
}

TEST_CASE("fps rule") {
    CHECK(gop_for_fps(30.0) == 32);
    CHECK(gop_for_fps(29.97) == 32);
    CHECK(gop_for_fps(24.0) == 32);
    CHECK(gop_for_fps(50.0) == 64);
    CHECK(gop_for_fps(60.0) == 64);
}

TEST_CASE("schedule invariants over random sizes") {
    std::mt19937_64 rng(11);
    for (int trial = 0; trial < 200; ++trial) {
        const int gop = 1 << (1 + rng() % 6);
        const int n = 1 + static_cast<int>(rng() % 300);
        const GopSchedule s = build_schedule(n, gop, true);
        std::map<int, int> rank;
        for (size_t i = 0; i < s.units.size(); ++i) rank[s.units[i].t] = static_cast<int>(i);
        CHECK(static_cast<int>(rank.size()) == s.frame_count());
        for (const auto& u : s.units) {
            CHECK(u.decode_rank == rank[u.t]);
            if (u.t % gop == 0) {
                CHECK(u.kind == FrameKind::Intra);
                CHECK(u.level == 0);
                continue;
            }
            CHECK(u.kind == FrameKind::Bidir);
            CHECK(u.t == u.p + u.delta);
            CHECK(u.f - u.p == 2 * u.delta);
            CHECK(u.level == hierarchy_level(gop, u.t % gop));
            CHECK(rank[u.p] < rank[u.t]);
            CHECK(rank[u.f] < rank[u.t]);
        }
    }
}

TEST_CASE("random paths") {
    const RandomPath p5 = path_to_leaf(8, 5);
    REQUIRE(p5.units.size() == 3);
    CHECK(p5.units[0].t == 4);
    CHECK(p5.units[0].p == 0);
    CHECK(p5.units[0].f == 8);
    CHECK(p5.units[1].t == 6);
    CHECK(p5.units[1].p == 4);
    CHECK(p5.units[1].f == 8);
    CHECK(p5.units[2].t == 5);
    CHECK(p5.units[2].p == 4);
    CHECK(p5.units[2].f == 6);

    const RandomPath p2 = sample_random_path(2, 99);
    CHECK(p2.leaf == 1);
    REQUIRE(p2.units.size() == 1);
    CHECK(p2.units[0].t == 1);

    for (uint64_t seed = 0; seed < 50; ++seed) {
        const RandomPath p = sample_random_path(8, seed);
        CHECK(p.units.size() == 3);
        CHECK(p.leaf % 2 == 1);
        CHECK(p.units.back().t == p.leaf);
        for (size_t i = 0; i < p.units.size(); ++i) CHECK(p.units[i].level == static_cast<int>(i) + 1);
        CHECK(sample_random_path(8, seed).leaf == p.leaf);
    }
}

TEST_CASE("leaf sampling is uniform over odd offsets") {
    std::map<int, int> hits;
    for (uint64_t seed = 0; seed < 4000; ++seed) ++hits[sample_random_path(16, seed).leaf];
    CHECK(hits.size() == 8);
    for (const auto& [leaf, n] : hits) {
        CHECK(leaf % 2 == 1);
        CHECK(n > 400);
        CHECK(n < 600);
    }
}

TEST_CASE("leaf enumeration and ancestor counts") {
    const auto four = enumerate_leaves(4);
    REQUIRE(four.size() == 2);
    CHECK(four[0].units[0].t == 2);
    CHECK(four[0].units[1].t == 1);
    CHECK(four[1].units[1].t == 3);

    for (int g = 2; g <= 64; g *= 2) {
        const int n = log2_exact(g);
        const auto paths = enumerate_leaves(g);
        CHECK(static_cast<int>(paths.size()) == g / 2);
        // Brute force: count path memberships per frame.
        std::map<int, int> count;
        for (const auto& p : paths) {
            std::set<int> seen;
            for (const auto& u : p.units) {
                CHECK(seen.insert(u.t).second);
                ++count[u.t];
            }
        }
        CHECK(static_cast<int>(count.size()) == g - 1);
        for (const auto& [t, c] : count) CHECK(c == (1 << (n - hierarchy_level(g, t))));
    }
    const auto eight = enumerate_leaves(8);
    for (const auto& p : eight) CHECK(p.units.front().t == 4);
    CHECK_THROWS_AS(enumerate_leaves(128), Error);
}

TEST_CASE("schedule json") {
    const auto j = schedule_to_json(build_schedule(5, 4));
    CHECK(j["gop_size"] == 4);
    CHECK(j["units"].size() == 5);
    CHECK(j["units"][2]["t"] == 2);
    CHECK(j["units"][2]["p"] == 0);
    CHECK(j["units"][0]["kind"] == "I");
}

}
