#include "hbvc/gop.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include <nlohmann/json.hpp>

#include "hbvc/error.hpp"

namespace hbvc {

bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

int log2_exact(int v) {
    int n = 0;
    while ((1 << n) < v) ++n;
    return n;
}

namespace {

void require_gop(int gop_size) {
    if (!is_power_of_two(gop_size))
        fail(ErrorKind::InvalidGop, "GoP size " + std::to_string(gop_size) + " is not a power of two");
}

CodingUnit make_unit(int gop_size, int t) {
    CodingUnit u;
    u.t = t;
    const int offset = t % gop_size;
    if (offset == 0) return u;
    u.kind = FrameKind::Bidir;
    u.delta = offset & -offset;
    u.p = t - u.delta;
    u.f = t + u.delta;
    u.level = log2_exact(gop_size / u.delta);
    return u;
}

bool canonical_less(const CodingUnit& a, const CodingUnit& b) {
    if (a.kind != b.kind) return a.kind == FrameKind::Intra;
    if (a.level != b.level) return a.level < b.level;
    return a.t < b.t;
}

} // namespace

int hierarchy_level(int gop_size, int t) {
    require_gop(gop_size);
    if (t < 0 || t > gop_size)
        fail(ErrorKind::InvalidArgument, "t must lie in [0, gop_size]");
    if (t == 0 || t == gop_size) return 0;
    return make_unit(gop_size, t).level;
}

const CodingUnit& GopSchedule::unit_for(int t) const {
    if (t < 0 || t >= static_cast<int>(rank_of_.size()))
        fail(ErrorKind::InvalidArgument, "frame " + std::to_string(t) + " is not scheduled");
    return units[rank_of_[t]];
}

int GopSchedule::intra_count() const {
    return static_cast<int>(std::count_if(units.begin(), units.end(), [](const CodingUnit& u) {
        return u.kind == FrameKind::Intra;
    }));
}

GopSchedule build_schedule(int n_frames, int gop_size, bool truncate) {
    require_gop(gop_size);
    if (n_frames < 1) fail(ErrorKind::InvalidArgument, "need at least one frame");
    int usable = n_frames;
    if ((n_frames - 1) % gop_size != 0) {
        if (!truncate)
            fail(ErrorKind::ScheduleAlignment,
                 std::to_string(n_frames) + " frames do not fill whole GoPs of " +
                     std::to_string(gop_size) + " (need n = 1 mod " + std::to_string(gop_size) +
                     "); pass truncate to drop the tail");
        usable = (n_frames - 1) / gop_size * gop_size + 1;
    }

    GopSchedule s;
    s.gop_size = gop_size;
    s.units.reserve(usable);
    for (int t = 0; t < usable; ++t) s.units.push_back(make_unit(gop_size, t));
    std::sort(s.units.begin(), s.units.end(), canonical_less);
    s.rank_of_.assign(usable, 0);
    for (int r = 0; r < usable; ++r) {
        s.units[r].decode_rank = r;
        s.rank_of_[s.units[r].t] = r;
    }
    return s;
}

int gop_for_fps(double fps) { return std::lround(fps) <= 30 ? 32 : 64; }

RandomPath path_to_leaf(int gop_size, int leaf) {
    require_gop(gop_size);
    if (gop_size < 2 || leaf <= 0 || leaf >= gop_size || leaf % 2 == 0)
        fail(ErrorKind::InvalidArgument, "leaf must be an odd offset inside the GoP");
    RandomPath path;
    path.leaf = leaf;
    // Walk up: the ancestor at each coarser level is the nearer reference
    // that is not already an I-frame.
    std::vector<CodingUnit> chain;
    int t = leaf;
    while (t % gop_size != 0) {
        CodingUnit u = make_unit(gop_size, t);
        chain.push_back(u);
        const int parent_delta = u.delta * 2;
        // The parent is whichever reference is an odd multiple of 2*delta.
        t = (u.p / parent_delta) % 2 == 1 ? u.p : u.f;
        if (parent_delta >= gop_size) break;
    }
    std::reverse(chain.begin(), chain.end());
    for (size_t i = 0; i < chain.size(); ++i) chain[i].decode_rank = static_cast<int>(i);
    path.units = std::move(chain);
    return path;
}

RandomPath sample_random_path(int gop_size, uint64_t seed) {
    require_gop(gop_size);
    if (gop_size < 2) fail(ErrorKind::InvalidGop, "random paths need gop_size >= 2");
    std::mt19937_64 rng(seed);
    const int leaves = gop_size / 2;
    const int leaf = 2 * static_cast<int>(rng() % static_cast<uint64_t>(leaves)) + 1;
    return path_to_leaf(gop_size, leaf);
}

std::vector<RandomPath> enumerate_leaves(int gop_size) {
    require_gop(gop_size);
    if (gop_size < 2 || gop_size > 64)
        fail(ErrorKind::InvalidArgument, "leaf enumeration supports 2 <= gop_size <= 64");
    std::vector<RandomPath> out;
    for (int leaf = 1; leaf < gop_size; leaf += 2) out.push_back(path_to_leaf(gop_size, leaf));
    return out;
}

nlohmann::json schedule_to_json(const GopSchedule& schedule) {
    nlohmann::json units = nlohmann::json::array();
    for (const CodingUnit& u : schedule.units) {
        nlohmann::json j{{"t", u.t},
                         {"kind", u.kind == FrameKind::Intra ? "I" : "B"},
                         {"level", u.level},
                         {"decode_rank", u.decode_rank}};
        if (u.kind == FrameKind::Bidir) {
            j["p"] = u.p;
            j["f"] = u.f;
            j["delta"] = u.delta;
        }
        units.push_back(std::move(j));
    }
    return {{"gop_size", schedule.gop_size}, {"frame_count", schedule.frame_count()},
            {"units", std::move(units)}};
}

} // namespace hbvc
