#pragma once

#include <cstdint>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace hbvc {

enum class FrameKind : uint8_t { Intra = 0, Bidir = 1 };

// Coding metadata of one frame. For Bidir units t = p + delta = f - delta.
struct CodingUnit {
    int t = 0;
    FrameKind kind = FrameKind::Intra;
    int p = -1;
    int f = -1;
    int delta = 0;
    int level = 0;
    int decode_rank = 0;

    bool operator==(const CodingUnit&) const = default;
};

// Units are stored in decode order.
struct GopSchedule {
    int gop_size = 0;
    std::vector<CodingUnit> units;

    int frame_count() const { return static_cast<int>(units.size()); }
    // Unit for display index t; throws InvalidArgument when t is not scheduled.
    const CodingUnit& unit_for(int t) const;
    int intra_count() const;

private:
    friend GopSchedule build_schedule(int, int, bool);
    std::vector<int> rank_of_;
};

struct RandomPath {
    int leaf = 0;
    std::vector<CodingUnit> units; // one per level, decode order
};

bool is_power_of_two(int v);
int log2_exact(int v);

// log2(gop/delta) for 0 < t < gop, 0 at the GoP boundaries.
int hierarchy_level(int gop_size, int t);

// Canonical order: Intra frames ascending, then Bidir by level, ties by t.
GopSchedule build_schedule(int n_frames, int gop_size, bool truncate = false);

// Intra period used when no GoP size is given: 32 for content at or below
// 30 fps, 64 otherwise.
int gop_for_fps(double fps);

// Units (relative to the GoP start) needed to reconstruct `leaf`.
RandomPath path_to_leaf(int gop_size, int leaf);
RandomPath sample_random_path(int gop_size, uint64_t seed);
std::vector<RandomPath> enumerate_leaves(int gop_size);

nlohmann::json schedule_to_json(const GopSchedule& schedule);

} // namespace hbvc
