#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace hbvc {

// One sample plane, row-major.
struct Plane {
    int width = 0;
    int height = 0;
    std::vector<uint16_t> samples;

    Plane() = default;
    Plane(int w, int h, uint16_t fill = 0)
        : width(w), height(h), samples(static_cast<size_t>(w) * h, fill) {}

    uint16_t at(int x, int y) const { return samples[static_cast<size_t>(y) * width + x]; }
    uint16_t& at(int x, int y) { return samples[static_cast<size_t>(y) * width + x]; }

    // Edge-clamped read.
    uint16_t clamped(int x, int y) const {
        x = x < 0 ? 0 : (x >= width ? width - 1 : x);
        y = y < 0 ? 0 : (y >= height ? height - 1 : y);
        return at(x, y);
    }

    bool operator==(const Plane&) const = default;
};

enum class PlaneId { Y = 0, U = 1, V = 2 };

// A YUV 4:2:0 picture.
struct Frame {
    Plane y;
    Plane u;
    Plane v;
    int bit_depth = 8;
    int frame_index = 0;

    Frame() = default;
    Frame(int width, int height, int depth, uint16_t fill = 0);

    int width() const { return y.width; }
    int height() const { return y.height; }
    int max_sample() const { return (1 << bit_depth) - 1; }

    const Plane& plane(PlaneId id) const;
    Plane& plane(PlaneId id);

    bool same_geometry(const Frame& other) const {
        return width() == other.width() && height() == other.height() &&
               bit_depth == other.bit_depth;
    }

    // Sample equality; frame_index is metadata and ignored.
    bool samples_equal(const Frame& other) const {
        return bit_depth == other.bit_depth && y == other.y && u == other.u && v == other.v;
    }

    // Throws InvalidInput when geometry or sample range is violated.
    void validate() const;
};

struct VideoMeta {
    int width = 0;
    int height = 0;
    int bit_depth = 8;
    double fps = 30.0;
    int frame_count = 1;
};

struct FrameRange {
    int first = 0;
    int count = -1; // -1: through the end of the file
};

// Bytes occupied by one frame in a raw planar file.
size_t frame_byte_size(int width, int height, int bit_depth);

// Reads frames in display order. 10-bit samples are little-endian 16-bit words.
std::vector<Frame> read_yuv420(const std::filesystem::path& path, const VideoMeta& meta,
                               FrameRange range = {});

// Returns the number of bytes written.
size_t write_yuv420(const std::filesystem::path& path, std::span<const Frame> frames);

// Number of whole frames a raw file holds for the given geometry.
int count_frames_in_file(const std::filesystem::path& path, int width, int height,
                         int bit_depth);

struct PaddedFrame {
    Frame frame;
    int original_width = 0;
    int original_height = 0;
};

// Rounds luma dimensions up to a multiple of `block` by edge replication.
PaddedFrame pad_to_block_grid(const Frame& frame, int block);

// Top-left crop; inverse of pad_to_block_grid on the original region.
Frame crop(const Frame& frame, int width, int height);

// Extracts a luma-aligned patch (x, y, width, height all even).
Frame crop_patch(const Frame& frame, int x, int y, int width, int height);

} // namespace hbvc
