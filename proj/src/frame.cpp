#include "hbvc/frame.hpp"

#include <algorithm>
#include <fstream>
#include <string>

#include "hbvc/error.hpp"

namespace hbvc {

const char* to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::InvalidArgument: return "invalid-argument";
    case ErrorKind::InvalidInput: return "invalid-input";
    case ErrorKind::UnsupportedFormat: return "unsupported-format";
    case ErrorKind::TruncatedInput: return "truncated-input";
    case ErrorKind::InconsistentInput: return "inconsistent-input";
    case ErrorKind::Io: return "io";
    case ErrorKind::InvalidGop: return "invalid-gop";
    case ErrorKind::ScheduleAlignment: return "schedule-alignment";
    case ErrorKind::ScheduleViolation: return "schedule-violation";
    case ErrorKind::InvalidGain: return "invalid-gain";
    case ErrorKind::MissingLevel: return "missing-level";
    case ErrorKind::UnderdeterminedFit: return "underdetermined-fit";
    case ErrorKind::BitstreamCorruption: return "bitstream-corruption";
    case ErrorKind::Format: return "format";
    case ErrorKind::InsufficientData: return "insufficient-data";
    case ErrorKind::NoOverlap: return "no-overlap";
    case ErrorKind::InvalidPairing: return "invalid-pairing";
    }
    return "unknown";
}

namespace {

void check_geometry(int width, int height, int bit_depth) {
    if (bit_depth != 8 && bit_depth != 10)
        fail(ErrorKind::UnsupportedFormat,
             "bit depth " + std::to_string(bit_depth) + " is not supported (8 or 10)");
    if (width <= 0 || height <= 0)
        fail(ErrorKind::InvalidInput, "frame dimensions must be positive");
    if (width % 2 != 0 || height % 2 != 0)
        fail(ErrorKind::InvalidInput, "4:2:0 requires even dimensions, got " +
                                          std::to_string(width) + "x" + std::to_string(height));
}

size_t bytes_per_sample(int bit_depth) { return bit_depth > 8 ? 2 : 1; }

void unpack_plane(const uint8_t* src, Plane& plane, int bit_depth) {
    if (bit_depth == 8) {
        std::copy(src, src + plane.samples.size(), plane.samples.begin());
        return;
    }
    for (size_t i = 0; i < plane.samples.size(); ++i)
        plane.samples[i] = static_cast<uint16_t>(src[2 * i] | (src[2 * i + 1] << 8));
}

void pack_plane(const Plane& plane, int bit_depth, std::vector<uint8_t>& out) {
    if (bit_depth == 8) {
        for (uint16_t s : plane.samples) out.push_back(static_cast<uint8_t>(s));
        return;
    }
    for (uint16_t s : plane.samples) {
        out.push_back(static_cast<uint8_t>(s & 0xFF));
        out.push_back(static_cast<uint8_t>(s >> 8));
    }
}

Plane pad_plane(const Plane& src, int width, int height) {
    Plane out(width, height);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) out.at(x, y) = src.clamped(x, y);
    return out;
}

Plane crop_plane(const Plane& src, int x0, int y0, int width, int height) {
    Plane out(width, height);
    for (int y = 0; y < height; ++y)
        std::copy_n(src.samples.begin() + static_cast<ptrdiff_t>(y0 + y) * src.width + x0,
                    width, out.samples.begin() + static_cast<ptrdiff_t>(y) * width);
    return out;
}

} // namespace

Frame::Frame(int width, int height, int depth, uint16_t fill)
    : y(width, height, fill), u(width / 2, height / 2, fill), v(width / 2, height / 2, fill),
      bit_depth(depth) {
    check_geometry(width, height, depth);
}

const Plane& Frame::plane(PlaneId id) const {
    switch (id) {
    case PlaneId::Y: return y;
    case PlaneId::U: return u;
    default: return v;
    }
}

Plane& Frame::plane(PlaneId id) {
    return const_cast<Plane&>(static_cast<const Frame&>(*this).plane(id));
}

void Frame::validate() const {
    check_geometry(width(), height(), bit_depth);
    if (u.width * 2 != y.width || u.height * 2 != y.height || v.width != u.width ||
        v.height != u.height)
        fail(ErrorKind::InvalidInput, "chroma planes must be half the luma dimensions");
    const auto limit = static_cast<uint16_t>(max_sample());
    for (const Plane* p : {&y, &u, &v}) {
        if (p->samples.size() != static_cast<size_t>(p->width) * p->height)
            fail(ErrorKind::InvalidInput, "plane storage does not match its dimensions");
        if (std::any_of(p->samples.begin(), p->samples.end(),
                        [limit](uint16_t s) { return s > limit; }))
            fail(ErrorKind::InvalidInput, "sample exceeds " + std::to_string(limit) +
                                              " for bit depth " + std::to_string(bit_depth));
    }
}

size_t frame_byte_size(int width, int height, int bit_depth) {
    const size_t luma = static_cast<size_t>(width) * height;
    const size_t chroma = static_cast<size_t>(width / 2) * (height / 2);
    return (luma + 2 * chroma) * bytes_per_sample(bit_depth);
}

int count_frames_in_file(const std::filesystem::path& path, int width, int height,
                         int bit_depth) {
    check_geometry(width, height, bit_depth);
    std::error_code ec;
    const auto size = std::filesystem::file_size(path, ec);
    if (ec) fail(ErrorKind::Io, "cannot stat " + path.string() + ": " + ec.message());
    return static_cast<int>(size / frame_byte_size(width, height, bit_depth));
}

std::vector<Frame> read_yuv420(const std::filesystem::path& path, const VideoMeta& meta,
                               FrameRange range) {
    check_geometry(meta.width, meta.height, meta.bit_depth);
    if (meta.frame_count < 1) fail(ErrorKind::InvalidArgument, "frame_count must be >= 1");
    const int count = range.count < 0 ? meta.frame_count - range.first : range.count;
    if (range.first < 0 || count < 0 || range.first + count > meta.frame_count)
        fail(ErrorKind::InvalidArgument, "frame range outside [0, frame_count)");

    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::Io, "cannot open " + path.string());

    const size_t frame_bytes = frame_byte_size(meta.width, meta.height, meta.bit_depth);
    std::error_code ec;
    const auto file_size = std::filesystem::file_size(path, ec);
    if (ec) fail(ErrorKind::Io, "cannot stat " + path.string());
    if (file_size < frame_bytes * static_cast<size_t>(meta.frame_count))
        fail(ErrorKind::TruncatedInput,
             path.string() + " holds " + std::to_string(file_size) + " bytes, " +
                 std::to_string(meta.frame_count) + " frames need " +
                 std::to_string(frame_bytes * meta.frame_count));

    in.seekg(static_cast<std::streamoff>(frame_bytes * range.first));
    std::vector<uint8_t> buffer(frame_bytes);
    std::vector<Frame> frames;
    frames.reserve(count);
    const size_t bps = bytes_per_sample(meta.bit_depth);
    for (int k = 0; k < count; ++k) {
        in.read(reinterpret_cast<char*>(buffer.data()), static_cast<std::streamsize>(frame_bytes));
        if (!in) fail(ErrorKind::TruncatedInput, "short read at frame " + std::to_string(range.first + k));
        Frame frame(meta.width, meta.height, meta.bit_depth);
        frame.frame_index = range.first + k;
        const uint8_t* cursor = buffer.data();
        for (Plane* p : {&frame.y, &frame.u, &frame.v}) {
            unpack_plane(cursor, *p, meta.bit_depth);
            cursor += p->samples.size() * bps;
        }
        frame.validate();
        frames.push_back(std::move(frame));
    }
    return frames;
}

size_t write_yuv420(const std::filesystem::path& path, std::span<const Frame> frames) {
    for (const Frame& f : frames) {
        f.validate();
        if (!f.same_geometry(frames.front()))
            fail(ErrorKind::InconsistentInput, "frames differ in dimensions or bit depth");
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::Io, "cannot open " + path.string() + " for writing");

    size_t written = 0;
    std::vector<uint8_t> buffer;
    for (const Frame& f : frames) {
        buffer.clear();
        for (const Plane* p : {&f.y, &f.u, &f.v}) pack_plane(*p, f.bit_depth, buffer);
        out.write(reinterpret_cast<const char*>(buffer.data()),
                  static_cast<std::streamsize>(buffer.size()));
        written += buffer.size();
    }
    if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
    return written;
}

PaddedFrame pad_to_block_grid(const Frame& frame, int block) {
    if (block <= 0 || (block & (block - 1)) != 0)
        fail(ErrorKind::InvalidArgument, "block size must be a power of two");
    const int w = (frame.width() + block - 1) / block * block;
    const int h = (frame.height() + block - 1) / block * block;
    PaddedFrame out{frame, frame.width(), frame.height()};
    if (w == frame.width() && h == frame.height()) return out;
    out.frame.y = pad_plane(frame.y, w, h);
    out.frame.u = pad_plane(frame.u, w / 2, h / 2);
    out.frame.v = pad_plane(frame.v, w / 2, h / 2);
    return out;
}

Frame crop(const Frame& frame, int width, int height) {
    return crop_patch(frame, 0, 0, width, height);
}

Frame crop_patch(const Frame& frame, int x, int y, int width, int height) {
    if (x % 2 || y % 2 || width % 2 || height % 2 || x < 0 || y < 0 ||
        x + width > frame.width() || y + height > frame.height())
        fail(ErrorKind::InvalidArgument, "crop window must be even-aligned and inside the frame");
    Frame out = frame;
    out.y = crop_plane(frame.y, x, y, width, height);
    out.u = crop_plane(frame.u, x / 2, y / 2, width / 2, height / 2);
    out.v = crop_plane(frame.v, x / 2, y / 2, width / 2, height / 2);
    return out;
}

} // namespace hbvc
