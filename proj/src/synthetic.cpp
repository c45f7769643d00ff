#include "hbvc/synthetic.hpp"

#include <cmath>
#include <random>

#include "hbvc/error.hpp"

namespace hbvc {

SyntheticKind parse_synthetic_kind(const std::string& name) {
    if (name == "static") return SyntheticKind::Static;
    if (name == "pan") return SyntheticKind::Pan;
    if (name == "noise") return SyntheticKind::Noise;
    fail(ErrorKind::InvalidArgument, "unknown synthetic clip '" + name + "'");
}

const char* to_string(SyntheticKind kind) {
    switch (kind) {
    case SyntheticKind::Static: return "static";
    case SyntheticKind::Pan: return "pan";
    case SyntheticKind::Noise: return "noise";
    }
    return "?";
}

namespace {

// Scene in world coordinates: gradients, a few discs and a checker patch.
double scene_luma(double x, double y) {
    double v = 90.0 + 0.35 * x + 0.2 * y + 25.0 * std::sin(x / 9.0) * std::cos(y / 13.0);
    const double discs[3][3] = {{40, 40, 18}, {150, 70, 24}, {90, 110, 14}};
    for (const auto& d : discs)
        if ((x - d[0]) * (x - d[0]) + (y - d[1]) * (y - d[1]) < d[2] * d[2]) v += 50.0;
    const int cx = static_cast<int>(std::floor(x / 6.0)), cy = static_cast<int>(std::floor(y / 6.0));
    if (y > 64 && y < 100 && ((cx + cy) & 1)) v -= 35.0;
    return v;
}

double scene_u(double x, double y) { return 128.0 + 30.0 * std::sin((x + y) / 21.0); }
double scene_v(double x, double y) { return 128.0 + 25.0 * std::cos((x - 2 * y) / 17.0); }

uint16_t to_sample(double v8, int bit_depth) {
    const double scaled = v8 * (1 << (bit_depth - 8));
    const int max_sample = (1 << bit_depth) - 1;
    return static_cast<uint16_t>(std::clamp(static_cast<int>(std::lround(scaled)), 0, max_sample));
}

} // namespace

std::vector<Frame> make_synthetic_clip(SyntheticKind kind, int frames, int width, int height,
                                       int bit_depth, uint64_t seed) {
    if (frames < 0) fail(ErrorKind::InvalidArgument, "frame count must be nonnegative");
    std::vector<Frame> clip;
    clip.reserve(frames);
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> noise(-60, 60);
    for (int t = 0; t < frames; ++t) {
        Frame f(width, height, bit_depth);
        f.frame_index = t;
        const double shift = kind == SyntheticKind::Pan ? -2.0 * t : 0.0;
        for (int y = 0; y < height; ++y)
            for (int x = 0; x < width; ++x) {
                double v = scene_luma(x + shift + 200.0, y);
                if (kind == SyntheticKind::Noise) v = 128.0 + noise(rng);
                f.y.at(x, y) = to_sample(v, bit_depth);
            }
        for (int y = 0; y < height / 2; ++y)
            for (int x = 0; x < width / 2; ++x) {
                double u = scene_u(2 * x + shift + 200.0, 2 * y);
                double v = scene_v(2 * x + shift + 200.0, 2 * y);
                if (kind == SyntheticKind::Noise) {
                    u = 128.0 + noise(rng) / 2;
                    v = 128.0 + noise(rng) / 2;
                }
                f.u.at(x, y) = to_sample(u, bit_depth);
                f.v.at(x, y) = to_sample(v, bit_depth);
            }
        clip.push_back(std::move(f));
    }
    return clip;
}

} // namespace hbvc
