#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "hbvc/frame.hpp"

namespace hbvc {

enum class SyntheticKind { Static, Pan, Noise };

SyntheticKind parse_synthetic_kind(const std::string& name);
const char* to_string(SyntheticKind kind);

// Deterministic test content. Pan moves the scene 2 luma pixels right per
// frame; Noise is independent uniform noise over a mid-gray base.
std::vector<Frame> make_synthetic_clip(SyntheticKind kind, int frames, int width = 128,
                                       int height = 128, int bit_depth = 8, uint64_t seed = 1);

} // namespace hbvc
