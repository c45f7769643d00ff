#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "hbvc/frame.hpp"

namespace test {

// Fresh scratch directory per call, removed by the OS-level tmp cleanup.
inline std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("hbvc_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline hbvc::Frame random_frame(int w, int h, int depth, std::mt19937_64& rng) {
    hbvc::Frame f(w, h, depth);
    std::uniform_int_distribution<int> d(0, (1 << depth) - 1);
    for (auto* p : {&f.y, &f.u, &f.v})
        for (auto& s : p->samples) s = static_cast<uint16_t>(d(rng));
    return f;
}

} // namespace test
