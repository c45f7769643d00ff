#include <doctest.h>

#include <fstream>

#include "hbvc/error.hpp"
#include "hbvc/frame.hpp"
#include "test_util.hpp"

using namespace hbvc;

TEST_SUITE("frame") {

TEST_CASE("frame byte sizes") {
    CHECK(frame_byte_size(4, 2, 8) == 12);
    CHECK(frame_byte_size(4, 2, 10) == 24);
    CHECK(frame_byte_size(1920, 1080, 8) == 3110400);
}

TEST_CASE("write then read is sample exact") {
    const auto dir = test::scratch_dir("frame_rt");
    std::mt19937_64 rng(3);
    for (int depth : {8, 10}) {
        std::vector<Frame> frames;
        for (int i = 0; i < 3; ++i) frames.push_back(test::random_frame(16, 16, depth, rng));
        const auto path = dir / ("rt" + std::to_string(depth) + ".yuv");
        CHECK(write_yuv420(path, frames) == 3 * frame_byte_size(16, 16, depth));
        const auto back = read_yuv420(path, {16, 16, depth, 30.0, 3});
        REQUIRE(back.size() == 3);
        for (int i = 0; i < 3; ++i) {
            CHECK(back[i].samples_equal(frames[i]));
            CHECK(back[i].frame_index == i);
        }
    }
}

TEST_CASE("10-bit samples are little-endian words") {
    const auto dir = test::scratch_dir("frame_le");
    Frame f(2, 2, 10);
    f.y.at(0, 0) = 0x0302;
    write_yuv420(dir / "a.yuv", std::vector<Frame>{f});
    std::ifstream in(dir / "a.yuv", std::ios::binary);
    unsigned char b[2];
    in.read(reinterpret_cast<char*>(b), 2);
    CHECK(b[0] == 0x02);
    CHECK(b[1] == 0x03);
}

TEST_CASE("frame ranges and byte offsets") {
    const auto dir = test::scratch_dir("frame_range");
    std::mt19937_64 rng(5);
    std::vector<Frame> frames;
    for (int i = 0; i < 5; ++i) frames.push_back(test::random_frame(8, 4, 8, rng));
    write_yuv420(dir / "f.yuv", frames);
    CHECK(count_frames_in_file(dir / "f.yuv", 8, 4, 8) == 5);
    const auto mid = read_yuv420(dir / "f.yuv", {8, 4, 8, 30.0, 5}, {2, 2});
    REQUIRE(mid.size() == 2);
    CHECK(mid[0].samples_equal(frames[2]));
    CHECK(mid[1].samples_equal(frames[3]));
    CHECK(mid[0].frame_index == 2);
}

TEST_CASE("read errors") {
    const auto dir = test::scratch_dir("frame_err");
    {
        std::ofstream out(dir / "short.yuv", std::ios::binary);
        out << std::string(20, 'x');
    }
    auto kind_of = [](auto&& fn) {
        try {
            fn();
        } catch (const Error& e) {
            return e.kind();
        }
        return ErrorKind::InvalidArgument;
    };
    // 4x2 8-bit needs 12 bytes per frame: two frames need 24.
    CHECK(kind_of([&] { read_yuv420(dir / "short.yuv", {4, 2, 8, 30.0, 2}, {0, 2}); }) == ErrorKind::TruncatedInput);
    CHECK(kind_of([&] { read_yuv420(dir / "short.yuv", {4, 2, 12, 30.0, 1}); }) == ErrorKind::UnsupportedFormat);
    CHECK(kind_of([&] { read_yuv420(dir / "missing.yuv", {4, 2, 8, 30.0, 1}); }) == ErrorKind::Io);
}

TEST_CASE("write rejects mixed geometry and out-of-range samples") {
    const auto dir = test::scratch_dir("frame_werr");
    CHECK(write_yuv420(dir / "empty.yuv", std::vector<Frame>{}) == 0);
    CHECK(std::filesystem::file_size(dir / "empty.yuv") == 0);
    std::vector<Frame> mixed{Frame(4, 4, 8), Frame(8, 4, 8)};
    CHECK_THROWS_AS(write_yuv420(dir / "m.yuv", mixed), Error);
    Frame bad(4, 4, 10);
    bad.y.at(1, 1) = 1024;
    try {
        write_yuv420(dir / "b.yuv", std::vector<Frame>{bad});
        FAIL("expected rejection");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::InvalidInput);
    }
}

TEST_CASE("odd dimensions are rejected") {
    CHECK_THROWS_AS(Frame(5, 4, 8), Error);
    CHECK_THROWS_AS(Frame(4, 4, 9), Error);
}

TEST_CASE("padding to the block grid") {
    Frame hd(1920, 1080, 8);
    hd.y.at(5, 1079) = 77;
    const PaddedFrame p = pad_to_block_grid(hd, 16);
    CHECK(p.frame.width() == 1920);
    CHECK(p.frame.height() == 1088);
    CHECK(p.original_height == 1080);
    for (int y = 1080; y < 1088; ++y) CHECK(p.frame.y.at(5, y) == 77);

    std::mt19937_64 rng(1);
    const Frame aligned = test::random_frame(32, 16, 8, rng);
    CHECK(pad_to_block_grid(aligned, 16).frame.samples_equal(aligned));

    const Frame small = test::random_frame(6, 6, 8, rng);
    const PaddedFrame ps = pad_to_block_grid(small, 8);
    CHECK(ps.frame.width() == 8);
    CHECK(ps.frame.height() == 8);
    CHECK(ps.frame.y.at(7, 7) == small.y.at(5, 5));
    CHECK(ps.frame.u.at(3, 0) == small.u.at(2, 0));
    CHECK(crop(ps.frame, 6, 6).samples_equal(small));
    CHECK_THROWS_AS(pad_to_block_grid(small, 6), Error);
}

TEST_CASE("patch cropping") {
    std::mt19937_64 rng(2);
    const Frame f = test::random_frame(16, 16, 8, rng);
    const Frame p = crop_patch(f, 4, 2, 8, 6);
    CHECK(p.width() == 8);
    CHECK(p.y.at(0, 0) == f.y.at(4, 2));
    CHECK(p.u.at(1, 1) == f.u.at(3, 2));
    CHECK_THROWS_AS(crop_patch(f, 12, 0, 8, 8), Error);
}

}
