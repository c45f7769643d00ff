#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "hbvc/frame.hpp"

namespace hbvc {

constexpr double kPsnrCap = 100.0;

double psnr_from_mse(double mse, int bit_depth);
double psnr_plane(const Plane& orig, const Plane& recon, int bit_depth);
// (6 Y + U + V) / 8
double weighted_yuv_psnr(double psnr_y, double psnr_u, double psnr_v);

struct FrameQuality {
    int t = 0;
    double y = 0, u = 0, v = 0;
    double weighted = 0;
    std::optional<double> vmaf;
};

FrameQuality frame_quality(const Frame& orig, const Frame& recon);

// kbps = bits * fps / frames / 1000
double bitrate_kbps(size_t stream_bytes, double fps, int frame_count);

struct RdPoint {
    double bitrate = 0; // kbps
    double quality = 0; // dB
    std::string label;
};

struct RdCurve {
    std::string codec;
    std::vector<RdPoint> points;
};

enum class BdInterpolation { Pchip, Cubic };

// Percent rate change of `test` against `anchor` at equal quality over the
// overlapping quality interval. Unordered curves are sorted (a note is added
// to `warnings`); duplicate qualities or rates are rejected.
double bd_rate(const RdCurve& anchor, const RdCurve& test,
               BdInterpolation method = BdInterpolation::Pchip,
               std::vector<std::string>* warnings = nullptr);

// Mean of per-sequence BD-rates.
double mean_bd_rate(std::span<const double> values);

// Monotone cubic Hermite interpolant (Fritsch-Carlson slopes), exposed for tests.
class Pchip {
public:
    Pchip(std::vector<double> x, std::vector<double> y);
    double operator()(double x) const;
    // Exact integral over [a, b] within the knot range.
    double integral(double a, double b) const;

private:
    std::vector<double> x_, y_, d_;
};

struct EvalReport {
    std::string sequence;
    std::string label;
    int frames = 0;
    double fps = 0;
    size_t stream_bytes = 0;
    double bitrate_kbps = 0;
    double psnr_y = 0, psnr_u = 0, psnr_v = 0;
    double psnr_weighted = 0;
    std::optional<double> vmaf;
    std::vector<FrameQuality> per_frame;
};

// Per-frame PSNR averaged over frames; bitrate from the stream size.
EvalReport evaluate_frames(std::span<const Frame> orig, std::span<const Frame> decoded,
                           size_t stream_bytes, double fps,
                           const std::map<int, double>& vmaf = {});

// File-based wrapper. The VMAF CSV (columns frame,vmaf) is optional; a
// missing file leaves the column empty.
EvalReport evaluate_stream(const std::filesystem::path& orig, const std::filesystem::path& decoded,
                           const VideoMeta& meta, size_t stream_bytes,
                           const std::optional<std::filesystem::path>& vmaf_csv = std::nullopt);

std::optional<std::map<int, double>> read_vmaf_csv(const std::filesystem::path& path);

void write_report_csv(std::span<const EvalReport> reports, const std::filesystem::path& path);
void write_frame_csv(const EvalReport& report, const std::filesystem::path& path);
nlohmann::json report_to_json(std::span<const EvalReport> reports);
void write_report_json(std::span<const EvalReport> reports, const std::filesystem::path& path);

// Curve CSV: header then rows of bitrate,quality[,label].
RdCurve read_curve_csv(const std::filesystem::path& path, std::string codec = {});
void write_curve_csv(const RdCurve& curve, const std::filesystem::path& path);
// One data block per curve, separated by two blank lines.
void write_gnuplot(std::span<const RdCurve> curves, const std::filesystem::path& path);

} // namespace hbvc
