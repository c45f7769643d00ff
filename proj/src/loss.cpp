#include "hbvc/loss.hpp"

#include <cmath>

#include "hbvc/error.hpp"

namespace hbvc {

void LossWeights::validate() const {
    if (!(lambda > 0.0) || !std::isfinite(lambda)) fail(ErrorKind::InvalidArgument, "lambda must be positive");
    if (!(lambda_scale > 0.0)) fail(ErrorKind::InvalidArgument, "lambda scale must be positive");
    if (!(c_uv >= 0.0)) fail(ErrorKind::InvalidArgument, "c_uv must be nonnegative");
    for (const auto& [level, c] : c_t)
        if (!(c > 0.0)) fail(ErrorKind::InvalidArgument, "c_t must be positive at level " + std::to_string(level));
}

namespace {

double mse(const Plane& a, const Plane& b) {
    double sum = 0;
    for (size_t i = 0; i < a.samples.size(); ++i) {
        const double d = static_cast<double>(a.samples[i]) - b.samples[i];
        sum += d * d;
    }
    return a.samples.empty() ? 0.0 : sum / static_cast<double>(a.samples.size());
}

} // namespace

PlaneMse plane_mse(const Frame& orig, const Frame& recon) {
    if (!orig.same_geometry(recon)) fail(ErrorKind::InvalidInput, "frames differ in geometry");
    return {mse(orig.y, recon.y), mse(orig.u, recon.u), mse(orig.v, recon.v)};
}

double weighted_distortion(const PlaneMse& m, double c_uv, double c_t) {
    return (8.0 * m.y + c_uv * (m.u + m.v)) / 10.0 * c_t;
}

double distortion_yuv(const Frame& orig, const Frame& recon, const LossWeights& w, int level) {
    PlaneMse m = plane_mse(orig, recon);
    const double scale = static_cast<double>(1 << (orig.bit_depth - 8));
    m.y /= scale * scale;
    m.u /= scale * scale;
    m.v /= scale * scale;
    return weighted_distortion(m, w.c_uv, w.level_coefficient(level));
}

} // namespace hbvc
