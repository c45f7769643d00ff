#pragma once

#include <map>

#include "hbvc/frame.hpp"

namespace hbvc {

// Weights of the rate-distortion objective.
//
// Rates are measured in bits per luma pixel and distortion is the YUV-weighted
// MSE on the 8-bit sample scale. The nominal lambdas (0.05 ... 0.001) are
// applied after multiplying by `lambda_scale`, which places the four standard
// operating points between roughly 30 and 46 dB on this block-transform codec.
struct LossWeights {
    double lambda = 0.05;
    std::map<int, double> c_t; // per hierarchy level; missing levels use 1
    double c_uv = 1.0;
    double lambda_scale = 10.0;

    double level_coefficient(int level) const {
        auto it = c_t.find(level);
        return it == c_t.end() ? 1.0 : it->second;
    }

    // Multiplier of distortion against bits-per-pixel. For 10-bit content
    // distortion is scaled back to the 8-bit range.
    double rd_multiplier(int bit_depth = 8) const {
        const double scale = static_cast<double>(1 << (bit_depth - 8));
        return lambda * lambda_scale / (scale * scale);
    }

    void validate() const;
};

struct PlaneMse {
    double y = 0;
    double u = 0;
    double v = 0;
};

PlaneMse plane_mse(const Frame& orig, const Frame& recon);

// D = (8 MSE_Y + c_uv (MSE_U + MSE_V)) / 10 * c_t
double weighted_distortion(const PlaneMse& mse, double c_uv, double c_t);

double distortion_yuv(const Frame& orig, const Frame& recon, const LossWeights& w, int level);

} // namespace hbvc
