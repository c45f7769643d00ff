#include "hbvc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "hbvc/error.hpp"

namespace hbvc {

double psnr_from_mse(double mse, int bit_depth) {
    if (mse <= 0.0) return kPsnrCap;
    const double peak = static_cast<double>((1 << bit_depth) - 1);
    return std::min(kPsnrCap, 10.0 * std::log10(peak * peak / mse));
}

double psnr_plane(const Plane& orig, const Plane& recon, int bit_depth) {
    if (orig.width != recon.width || orig.height != recon.height)
        fail(ErrorKind::InvalidInput, "planes differ in shape");
    double sum = 0.0;
    for (size_t i = 0; i < orig.samples.size(); ++i) {
        const double d = static_cast<double>(orig.samples[i]) - recon.samples[i];
        sum += d * d;
    }
    return psnr_from_mse(orig.samples.empty() ? 0.0 : sum / static_cast<double>(orig.samples.size()), bit_depth);
}

double weighted_yuv_psnr(double psnr_y, double psnr_u, double psnr_v) {
    return (6.0 * psnr_y + psnr_u + psnr_v) / 8.0;
}

FrameQuality frame_quality(const Frame& orig, const Frame& recon) {
    if (!orig.same_geometry(recon)) fail(ErrorKind::InvalidInput, "frames differ in geometry");
    FrameQuality q;
    q.t = orig.frame_index;
    q.y = psnr_plane(orig.y, recon.y, orig.bit_depth);
    q.u = psnr_plane(orig.u, recon.u, orig.bit_depth);
    q.v = psnr_plane(orig.v, recon.v, orig.bit_depth);
    q.weighted = weighted_yuv_psnr(q.y, q.u, q.v);
    return q;
}

double bitrate_kbps(size_t stream_bytes, double fps, int frame_count) {
    if (frame_count <= 0 || !(fps > 0.0)) fail(ErrorKind::InvalidArgument, "bitrate needs frames and fps");
    return 8.0 * static_cast<double>(stream_bytes) * fps / frame_count / 1000.0;
}

// ------------------------------------------------------------ interpolation

Pchip::Pchip(std::vector<double> x, std::vector<double> y) : x_(std::move(x)), y_(std::move(y)) {
    const size_t n = x_.size();
    if (n < 2 || y_.size() != n) fail(ErrorKind::InvalidArgument, "interpolation needs >= 2 matching knots");
    for (size_t i = 1; i < n; ++i)
        if (!(x_[i] > x_[i - 1])) fail(ErrorKind::InvalidArgument, "knots must be strictly increasing");
    std::vector<double> h(n - 1), delta(n - 1);
    for (size_t i = 0; i + 1 < n; ++i) {
        h[i] = x_[i + 1] - x_[i];
        delta[i] = (y_[i + 1] - y_[i]) / h[i];
    }
    d_.assign(n, 0.0);
    if (n == 2) {
        d_[0] = d_[1] = delta[0];
        return;
    }
    for (size_t k = 1; k + 1 < n; ++k) {
        if (delta[k - 1] * delta[k] <= 0.0) continue;
        const double w1 = 2 * h[k] + h[k - 1], w2 = h[k] + 2 * h[k - 1];
        d_[k] = (w1 + w2) / (w1 / delta[k - 1] + w2 / delta[k]);
    }
    auto endpoint = [](double h0, double h1, double m0, double m1) {
        double d = ((2 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
        if (std::signbit(d) != std::signbit(m0) || m0 == 0.0) d = 0.0;
        else if (std::signbit(m0) != std::signbit(m1) && std::abs(d) > 3 * std::abs(m0)) d = 3 * m0;
        return d;
    };
    d_[0] = endpoint(h[0], h[1], delta[0], delta[1]);
    d_[n - 1] = endpoint(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
}

namespace {

// Segment as y0 + d0 s + c2 s^2 + c3 s^3, s measured from the left knot.
struct Cubic {
    double c0, c1, c2, c3;
    double at(double s) const { return c0 + s * (c1 + s * (c2 + s * c3)); }
    double antiderivative(double s) const { return s * (c0 + s * (c1 / 2 + s * (c2 / 3 + s * c3 / 4))); }
};

} // namespace

double Pchip::operator()(double x) const {
    size_t i = std::upper_bound(x_.begin(), x_.end(), x) - x_.begin();
    i = std::clamp<size_t>(i, 1, x_.size() - 1) - 1;
    const double h = x_[i + 1] - x_[i], delta = (y_[i + 1] - y_[i]) / h;
    const Cubic c{y_[i], d_[i], (3 * delta - 2 * d_[i] - d_[i + 1]) / h, (d_[i] + d_[i + 1] - 2 * delta) / (h * h)};
    return c.at(x - x_[i]);
}

double Pchip::integral(double a, double b) const {
    if (a > b) return -integral(b, a);
    if (a < x_.front() || b > x_.back()) fail(ErrorKind::InvalidArgument, "integral outside the knot range");
    double sum = 0.0;
    for (size_t i = 0; i + 1 < x_.size(); ++i) {
        const double lo = std::max(a, x_[i]), hi = std::min(b, x_[i + 1]);
        if (hi <= lo) continue;
        const double h = x_[i + 1] - x_[i], delta = (y_[i + 1] - y_[i]) / h;
        const Cubic c{y_[i], d_[i], (3 * delta - 2 * d_[i] - d_[i + 1]) / h, (d_[i] + d_[i + 1] - 2 * delta) / (h * h)};
        sum += c.antiderivative(hi - x_[i]) - c.antiderivative(lo - x_[i]);
    }
    return sum;
}

namespace {

struct Prepared {
    std::vector<double> q;     // ascending
    std::vector<double> log_r; // matching
};

Prepared prepare(const RdCurve& curve, const char* role, std::vector<std::string>* warnings) {
    if (curve.points.size() < 4)
        fail(ErrorKind::InsufficientData, std::string(role) + " curve needs at least 4 points");
    std::vector<RdPoint> pts = curve.points;
    for (const RdPoint& p : pts) {
        if (!(p.bitrate > 0.0) || !std::isfinite(p.quality))
            fail(ErrorKind::InvalidArgument, std::string(role) + " curve has a non-positive rate or bad quality");
    }
    const bool ordered = std::is_sorted(pts.begin(), pts.end(),
                                        [](const RdPoint& a, const RdPoint& b) { return a.bitrate < b.bitrate; });
    std::sort(pts.begin(), pts.end(), [](const RdPoint& a, const RdPoint& b) { return a.quality < b.quality; });
    for (size_t i = 1; i < pts.size(); ++i) {
        if (pts[i].quality == pts[i - 1].quality)
            fail(ErrorKind::InvalidArgument, std::string(role) + " curve has duplicate quality values");
    }
    std::vector<double> rates;
    for (const RdPoint& p : pts) rates.push_back(p.bitrate);
    std::vector<double> sorted_rates = rates;
    std::sort(sorted_rates.begin(), sorted_rates.end());
    if (std::adjacent_find(sorted_rates.begin(), sorted_rates.end()) != sorted_rates.end())
        fail(ErrorKind::InvalidArgument, std::string(role) + " curve has duplicate bitrates");
    if (warnings) {
        if (!ordered) warnings->push_back(std::string(role) + " curve was not ordered by bitrate; sorted");
        if (!std::is_sorted(rates.begin(), rates.end()))
            warnings->push_back(std::string(role) + " curve is not monotone (quality falls as rate rises)");
    }
    Prepared out;
    for (const RdPoint& p : pts) {
        out.q.push_back(p.quality);
        out.log_r.push_back(std::log(p.bitrate));
    }
    return out;
}

// Least-squares cubic in quality, integrated in closed form.
double cubic_integral(const Prepared& c, double a, double b) {
    const double mid = (c.q.front() + c.q.back()) / 2, half = (c.q.back() - c.q.front()) / 2;
    Eigen::MatrixXd A(c.q.size(), 4);
    Eigen::VectorXd y(c.q.size());
    for (size_t i = 0; i < c.q.size(); ++i) {
        const double s = (c.q[i] - mid) / half;
        A(i, 0) = 1;
        A(i, 1) = s;
        A(i, 2) = s * s;
        A(i, 3) = s * s * s;
        y(i) = c.log_r[i];
    }
    const Eigen::VectorXd p = A.colPivHouseholderQr().solve(y);
    auto anti = [&](double q) {
        const double s = (q - mid) / half;
        return half * s * (p(0) + s * (p(1) / 2 + s * (p(2) / 3 + s * p(3) / 4)));
    };
    return anti(b) - anti(a);
}

} // namespace

double bd_rate(const RdCurve& anchor, const RdCurve& test, BdInterpolation method,
               std::vector<std::string>* warnings) {
    const Prepared a = prepare(anchor, "anchor", warnings);
    const Prepared t = prepare(test, "test", warnings);
    const double lo = std::max(a.q.front(), t.q.front());
    const double hi = std::min(a.q.back(), t.q.back());
    if (!(hi > lo)) fail(ErrorKind::NoOverlap, "RD curves share no quality interval");
    double ia, it;
    if (method == BdInterpolation::Pchip) {
        ia = Pchip(a.q, a.log_r).integral(lo, hi);
        it = Pchip(t.q, t.log_r).integral(lo, hi);
    } else {
        ia = cubic_integral(a, lo, hi);
        it = cubic_integral(t, lo, hi);
    }
    return (std::exp((it - ia) / (hi - lo)) - 1.0) * 100.0;
}

double mean_bd_rate(std::span<const double> values) {
    if (values.empty()) fail(ErrorKind::InsufficientData, "no BD-rates to average");
    return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

// ------------------------------------------------------------ evaluation

EvalReport evaluate_frames(std::span<const Frame> orig, std::span<const Frame> decoded,
                           size_t stream_bytes, double fps, const std::map<int, double>& vmaf) {
    if (orig.size() != decoded.size())
        fail(ErrorKind::InvalidPairing, "original has " + std::to_string(orig.size()) + " frames, decoded has " +
                                            std::to_string(decoded.size()));
    if (orig.empty()) fail(ErrorKind::InvalidPairing, "no frames to evaluate");
    EvalReport r;
    r.frames = static_cast<int>(orig.size());
    r.fps = fps;
    r.stream_bytes = stream_bytes;
    r.bitrate_kbps = bitrate_kbps(stream_bytes, fps, r.frames);
    double vmaf_sum = 0.0;
    size_t vmaf_count = 0;
    for (size_t i = 0; i < orig.size(); ++i) {
        FrameQuality q = frame_quality(orig[i], decoded[i]);
        q.t = static_cast<int>(i);
        if (auto it = vmaf.find(q.t); it != vmaf.end()) {
            q.vmaf = it->second;
            vmaf_sum += it->second;
            ++vmaf_count;
        }
        r.psnr_y += q.y;
        r.psnr_u += q.u;
        r.psnr_v += q.v;
        r.per_frame.push_back(q);
    }
    r.psnr_y /= r.frames;
    r.psnr_u /= r.frames;
    r.psnr_v /= r.frames;
    r.psnr_weighted = weighted_yuv_psnr(r.psnr_y, r.psnr_u, r.psnr_v);
    if (vmaf_count) r.vmaf = vmaf_sum / static_cast<double>(vmaf_count);
    return r;
}

std::optional<std::map<int, double>> read_vmaf_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) return std::nullopt;
    std::map<int, double> out;
    std::string line;
    int row = 0;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::stringstream ss(line);
        std::string a, b;
        std::getline(ss, a, ',');
        if (!std::getline(ss, b)) {
            b = a;
            a = std::to_string(row);
        }
        try {
            out[std::stoi(a)] = std::stod(b);
            ++row;
        } catch (const std::exception&) {
            // header line
        }
    }
    return out;
}

EvalReport evaluate_stream(const std::filesystem::path& orig, const std::filesystem::path& decoded,
                           const VideoMeta& meta, size_t stream_bytes,
                           const std::optional<std::filesystem::path>& vmaf_csv) {
    const int n_orig = count_frames_in_file(orig, meta.width, meta.height, meta.bit_depth);
    const int n_dec = count_frames_in_file(decoded, meta.width, meta.height, meta.bit_depth);
    if (n_orig != n_dec)
        fail(ErrorKind::InvalidPairing, "original has " + std::to_string(n_orig) + " frames, decoded has " +
                                            std::to_string(n_dec));
    VideoMeta m = meta;
    m.frame_count = n_orig;
    const auto a = read_yuv420(orig, m);
    const auto b = read_yuv420(decoded, m);
    std::map<int, double> vmaf;
    if (vmaf_csv) {
        if (auto v = read_vmaf_csv(*vmaf_csv)) vmaf = std::move(*v);
    }
    EvalReport r = evaluate_frames(a, b, stream_bytes, meta.fps, vmaf);
    r.sequence = orig.stem().string();
    return r;
}

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
    out.precision(10);
    return out;
}

std::string opt(const std::optional<double>& v) {
    if (!v) return {};
    std::ostringstream s;
    s.precision(10);
    s << *v;
    return s.str();
}

} // namespace

void write_report_csv(std::span<const EvalReport> reports, const std::filesystem::path& path) {
    auto out = open_out(path);
    out << "sequence,label,frames,fps,stream_bytes,bitrate_kbps,psnr_y,psnr_u,psnr_v,psnr_yuv,vmaf\n";
    for (const EvalReport& r : reports)
        out << r.sequence << ',' << r.label << ',' << r.frames << ',' << r.fps << ',' << r.stream_bytes << ','
            << r.bitrate_kbps << ',' << r.psnr_y << ',' << r.psnr_u << ',' << r.psnr_v << ',' << r.psnr_weighted
            << ',' << opt(r.vmaf) << '\n';
    if (!out) fail(ErrorKind::Io, "failed writing " + path.string());
}

void write_frame_csv(const EvalReport& report, const std::filesystem::path& path) {
    auto out = open_out(path);
    out << "frame,psnr_y,psnr_u,psnr_v,psnr_yuv,vmaf\n";
    for (const FrameQuality& q : report.per_frame)
        out << q.t << ',' << q.y << ',' << q.u << ',' << q.v << ',' << q.weighted << ',' << opt(q.vmaf) << '\n';
    if (!out) fail(ErrorKind::Io, "failed writing " + path.string());
}

nlohmann::json report_to_json(std::span<const EvalReport> reports) {
    nlohmann::json arr = nlohmann::json::array();
    for (const EvalReport& r : reports) {
        nlohmann::json j{{"sequence", r.sequence},   {"label", r.label},
                         {"frames", r.frames},       {"fps", r.fps},
                         {"stream_bytes", r.stream_bytes}, {"bitrate_kbps", r.bitrate_kbps},
                         {"psnr_y", r.psnr_y},       {"psnr_u", r.psnr_u},
                         {"psnr_v", r.psnr_v},       {"psnr_yuv", r.psnr_weighted}};
        j["vmaf"] = r.vmaf ? nlohmann::json(*r.vmaf) : nlohmann::json(nullptr);
        arr.push_back(std::move(j));
    }
    return {{"reports", std::move(arr)}};
}

void write_report_json(std::span<const EvalReport> reports, const std::filesystem::path& path) {
    auto out = open_out(path);
    out << report_to_json(reports).dump(2) << '\n';
    if (!out) fail(ErrorKind::Io, "failed writing " + path.string());
}

RdCurve read_curve_csv(const std::filesystem::path& path, std::string codec) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::Io, "cannot open curve " + path.string());
    RdCurve curve;
    curve.codec = codec.empty() ? path.stem().string() : std::move(codec);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        std::stringstream ss(line);
        std::string a, b, label;
        std::getline(ss, a, ',');
        std::getline(ss, b, ',');
        std::getline(ss, label);
        try {
            size_t ea = 0, eb = 0;
            const double rate = std::stod(a, &ea);
            const double quality = std::stod(b, &eb);
            curve.points.push_back({rate, quality, label});
        } catch (const std::exception&) {
            if (line_no == 1 || curve.points.empty()) continue; // header
            fail(ErrorKind::Format, path.string() + ":" + std::to_string(line_no) + ": not a bitrate,quality row");
        }
    }
    return curve;
}

void write_curve_csv(const RdCurve& curve, const std::filesystem::path& path) {
    auto out = open_out(path);
    out << "bitrate_kbps,quality_db,label\n";
    for (const RdPoint& p : curve.points) out << p.bitrate << ',' << p.quality << ',' << p.label << '\n';
    if (!out) fail(ErrorKind::Io, "failed writing " + path.string());
}

void write_gnuplot(std::span<const RdCurve> curves, const std::filesystem::path& path) {
    auto out = open_out(path);
    for (size_t i = 0; i < curves.size(); ++i) {
        if (i) out << "\n\n";
        out << "# " << curves[i].codec << "\n# bitrate_kbps quality_db\n";
        for (const RdPoint& p : curves[i].points) out << p.bitrate << ' ' << p.quality << '\n';
    }
    if (!out) fail(ErrorKind::Io, "failed writing " + path.string());
}

} // namespace hbvc
