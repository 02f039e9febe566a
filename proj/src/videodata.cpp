#include "stablevsr/videodata.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <iostream>
#include <numbers>

namespace stablevsr {

VideoSequence::VideoSequence(std::vector<Frame> fs, ColorSpace cs, Tier t)
    : frames(std::move(fs)), colorspace(cs), tier(t)
{
    if (frames.empty())
        return;
    const Shape first = frames.front().shape();
    const Index expected_c = cs == ColorSpace::rgb ? 3 : 1;
    for (auto& f : frames) {
        if (!(f.shape() == first))
            throw ShapeError("video frames must share one shape, got " + to_string(f.shape()) + " and " +
                             to_string(first));
        if (f.shape().n != 1 || f.shape().c != expected_c)
            throw ShapeError("frame channel count does not match color space: " + to_string(f.shape()));
        clamp_unit(f);
    }
}

void clamp_unit(Frame& frame) { frame.values() = frame.values().max(0.0f).min(1.0f); }

// ---------------------------------------------------------------------------

int DegradationConfig::radius() const
{
    return kernel_radius > 0 ? kernel_radius : static_cast<int>(std::ceil(4.0 * sigma));
}

void DegradationConfig::validate() const
{
    if (!(sigma > 0.0))
        throw ConfigError("degradation sigma must be positive");
    if (scale < 1)
        throw ConfigError("degradation scale must be >= 1");
    if (kernel_radius < 0)
        throw ConfigError("kernel radius must be >= 0");
}

std::vector<double> gaussian_taps(double sigma, int radius)
{
    std::vector<double> taps(2 * radius + 1);
    double total = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        taps[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
        total += taps[i + radius];
    }
    for (double& t : taps)
        t /= total;
    return taps;
}

namespace {

Index reflect101(Index i, Index n)
{
    if (n == 1)
        return 0;
    const Index period = 2 * (n - 1);
    i %= period;
    if (i < 0)
        i += period;
    return i < n ? i : period - i;
}

}  // namespace

Frame gaussian_blur(const Frame& frame, double sigma, int radius)
{
    const auto taps = gaussian_taps(sigma, radius);
    const Shape s = frame.shape();
    Frame tmp(s), out(s);
    for (Index c = 0; c < s.c; ++c) {
        for (Index y = 0; y < s.h; ++y)
            for (Index x = 0; x < s.w; ++x) {
                double acc = 0.0;
                for (int d = -radius; d <= radius; ++d)
                    acc += taps[d + radius] * frame(0, c, y, reflect101(x + d, s.w));
                tmp(0, c, y, x) = static_cast<float>(acc);
            }
        for (Index y = 0; y < s.h; ++y)
            for (Index x = 0; x < s.w; ++x) {
                double acc = 0.0;
                for (int d = -radius; d <= radius; ++d)
                    acc += taps[d + radius] * tmp(0, c, reflect101(y + d, s.h), x);
                out(0, c, y, x) = static_cast<float>(acc);
            }
    }
    return out;
}

Frame degrade_frame(const Frame& frame, const DegradationConfig& cfg)
{
    cfg.validate();
    const Shape s = frame.shape();
    if (s.h % cfg.scale != 0 || s.w % cfg.scale != 0)
        throw ShapeError("degrade_frame: frame size not divisible by scale");
    const Frame blurred = gaussian_blur(frame, cfg.sigma, cfg.radius());
    Frame out({1, s.c, s.h / cfg.scale, s.w / cfg.scale});
    for (Index c = 0; c < s.c; ++c)
        for (Index y = 0; y < out.shape().h; ++y)
            for (Index x = 0; x < out.shape().w; ++x)
                out(0, c, y, x) = blurred(0, c, y * cfg.scale, x * cfg.scale);
    return out;
}

VideoSequence degrade(const VideoSequence& hr, const DegradationConfig& cfg)
{
    cfg.validate();
    if (hr.empty())
        return VideoSequence({}, hr.colorspace, Tier::lr);
    const Index h = hr.height() - hr.height() % cfg.scale;
    const Index w = hr.width() - hr.width() % cfg.scale;
    if (h == 0 || w == 0)
        throw ShapeError("degrade: frames smaller than the scale factor");
    const bool crop = h != hr.height() || w != hr.width();
    if (crop)
        std::cerr << "warning: degrade crops " << hr.height() << "x" << hr.width() << " frames to " << h << "x" << w
                  << " (multiple of " << cfg.scale << ")\n";
    std::vector<Frame> out;
    out.reserve(hr.size());
    for (const Frame& f : hr.frames) {
        if (!crop) {
            out.push_back(degrade_frame(f, cfg));
            continue;
        }
        Frame c({1, f.shape().c, h, w});
        for (Index ch = 0; ch < f.shape().c; ++ch)
            for (Index y = 0; y < h; ++y)
                for (Index x = 0; x < w; ++x)
                    c(0, ch, y, x) = f(0, ch, y, x);
        out.push_back(degrade_frame(c, cfg));
    }
    return VideoSequence(std::move(out), hr.colorspace, Tier::lr);
}

// ---------------------------------------------------------------------------

namespace {

void require_rgb(const Frame& f, const char* what)
{
    if (f.shape().n != 1 || f.shape().c != 3)
        throw ShapeError(std::string(what) + ": expected a (1, 3, H, W) frame, got " + to_string(f.shape()));
}

}  // namespace

Frame rgb_to_y(const Frame& rgb)
{
    require_rgb(rgb, "rgb_to_y");
    const Shape s = rgb.shape();
    Frame out({1, 1, s.h, s.w});
    out.item(0) = 0.299f * rgb.item(0).row(0) + 0.587f * rgb.item(0).row(1) + 0.114f * rgb.item(0).row(2);
    return out;
}

Frame rgb_to_ycbcr(const Frame& rgb)
{
    require_rgb(rgb, "rgb_to_ycbcr");
    Frame out(rgb.shape());
    const auto in = rgb.item(0);
    auto o = out.item(0);
    o.row(0) = 0.299f * in.row(0) + 0.587f * in.row(1) + 0.114f * in.row(2);
    o.row(1) = (-0.168736f * in.row(0) - 0.331264f * in.row(1) + 0.5f * in.row(2)).array() + 0.5f;
    o.row(2) = (0.5f * in.row(0) - 0.418688f * in.row(1) - 0.081312f * in.row(2)).array() + 0.5f;
    return out;
}

Frame ycbcr_to_rgb(const Frame& ycbcr)
{
    require_rgb(ycbcr, "ycbcr_to_rgb");
    Frame out(ycbcr.shape());
    const auto in = ycbcr.item(0);
    auto o = out.item(0);
    const auto cb = (in.row(1).array() - 0.5f).matrix();
    const auto cr = (in.row(2).array() - 0.5f).matrix();
    o.row(0) = in.row(0) + 1.402f * cr;
    o.row(1) = in.row(0) - 0.344136f * cb - 0.714136f * cr;
    o.row(2) = in.row(0) + 1.772f * cb;
    return out;
}

namespace {

double cubic_weight(double t)
{
    constexpr double a = -0.5;
    t = std::abs(t);
    if (t <= 1.0)
        return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
    if (t < 2.0)
        return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
    return 0.0;
}

struct Taps {
    Index index[4];
    double weight[4];
};

std::vector<Taps> cubic_taps(Index in, Index out, int scale)
{
    std::vector<Taps> taps(out);
    for (Index o = 0; o < out; ++o) {
        const double src = (o + 0.5) / scale - 0.5;
        const Index base = static_cast<Index>(std::floor(src)) - 1;
        double total = 0.0;
        for (int k = 0; k < 4; ++k) {
            taps[o].index[k] = std::clamp<Index>(base + k, 0, in - 1);
            taps[o].weight[k] = cubic_weight(src - double(base + k));
            total += taps[o].weight[k];
        }
        for (double& w : taps[o].weight)
            w /= total;
    }
    return taps;
}

}  // namespace

Frame bicubic_upsample(const Frame& frame, int scale)
{
    if (scale < 1)
        throw ConfigError("bicubic_upsample: scale must be >= 1");
    const Shape s = frame.shape();
    const Index H = s.h * scale, W = s.w * scale;
    const auto ty = cubic_taps(s.h, H, scale);
    const auto tx = cubic_taps(s.w, W, scale);
    Frame tmp({s.n, s.c, s.h, W}), out({s.n, s.c, H, W});
    for (Index b = 0; b < s.n; ++b)
        for (Index c = 0; c < s.c; ++c) {
            for (Index y = 0; y < s.h; ++y)
                for (Index x = 0; x < W; ++x) {
                    double acc = 0.0;
                    for (int k = 0; k < 4; ++k)
                        acc += tx[x].weight[k] * frame(b, c, y, tx[x].index[k]);
                    tmp(b, c, y, x) = static_cast<float>(acc);
                }
            for (Index y = 0; y < H; ++y)
                for (Index x = 0; x < W; ++x) {
                    double acc = 0.0;
                    for (int k = 0; k < 4; ++k)
                        acc += ty[y].weight[k] * tmp(b, c, ty[y].index[k], x);
                    out(b, c, y, x) = static_cast<float>(acc);
                }
        }
    return out;
}

Frame merge_luma_with_chroma(const Frame& hr_y, const Frame& lr_rgb, int scale)
{
    Frame up = bicubic_upsample(rgb_to_ycbcr(lr_rgb), scale);
    if (hr_y.shape().c != 1 || hr_y.shape().h != up.shape().h || hr_y.shape().w != up.shape().w)
        throw ShapeError("merge_luma_with_chroma: luma does not match upsampled chroma");
    up.item(0).row(0) = hr_y.item(0).row(0);
    Frame rgb = ycbcr_to_rgb(up);
    clamp_unit(rgb);
    return rgb;
}

// ---------------------------------------------------------------------------

Frame apply_symmetry(const Frame& frame, int code)
{
    const Shape s = frame.shape();
    const bool hflip = code & 1, vflip = code & 2, transpose = code & 4;
    if (transpose && s.h != s.w)
        throw ShapeError("apply_symmetry: transpose needs a square frame");
    Frame out(s);
    for (Index c = 0; c < s.c; ++c)
        for (Index y = 0; y < s.h; ++y)
            for (Index x = 0; x < s.w; ++x) {
                Index sy = y, sx = x;
                if (transpose)
                    std::swap(sy, sx);
                if (vflip)
                    sy = s.h - 1 - sy;
                if (hflip)
                    sx = s.w - 1 - sx;
                out(0, c, y, x) = frame(0, c, sy, sx);
            }
    return out;
}

std::vector<Frame> Clip::ground_truth() const
{
    return {hr.frames.begin() + context, hr.frames.end() - context};
}

Clip sample_clip(const VideoSequence& seq, const ClipConfig& cfg, const DegradationConfig& degradation,
                 std::mt19937_64& rng)
{
    if (cfg.length < 2 * cfg.context + 1)
        throw ConfigError("sample_clip: clip too short for its context");
    if (seq.size() < static_cast<size_t>(cfg.length))
        throw DomainError("sample_clip: sequence of " + std::to_string(seq.size()) + " frames is shorter than " +
                          std::to_string(cfg.length));
    const Index crop_h = cfg.crop > 0 ? cfg.crop : seq.height();
    const Index crop_w = cfg.crop > 0 ? cfg.crop : seq.width();
    if (crop_h > seq.height() || crop_w > seq.width())
        throw DomainError("sample_clip: crop larger than the frames");

    std::uniform_int_distribution<size_t> start_dist(0, seq.size() - cfg.length);
    std::uniform_int_distribution<Index> y_dist(0, seq.height() - crop_h);
    std::uniform_int_distribution<Index> x_dist(0, seq.width() - crop_w);
    std::uniform_int_distribution<int> sym_dist(0, crop_h == crop_w ? 7 : 3);
    const size_t start = start_dist(rng);
    const Index y0 = y_dist(rng);
    const Index x0 = x_dist(rng);
    const int symmetry = cfg.augment ? sym_dist(rng) : 0;

    std::vector<Frame> frames;
    for (int t = 0; t < cfg.length; ++t) {
        const Frame& src = seq.frames[start + t];
        Frame c({1, src.shape().c, crop_h, crop_w});
        for (Index ch = 0; ch < src.shape().c; ++ch)
            for (Index y = 0; y < crop_h; ++y)
                for (Index x = 0; x < crop_w; ++x)
                    c(0, ch, y, x) = src(0, ch, y0 + y, x0 + x);
        frames.push_back(symmetry ? apply_symmetry(c, symmetry) : std::move(c));
    }
    Clip clip;
    clip.context = cfg.context;
    clip.hr = VideoSequence(std::move(frames), seq.colorspace, Tier::hr);
    clip.lr = degrade(clip.hr, degradation);
    return clip;
}

// ---------------------------------------------------------------------------

void SyntheticSceneConfig::validate() const
{
    if (length < 1 || height < 1 || width < 1)
        throw ConfigError("synthetic scene: length and size must be >= 1");
    if (velocity < 0.0 || jitter_amp < 0.0 || pan_velocity < 0.0)
        throw ConfigError("synthetic scene: velocity, pan and jitter must be >= 0");
    if (!(jitter_period > 0.0) || !(object_size >= 0.0))
        throw ConfigError("synthetic scene: jitter period must be positive and object size non-negative");
}

namespace {

using Plane = Eigen::ArrayXXd;

/// Real part of an inverse 2-D FFT of random-phase 1/f^e amplitudes.
Plane pink_noise(Index h, Index w, double exponent, std::mt19937_64& rng)
{
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<std::vector<std::complex<double>>> spec(h, std::vector<std::complex<double>>(w));
    for (Index y = 0; y < h; ++y)
        for (Index x = 0; x < w; ++x) {
            const double fy = double(std::min(y, h - y)) / h;
            const double fx = double(std::min(x, w - x)) / w;
            const double f = std::sqrt(fx * fx + fy * fy);
            const double amp = f > 0.0 ? std::pow(f, -exponent) : 0.0;
            spec[y][x] = amp * std::complex<double>(normal(rng), normal(rng));
        }
    Eigen::FFT<double> fft;
    std::vector<std::complex<double>> line;
    for (Index y = 0; y < h; ++y) {
        fft.inv(line, spec[y]);
        spec[y] = line;
    }
    Plane out(h, w);
    std::vector<std::complex<double>> col(h);
    for (Index x = 0; x < w; ++x) {
        for (Index y = 0; y < h; ++y)
            col[y] = spec[y][x];
        fft.inv(line, col);
        for (Index y = 0; y < h; ++y)
            out(y, x) = line[y].real();
    }
    return out;
}

double wrap(double v, double period)
{
    v = std::fmod(v, period);
    return v < 0.0 ? v + period : v;
}

double sample_wrapped(const Plane& p, double y, double x)
{
    const Index h = p.rows(), w = p.cols();
    y = wrap(y, double(h));
    x = wrap(x, double(w));
    const Index y0 = static_cast<Index>(std::floor(y)), x0 = static_cast<Index>(std::floor(x));
    const double fy = y - y0, fx = x - x0;
    const Index y1 = (y0 + 1) % h, x1 = (x0 + 1) % w;
    const Index ya = y0 % h, xa = x0 % w;
    if (fy == 0.0 && fx == 0.0)
        return p(ya, xa);
    return (1 - fy) * ((1 - fx) * p(ya, xa) + fx * p(ya, x1)) + fy * ((1 - fx) * p(y1, xa) + fx * p(y1, x1));
}

}  // namespace

VideoSequence synth_quasi_static(const SyntheticSceneConfig& cfg)
{
    cfg.validate();
    std::mt19937_64 rng(cfg.background_seed);
    const Index H = cfg.height, W = cfg.width;

    // Luminance field plus weaker per-channel chroma fields.
    const Plane lum = pink_noise(H, W, cfg.spectrum_exponent, rng);
    std::array<Plane, 3> bg;
    for (auto& channel : bg) {
        channel = lum + 0.35 * pink_noise(H, W, cfg.spectrum_exponent, rng);
        const double lo = channel.minCoeff(), hi = channel.maxCoeff();
        channel = 0.1 + 0.8 * (channel - lo) / std::max(hi - lo, 1e-12);
    }

    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double oy = unit(rng) * H, ox = unit(rng) * W;
    std::array<double, 3> colour;
    for (double& c : colour)
        c = unit(rng);
    const double vy = cfg.velocity * std::sin(cfg.direction);
    const double vx = cfg.velocity * std::cos(cfg.direction);

    std::vector<Frame> frames;
    frames.reserve(cfg.length);
    for (int t = 0; t < cfg.length; ++t) {
        const double phase = 2.0 * std::numbers::pi * t / cfg.jitter_period;
        const double jy = cfg.jitter_amp * std::sin(phase);
        const double jx = cfg.jitter_amp * std::sin(0.7 * phase + 1.0) + cfg.pan_velocity * t;
        const double cy = wrap(oy + vy * t, double(H));
        const double cx = wrap(ox + vx * t, double(W));
        Frame f({1, 3, H, W});
        for (Index y = 0; y < H; ++y)
            for (Index x = 0; x < W; ++x) {
                // Torus offset to the object centre, so the object wraps around.
                double dy = wrap(y + 0.5 - cy + H / 2.0, double(H)) - H / 2.0;
                double dx = wrap(x + 0.5 - cx + W / 2.0, double(W)) - W / 2.0;
                double coverage;
                if (cfg.shape == ObjectShape::disc) {
                    coverage = std::clamp(cfg.object_size + 0.5 - std::hypot(dy, dx), 0.0, 1.0);
                } else {
                    coverage = std::clamp(cfg.object_size + 0.5 - std::abs(dy), 0.0, 1.0) *
                               std::clamp(cfg.object_size + 0.5 - std::abs(dx), 0.0, 1.0);
                }
                for (int c = 0; c < 3; ++c) {
                    const double b = sample_wrapped(bg[c], y + jy, x + jx);
                    const double obj = std::clamp(b + cfg.contrast * (2.0 * colour[c] - 1.0) + 0.5 * cfg.contrast,
                                                  0.0, 1.0);
                    f(0, c, y, x) = static_cast<float>((1.0 - coverage) * b + coverage * obj);
                }
            }
        frames.push_back(std::move(f));
    }
    return VideoSequence(std::move(frames), ColorSpace::rgb, Tier::hr);
}

}  // namespace stablevsr
