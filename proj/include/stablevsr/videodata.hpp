#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "stablevsr/tensor.hpp"

namespace stablevsr {

enum class ColorSpace { rgb, y };
enum class Tier { hr, lr };

/// One frame: a (1, C, H, W) float tensor with values in [0, 1].
using Frame = Tensor<float>;

/// Ordered frames sharing shape and color space; clamped to [0, 1] on construction.
struct VideoSequence {
    std::vector<Frame> frames;
    ColorSpace colorspace = ColorSpace::rgb;
    Tier tier = Tier::hr;

    VideoSequence() = default;
    VideoSequence(std::vector<Frame> frames, ColorSpace cs, Tier tier);

    size_t size() const { return frames.size(); }
    bool empty() const { return frames.empty(); }
    Index height() const { return frames.front().shape().h; }
    Index width() const { return frames.front().shape().w; }
    Index channels() const { return frames.front().shape().c; }
};

void clamp_unit(Frame& frame);

// ---------------------------------------------------------------------------
// Degradation.

struct DegradationConfig {
    double sigma = 1.5;
    int scale = 4;
    int kernel_radius = 0;  ///< 0 selects ceil(4 sigma)

    int radius() const;
    void validate() const;
};

/// Normalized 1-D Gaussian taps on [-radius, radius].
std::vector<double> gaussian_taps(double sigma, int radius);

/// Separable Gaussian blur with mirror (reflect-101) borders.
Frame gaussian_blur(const Frame& frame, double sigma, int radius);

/// Blur, then keep every `scale`-th pixel starting at index 0.
Frame degrade_frame(const Frame& frame, const DegradationConfig& cfg);

/// HR -> LR. Frames whose sides are not multiples of the scale are cropped
/// (top-left anchored) with a warning on stderr.
VideoSequence degrade(const VideoSequence& hr, const DegradationConfig& cfg);

// ---------------------------------------------------------------------------
// Color.

/// Full-range BT.601 luma.
Frame rgb_to_y(const Frame& rgb);
/// Full-range BT.601 YCbCr with chroma centred on 0.5.
Frame rgb_to_ycbcr(const Frame& rgb);
Frame ycbcr_to_rgb(const Frame& ycbcr);
/// Cubic convolution (a = -0.5), half-pixel centres, replicated borders.
Frame bicubic_upsample(const Frame& frame, int scale);
/// Replaces the Y plane of the bicubic-upsampled LR chroma with `hr_y` and returns RGB.
Frame merge_luma_with_chroma(const Frame& hr_y, const Frame& lr_rgb, int scale);

// ---------------------------------------------------------------------------
// Clip sampling.

/// Dihedral symmetry of the square: bit 0 horizontal flip, bit 1 vertical
/// flip, bit 2 transpose (applied in that order).
Frame apply_symmetry(const Frame& frame, int code);

struct ClipConfig {
    int length = 12;     ///< total frames; the first and last `context` are unsupervised
    int context = 1;     ///< temporal context frames on each side
    int crop = 0;        ///< square HR crop side (multiple of the degradation scale); 0 keeps the full frame
    bool augment = true; ///< random flip/transpose shared by the whole clip
};

struct Clip {
    VideoSequence hr;  ///< cropped, augmented HR frames (length)
    VideoSequence lr;  ///< their degraded counterparts
    int context = 1;

    /// Supervised HR frames, i.e. all but the first and last `context`.
    std::vector<Frame> ground_truth() const;
};

Clip sample_clip(const VideoSequence& seq, const ClipConfig& cfg, const DegradationConfig& degradation,
                 std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// Synthetic quasi-static scenes.

enum class ObjectShape { disc, rectangle };

struct SyntheticSceneConfig {
    int length = 1000;
    int height = 128;
    int width = 128;
    std::uint64_t background_seed = 7;
    double spectrum_exponent = 1.0;  ///< amplitude ~ 1 / |f|^exponent
    ObjectShape shape = ObjectShape::disc;
    double object_size = 10.0;  ///< radius (disc) or half side (rectangle), HR pixels
    double contrast = 0.4;
    double velocity = 0.5;      ///< HR pixels per frame
    double direction = 0.35;    ///< radians
    double jitter_amp = 0.0;    ///< global sinusoidal sub-pixel camera jitter, HR pixels
    double jitter_period = 60.0;
    double pan_velocity = 0.0;  ///< global camera pan, HR pixels per frame (training scenes)

    void validate() const;
};

/// Periodic 1/f-spectrum background, static up to jitter/pan, with one
/// anti-aliased object translating at `velocity` and wrapping at the borders.
VideoSequence synth_quasi_static(const SyntheticSceneConfig& cfg);

// ---------------------------------------------------------------------------
// Frame directories (frame_%06d.png, 8-bit).

VideoSequence read_frames(const std::filesystem::path& dir, Tier tier = Tier::hr);
void write_frames(const std::filesystem::path& dir, const VideoSequence& seq);

Frame read_png(const std::filesystem::path& file);
void write_png(const std::filesystem::path& file, const Frame& frame);

std::string frame_filename(size_t index);

}  // namespace stablevsr
