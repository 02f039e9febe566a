#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <vector>

#include "stablevsr/models.hpp"
#include "stablevsr/videodata.hpp"

namespace stablevsr {

// ---------------------------------------------------------------------------
// Frame metrics on the luma channel, computed in double precision.

inline constexpr double kPsnrCap = 99.0;

/// 10 log10(1 / MSE), capped at 99 dB when MSE < 1e-10. Inputs are (1, 1, H, W) in [0, 1].
double psnr_y(const Frame& pred, const Frame& gt);

/// Mean SSIM over all fully contained 11x11 Gaussian (sigma 1.5) windows,
/// K1 = 0.01, K2 = 0.03, dynamic range 1.
double ssim_y(const Frame& pred, const Frame& gt);

struct FrameMetrics {
    size_t frame_index = 0;
    double psnr = 0.0;
    double ssim = 0.0;
};

struct WindowAggregate {
    double psnr = 0.0;
    double ssim = 0.0;
    size_t count = 0;
};

/// Per-frame rows for the evaluated frames plus first-50 / all / last-50 means.
struct MetricsRecord {
    std::vector<FrameMetrics> rows;
    WindowAggregate all;
    std::optional<WindowAggregate> first_50;
    std::optional<WindowAggregate> last_50;
};

inline constexpr size_t kExcludedBoundaryFrames = 3;
inline constexpr size_t kAggregateWindow = 50;

/// Aggregates already-filtered rows. With fewer than 50 rows only `all` is
/// filled and a warning is printed.
MetricsRecord windowed_metrics(std::vector<FrameMetrics> rows);

/// Scores `pred` against `gt` (luma frames), skipping the first and last
/// `exclude` frames, then aggregates.
MetricsRecord evaluate_sequence(const std::vector<Frame>& pred, const std::vector<Frame>& gt,
                                size_t exclude = kExcludedBoundaryFrames);

struct DivergenceReport {
    bool diverged = false;
    std::optional<size_t> onset_frame;
    double last50_delta_db = 0.0;
    std::vector<double> smoothed_delta;  ///< centred moving average of (model - baseline) PSNR
};

/// Flags a model whose smoothed PSNR deficit against the baseline drops below
/// `threshold_db` and stays there to the end of the sequence.
DivergenceReport divergence_score(const MetricsRecord& model, const MetricsRecord& baseline,
                                  double threshold_db = -0.5, size_t window = kAggregateWindow);

/// Row `row` of every frame stacked over time: a (1, C, T, W) image.
Frame temporal_profile(const std::vector<Frame>& frames, Index row);

void write_metrics_csv(const std::filesystem::path& file, const MetricsRecord& record);
void write_aggregates_json(const std::filesystem::path& file, const MetricsRecord& record);

// ---------------------------------------------------------------------------
// Hidden-state diagnostics.

/// ||h_t||_2 for every step of `frames`; empty for recurrence-free networks.
template <typename Scalar>
std::vector<double> hidden_norm_trace(const Network<Scalar>& net, const std::vector<Tensor<Scalar>>& frames)
{
    if (!net.recurrent())
        return {};
    return net.run_sequence(frames).hidden_norms;
}

// ---------------------------------------------------------------------------
// Spatio-temporal receptive field by adversarial input optimization.

struct StrfConfig {
    int tau = 40;
    int height = 64;
    int width = 64;
    int iters = 1500;
    double lr0 = 1.0;
    std::vector<int> lr_drops{750, 1250};  ///< lr divided by 10 from each of these iterations on
    double deviation_threshold = 1e-3;

    int length() const { return 2 * tau + 1; }
    double learning_rate(int iter) const
    {
        double lr = lr0;
        for (int d : lr_drops)
            if (iter >= d)
                lr *= 0.1;
        return lr;
    }
};

struct StrfResult {
    std::vector<Frame> initial;
    std::vector<Frame> optimized;         ///< x_{-tau} .. x_{tau}
    std::vector<double> deviation;        ///< max |optimized - initial| per frame
    int temporal_extent = 0;              ///< frames with deviation above threshold
    std::vector<double> objective;        ///< |p| per iteration
};

/// Maximizes |p|, the centre pixel of the output at t = 0, over an input
/// sequence x_{-tau..tau} initialised uniformly in [0, 1], with Adam and a
/// projection back onto [0, 1] after every step.
template <typename Scalar>
StrfResult strf(const Network<Scalar>& trained, const StrfConfig& cfg, std::uint64_t seed)
{
    const int T = trained.spec().half_window;
    if (cfg.tau < T || cfg.iters < 1)
        throw ConfigError("strf: tau must cover the input window and iters must be >= 1");
    Network<Scalar> net = trained.clone();
    for (auto& p : net.parameters())
        p.set_requires_grad(false);

    std::mt19937_64 rng(seed);
    const int n = cfg.length();
    const Shape fs{1, 3, cfg.height, cfg.width};
    std::vector<Variable<Scalar>> x;
    StrfResult result;
    for (int i = 0; i < n; ++i) {
        x.emplace_back(Tensor<Scalar>::uniform(fs, rng), true);
        result.initial.push_back(x.back().value().template cast<float>());
    }
    std::vector<Tensor<Scalar>> m(n, Tensor<Scalar>(fs)), v(n, Tensor<Scalar>(fs));
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const Index py = Index(cfg.height) * net.spec().scale / 2;
    const Index px = Index(cfg.width) * net.spec().scale / 2;
    const int centre = cfg.tau;  // index of x_0

    for (int it = 0; it < cfg.iters; ++it) {
        for (auto& xi : x)
            xi.zero_grad();
        // Outputs exist from t = -tau + T; only steps up to t = 0 reach y_0.
        NetworkState<Scalar> state;
        Variable<Scalar> y0;
        for (int t = T; t <= centre; ++t) {
            std::vector<Variable<Scalar>> window(x.begin() + (t - T), x.begin() + (t + T + 1));
            StepResult<Scalar> r = net.step(state, window);
            state = std::move(r.state);
            y0 = r.output;
        }
        const Variable<Scalar> objective = abs(pick(y0, 0, 0, py, px));
        const double value = static_cast<double>(objective.value().values()[0]);
        if (!std::isfinite(value))
            throw NumericError("strf: non-finite objective at iteration " + std::to_string(it));
        result.objective.push_back(value);
        backward(scale(objective, Scalar(-1)));

        const double lr = cfg.learning_rate(it);
        const double c1 = 1.0 - std::pow(b1, it + 1), c2 = 1.0 - std::pow(b2, it + 1);
        for (int i = 0; i < n; ++i) {
            const auto& g = x[i].grad().values();
            m[i].values() = Scalar(b1) * m[i].values() + Scalar(1 - b1) * g;
            v[i].values() = Scalar(b2) * v[i].values() + Scalar(1 - b2) * g.square();
            auto& value_i = x[i].mutable_value().values();
            value_i -= (Scalar(lr) * (m[i].values() / Scalar(c1)) /
                        ((v[i].values() / Scalar(c2)).sqrt() + Scalar(eps)));
            value_i = value_i.max(Scalar(0)).min(Scalar(1));
            if (!value_i.allFinite())
                throw NumericError("strf: non-finite input at iteration " + std::to_string(it));
        }
    }

    for (int i = 0; i < n; ++i) {
        result.optimized.push_back(x[i].value().template cast<float>());
        const double dev =
            (result.optimized.back().values() - result.initial[i].values()).abs().maxCoeff();
        result.deviation.push_back(dev);
        if (dev > cfg.deviation_threshold)
            ++result.temporal_extent;
    }
    return result;
}

}  // namespace stablevsr
