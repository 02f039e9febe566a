#include "stablevsr/evalsuite.hpp"

#include <fstream>
#include <iomanip>
#include <iostream>

#include "json.hpp"

namespace stablevsr {

namespace {

void require_same_luma(const Frame& a, const Frame& b, const char* what)
{
    if (!(a.shape() == b.shape()))
        throw UsageError(std::string(what) + ": shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    if (a.shape().n != 1 || a.shape().c != 1)
        throw UsageError(std::string(what) + ": expected (1, 1, H, W) luma frames, got " + to_string(a.shape()));
}

constexpr int kSsimWindow = 11;
constexpr double kSsimSigma = 1.5;

/// Separable "valid" correlation of a plane with the normalized SSIM window.
Eigen::ArrayXXd filter_valid(const Eigen::ArrayXXd& in, const std::vector<double>& taps)
{
    const Index k = static_cast<Index>(taps.size());
    const Index h = in.rows() - k + 1, w = in.cols() - k + 1;
    Eigen::ArrayXXd rows(in.rows(), w);
    for (Index x = 0; x < w; ++x) {
        rows.col(x).setZero();
        for (Index d = 0; d < k; ++d)
            rows.col(x) += taps[d] * in.col(x + d);
    }
    Eigen::ArrayXXd out(h, w);
    for (Index y = 0; y < h; ++y) {
        out.row(y).setZero();
        for (Index d = 0; d < k; ++d)
            out.row(y) += taps[d] * rows.row(y + d);
    }
    return out;
}

Eigen::ArrayXXd plane(const Frame& f)
{
    const Shape s = f.shape();
    Eigen::ArrayXXd out(s.h, s.w);
    for (Index y = 0; y < s.h; ++y)
        for (Index x = 0; x < s.w; ++x)
            out(y, x) = f(0, 0, y, x);
    return out;
}

WindowAggregate mean_of(std::vector<FrameMetrics>::const_iterator begin, std::vector<FrameMetrics>::const_iterator end)
{
    WindowAggregate a;
    for (auto it = begin; it != end; ++it) {
        a.psnr += it->psnr;
        a.ssim += it->ssim;
        ++a.count;
    }
    if (a.count) {
        a.psnr /= double(a.count);
        a.ssim /= double(a.count);
    }
    return a;
}

}  // namespace

double psnr_y(const Frame& pred, const Frame& gt)
{
    require_same_luma(pred, gt, "psnr_y");
    const double mse = (pred.values().cast<double>() - gt.values().cast<double>()).square().mean();
    if (mse < 1e-10)
        return kPsnrCap;
    return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double ssim_y(const Frame& pred, const Frame& gt)
{
    require_same_luma(pred, gt, "ssim_y");
    if (pred.shape().h < kSsimWindow || pred.shape().w < kSsimWindow)
        throw UsageError("ssim_y: frames must be at least 11x11");
    constexpr double c1 = (0.01 * 1.0) * (0.01 * 1.0);
    constexpr double c2 = (0.03 * 1.0) * (0.03 * 1.0);
    const auto taps = gaussian_taps(kSsimSigma, kSsimWindow / 2);
    const Eigen::ArrayXXd a = plane(pred), b = plane(gt);
    const Eigen::ArrayXXd mu_a = filter_valid(a, taps), mu_b = filter_valid(b, taps);
    const Eigen::ArrayXXd var_a = filter_valid(a * a, taps) - mu_a * mu_a;
    const Eigen::ArrayXXd var_b = filter_valid(b * b, taps) - mu_b * mu_b;
    const Eigen::ArrayXXd cov = filter_valid(a * b, taps) - mu_a * mu_b;
    const Eigen::ArrayXXd map = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) /
                                ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
    return map.mean();
}

MetricsRecord windowed_metrics(std::vector<FrameMetrics> rows)
{
    MetricsRecord record;
    record.rows = std::move(rows);
    record.all = mean_of(record.rows.begin(), record.rows.end());
    if (record.rows.size() >= kAggregateWindow) {
        record.first_50 = mean_of(record.rows.begin(), record.rows.begin() + kAggregateWindow);
        record.last_50 = mean_of(record.rows.end() - kAggregateWindow, record.rows.end());
    } else {
        std::cerr << "warning: only " << record.rows.size()
                  << " evaluated frames; first/last-50 aggregates are undefined\n";
    }
    return record;
}

MetricsRecord evaluate_sequence(const std::vector<Frame>& pred, const std::vector<Frame>& gt, size_t exclude)
{
    if (pred.size() != gt.size())
        throw UsageError("evaluate_sequence: " + std::to_string(pred.size()) + " predictions for " +
                         std::to_string(gt.size()) + " ground-truth frames");
    std::vector<FrameMetrics> rows;
    for (size_t i = exclude; i + exclude < gt.size(); ++i) {
        Frame p = pred[i];
        clamp_unit(p);
        rows.push_back({i, psnr_y(p, gt[i]), ssim_y(p, gt[i])});
    }
    return windowed_metrics(std::move(rows));
}

DivergenceReport divergence_score(const MetricsRecord& model, const MetricsRecord& baseline, double threshold_db,
                                  size_t window)
{
    if (model.rows.size() != baseline.rows.size())
        throw UsageError("divergence_score: records have different lengths");
    const size_t n = model.rows.size();
    std::vector<double> delta(n);
    for (size_t i = 0; i < n; ++i) {
        if (model.rows[i].frame_index != baseline.rows[i].frame_index)
            throw UsageError("divergence_score: frame indices are not aligned");
        delta[i] = model.rows[i].psnr - baseline.rows[i].psnr;
    }
    DivergenceReport report;
    report.smoothed_delta.resize(n);
    const size_t half = window / 2;
    for (size_t i = 0; i < n; ++i) {
        const size_t lo = i >= half ? i - half : 0;
        const size_t hi = std::min(n, lo + window);
        double acc = 0.0;
        for (size_t j = lo; j < hi; ++j)
            acc += delta[j];
        report.smoothed_delta[i] = acc / double(hi - lo);
    }
    // Earliest index from which the smoothed deficit stays below threshold.
    size_t start = n;
    while (start > 0 && report.smoothed_delta[start - 1] < threshold_db)
        --start;
    if (start < n) {
        report.diverged = true;
        report.onset_frame = model.rows[start].frame_index;
    }
    if (model.last_50 && baseline.last_50)
        report.last50_delta_db = model.last_50->psnr - baseline.last_50->psnr;
    else
        report.last50_delta_db = model.all.psnr - baseline.all.psnr;
    return report;
}

Frame temporal_profile(const std::vector<Frame>& frames, Index row)
{
    if (frames.empty())
        throw DomainError("temporal_profile: empty sequence");
    const Shape s = frames.front().shape();
    if (row < 0 || row >= s.h)
        throw UsageError("temporal_profile: row " + std::to_string(row) + " out of range");
    const Index T = static_cast<Index>(frames.size());
    Frame out({1, s.c, T, s.w});
    for (Index t = 0; t < T; ++t)
        for (Index c = 0; c < s.c; ++c)
            for (Index x = 0; x < s.w; ++x)
                out(0, c, t, x) = frames[t](0, c, row, x);
    return out;
}

void write_metrics_csv(const std::filesystem::path& file, const MetricsRecord& record)
{
    std::ofstream out(file);
    if (!out)
        throw FormatError("cannot write " + file.string());
    out << "frame_index,psnr_y,ssim_y\n" << std::setprecision(10);
    for (const auto& r : record.rows)
        out << r.frame_index << ',' << r.psnr << ',' << r.ssim << '\n';
}

void write_aggregates_json(const std::filesystem::path& file, const MetricsRecord& record)
{
    auto agg = [](const std::optional<WindowAggregate>& a) -> nlohmann::json {
        if (!a)
            return nullptr;
        return {{"psnr_y", a->psnr}, {"ssim_y", a->ssim}, {"frames", a->count}};
    };
    nlohmann::json j = {{"all", agg(record.all)}, {"first_50", agg(record.first_50)}, {"last_50", agg(record.last_50)}};
    std::ofstream out(file);
    if (!out)
        throw FormatError("cannot write " + file.string());
    out << j.dump(2) << '\n';
}

}  // namespace stablevsr
