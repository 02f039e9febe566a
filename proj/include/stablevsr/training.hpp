#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <sstream>
#include <vector>

#include "stablevsr/models.hpp"
#include "stablevsr/videodata.hpp"

namespace stablevsr {

struct AdamHyper {
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// First/second moment buffers, one pair per parameter.
template <typename Scalar>
struct AdamState {
    std::vector<Tensor<Scalar>> m;
    std::vector<Tensor<Scalar>> v;
    long step = 0;

    void init(const std::vector<Variable<Scalar>>& params)
    {
        m.clear();
        v.clear();
        for (const auto& p : params) {
            m.emplace_back(p.shape());
            v.emplace_back(p.shape());
        }
        step = 0;
    }
};

/// Bias-corrected Adam update of one parameter; `step` counts from 1.
template <typename Scalar>
void adam_step(Tensor<Scalar>& param, const Tensor<Scalar>& grad, Tensor<Scalar>& m, Tensor<Scalar>& v, long step,
               double lr, const AdamHyper& hp = {})
{
    if (!(param.shape() == grad.shape()) || !(param.shape() == m.shape()) || !(param.shape() == v.shape()))
        throw ShapeError("adam_step: parameter, gradient and moments must share a shape");
    if (step < 1)
        throw UsageError("adam_step: step counts from 1");
    const auto& g = grad.values();
    m.values() = Scalar(hp.beta1) * m.values() + Scalar(1 - hp.beta1) * g;
    v.values() = Scalar(hp.beta2) * v.values() + Scalar(1 - hp.beta2) * g.square();
    const Scalar c1 = Scalar(1 - std::pow(hp.beta1, double(step)));
    const Scalar c2 = Scalar(1 - std::pow(hp.beta2, double(step)));
    param.values() -= Scalar(lr) * (m.values() / c1) / ((v.values() / c2).sqrt() + Scalar(hp.eps));
}

struct TrainConfig {
    double lr0 = 1e-4;
    std::vector<int> drop_epochs{200, 400};  ///< lr multiplied by drop_factor after each listed epoch
    double drop_factor = 0.1;
    int batch = 4;
    int supervised_steps = 10;  ///< clip length is this plus 2T context frames
    int epochs = 600;
    int clips_per_epoch = 512;
    int crop_lr = 64;           ///< square LR crop side
    int export_size = 0;        ///< LR side at which export normalization runs; 0 = crop_lr
    std::uint64_t seed = 0;
    bool augment = true;
    int power_iters_train = 1;
    int power_iters_final = 100;
    AdamHyper adam;
    DegradationConfig degradation;

    /// Desk-scale defaults: 64x64 LR crops, 60 epochs of 512 clips, drops scaled to 20/40.
    static TrainConfig desk()
    {
        TrainConfig c;
        c.epochs = 60;
        c.drop_epochs = {20, 40};
        return c;
    }

    int clip_length(int half_window) const { return supervised_steps + 2 * half_window; }
    int export_side() const { return export_size > 0 ? export_size : crop_lr; }

    /// Learning rate used during `epoch` (1-based).
    double learning_rate(int epoch) const
    {
        double lr = lr0;
        for (int d : drop_epochs)
            if (epoch > d)
                lr *= drop_factor;
        return lr;
    }

    void validate() const
    {
        if (!(lr0 > 0.0) || batch < 1 || supervised_steps < 1 || epochs < 0 || clips_per_epoch < 1 || crop_lr < 1)
            throw ConfigError("train config: lr0, batch, steps, clips and crop must be positive");
        if (!(drop_factor > 0.0 && drop_factor <= 1.0))
            throw ConfigError("train config: drop_factor must lie in (0, 1] for a non-increasing schedule");
        if (power_iters_train < 1 || power_iters_final < 1)
            throw ConfigError("train config: power iteration counts must be >= 1");
        degradation.validate();
    }
};

/// One mini-batch of clips laid out per time index.
template <typename Scalar>
struct TrainingBatch {
    std::vector<Tensor<Scalar>> lr_frames;  ///< clip length entries of (B, 3, h, w)
    std::vector<Tensor<Scalar>> target_y;   ///< supervised entries of (B, 1, h*s, w*s)
};

template <typename Scalar>
TrainingBatch<Scalar> make_batch(const std::vector<Clip>& clips)
{
    if (clips.empty())
        throw DomainError("make_batch: no clips");
    TrainingBatch<Scalar> batch;
    const size_t length = clips.front().lr.size();
    for (size_t t = 0; t < length; ++t) {
        std::vector<Tensor<Scalar>> items;
        for (const auto& c : clips)
            items.push_back(c.lr.frames.at(t).template cast<Scalar>());
        batch.lr_frames.push_back(stack_batch(items));
    }
    const int context = clips.front().context;
    for (size_t t = context; t + context < length; ++t) {
        std::vector<Tensor<Scalar>> items;
        for (const auto& c : clips)
            items.push_back(rgb_to_y(c.hr.frames.at(t)).template cast<Scalar>());
        batch.target_y.push_back(stack_batch(items));
    }
    return batch;
}

template <typename Scalar>
struct ClipLoss {
    Variable<Scalar> loss;
    std::vector<double> hidden_norms;
};

/// Unrolls the network over the supervised steps of a batch from h_0 = 0 and
/// averages the per-step luma MSE. Context frames only ever enter as inputs.
template <typename Scalar>
ClipLoss<Scalar> clip_loss(const Network<Scalar>& net, const TrainingBatch<Scalar>& batch)
{
    const int T = net.spec().half_window;
    const size_t steps = batch.target_y.size();
    if (batch.lr_frames.size() != steps + 2 * size_t(T))
        throw UsageError("clip_loss: batch has " + std::to_string(batch.lr_frames.size()) + " frames for " +
                         std::to_string(steps) + " supervised steps and T = " + std::to_string(T));
    std::vector<Variable<Scalar>> frames;
    for (const auto& f : batch.lr_frames)
        frames.emplace_back(f);
    ClipLoss<Scalar> out;
    NetworkState<Scalar> state;
    Variable<Scalar> total;
    for (size_t s = 0; s < steps; ++s) {
        std::vector<Variable<Scalar>> window(frames.begin() + s, frames.begin() + s + 2 * T + 1);
        StepResult<Scalar> r = net.step(state, window);
        const Variable<Scalar> step_loss = mse_loss(r.output, Variable<Scalar>(batch.target_y[s]));
        total = total.defined() ? add(total, step_loss) : step_loss;
        state = std::move(r.state);
        if (state.h_curr)
            out.hidden_norms.push_back(static_cast<double>(state.h_curr->value().norm()));
    }
    out.loss = scale(total, Scalar(1) / Scalar(steps));
    return out;
}

/// Applies SRNL to every constrained layer for LR inputs of `side` x `side`.
template <typename Scalar>
void project_constraints(Network<Scalar>& net, Index side, int iters)
{
    const Constraint& c = net.spec().constraint;
    if (c.mode == ConstraintMode::none)
        return;
    SrnlConfig cfg = c.srnl();
    for (auto& layer : net.layers()) {
        if (!layer.constrained)
            continue;
        const Shape input{1, layer.kernel.c_in(), side, side};
        srnl_apply(layer.kernel, cfg, input, layer.srnl, iters);
    }
}

/// HR sequences from which training clips are drawn.
class ClipDataset {
public:
    ClipDataset() = default;
    explicit ClipDataset(std::vector<VideoSequence> sequences) : sequences_(std::move(sequences))
    {
        for (const auto& s : sequences_)
            if (s.colorspace != ColorSpace::rgb || s.tier != Tier::hr)
                throw ConfigError("training sequences must be HR RGB");
    }

    size_t size() const { return sequences_.size(); }
    bool empty() const { return sequences_.empty(); }

    Clip sample(const TrainConfig& cfg, int half_window, std::mt19937_64& rng) const
    {
        if (sequences_.empty())
            throw DomainError("dataset has no sequences");
        std::uniform_int_distribution<size_t> pick(0, sequences_.size() - 1);
        ClipConfig cc;
        cc.length = cfg.clip_length(half_window);
        cc.context = half_window;
        cc.crop = cfg.crop_lr * cfg.degradation.scale;
        cc.augment = cfg.augment;
        return sample_clip(sequences_[pick(rng)], cc, cfg.degradation, rng);
    }

private:
    std::vector<VideoSequence> sequences_;
};

inline std::uint64_t epoch_seed(std::uint64_t seed, int epoch)
{
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * std::uint64_t(epoch + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

struct EpochResult {
    int epoch = 0;
    double mean_loss = 0.0;
    double lr = 0.0;
};

/// One pass of `clips_per_epoch` clips (rounded up to whole batches): BPTT
/// through each unrolled clip, an Adam step on every parameter, then SRNL
/// projection of the constrained layers.
///
/// Clip sampling is seeded by (cfg.seed, epoch), so a resumed run draws the
/// same clips as an uninterrupted one.
template <typename Scalar>
EpochResult train_epoch(Network<Scalar>& net, const ClipDataset& data, const TrainConfig& cfg,
                        AdamState<Scalar>& opt, int epoch)
{
    cfg.validate();
    const auto params = net.parameters();
    if (opt.m.size() != params.size())
        opt.init(params);
    std::mt19937_64 rng(epoch_seed(cfg.seed, epoch));
    const int T = net.spec().half_window;
    const int batches = (cfg.clips_per_epoch + cfg.batch - 1) / cfg.batch;
    EpochResult result;
    result.epoch = epoch;
    result.lr = cfg.learning_rate(epoch);
    double total = 0.0;
    for (int b = 0; b < batches; ++b) {
        std::vector<Clip> clips;
        for (int i = 0; i < cfg.batch; ++i)
            clips.push_back(data.sample(cfg, T, rng));
        const TrainingBatch<Scalar> batch = make_batch<Scalar>(clips);
        for (auto p : params)
            p.zero_grad();
        ClipLoss<Scalar> cl = clip_loss(net, batch);
        const double loss = static_cast<double>(cl.loss.value().values()[0]);
        if (!std::isfinite(loss)) {
            std::ostringstream msg;
            msg << "non-finite training loss at epoch " << epoch << ", batch " << b << "; ||h_t|| trace:";
            for (double h : cl.hidden_norms)
                msg << ' ' << h;
            throw NumericError(msg.str());
        }
        backward(cl.loss);
        ++opt.step;
        for (size_t i = 0; i < params.size(); ++i) {
            Variable<Scalar> p = params[i];
            adam_step(p.mutable_value(), p.grad(), opt.m[i], opt.v[i], opt.step, result.lr, cfg.adam);
        }
        project_constraints(net, cfg.crop_lr, cfg.power_iters_train);
        total += loss;
    }
    result.mean_loss = total / batches;
    return result;
}

}  // namespace stablevsr
