#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"

#include "stablevsr/lipschitz.hpp"
#include "stablevsr/ops.hpp"

namespace stablevsr {

enum class Recurrence { none, middle, full };
enum class ConstraintMode { none, hard, soft };

struct Constraint {
    ConstraintMode mode = ConstraintMode::none;
    double alpha = 1.0;
    double beta = 1.0;

    static Constraint none() { return {}; }
    static Constraint hard() { return {ConstraintMode::hard, 1.0, 1.0}; }
    static Constraint soft(double alpha, double beta) { return {ConstraintMode::soft, alpha, beta}; }

    SrnlConfig srnl() const { return {alpha, beta}; }
    bool operator==(const Constraint&) const = default;
};

/// Architecture configuration.
///
/// Layer layout by recurrence mode:
///  - middle: xi (n_xi convs) -> phi (n_phi + 1 constrained convs on
///    concat(h_{t-1}, z_t)) -> psi (n_psi convs on concat(h_t, h_{t-1}) when
///    feature shifting) -> residual -> pixel shuffle.
///  - none: one feed-forward chain of n_xi + n_phi + n_psi convs.
///  - full: a trunk of n_xi + n_phi + n_psi - 1 convs on concat(frames, h_{t-1}),
///    then an output head (s^2 maps) and a hidden-state head.
struct NetworkSpec {
    std::string name = "mrvsr";
    int n_xi = 3;
    int n_phi = 1;
    int n_psi = 3;
    int features = 128;
    int scale = 4;
    int half_window = 1;
    Recurrence recurrence = Recurrence::middle;
    Constraint constraint = Constraint::hard();
    bool feature_shifting = true;
    bool residual = true;

    int window() const { return 2 * half_window + 1; }
    int input_channels() const { return 3 * window(); }
    bool operator==(const NetworkSpec&) const = default;

    void validate() const
    {
        if (n_xi < 0 || n_phi < 0 || n_psi < 0)
            throw ConfigError("layer counts must be non-negative");
        if (features < 1 || scale < 1 || half_window < 0)
            throw ConfigError("features and scale must be >= 1, half_window >= 0");
        if (constraint.mode == ConstraintMode::hard && (constraint.alpha != 1.0 || constraint.beta != 1.0))
            throw ConfigError("hard Lipschitz constraint requires alpha = beta = 1");
        if (constraint.mode != ConstraintMode::none)
            constraint.srnl().validate();
        switch (recurrence) {
        case Recurrence::middle:
            if (constraint.mode == ConstraintMode::none)
                throw ConfigError("middle recurrence requires a hard or soft Lipschitz constraint");
            if (n_psi < 1)
                throw ConfigError("middle recurrence needs n_psi >= 1 to emit s^2 maps");
            break;
        case Recurrence::none:
            if (feature_shifting)
                throw ConfigError("feature shifting needs a recurrent state");
            if (constraint.mode != ConstraintMode::none)
                throw ConfigError("a recurrence-free network has no recurrent layers to constrain");
            if (n_xi + n_phi + n_psi < 1)
                throw ConfigError("network needs at least one convolution");
            break;
        case Recurrence::full:
            if (feature_shifting)
                throw ConfigError("feature shifting is only defined for middle recurrence");
            if (n_xi + n_phi + n_psi < 2)
                throw ConfigError("full recurrence needs a trunk of at least one convolution");
            break;
        }
    }

    static NetworkSpec mrvsr(int f = 128)
    {
        NetworkSpec s;
        s.name = "mrvsr";
        s.features = f;
        return s;
    }

    /// Residual fusion shuffle network over `frames` input frames (3 or 7).
    static NetworkSpec rfs(int frames = 3, int f = 128)
    {
        NetworkSpec s;
        s.name = "rfs" + std::to_string(frames);
        s.features = f;
        s.half_window = frames / 2;
        s.recurrence = Recurrence::none;
        s.constraint = Constraint::none();
        s.feature_shifting = false;
        return s;
    }

    /// Fully-recurrent baseline where the hidden state feeds the first layer.
    static NetworkSpec fully_recurrent(int f = 128, Constraint c = Constraint::none())
    {
        NetworkSpec s;
        s.name = "frnn";
        s.features = f;
        s.recurrence = Recurrence::full;
        s.constraint = c;
        s.feature_shifting = false;
        return s;
    }
};

NLOHMANN_JSON_SERIALIZE_ENUM(Recurrence, {{Recurrence::none, "none"},
                                          {Recurrence::middle, "middle"},
                                          {Recurrence::full, "full"}})
NLOHMANN_JSON_SERIALIZE_ENUM(ConstraintMode, {{ConstraintMode::none, "none"},
                                              {ConstraintMode::hard, "hard"},
                                              {ConstraintMode::soft, "soft"}})

inline void to_json(nlohmann::json& j, const Constraint& c)
{
    j = {{"mode", c.mode}, {"alpha", c.alpha}, {"beta", c.beta}};
}
inline void from_json(const nlohmann::json& j, Constraint& c)
{
    j.at("mode").get_to(c.mode);
    c.alpha = j.value("alpha", 1.0);
    c.beta = j.value("beta", 1.0);
}
inline void to_json(nlohmann::json& j, const NetworkSpec& s)
{
    j = {{"name", s.name},
         {"n_xi", s.n_xi},
         {"n_phi", s.n_phi},
         {"n_psi", s.n_psi},
         {"features", s.features},
         {"scale", s.scale},
         {"half_window", s.half_window},
         {"recurrence", s.recurrence},
         {"constraint", s.constraint},
         {"feature_shifting", s.feature_shifting},
         {"residual", s.residual}};
}
inline void from_json(const nlohmann::json& j, NetworkSpec& s)
{
    static const char* keys[] = {"name",  "n_xi",        "n_phi",      "n_psi",
                                 "features", "scale",    "half_window", "recurrence",
                                 "constraint", "feature_shifting", "residual"};
    for (const auto& [key, value] : j.items()) {
        bool known = false;
        for (const char* k : keys)
            known = known || key == k;
        if (!known)
            throw ConfigError("unknown network spec key: " + key);
    }
    NetworkSpec d;
    s.name = j.value("name", d.name);
    s.n_xi = j.value("n_xi", d.n_xi);
    s.n_phi = j.value("n_phi", d.n_phi);
    s.n_psi = j.value("n_psi", d.n_psi);
    s.features = j.value("features", d.features);
    s.scale = j.value("scale", d.scale);
    s.half_window = j.value("half_window", d.half_window);
    s.recurrence = j.value("recurrence", d.recurrence);
    s.constraint = j.value("constraint", d.constraint);
    s.feature_shifting = j.value("feature_shifting", d.feature_shifting);
    s.residual = j.value("residual", d.residual);
}

template <typename Scalar>
struct Layer {
    std::string name;
    Kernel<Scalar> kernel;
    bool relu = true;
    bool constrained = false;
    SrnlState<Scalar> srnl;
};

/// Recurrent state carried between time steps: (h_{t-1}, h_t).
template <typename Scalar>
struct NetworkState {
    std::optional<Variable<Scalar>> h_prev;
    std::optional<Variable<Scalar>> h_curr;

    bool empty() const { return !h_curr.has_value(); }
};

template <typename Scalar>
struct StepResult {
    Variable<Scalar> output;  ///< (N, 1, H*s, W*s) luma
    NetworkState<Scalar> state;
};

template <typename Scalar>
struct SequenceResult {
    std::vector<Tensor<Scalar>> outputs;  ///< (1, 1, H*s, W*s) per input frame
    std::vector<double> hidden_norms;     ///< ||h_t||_2 per step; empty without recurrence
};

namespace detail {

inline std::uint64_t fnv1a(const std::string& text, std::uint64_t seed)
{
    std::uint64_t h = 1469598103934665603ull ^ (seed * 0x9e3779b97f4a7c15ull);
    for (unsigned char ch : text) {
        h ^= ch;
        h *= 1099511628211ull;
    }
    return h;
}

}  // namespace detail

/// Luma weights of full-range BT.601.
inline constexpr double kLumaR = 0.299;
inline constexpr double kLumaG = 0.587;
inline constexpr double kLumaB = 0.114;

template <typename Scalar>
class Network {
public:
    Network() = default;

    /// Xavier-uniform weights, zero biases. Each layer draws from a stream
    /// seeded by (seed, layer name), so equally named and shaped layers of
    /// different architectures start identical.
    static Network build(const NetworkSpec& spec, std::uint64_t seed)
    {
        spec.validate();
        Network net;
        net.spec_ = spec;
        const Index f = spec.features;
        const Index in = spec.input_channels();
        const Index s2 = Index(spec.scale) * spec.scale;
        const bool constrain = spec.constraint.mode != ConstraintMode::none;

        auto add = [&](std::vector<size_t>& block, const std::string& name, Index c_in, Index c_out, bool relu,
                       bool constrained) {
            Layer<Scalar> layer;
            layer.name = name;
            layer.kernel = Kernel<Scalar>(c_out, c_in, 3, Padding::zero, true);
            layer.relu = relu;
            layer.constrained = constrained;
            layer.srnl.power.seed = detail::fnv1a(name, 0x5eed);
            std::mt19937_64 rng(detail::fnv1a(name, seed));
            const double bound = std::sqrt(6.0 / double((c_in + c_out) * 9));
            layer.kernel.weight.mutable_value() = Tensor<Scalar>::uniform({c_out, c_in, 3, 3}, rng, -bound, bound);
            block.push_back(net.layers_.size());
            net.layers_.push_back(std::move(layer));
        };

        switch (spec.recurrence) {
        case Recurrence::middle: {
            for (int i = 0; i < spec.n_xi; ++i)
                add(net.xi_, "xi." + std::to_string(i), i == 0 ? in : f, f, true, false);
            const Index z_channels = spec.n_xi > 0 ? f : in;
            for (int i = 0; i <= spec.n_phi; ++i)
                add(net.phi_, "phi." + std::to_string(i), i == 0 ? f + z_channels : f, f, true, true);
            for (int i = 0; i < spec.n_psi; ++i) {
                const bool last = i + 1 == spec.n_psi;
                const Index c_in = i == 0 ? (spec.feature_shifting ? 2 * f : f) : f;
                add(net.psi_, "psi." + std::to_string(i), c_in, last ? s2 : f, !last, false);
            }
            break;
        }
        case Recurrence::none: {
            const int total = spec.n_xi + spec.n_phi + spec.n_psi;
            int idx = 0;
            auto next = [&](const std::string& name) {
                const bool last = idx + 1 == total;
                add(net.xi_, name, idx == 0 ? in : f, last ? s2 : f, !last, false);
                ++idx;
            };
            for (int i = 0; i < spec.n_xi; ++i)
                next("xi." + std::to_string(i));
            for (int i = 0; i < spec.n_phi; ++i)
                next("phi." + std::to_string(i));
            for (int i = 0; i < spec.n_psi; ++i)
                next("psi." + std::to_string(i));
            break;
        }
        case Recurrence::full: {
            const int trunk = spec.n_xi + spec.n_phi + spec.n_psi - 1;
            for (int i = 0; i < trunk; ++i)
                add(net.xi_, "trunk." + std::to_string(i), i == 0 ? in + f : f, f, true, constrain);
            add(net.psi_, "out", f, s2, false, constrain);
            add(net.phi_, "hidden", f, f, true, constrain);
            break;
        }
        }
        return net;
    }

    const NetworkSpec& spec() const { return spec_; }
    std::vector<Layer<Scalar>>& layers() { return layers_; }
    const std::vector<Layer<Scalar>>& layers() const { return layers_; }
    bool recurrent() const { return spec_.recurrence != Recurrence::none; }

    /// All trainable parameters, weight then bias per layer.
    std::vector<Variable<Scalar>> parameters() const
    {
        std::vector<Variable<Scalar>> out;
        for (const auto& l : layers_) {
            out.push_back(l.kernel.weight);
            out.push_back(l.kernel.bias);
        }
        return out;
    }

    /// Shape of h_t for LR inputs of the given size.
    Shape hidden_shape(Index batch, Index height, Index width) const
    {
        return {batch, spec_.features, height, width};
    }

    /// Convolutions of the recurrence map, in evaluation order, with the
    /// input shapes they see for LR frames of `height` x `width`.
    std::vector<CertifiedLayer<Scalar>> recurrence_layers(Index height, Index width) const
    {
        std::vector<CertifiedLayer<Scalar>> out;
        auto push = [&](size_t i) {
            const auto& k = layers_[i].kernel;
            out.push_back({layers_[i].name, k, Shape{1, k.c_in(), height, width}});
        };
        if (spec_.recurrence == Recurrence::middle) {
            for (size_t i : phi_)
                push(i);
        } else if (spec_.recurrence == Recurrence::full) {
            for (size_t i : xi_)
                push(i);
            for (size_t i : phi_)
                push(i);
        }
        return out;
    }

    /// One time step. `window` holds 2T+1 RGB frames (N, 3, H, W), centre at T.
    StepResult<Scalar> step(const NetworkState<Scalar>& state, const std::vector<Variable<Scalar>>& window) const
    {
        if (static_cast<int>(window.size()) != spec_.window())
            throw UsageError("step: expected a window of " + std::to_string(spec_.window()) + " frames, got " +
                             std::to_string(window.size()));
        for (const auto& f : window) {
            if (f.shape().c != 3 || !(f.shape() == window.front().shape()))
                throw ShapeError("step: window frames must share an (N, 3, H, W) shape");
        }
        const Variable<Scalar>& centre = window[spec_.half_window];
        const Shape fs = centre.shape();
        const Variable<Scalar> stacked = concat_channels(window);

        StepResult<Scalar> result;
        Variable<Scalar> residual_in;
        switch (spec_.recurrence) {
        case Recurrence::none:
            residual_in = chain(xi_, stacked);
            break;
        case Recurrence::middle: {
            const Variable<Scalar> h_prev = previous(state, fs);
            const Variable<Scalar> z = chain(xi_, stacked);
            const Variable<Scalar> h = chain(phi_, concat_channels<Scalar>({h_prev, z}));
            const Variable<Scalar> psi_in = spec_.feature_shifting ? concat_channels<Scalar>({h, h_prev}) : h;
            residual_in = chain(psi_, psi_in);
            result.state.h_prev = h_prev;
            result.state.h_curr = h;
            break;
        }
        case Recurrence::full: {
            const Variable<Scalar> h_prev = previous(state, fs);
            const Variable<Scalar> trunk = chain(xi_, concat_channels<Scalar>({stacked, h_prev}));
            residual_in = chain(psi_, trunk);
            result.state.h_prev = h_prev;
            result.state.h_curr = chain(phi_, trunk);
            break;
        }
        }
        if (spec_.residual)
            residual_in = add(residual_in, replicated_luma(centre));
        result.output = pixel_shuffle(residual_in, Index(spec_.scale));
        return result;
    }

    /// The recurrence map h_t = phi(h_{t-1}, z_t) on plain tensors. For full
    /// recurrence `z` is the stacked input window.
    Tensor<Scalar> recurrence_map(const Tensor<Scalar>& h, const Tensor<Scalar>& z) const
    {
        NoGradGuard guard;
        if (spec_.recurrence == Recurrence::middle)
            return chain(phi_, concat_channels<Scalar>({Variable<Scalar>(h), Variable<Scalar>(z)})).value();
        if (spec_.recurrence == Recurrence::full)
            return chain(phi_, chain(xi_, concat_channels<Scalar>({Variable<Scalar>(z), Variable<Scalar>(h)})))
                .value();
        throw UsageError("recurrence_map: network has no recurrence");
    }

    /// Input features z_t for a window (the stacked frames for full recurrence).
    Tensor<Scalar> encode(const std::vector<Tensor<Scalar>>& window) const
    {
        NoGradGuard guard;
        std::vector<Variable<Scalar>> vars;
        for (const auto& f : window)
            vars.emplace_back(f);
        const Variable<Scalar> stacked = concat_channels(vars);
        if (spec_.recurrence == Recurrence::middle)
            return chain(xi_, stacked).value();
        return stacked.value();
    }

    /// Unrolls the network from h_0 = 0 over `frames` (each (1, 3, H, W)),
    /// replicating edge frames to complete boundary windows.
    SequenceResult<Scalar> run_sequence(const std::vector<Tensor<Scalar>>& frames,
                                        NetworkState<Scalar> state = {}) const
    {
        if (frames.empty())
            throw DomainError("run_sequence: empty sequence");
        NoGradGuard guard;
        SequenceResult<Scalar> out;
        const long n = static_cast<long>(frames.size());
        for (long t = 0; t < n; ++t) {
            std::vector<Variable<Scalar>> window;
            for (long d = -spec_.half_window; d <= spec_.half_window; ++d)
                window.emplace_back(frames[std::clamp(t + d, 0L, n - 1)]);
            StepResult<Scalar> r = step(state, window);
            out.outputs.push_back(r.output.value());
            if (recurrent())
                out.hidden_norms.push_back(static_cast<double>(r.state.h_curr->value().norm()));
            state = std::move(r.state);
        }
        return out;
    }

    /// Converts the scalar type, e.g. to evaluate a float network in double.
    template <typename Other>
    Network<Other> cast() const
    {
        Network<Other> out;
        out.spec_ = spec_;
        out.xi_ = xi_;
        out.phi_ = phi_;
        out.psi_ = psi_;
        for (const auto& l : layers_) {
            Layer<Other> o;
            o.name = l.name;
            o.relu = l.relu;
            o.constrained = l.constrained;
            o.kernel.weight = Variable<Other>(l.kernel.weight.value().template cast<Other>(), true);
            o.kernel.bias = Variable<Other>(l.kernel.bias.value().template cast<Other>(), true);
            o.kernel.padding = l.kernel.padding;
            o.srnl.power.seed = l.srnl.power.seed;
            o.srnl.target_srank = l.srnl.target_srank;
            if (!l.srnl.power.u.empty())
                o.srnl.power.u = l.srnl.power.u.template cast<Other>();
            out.layers_.push_back(std::move(o));
        }
        return out;
    }

    /// Deep copy with independent parameter storage.
    Network clone() const { return cast<Scalar>(); }

    Layer<Scalar>* find(const std::string& name)
    {
        for (auto& l : layers_)
            if (l.name == name)
                return &l;
        return nullptr;
    }

private:
    template <typename>
    friend class Network;

    Variable<Scalar> chain(const std::vector<size_t>& block, Variable<Scalar> x) const
    {
        for (size_t i : block) {
            x = conv2d(x, layers_[i].kernel);
            if (layers_[i].relu)
                x = relu(x);
        }
        return x;
    }

    Variable<Scalar> previous(const NetworkState<Scalar>& state, const Shape& frame) const
    {
        if (state.h_curr) {
            const Shape expect = hidden_shape(frame.n, frame.h, frame.w);
            if (!(state.h_curr->shape() == expect))
                throw ShapeError("step: state shape " + to_string(state.h_curr->shape()) + " does not match " +
                                 to_string(expect));
            return *state.h_curr;
        }
        return Variable<Scalar>(Tensor<Scalar>::zeros(hidden_shape(frame.n, frame.h, frame.w)));
    }

    /// Y of the centre frame replicated s^2 times along channels.
    Variable<Scalar> replicated_luma(const Variable<Scalar>& rgb) const
    {
        Kernel<Scalar> to_y(1, 3, 1);
        to_y.weight.mutable_value()(0, 0, 0, 0) = Scalar(kLumaR);
        to_y.weight.mutable_value()(0, 1, 0, 0) = Scalar(kLumaG);
        to_y.weight.mutable_value()(0, 2, 0, 0) = Scalar(kLumaB);
        const Variable<Scalar> y = conv2d(rgb, to_y);
        return concat_channels(std::vector<Variable<Scalar>>(size_t(spec_.scale) * spec_.scale, y));
    }

    NetworkSpec spec_;
    std::vector<Layer<Scalar>> layers_;
    // Block membership as indices into layers_. For full recurrence xi_ is the
    // trunk, psi_ the output head and phi_ the hidden head.
    std::vector<size_t> xi_, phi_, psi_;
};

}  // namespace stablevsr
