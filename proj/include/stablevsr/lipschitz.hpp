#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <vector>

#include "stablevsr/kernel.hpp"
#include "stablevsr/ops.hpp"

namespace stablevsr {

/// Stable-rank normalization hyper-parameters.
///
/// `beta == 1` reduces to plain spectral normalization at norm `alpha`;
/// the hard Lipschitz constraint is `alpha == beta == 1`.
struct SrnlConfig {
    double alpha = 1.0;
    double beta = 1.0;
    int power_iters_train = 1;
    int power_iters_final = 100;

    void validate() const
    {
        if (!(alpha > 0.0))
            throw ConfigError("srnl: alpha must be positive");
        if (!(beta > 0.0 && beta <= 1.0))
            throw ConfigError("srnl: beta must lie in (0, 1]");
        if (power_iters_train < 1 || power_iters_final < 1)
            throw ConfigError("srnl: power iteration counts must be >= 1");
    }

    static SrnlConfig hard() { return {1.0, 1.0}; }
};

/// Persistent power-iteration vector for one convolution.
template <typename Scalar>
struct PowerIterState {
    Tensor<Scalar> u;  ///< unit-norm, shaped like the layer input (1, C_in, H, W)
    Scalar sigma = 0;
    std::uint64_t seed = 0x5eed;
};

template <typename Scalar>
struct SrnlState {
    PowerIterState<Scalar> power;
    /// Stable-rank target fixed at the first soft normalization, so repeated
    /// projections during training do not compound the beta shrinkage.
    std::optional<double> target_srank;
};

namespace detail {

template <typename Scalar>
void reset_unit(Tensor<Scalar>& u, const Shape& shape, std::uint64_t seed)
{
    std::mt19937_64 rng(seed);
    u = Tensor<Scalar>::randn(shape, rng);
    u *= Scalar(1) / u.norm();
}

}  // namespace detail

/// Largest singular value of the convolution's linear part acting on inputs
/// of `input` shape, by power iteration on A^T A using the conv /
/// conv-transpose pair (no kernel reshaping).
///
/// Warm-starts from `state.u` when its shape matches. Each iteration's
/// estimate is appended to `history` if given; the returned value is
/// ||A u|| for the final unit vector and is never below the last entry.
template <typename Scalar>
Scalar spectral_norm(const Kernel<Scalar>& kern, Shape input, int iters, PowerIterState<Scalar>& state,
                     std::vector<Scalar>* history = nullptr)
{
    if (iters < 1)
        throw UsageError("spectral_norm: iters must be >= 1");
    input.n = 1;
    if (input.c != kern.c_in())
        throw ShapeError("spectral_norm: input channels do not match kernel");
    if (state.u.empty() || !(state.u.shape() == input))
        detail::reset_unit(state.u, input, state.seed);

    for (int i = 0; i < iters; ++i) {
        Tensor<Scalar> v = detail::conv_forward(state.u, kern, false);
        const Scalar sigma = v.norm();
        Tensor<Scalar> w = detail::conv_transpose_forward(v, kern);
        const Scalar wn = w.norm();
        if (!(wn > Scalar(0))) {
            detail::reset_unit(state.u, input, state.seed + 1);
            state.sigma = 0;
            return 0;
        }
        if (history)
            history->push_back(sigma);
        state.u = std::move(w);
        state.u *= Scalar(1) / wn;
    }
    state.sigma = detail::conv_forward(state.u, kern, false).norm();
    return state.sigma;
}

template <typename Scalar>
Scalar spectral_norm(const Kernel<Scalar>& kern, Shape input, int iters, std::uint64_t seed = 0x5eed)
{
    PowerIterState<Scalar> state;
    state.seed = seed;
    return spectral_norm(kern, input, iters, state);
}

/// Dense matrix of the convolution (bias excluded), built index-by-index from
/// the kernel taps: rows are vec(output) and columns vec(input), both in
/// (channel, row, column) order.
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> materialize_operator(const Kernel<Scalar>& kern, Shape input,
                                                                          Index max_elements = Index(1) << 24)
{
    kern.validate();
    if (input.c != kern.c_in())
        throw ShapeError("materialize_operator: input channels do not match kernel");
    const Index H = input.h, W = input.w, k = kern.size(), r = k / 2;
    const Index rows = kern.c_out() * H * W;
    const Index cols = kern.c_in() * H * W;
    if (rows * cols > max_elements)
        throw DomainError("materialize_operator: " + std::to_string(rows) + "x" + std::to_string(cols) +
                          " exceeds element budget");
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic> m = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>::Zero(rows, cols);
    const Tensor<Scalar>& w = kern.weight.value();
    for (Index o = 0; o < kern.c_out(); ++o)
        for (Index y = 0; y < H; ++y)
            for (Index x = 0; x < W; ++x)
                for (Index i = 0; i < kern.c_in(); ++i)
                    for (Index ky = 0; ky < k; ++ky)
                        for (Index kx = 0; kx < k; ++kx) {
                            Index sy = y + ky - r, sx = x + kx - r;
                            if (kern.padding == Padding::circular) {
                                sy = (sy + H) % H;
                                sx = (sx + W) % W;
                            } else if (sy < 0 || sy >= H || sx < 0 || sx >= W) {
                                continue;
                            }
                            m((o * H + y) * W + x, (i * H + sy) * W + sx) += w(o, i, ky, kx);
                        }
    return m;
}

/// ||M||_F^2 / ||M||_2^2.
template <typename Derived>
double stable_rank(const Eigen::MatrixBase<Derived>& m)
{
    const Eigen::MatrixXd md = m.template cast<double>();
    const double fro2 = md.squaredNorm();
    if (!(fro2 > 0.0))
        throw DomainError("stable_rank: zero matrix");
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(md);
    const double top = svd.singularValues()(0);
    return fro2 / (top * top);
}

/// In-place stable rank normalization of one convolution.
///
/// beta == 1: scale the kernel so the operator norm, estimated by
/// `iters` warm-started power iterations on `input`, equals alpha.
/// beta < 1: on the reshaped (C_out x C_in*k*k) matrix, keep the top singular
/// component, shrink the residual so the stable rank hits
/// max(1, beta * srank), and scale the top singular value to alpha.
/// Returns the spectral estimate measured before rescaling. Bias is untouched.
template <typename Scalar>
Scalar srnl_apply(Kernel<Scalar>& kern, const SrnlConfig& cfg, Shape input, SrnlState<Scalar>& state, int iters)
{
    cfg.validate();
    auto w = kern.matrix();
    if (!(w.squaredNorm() > Scalar(0)))
        return 0;

    if (cfg.beta >= 1.0) {
        // A cold vector gets a full warm-up; single warm-started iterations
        // only track a slowly moving kernel once the estimate has converged.
        Shape expect = input;
        expect.n = 1;
        if (state.power.u.empty() || !(state.power.u.shape() == expect))
            iters = std::max(iters, cfg.power_iters_final);
        const Scalar sigma = spectral_norm(kern, input, iters, state.power);
        if (sigma > Scalar(0))
            w *= static_cast<Scalar>(cfg.alpha) / sigma;
        return sigma;
    }

    const Eigen::MatrixXd m = w.template cast<double>();
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const double s1 = svd.singularValues()(0);
    const Eigen::MatrixXd top = s1 * svd.matrixU().col(0) * svd.matrixV().col(0).transpose();
    const Eigen::MatrixXd residual = m - top;
    if (!state.target_srank)
        state.target_srank = std::max(1.0, cfg.beta * stable_rank(m));
    const double target = *state.target_srank;
    const double res2 = residual.squaredNorm();
    double gamma = 1.0;
    if (res2 > 0.0)
        gamma = std::min(1.0, std::sqrt(std::max(0.0, target - 1.0)) * s1 / std::sqrt(res2));
    const Eigen::MatrixXd normalized = (top + gamma * residual) * (cfg.alpha / s1);
    w = normalized.template cast<Scalar>();
    return static_cast<Scalar>(s1);
}

/// Functional form: returns a normalized copy of `kern`.
template <typename Scalar>
Kernel<Scalar> srnl_normalize(const Kernel<Scalar>& kern, const SrnlConfig& cfg, Shape input,
                              SrnlState<Scalar>& state, std::optional<int> iters = std::nullopt)
{
    Kernel<Scalar> out = kern.clone();
    srnl_apply(out, cfg, input, state, iters.value_or(cfg.power_iters_train));
    return out;
}

/// One convolution of a recurrence map together with the input shape it sees.
template <typename Scalar>
struct CertifiedLayer {
    std::string name;
    Kernel<Scalar> kernel;
    Shape input;
};

struct Certificate {
    std::vector<std::string> names;
    std::vector<double> sigmas;
    double bound = 0.0;
};

/// Product of the layers' operator norms, an upper bound on the Lipschitz
/// constant of a conv/ReLU chain (ReLU being 1-Lipschitz).
template <typename Scalar>
Certificate certify_network(const std::vector<CertifiedLayer<Scalar>>& layers, int iters = 100)
{
    if (layers.empty())
        throw DomainError("certify_network: no layers");
    Certificate cert;
    cert.bound = 1.0;
    for (size_t i = 0; i < layers.size(); ++i) {
        const double sigma = static_cast<double>(spectral_norm(layers[i].kernel, layers[i].input, iters,
                                                               std::uint64_t(0xce47) + i));
        cert.names.push_back(layers[i].name);
        cert.sigmas.push_back(sigma);
        cert.bound *= sigma;
    }
    return cert;
}

/// Largest observed ||phi(h, z) - phi(h', z)|| / ||h - h'|| over random draws.
///
/// Half of the trials use independent states, half use nearby pairs, which
/// probe the local Jacobian.
template <typename Scalar>
double empirical_contraction(const std::function<Tensor<Scalar>(const Tensor<Scalar>&, const Tensor<Scalar>&)>& phi,
                             Shape h_shape, Shape z_shape, int trials, std::uint64_t seed = 17)
{
    std::mt19937_64 rng(seed);
    double worst = 0.0;
    for (int t = 0; t < trials; ++t) {
        Tensor<Scalar> z = Tensor<Scalar>::uniform(z_shape, rng);
        Tensor<Scalar> h = Tensor<Scalar>::uniform(h_shape, rng);
        Tensor<Scalar> h2;
        if (t % 2 == 0) {
            h2 = Tensor<Scalar>::uniform(h_shape, rng);
        } else {
            h2 = Tensor<Scalar>::randn(h_shape, rng);
            h2 *= Scalar(1e-2);
            h2 += h;
        }
        Tensor<Scalar> diff_in = h;
        diff_in += Tensor<Scalar>(h2.shape(), (-h2.values()).eval());
        const double denom = static_cast<double>(diff_in.norm());
        if (!(denom > 0.0))
            continue;
        Tensor<Scalar> a = phi(h, z);
        const Tensor<Scalar> b = phi(h2, z);
        a += Tensor<Scalar>(b.shape(), (-b.values()).eval());
        worst = std::max(worst, static_cast<double>(a.norm()) / denom);
    }
    return worst;
}

}  // namespace stablevsr
