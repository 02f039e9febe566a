#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <vector>

#include "stablevsr/kernel.hpp"
#include "stablevsr/tensor.hpp"

namespace stablevsr {

namespace detail {

/// Gathers the k*k shifted copies of every input channel into rows of `cols`
/// (row = (c*k + ky)*k + kx, column = y*W + x).
template <typename Scalar>
void im2col(const Scalar* src, Index channels, Index height, Index width, Index k, Padding padding,
            RowMatrix<Scalar>& cols)
{
    const Index r = k / 2;
    const Index plane = height * width;
    cols.resize(channels * k * k, plane);
    for (Index c = 0; c < channels; ++c) {
        const Scalar* in = src + c * plane;
        for (Index ky = 0; ky < k; ++ky) {
            for (Index kx = 0; kx < k; ++kx) {
                Scalar* row = cols.data() + ((c * k + ky) * k + kx) * plane;
                const Index dy = ky - r;
                const Index dx = kx - r;
                for (Index y = 0; y < height; ++y) {
                    Scalar* out = row + y * width;
                    Index sy = y + dy;
                    if (padding == Padding::circular) {
                        sy = ((sy % height) + height) % height;
                        const Scalar* line = in + sy * width;
                        for (Index x = 0; x < width; ++x)
                            out[x] = line[(((x + dx) % width) + width) % width];
                        continue;
                    }
                    if (sy < 0 || sy >= height) {
                        std::fill(out, out + width, Scalar(0));
                        continue;
                    }
                    const Scalar* line = in + sy * width;
                    const Index lo = std::max<Index>(0, -dx);
                    const Index hi = std::min<Index>(width, width - dx);
                    std::fill(out, out + lo, Scalar(0));
                    if (hi > lo)
                        std::memcpy(out + lo, line + lo + dx, sizeof(Scalar) * (hi - lo));
                    std::fill(out + std::max(hi, lo), out + width, Scalar(0));
                }
            }
        }
    }
}

/// Adjoint of im2col: scatters-and-adds `cols` back onto the image.
template <typename Scalar>
void col2im_add(const RowMatrix<Scalar>& cols, Scalar* dst, Index channels, Index height, Index width, Index k,
                Padding padding)
{
    const Index r = k / 2;
    const Index plane = height * width;
    for (Index c = 0; c < channels; ++c) {
        Scalar* img = dst + c * plane;
        for (Index ky = 0; ky < k; ++ky) {
            for (Index kx = 0; kx < k; ++kx) {
                const Scalar* row = cols.data() + ((c * k + ky) * k + kx) * plane;
                const Index dy = ky - r;
                const Index dx = kx - r;
                for (Index y = 0; y < height; ++y) {
                    const Scalar* in = row + y * width;
                    Index sy = y + dy;
                    if (padding == Padding::circular) {
                        sy = ((sy % height) + height) % height;
                        Scalar* line = img + sy * width;
                        for (Index x = 0; x < width; ++x)
                            line[(((x + dx) % width) + width) % width] += in[x];
                        continue;
                    }
                    if (sy < 0 || sy >= height)
                        continue;
                    Scalar* line = img + sy * width;
                    const Index lo = std::max<Index>(0, -dx);
                    const Index hi = std::min<Index>(width, width - dx);
                    for (Index x = lo; x < hi; ++x)
                        line[x + dx] += in[x];
                }
            }
        }
    }
}

template <typename Scalar>
void check_conv_input(const Shape& x, const Kernel<Scalar>& kern)
{
    kern.validate();
    if (x.c != kern.c_in())
        throw ShapeError("conv2d: input has " + std::to_string(x.c) + " channels, kernel expects " +
                         std::to_string(kern.c_in()));
}

/// Linear part plus optional bias, on plain tensors.
template <typename Scalar>
Tensor<Scalar> conv_forward(const Tensor<Scalar>& x, const Kernel<Scalar>& kern, bool with_bias = true)
{
    check_conv_input(x.shape(), kern);
    const Shape& s = x.shape();
    Tensor<Scalar> out({s.n, kern.c_out(), s.h, s.w});
    RowMatrix<Scalar> cols;
    const auto w = kern.matrix();
    const auto bias = kern.bias.value().values().matrix();
    for (Index b = 0; b < s.n; ++b) {
        im2col(x.data() + b * s.c * s.plane(), s.c, s.h, s.w, kern.size(), kern.padding, cols);
        auto o = out.item(b);
        o.noalias() = w * cols;
        if (with_bias)
            o.colwise() += bias;
    }
    return out;
}

/// Adjoint of the linear part of `conv_forward`.
template <typename Scalar>
Tensor<Scalar> conv_transpose_forward(const Tensor<Scalar>& y, const Kernel<Scalar>& kern)
{
    kern.validate();
    const Shape& s = y.shape();
    if (s.c != kern.c_out())
        throw ShapeError("conv2d_transpose: input has " + std::to_string(s.c) + " channels, kernel emits " +
                         std::to_string(kern.c_out()));
    Tensor<Scalar> out({s.n, kern.c_in(), s.h, s.w});
    RowMatrix<Scalar> cols;
    const auto w = kern.matrix();
    for (Index b = 0; b < s.n; ++b) {
        cols.noalias() = w.transpose() * y.item(b);
        col2im_add(cols, out.data() + b * kern.c_in() * s.plane(), kern.c_in(), s.h, s.w, kern.size(),
                   kern.padding);
    }
    return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Differentiable operators.

/// Stride-1 same-size convolution with bias.
template <typename Scalar>
Variable<Scalar> conv2d(const Variable<Scalar>& x, const Kernel<Scalar>& kern)
{
    using Node = typename Variable<Scalar>::Node;
    Tensor<Scalar> out = detail::conv_forward(x.value(), kern);
    return Variable<Scalar>::from_op(
        std::move(out), {x, kern.weight, kern.bias}, [x, kern](Node& self) {
            const Tensor<Scalar>& g = self.grad;
            const Shape& s = x.shape();
            const Index k = kern.size();
            RowMatrix<Scalar> cols;
            const bool need_w = kern.weight.requires_grad();
            const bool need_x = x.requires_grad();
            if (kern.bias.requires_grad()) {
                auto db = kern.bias.node()->grad_buffer().values().matrix();
                for (Index b = 0; b < s.n; ++b)
                    db += g.item(b).rowwise().sum();
            }
            if (need_w) {
                Eigen::Map<RowMatrix<Scalar>> dw(kern.weight.node()->grad_buffer().data(), kern.c_out(),
                                                 kern.c_in() * k * k);
                for (Index b = 0; b < s.n; ++b) {
                    detail::im2col(x.value().data() + b * s.c * s.plane(), s.c, s.h, s.w, k, kern.padding, cols);
                    dw.noalias() += g.item(b) * cols.transpose();
                }
            }
            if (need_x) {
                Tensor<Scalar>& dx = x.node()->grad_buffer();
                const auto w = kern.matrix();
                for (Index b = 0; b < s.n; ++b) {
                    cols.noalias() = w.transpose() * g.item(b);
                    detail::col2im_add(cols, dx.data() + b * s.c * s.plane(), s.c, s.h, s.w, k, kern.padding);
                }
            }
        });
}

/// Exact adjoint of the linear part of `conv2d` (bias ignored).
template <typename Scalar>
Variable<Scalar> conv2d_transpose(const Variable<Scalar>& y, const Kernel<Scalar>& kern)
{
    using Node = typename Variable<Scalar>::Node;
    Tensor<Scalar> out = detail::conv_transpose_forward(y.value(), kern);
    return Variable<Scalar>::from_op(std::move(out), {y, kern.weight}, [y, kern](Node& self) {
        const Tensor<Scalar>& g = self.grad;
        const Shape& s = y.shape();
        const Index k = kern.size();
        RowMatrix<Scalar> cols;
        for (Index b = 0; b < s.n; ++b) {
            detail::im2col(g.data() + b * kern.c_in() * s.plane(), kern.c_in(), s.h, s.w, k, kern.padding, cols);
            if (y.requires_grad())
                y.node()->grad_buffer().item(b).noalias() += kern.matrix() * cols;
            if (kern.weight.requires_grad()) {
                Eigen::Map<RowMatrix<Scalar>> dw(kern.weight.node()->grad_buffer().data(), kern.c_out(),
                                                 kern.c_in() * k * k);
                dw.noalias() += y.value().item(b) * cols.transpose();
            }
        }
    });
}

template <typename Scalar>
Variable<Scalar> relu(const Variable<Scalar>& x)
{
    using Node = typename Variable<Scalar>::Node;
    Tensor<Scalar> out(x.shape(), x.value().values().max(Scalar(0)).eval());
    return Variable<Scalar>::from_op(std::move(out), {x}, [x](Node& self) {
        x.node()->grad_buffer().values() +=
            (x.value().values() > Scalar(0)).select(self.grad.values(), Scalar(0));
    });
}

template <typename Scalar>
Variable<Scalar> abs(const Variable<Scalar>& x)
{
    using Node = typename Variable<Scalar>::Node;
    Tensor<Scalar> out(x.shape(), x.value().values().abs().eval());
    return Variable<Scalar>::from_op(std::move(out), {x}, [x](Node& self) {
        const auto& v = x.value().values();
        x.node()->grad_buffer().values() +=
            self.grad.values() * ((v > Scalar(0)).template cast<Scalar>() - (v < Scalar(0)).template cast<Scalar>());
    });
}

namespace detail {

template <typename Scalar>
void shuffle_into(const Tensor<Scalar>& in, Tensor<Scalar>& out, Index s, bool forward, bool accumulate)
{
    // forward: in (N, C*s*s, H, W) -> out (N, C, H*s, W*s); otherwise the inverse.
    const Shape& big = forward ? out.shape() : in.shape();
    const Index c_out = big.c;
    const Index h = big.h / s;
    const Index w = big.w / s;
    for (Index b = 0; b < big.n; ++b)
        for (Index c = 0; c < c_out; ++c)
            for (Index i = 0; i < s; ++i)
                for (Index j = 0; j < s; ++j) {
                    const Index small_c = c * s * s + i * s + j;
                    for (Index y = 0; y < h; ++y)
                        for (Index x = 0; x < w; ++x) {
                            if (forward) {
                                Scalar& dst = out(b, c, y * s + i, x * s + j);
                                dst = accumulate ? dst + in(b, small_c, y, x) : in(b, small_c, y, x);
                            } else {
                                Scalar& dst = out(b, small_c, y, x);
                                dst = accumulate ? dst + in(b, c, y * s + i, x * s + j) : in(b, c, y * s + i, x * s + j);
                            }
                        }
                }
}

}  // namespace detail

/// (N, C*s^2, H, W) -> (N, C, H*s, W*s).
template <typename Scalar>
Variable<Scalar> pixel_shuffle(const Variable<Scalar>& x, Index s)
{
    using Node = typename Variable<Scalar>::Node;
    const Shape& in = x.shape();
    if (s < 1 || in.c % (s * s) != 0)
        throw ShapeError("pixel_shuffle: " + std::to_string(in.c) + " channels not divisible by s^2 = " +
                         std::to_string(s * s));
    Tensor<Scalar> out({in.n, in.c / (s * s), in.h * s, in.w * s});
    detail::shuffle_into(x.value(), out, s, true, false);
    return Variable<Scalar>::from_op(std::move(out), {x}, [x, s](Node& self) {
        detail::shuffle_into(self.grad, x.node()->grad_buffer(), s, false, true);
    });
}

/// Inverse of pixel_shuffle: (N, C, H*s, W*s) -> (N, C*s^2, H, W).
template <typename Scalar>
Variable<Scalar> pixel_unshuffle(const Variable<Scalar>& x, Index s)
{
    using Node = typename Variable<Scalar>::Node;
    const Shape& in = x.shape();
    if (s < 1 || in.h % s != 0 || in.w % s != 0)
        throw ShapeError("pixel_unshuffle: spatial dims not divisible by " + std::to_string(s));
    Tensor<Scalar> out({in.n, in.c * s * s, in.h / s, in.w / s});
    detail::shuffle_into(x.value(), out, s, false, false);
    return Variable<Scalar>::from_op(std::move(out), {x}, [x, s](Node& self) {
        detail::shuffle_into(self.grad, x.node()->grad_buffer(), s, true, true);
    });
}

template <typename Scalar>
Variable<Scalar> concat_channels(const std::vector<Variable<Scalar>>& xs)
{
    using Node = typename Variable<Scalar>::Node;
    if (xs.empty())
        throw ShapeError("concat_channels: no inputs");
    const Shape first = xs.front().shape();
    Index channels = 0;
    for (const auto& x : xs) {
        const Shape& s = x.shape();
        if (s.n != first.n || s.h != first.h || s.w != first.w)
            throw ShapeError("concat_channels: spatial/batch mismatch " + to_string(s) + " vs " + to_string(first));
        channels += s.c;
    }
    Tensor<Scalar> out({first.n, channels, first.h, first.w});
    for (Index b = 0; b < first.n; ++b) {
        Index offset = 0;
        for (const auto& x : xs) {
            out.item(b).middleRows(offset, x.shape().c) = x.value().item(b);
            offset += x.shape().c;
        }
    }
    return Variable<Scalar>::from_op(std::move(out), xs, [xs](Node& self) {
        for (Index b = 0; b < self.grad.shape().n; ++b) {
            Index offset = 0;
            for (const auto& x : xs) {
                if (x.requires_grad())
                    x.node()->grad_buffer().item(b) += self.grad.item(b).middleRows(offset, x.shape().c);
                offset += x.shape().c;
            }
        }
    });
}

template <typename Scalar>
Variable<Scalar> slice_channels(const Variable<Scalar>& x, Index begin, Index count)
{
    using Node = typename Variable<Scalar>::Node;
    Tensor<Scalar> out = x.value().channels(begin, count);
    return Variable<Scalar>::from_op(std::move(out), {x}, [x, begin, count](Node& self) {
        for (Index b = 0; b < x.shape().n; ++b)
            x.node()->grad_buffer().item(b).middleRows(begin, count) += self.grad.item(b);
    });
}

template <typename Scalar>
Variable<Scalar> add(const Variable<Scalar>& a, const Variable<Scalar>& b)
{
    using Node = typename Variable<Scalar>::Node;
    if (!(a.shape() == b.shape()))
        throw ShapeError("add: shape mismatch " + to_string(a.shape()) + " vs " + to_string(b.shape()));
    Tensor<Scalar> out(a.shape(), (a.value().values() + b.value().values()).eval());
    return Variable<Scalar>::from_op(std::move(out), {a, b}, [a, b](Node& self) {
        if (a.requires_grad())
            a.node()->grad_buffer().values() += self.grad.values();
        if (b.requires_grad())
            b.node()->grad_buffer().values() += self.grad.values();
    });
}

template <typename Scalar>
Variable<Scalar> scale(const Variable<Scalar>& x, Scalar factor)
{
    using Node = typename Variable<Scalar>::Node;
    Tensor<Scalar> out(x.shape(), (x.value().values() * factor).eval());
    return Variable<Scalar>::from_op(std::move(out), {x}, [x, factor](Node& self) {
        x.node()->grad_buffer().values() += factor * self.grad.values();
    });
}

/// Sum of all entries as a (1,1,1,1) scalar.
template <typename Scalar>
Variable<Scalar> sum(const Variable<Scalar>& x)
{
    using Node = typename Variable<Scalar>::Node;
    Tensor<Scalar> out({1, 1, 1, 1}, x.value().sum());
    return Variable<Scalar>::from_op(std::move(out), {x}, [x](Node& self) {
        x.node()->grad_buffer().values() += self.grad.values()[0];
    });
}

/// Single element as a (1,1,1,1) scalar.
template <typename Scalar>
Variable<Scalar> pick(const Variable<Scalar>& x, Index b, Index c, Index y, Index xi)
{
    using Node = typename Variable<Scalar>::Node;
    const Shape& s = x.shape();
    if (b < 0 || b >= s.n || c < 0 || c >= s.c || y < 0 || y >= s.h || xi < 0 || xi >= s.w)
        throw ShapeError("pick: index out of range for " + to_string(s));
    Tensor<Scalar> out({1, 1, 1, 1}, x.value()(b, c, y, xi));
    return Variable<Scalar>::from_op(std::move(out), {x}, [x, b, c, y, xi](Node& self) {
        x.node()->grad_buffer()(b, c, y, xi) += self.grad.values()[0];
    });
}

/// Mean of squared differences as a (1,1,1,1) scalar.
template <typename Scalar>
Variable<Scalar> mse_loss(const Variable<Scalar>& pred, const Variable<Scalar>& target)
{
    using Node = typename Variable<Scalar>::Node;
    if (!(pred.shape() == target.shape()))
        throw ShapeError("mse_loss: shape mismatch " + to_string(pred.shape()) + " vs " + to_string(target.shape()));
    const Scalar n = static_cast<Scalar>(pred.value().size());
    Tensor<Scalar> out({1, 1, 1, 1}, (pred.value().values() - target.value().values()).square().sum() / n);
    return Variable<Scalar>::from_op(std::move(out), {pred, target}, [pred, target, n](Node& self) {
        const Scalar g = self.grad.values()[0] * Scalar(2) / n;
        if (pred.requires_grad())
            pred.node()->grad_buffer().values() += g * (pred.value().values() - target.value().values());
        if (target.requires_grad())
            target.node()->grad_buffer().values() -= g * (pred.value().values() - target.value().values());
    });
}

}  // namespace stablevsr
