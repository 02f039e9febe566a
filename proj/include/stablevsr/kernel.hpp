#pragma once

#include "stablevsr/tensor.hpp"

namespace stablevsr {

enum class Padding { zero, circular };

/// Convolution weights (C_out, C_in, k, k) plus per-output bias.
///
/// Copies share parameter storage (they are tape handles); use `clone()` for
/// an independent kernel.
template <typename Scalar>
struct Kernel {
    Variable<Scalar> weight;
    Variable<Scalar> bias;
    Padding padding = Padding::zero;

    Kernel() = default;

    Kernel(Index c_out, Index c_in, Index k, Padding pad = Padding::zero, bool requires_grad = false)
        : weight(Tensor<Scalar>({c_out, c_in, k, k}), requires_grad),
          bias(Tensor<Scalar>({1, c_out, 1, 1}), requires_grad),
          padding(pad)
    {
        validate();
    }

    Kernel(Tensor<Scalar> weights, Padding pad = Padding::zero, bool requires_grad = false)
        : weight(std::move(weights), requires_grad),
          bias(Tensor<Scalar>({1, weight.shape().n, 1, 1}), requires_grad),
          padding(pad)
    {
        validate();
    }

    Index c_out() const { return weight.shape().n; }
    Index c_in() const { return weight.shape().c; }
    Index size() const { return weight.shape().h; }

    void validate() const
    {
        const Shape& s = weight.shape();
        if (s.h != s.w)
            throw ConfigError("kernel must be square");
        if (s.h % 2 == 0)
            throw ConfigError("kernel size must be odd for same-size stride-1 output, got " + std::to_string(s.h));
        if (!(bias.shape() == Shape{1, s.n, 1, 1}))
            throw ShapeError("bias shape does not match kernel output channels");
    }

    /// Weights reshaped to the (C_out x C_in*k*k) matrix used by im2col.
    Eigen::Map<const RowMatrix<Scalar>> matrix() const
    {
        return {weight.value().data(), c_out(), c_in() * size() * size()};
    }
    Eigen::Map<RowMatrix<Scalar>> matrix()
    {
        return {weight.mutable_value().data(), c_out(), c_in() * size() * size()};
    }

    Kernel clone() const
    {
        Kernel out;
        out.weight = Variable<Scalar>(weight.value(), weight.requires_grad());
        out.bias = Variable<Scalar>(bias.value(), bias.requires_grad());
        out.padding = padding;
        return out;
    }

    /// Single-channel identity kernel (centre tap 1).
    static Kernel delta(Index k = 3, Padding pad = Padding::zero)
    {
        Kernel out(1, 1, k, pad);
        out.weight.mutable_value()(0, 0, k / 2, k / 2) = Scalar(1);
        return out;
    }
};

}  // namespace stablevsr
