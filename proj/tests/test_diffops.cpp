#include "doctest.h"

#include <random>

#include "stablevsr/lipschitz.hpp"
#include "stablevsr/ops.hpp"
#include "test_support.hpp"

using namespace stablevsr;
using stablevsr::testing::gradient_error;
using stablevsr::testing::random_kernel;
using stablevsr::testing::random_tensor;
using stablevsr::testing::weighted_sum;

namespace {

Eigen::VectorXd flat(const Tensor<double>& t) { return t.values().matrix(); }

}  // namespace

TEST_CASE("conv2d with a delta kernel is the identity, 2*delta doubles")
{
    std::mt19937_64 rng(1);
    const Variable<double> x(random_tensor({2, 1, 7, 5}, rng));
    for (Padding pad : {Padding::zero, Padding::circular}) {
        Kernel<double> delta = Kernel<double>::delta(3, pad);
        CHECK(conv2d(x, delta).value().values().isApprox(x.value().values(), 0.0));
        delta.weight.mutable_value()(0, 0, 1, 1) = 2.0;
        CHECK((conv2d(x, delta).value().values() - 2.0 * x.value().values()).abs().maxCoeff() == 0.0);
    }
}

TEST_CASE("circular conv2d equals the materialized doubly block-circulant operator")
{
    std::mt19937_64 rng(2);
    const Kernel<double> kern = random_kernel(3, 2, 3, Padding::circular, rng);
    const Eigen::MatrixXd op = materialize_operator(kern, {1, 2, 6, 6});
    CHECK(op.rows() == 108);
    CHECK(op.cols() == 72);
    for (int trial = 0; trial < 5; ++trial) {
        const Tensor<double> x = random_tensor({1, 2, 6, 6}, rng);
        const Tensor<double> y = detail::conv_forward(x, kern, false);
        CHECK((op * flat(x) - flat(y)).cwiseAbs().maxCoeff() < 1e-6);
    }
}

TEST_CASE("conv2d rejects channel mismatch and even kernels")
{
    std::mt19937_64 rng(3);
    const Variable<double> x(random_tensor({1, 2, 4, 4}, rng));
    CHECK_THROWS_AS(conv2d(x, Kernel<double>(1, 3, 3)), ShapeError);
    CHECK_THROWS_AS(Kernel<double>(1, 2, 4), ConfigError);
    CHECK_THROWS_AS(conv2d_transpose(x, Kernel<double>(3, 1, 3)), ShapeError);
}

TEST_CASE("conv2d_transpose is the adjoint of conv2d")
{
    std::mt19937_64 rng(4);
    SUBCASE("delta kernel gives the identity")
    {
        const Variable<double> y(random_tensor({1, 1, 5, 6}, rng));
        CHECK(conv2d_transpose(y, Kernel<double>::delta()).value().values().isApprox(y.value().values(), 0.0));
    }
    SUBCASE("inner products agree for both paddings")
    {
        for (Padding pad : {Padding::zero, Padding::circular}) {
            for (int trial = 0; trial < 6; ++trial) {
                const Index ci = 1 + trial % 3, co = 1 + (trial + 1) % 3, h = 3 + trial, w = 4 + trial % 2;
                const Index k = trial % 2 ? 3 : 5;
                const Kernel<double> kern = random_kernel(co, ci, k, pad, rng);
                const Tensor<double> x = random_tensor({2, ci, h, w}, rng);
                const Tensor<double> y = random_tensor({2, co, h, w}, rng);
                const double lhs = dot(detail::conv_forward(x, kern, false), y);
                const double rhs = dot(x, conv2d_transpose(Variable<double>(y), kern).value());
                CHECK(std::abs(lhs - rhs) <= 1e-6 * x.norm() * y.norm());
            }
        }
    }
    SUBCASE("1x1 spatial input reduces to a channel-matrix transpose")
    {
        const Kernel<double> zero_pad = random_kernel(3, 2, 3, Padding::zero, rng);
        const Tensor<double> y = random_tensor({1, 3, 1, 1}, rng);
        Eigen::MatrixXd centre(3, 2), all_taps = Eigen::MatrixXd::Zero(3, 2);
        for (Index o = 0; o < 3; ++o)
            for (Index i = 0; i < 2; ++i) {
                centre(o, i) = zero_pad.weight.value()(o, i, 1, 1);
                for (Index ky = 0; ky < 3; ++ky)
                    for (Index kx = 0; kx < 3; ++kx)
                        all_taps(o, i) += zero_pad.weight.value()(o, i, ky, kx);
            }
        const Eigen::VectorXd out_zero = flat(conv2d_transpose(Variable<double>(y), zero_pad).value());
        CHECK((out_zero - centre.transpose() * flat(y)).norm() < 1e-12);
        // Under circular padding every tap wraps onto the single pixel.
        Kernel<double> circ = zero_pad.clone();
        circ.padding = Padding::circular;
        const Eigen::VectorXd out_circ = flat(conv2d_transpose(Variable<double>(y), circ).value());
        CHECK((out_circ - all_taps.transpose() * flat(y)).norm() < 1e-12);
    }
}

TEST_CASE("conv2d is linear and translation-equivariant under circular padding")
{
    std::mt19937_64 rng(5);
    Kernel<double> kern = random_kernel(2, 3, 3, Padding::circular, rng);
    kern.bias.mutable_value().values().setZero();
    const Tensor<double> x = random_tensor({1, 3, 6, 7}, rng), y = random_tensor({1, 3, 6, 7}, rng);
    const double a = 0.7, b = -1.3;
    Tensor<double> combo(x.shape(), (a * x.values() + b * y.values()).eval());
    const Tensor<double> lhs = detail::conv_forward(combo, kern);
    const Tensor<double> fx = detail::conv_forward(x, kern), fy = detail::conv_forward(y, kern);
    CHECK((lhs.values() - (a * fx.values() + b * fy.values())).abs().maxCoeff() < 1e-6);

    auto shift = [](const Tensor<double>& t, Index dy, Index dx) {
        Tensor<double> out(t.shape());
        const Shape s = t.shape();
        for (Index c = 0; c < s.c; ++c)
            for (Index yy = 0; yy < s.h; ++yy)
                for (Index xx = 0; xx < s.w; ++xx)
                    out(0, c, (yy + dy) % s.h, (xx + dx) % s.w) = t(0, c, yy, xx);
        return out;
    };
    const Tensor<double> shifted_out = detail::conv_forward(shift(x, 2, 3), kern);
    CHECK((shifted_out.values() - shift(fx, 2, 3).values()).abs().maxCoeff() < 1e-12);
}

TEST_CASE("relu")
{
    const Variable<double> x(Tensor<double>({1, 1, 1, 2}, Tensor<double>::Storage{{-1.0, 3.0}}));
    const auto y = relu(x).value();
    CHECK(y.values()[0] == 0.0);
    CHECK(y.values()[1] == 3.0);
    std::mt19937_64 rng(6);
    const Variable<double> r(random_tensor({2, 3, 4, 4}, rng));
    CHECK(relu(relu(r)).value().values().isApprox(relu(r).value().values(), 0.0));

    SUBCASE("all-negative input gives zero gradient")
    {
        Variable<double> neg(Tensor<double>({1, 2, 3, 3}, -1.0), true);
        backward(sum(relu(neg)));
        CHECK(neg.grad().values().abs().maxCoeff() == 0.0);
    }
}

TEST_CASE("pixel_shuffle shapes, identity and inverse")
{
    std::mt19937_64 rng(7);
    const Variable<double> x(random_tensor({1, 16, 8, 8}, rng));
    CHECK(pixel_shuffle(x, 4).shape() == Shape{1, 1, 32, 32});
    CHECK(pixel_shuffle(x, 1).value().values().isApprox(x.value().values(), 0.0));
    const auto round_trip = pixel_unshuffle(pixel_shuffle(x, 4), 4).value();
    CHECK((round_trip.values() == x.value().values()).all());
    CHECK_THROWS_AS(pixel_shuffle(Variable<double>(random_tensor({1, 10, 2, 2}, rng)), 2), ShapeError);

    // PyTorch layout: channel c*s^2 + i*s + j lands at (y*s + i, x*s + j).
    const Variable<double> small(random_tensor({1, 4, 2, 3}, rng));
    const auto shuffled = pixel_shuffle(small, 2).value();
    CHECK(shuffled(0, 0, 1 * 2 + 1, 2 * 2 + 0) == small.value()(0, 2, 1, 2));

    SUBCASE("gradient is the unshuffled upstream gradient")
    {
        Variable<double> leaf(random_tensor({2, 8, 3, 3}, rng), true);
        const Tensor<double> upstream = random_tensor({2, 2, 6, 6}, rng);
        backward(weighted_sum(pixel_shuffle(leaf, 2), upstream));
        const auto expected = pixel_unshuffle(Variable<double>(upstream), 2).value();
        CHECK((leaf.grad().values() - expected.values()).abs().maxCoeff() < 1e-15);
    }
}

TEST_CASE("concat_channels")
{
    std::mt19937_64 rng(8);
    const Variable<double> a(random_tensor({1, 3, 4, 5}, rng)), b(random_tensor({1, 3, 4, 5}, rng)),
        c(random_tensor({1, 3, 4, 5}, rng));
    const auto cat = concat_channels<double>({a, b, c});
    CHECK(cat.shape() == Shape{1, 9, 4, 5});
    CHECK(concat_channels<double>({a}).value().values().isApprox(a.value().values(), 0.0));
    CHECK((slice_channels(cat, 0, 3).value().values() == a.value().values()).all());
    CHECK((slice_channels(cat, 3, 3).value().values() == b.value().values()).all());
    CHECK_THROWS_AS(concat_channels<double>({a, Variable<double>(random_tensor({1, 3, 4, 4}, rng))}), ShapeError);
}

TEST_CASE("mse_loss")
{
    std::mt19937_64 rng(9);
    const Tensor<double> t = random_tensor({2, 1, 5, 5}, rng);
    CHECK(mse_loss(Variable<double>(t), Variable<double>(t)).value().values()[0] == 0.0);
    Tensor<double> shifted(t.shape(), (t.values() + 0.1).eval());
    CHECK(mse_loss(Variable<double>(shifted), Variable<double>(t)).value().values()[0] ==
          doctest::Approx(0.01).epsilon(1e-12));

    const Tensor<double> p = random_tensor({2, 3, 4, 5}, rng), q = random_tensor({2, 3, 4, 5}, rng);
    double naive = 0.0;
    for (Index b = 0; b < 2; ++b)
        for (Index c = 0; c < 3; ++c)
            for (Index y = 0; y < 4; ++y)
                for (Index x = 0; x < 5; ++x)
                    naive += (p(b, c, y, x) - q(b, c, y, x)) * (p(b, c, y, x) - q(b, c, y, x));
    naive /= 120.0;
    CHECK(mse_loss(Variable<double>(p), Variable<double>(q)).value().values()[0] == doctest::Approx(naive).epsilon(1e-12));
    CHECK_THROWS_AS(mse_loss(Variable<double>(p), Variable<double>(t)), ShapeError);
}

TEST_CASE("backward: usage errors and accumulation")
{
    std::mt19937_64 rng(10);
    Variable<double> x(random_tensor({1, 1, 3, 3}, rng), true);
    CHECK_THROWS_AS(backward(relu(x)), UsageError);

    backward(sum(scale(x, 2.0)));
    const Tensor<double> once = x.grad();
    backward(sum(scale(x, 2.0)));
    CHECK((x.grad().values() - 2.0 * once.values()).abs().maxCoeff() == 0.0);
    x.zero_grad();
    CHECK(x.grad().values().abs().maxCoeff() == 0.0);
}

TEST_CASE("conv2d weight gradients match central finite differences")
{
    std::mt19937_64 rng(11);
    const Variable<double> x(random_tensor({2, 3, 6, 5}, rng));
    const Kernel<double> kern = random_kernel(4, 3, 3, Padding::zero, rng, true);
    const Variable<double> target(random_tensor({2, 4, 6, 5}, rng));
    auto f = [&] { return mse_loss(conv2d(x, kern), target); };
    CHECK(gradient_error(f, kern.weight) <= 1e-4);
    CHECK(gradient_error(f, kern.bias) <= 1e-4);
}

TEST_CASE("every differentiable op passes finite differences on three shapes")
{
    std::mt19937_64 rng(12);
    const Shape shapes[] = {{1, 2, 4, 4}, {2, 4, 3, 5}, {3, 8, 6, 2}};
    for (const Shape& s : shapes) {
        CAPTURE(to_string(s));
        const Tensor<double> weights = random_tensor(s, rng);
        Variable<double> x(random_tensor(s, rng), true);
        Variable<double> y(random_tensor(s, rng), true);
        for (Padding pad : {Padding::zero, Padding::circular}) {
            Kernel<double> kern = random_kernel(3, s.c, 3, pad, rng, true);
            const Tensor<double> wout = random_tensor({s.n, 3, s.h, s.w}, rng);
            auto conv = [&] { return weighted_sum(conv2d(x, kern), wout); };
            CHECK(gradient_error(conv, x) <= 1e-4);
            CHECK(gradient_error(conv, kern.weight) <= 1e-4);
            CHECK(gradient_error(conv, kern.bias) <= 1e-4);
            Variable<double> yt(random_tensor({s.n, 3, s.h, s.w}, rng), true);
            auto convt = [&] { return weighted_sum(conv2d_transpose(yt, kern), weights); };
            CHECK(gradient_error(convt, yt) <= 1e-4);
            CHECK(gradient_error(convt, kern.weight) <= 1e-4);
        }
        auto r = [&] { return weighted_sum(relu(x), weights); };
        CHECK(gradient_error(r, x) <= 1e-4);
        auto a = [&] { return weighted_sum(stablevsr::abs(x), weights); };
        CHECK(gradient_error(a, x) <= 1e-4);
        if (s.c % 4 == 0) {
            const Tensor<double> w2 = random_tensor({s.n, s.c / 4, s.h * 2, s.w * 2}, rng);
            auto ps = [&] { return weighted_sum(pixel_shuffle(x, 2), w2); };
            CHECK(gradient_error(ps, x) <= 1e-4);
        }
        auto cat = [&] {
            const Tensor<double> w3 = Tensor<double>({s.n, 2 * s.c, s.h, s.w}, 0.5);
            return weighted_sum(concat_channels<double>({x, relu(y)}), w3);
        };
        CHECK(gradient_error(cat, x) <= 1e-4);
        CHECK(gradient_error(cat, y) <= 1e-4);
        auto m = [&] { return mse_loss(x, y); };
        CHECK(gradient_error(m, x) <= 1e-4);
        CHECK(gradient_error(m, y) <= 1e-4);
        auto ad = [&] { return weighted_sum(add(x, scale(y, 0.3)), weights); };
        CHECK(gradient_error(ad, y) <= 1e-4);
        auto pk = [&] { return pick(relu(x), s.n - 1, s.c - 1, s.h / 2, s.w / 2); };
        CHECK(gradient_error(pk, x) <= 1e-4);
        const Tensor<double> wsl = random_tensor({s.n, s.c - 1, s.h, s.w}, rng);
        auto sl = [&] { return weighted_sum(slice_channels(x, 1, s.c - 1), wsl); };
        CHECK(gradient_error(sl, x) <= 1e-4);
    }
}
