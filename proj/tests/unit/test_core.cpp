#include <doctest.h>

#include <cmath>
#include <fstream>

#include "helpers.hpp"
#include "mpsr/archive.hpp"
#include "mpsr/gradcheck.hpp"
#include "mpsr/layers.hpp"

using namespace mpsr;
using testutil::random_tensor;

TEST_SUITE("core")
{
    TEST_CASE("conv2d matches a direct loop oracle")
    {
        const Tensor x = random_tensor(Shape{2, 3, 7, 6}, 1, -1, 1);
        const Tensor w = random_tensor(Shape{4, 3, 3, 3}, 2, -1, 1);
        const Tensor b = random_tensor(Shape{1, 4, 1, 1}, 3, -1, 1);
        for (int stride : {1, 2})
            for (int pad : {0, 1}) {
                const Tensor y = ops::conv2d(ag::constant(x), ag::constant(w), ag::constant(b), stride, pad).value();
                const int oh = (7 + 2 * pad - 3) / stride + 1, ow = (6 + 2 * pad - 3) / stride + 1;
                REQUIRE(y.shape() == Shape{2, 4, oh, ow});
                double worst = 0.0;
                for (int n = 0; n < 2; n++)
                    for (int o = 0; o < 4; o++)
                        for (int i = 0; i < oh; i++)
                            for (int j = 0; j < ow; j++) {
                                double acc = b[o];
                                for (int c = 0; c < 3; c++)
                                    for (int ki = 0; ki < 3; ki++)
                                        for (int kj = 0; kj < 3; kj++) {
                                            const int yi = i * stride - pad + ki, xj = j * stride - pad + kj;
                                            if (yi >= 0 && yi < 7 && xj >= 0 && xj < 6)
                                                acc += w.at(o, c, ki, kj) * x.at(n, c, yi, xj);
                                        }
                                worst = std::max(worst, std::abs(acc - y.at(n, o, i, j)));
                            }
                CHECK(worst < 1e-12);
            }
    }

    TEST_CASE("conv_transpose2d is the adjoint of conv2d")
    {
        // <conv(x), y> == <x, conv^T(y)> with shared weights and no bias.
        const Tensor x = random_tensor(Shape{1, 3, 8, 8}, 4, -1, 1);
        const Tensor w = random_tensor(Shape{5, 3, 8, 8}, 5, -1, 1);
        const Tensor y = random_tensor(Shape{1, 5, 2, 2}, 6, -1, 1);
        const Tensor cx = ops::conv2d(ag::constant(x), ag::constant(w), Var(), 4, 2).value();
        REQUIRE(cx.shape() == y.shape());
        const Tensor ty = ops::conv_transpose2d(ag::constant(y), ag::constant(w), Var(), 4, 2).value();
        REQUIRE(ty.shape() == x.shape());
        double lhs = 0.0, rhs = 0.0;
        for (std::size_t i = 0; i < y.size(); i++)
            lhs += cx[i] * y[i];
        for (std::size_t i = 0; i < x.size(); i++)
            rhs += x[i] * ty[i];
        CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
    }

    TEST_CASE("pointwise_conv equals a 1x1 conv over the concatenation")
    {
        const Tensor a = random_tensor(Shape{2, 3, 4, 4}, 7), b = random_tensor(Shape{2, 2, 4, 4}, 8);
        const Tensor w = random_tensor(Shape{4, 7, 1, 1}, 9, -1, 1), bias = random_tensor(Shape{1, 4, 1, 1}, 10);
        const Tensor zeros(Shape{2, 2, 4, 4});
        const Tensor ref = ops::conv2d(ops::concat_channels({ag::constant(a), ag::constant(zeros), ag::constant(b)}),
                                       ag::constant(w), ag::constant(bias), 1, 0)
                               .value();
        const Tensor got =
            ops::pointwise_conv({ag::constant(a), Var(), ag::constant(b)}, {3, 2, 2}, ag::constant(w), ag::constant(bias))
                .value();
        CHECK(max_abs_diff(ref, got) < 1e-12);
    }

    TEST_CASE("pixel_shuffle follows the depth-to-space index map")
    {
        Tensor x(Shape{1, 4, 2, 2});
        for (int c = 0; c < 4; c++)
            for (int i = 0; i < 4; i++)
                x[c * 4 + i] = 10.0 * (c + 1);
        const Tensor y = ops::pixel_shuffle(ag::constant(x), 2).value();
        REQUIRE(y.shape() == Shape{1, 1, 4, 4});
        for (int i = 0; i < 4; i++)
            for (int j = 0; j < 4; j++)
                CHECK(y.at(0, 0, i, j) == 10.0 * ((i % 2) * 2 + (j % 2) + 1));
    }

    TEST_CASE("pooling and upsampling")
    {
        Tensor x(Shape{1, 1, 2, 2}, std::vector<double>{1, 0, 0, 0});
        CHECK(ops::avg_pool(ag::constant(x), 2).value()[0] == 0.25);
        CHECK(ops::max_pool(ag::constant(x), 2, 2, 0).value()[0] == 1.0);
        const Tensor up = ops::upsample_nearest(ag::constant(x), 2).value();
        CHECK(up.at(0, 0, 1, 1) == 1.0);
        CHECK(up.at(0, 0, 2, 2) == 0.0);
        CHECK(ops::global_avg_pool(ag::constant(x)).value()[0] == 0.25);
    }

    TEST_CASE("op gradients match central differences")
    {
        const Var x = ag::leaf(random_tensor(Shape{2, 3, 6, 6}, 11, -1, 1));
        const Var w = ag::leaf(random_tensor(Shape{4, 3, 3, 3}, 12, -0.5, 0.5));
        const Var wt = ag::leaf(random_tensor(Shape{4, 2, 4, 4}, 13, -0.5, 0.5));
        const Var alpha = ag::leaf(Tensor(Shape{1, 4, 1, 1}, 0.25));
        const Var s = ag::leaf(random_tensor(Shape{2, 2, 1, 1}, 14));
        auto loss = [&] {
            Var h = ops::prelu(ops::conv2d(x, w, Var(), 2, 1), alpha);
            Var u = ops::conv_transpose2d(h, wt, Var(), 2, 1);
            Var v = ops::channel_scale(ops::sigmoid(u), s);
            Var p = ops::avg_pool(ops::pixel_shuffle(ops::concat_channels({v, v, v, v}), 2), 2);
            Var m = ops::max_pool(ops::leaky_relu(ops::affine(p, 2.0, -0.5), 0.2), 3, 2, 1);
            Var r = ops::div(ops::upsample_nearest(m, 2), ops::affine(ops::slice_channels(v, 0, 2), 1.0, 1.0));
            return ops::add(ops::mean(ops::mul(r, r)), ops::scale(ops::sum(ops::log_clamped(v, 1e-12)), 0.01));
        };
        GradCheckOptions opt;
        opt.samples = 40;
        opt.max_kink_redraws = 5;
        const auto probes = check_gradients(loss, {{"x", x}, {"w", w}, {"wt", wt}, {"alpha", alpha}, {"s", s}}, opt);
        for (const auto& p : probes) {
            INFO(p.name << "[" << p.index << "] a=" << p.analytic << " n=" << p.numeric);
            CHECK(p.pass);
        }
    }

    TEST_CASE("KinkTrace notices a rectifier changing side")
    {
        auto sig = [](double v) {
            ops::KinkTrace t;
            ops::relu(ag::constant(Tensor(Shape{1, 1, 1, 1}, v)));
            return t.signature();
        };
        CHECK(sig(0.5) == sig(0.7));
        CHECK(sig(0.5) != sig(-0.5));
    }

    TEST_CASE("backward accumulates into leaves and NoGradGuard builds no graph")
    {
        const Var a = ag::leaf(Tensor(Shape{1, 1, 1, 1}, 3.0));
        ag::backward(ops::add(ops::mul(a, a), a));
        CHECK(a.grad()[0] == 7.0);
        ag::NoGradGuard g;
        const Var b = ops::mul(a, a);
        CHECK_FALSE(b.requires_grad());
    }

    TEST_CASE("archive round trip keeps f64 bit-exact and rejects garbage")
    {
        const auto dir = testutil::scratch_dir("archive");
        Archive a;
        a.manifest["hello"] = "world";
        const Tensor t = random_tensor(Shape{2, 3, 4, 5}, 15);
        a.put("x.w", t);
        a.put("x.f", t, ArrayDtype::f32);
        a.save(dir / "a.bin");
        const Archive b = Archive::load(dir / "a.bin");
        CHECK(b.manifest["hello"] == "world");
        CHECK(max_abs_diff(b.get("x.w"), t) == 0.0);
        CHECK(max_abs_diff(b.get("x.f"), t) < 1e-6);
        CHECK(b.names().size() == 2);
        {
            std::ofstream f(dir / "bad.bin");
            f << "not an archive";
        }
        CHECK_THROWS_AS(Archive::load(dir / "bad.bin"), IoError);
        CHECK_THROWS_AS(Archive::load(dir / "missing.bin"), IoError);
    }
}
