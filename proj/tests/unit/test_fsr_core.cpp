#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "mpsr/fsr_core.hpp"
#include "mpsr/gradcheck.hpp"

using namespace mpsr;
using namespace mpsr::fsr;
using testutil::random_tensor;

namespace {

FsrConfig compact()
{
    FsrConfig c;
    c.feature_channels = 8;
    c.feedback_groups = 2;
    return c;
}

void zero_where(ParamStore& store, const std::string& suffix)
{
    for (const auto& n : store.names())
        if (n.size() >= suffix.size() && n.compare(n.size() - suffix.size(), suffix.size(), suffix) == 0)
            store.get(n).mutable_value().fill(0.0);
}

/// Half-pixel bilinear interpolation written from the formula, with edge
/// clamping.
double bilinear_at(const Tensor& img, int c, int oy, int ox, int factor)
{
    const int h = img.shape().h, w = img.shape().w;
    auto coord = [factor](int o, int n, int& i0, int& i1, double& t) {
        double s = (o + 0.5) / factor - 0.5;
        if (s < 0)
            s = 0;
        i0 = static_cast<int>(std::floor(s));
        if (i0 > n - 1)
            i0 = n - 1;
        i1 = std::min(i0 + 1, n - 1);
        t = s - i0;
    };
    int y0, y1, x0, x1;
    double ty, tx;
    coord(oy, h, y0, y1, ty);
    coord(ox, w, x0, x1, tx);
    const double top = (1 - tx) * img.at(0, c, y0, x0) + tx * img.at(0, c, y0, x1);
    const double bot = (1 - tx) * img.at(0, c, y1, x0) + tx * img.at(0, c, y1, x1);
    return (1 - ty) * top + ty * bot;
}

} // namespace

TEST_SUITE("fsr_core")
{
    TEST_CASE("default configuration")
    {
        const FsrConfig c;
        CHECK(c.n_iterations == 3);
        CHECK(c.feature_channels == 48);
        CHECK(c.feedback_groups == 6);
        CHECK(c.scale_factor == 8);
        CHECK(c.sfe_shuffle == 2);
        FsrConfig bad;
        bad.n_iterations = 0;
        CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    }

    TEST_CASE("shallow extraction: shape and linearity at zero")
    {
        ParamStore store;
        Initializer init(1);
        const FsrNet net(store, init, FsrConfig{});
        const Var f = net.shallow_extract(ag::constant(random_tensor(Shape{1, 3, 16, 16}, 2)));
        CHECK(f.shape() == Shape{1, 48, 32, 32});
        zero_where(store, "sfe.conv.b");
        CHECK(net.shallow_extract(ag::constant(Tensor(Shape{1, 3, 16, 16}))).value().max_abs() == 0.0);
        CHECK_THROWS(net.shallow_extract(ag::constant(Tensor(Shape{1, 4, 16, 16}))));
    }

    TEST_CASE("PERB: first-step shape, zero weights, feedback sensitivity")
    {
        ParamStore store;
        Initializer init(3);
        const FsrNet net(store, init, FsrConfig{});
        const Var sf = net.shallow_extract(ag::constant(random_tensor(Shape{1, 3, 16, 16}, 4)));
        const Var h1 = net.perb_forward(sf, Var(), PriorTensor{});
        CHECK(h1.shape() == Shape{1, 48, 32, 32});

        const Tensor fb = random_tensor(Shape{1, 48, 32, 32}, 5);
        Tensor fb2 = fb;
        fb2[1234] += 1e-3;
        const Tensor a = net.perb_forward(sf, ag::constant(fb), PriorTensor{}).value();
        const Tensor b = net.perb_forward(sf, ag::constant(fb2), PriorTensor{}).value();
        CHECK(max_abs_diff(a, b) > 0.0);

        PriorTensor wrong{PriorKind::landmark_heatmaps, ag::constant(Tensor(Shape{1, 68, 16, 16}))};
        CHECK_THROWS(net.perb_forward(sf, Var(), wrong));

        for (const auto& n : store.names())
            store.get(n).mutable_value().fill(0.0);
        CHECK(net.perb_forward(sf, ag::constant(fb), PriorTensor{}).value().max_abs() == 0.0);
    }

    TEST_CASE("RECB: shape and zero input")
    {
        ParamStore store;
        Initializer init(6);
        const FsrNet net(store, init, FsrConfig{});
        CHECK(net.recb_forward(ag::constant(random_tensor(Shape{1, 48, 32, 32}, 7))).shape() == Shape{1, 3, 128, 128});
        zero_where(store, ".b");
        CHECK(net.recb_forward(ag::constant(Tensor(Shape{1, 48, 32, 32}))).value().max_abs() == 0.0);
        CHECK_THROWS(net.recb_forward(ag::constant(Tensor(Shape{1, 47, 32, 32}))));
    }

    TEST_CASE("compose_sr and the bilinear oracle")
    {
        const Tensor lr = random_tensor(Shape{1, 3, 16, 16}, 8);
        const Tensor up = bilinear_upsample(lr, 8);
        CHECK(up.shape() == Shape{1, 3, 128, 128});
        CHECK(max_abs_diff(compose_sr(ag::constant(Tensor(up.shape())), up).value(), up) == 0.0);

        const Tensor flat(Shape{1, 3, 16, 16}, 0.37);
        const Tensor flat_up = bilinear_upsample(flat, 8);
        for (double v : flat_up.values())
            REQUIRE(v == doctest::Approx(0.37).epsilon(1e-15));

        const Tensor corner(Shape{1, 1, 2, 2}, std::vector<double>{0.0, 1.0, 0.25, 0.5});
        const Tensor u = bilinear_upsample(corner, 8);
        double worst = 0.0;
        for (int y = 0; y < 16; y++)
            for (int x = 0; x < 16; x++)
                worst = std::max(worst, std::abs(u.at(0, 0, y, x) - bilinear_at(corner, 0, y, x, 8)));
        CHECK(worst < 1e-6);
        CHECK_THROWS(compose_sr(ag::constant(Tensor(Shape{1, 3, 64, 64})), up));
    }

    TEST_CASE("unrolled pass: three 128x128 outputs, exact composition, determinism")
    {
        ParamStore store;
        Initializer init(9);
        const FsrNet net(store, init, FsrConfig{});
        const Tensor lr = random_tensor(Shape{1, 3, 16, 16}, 10);
        std::vector<int> calls;
        const IterationTrace tr = net.forward_unrolled(lr, [&](int t, const IterationTrace& so_far) {
            calls.push_back(t);
            CHECK(static_cast<int>(so_far.sr_images.size()) == t - 1);
            return PriorTensor{};
        });
        CHECK(calls == std::vector<int>{2, 3});
        REQUIRE(tr.sr_images.size() == 3);
        CHECK(tr.residuals.size() == 3);
        CHECK(tr.hidden.size() == 3);
        CHECK(tr.shallow.size() == 3);
        for (int t = 0; t < 3; t++) {
            CHECK(tr.sr_images[t].shape() == Shape{1, 3, 128, 128});
            CHECK(tr.hidden[t].shape() == Shape{1, 48, 32, 32});
            const Tensor& sr = tr.sr_images[t].value();
            const Tensor& res = tr.residuals[t].value();
            bool exact = true;
            for (std::size_t i = 0; i < sr.size(); i++)
                exact = exact && sr[i] == res[i] + tr.upsampled[i];
            CHECK(exact);
            CHECK(all_finite(sr));
        }
        CHECK(max_abs_diff(tr.upsampled, bilinear_upsample(lr, 8)) == 0.0);

        const IterationTrace again = net.forward_unrolled(lr);
        for (int t = 0; t < 3; t++)
            CHECK(max_abs_diff(again.sr_images[t].value(), tr.sr_images[t].value()) == 0.0);
    }

    TEST_CASE("feedback efficacy: zeroing the previous hidden state changes later steps")
    {
        ParamStore store;
        Initializer init(11);
        const FsrNet net(store, init, FsrConfig{});
        const Tensor lr = random_tensor(Shape{1, 3, 16, 16}, 12);
        const IterationTrace tr = net.forward_unrolled(lr);
        for (int t = 1; t < 3; t++) {
            const Var without = net.perb_forward(tr.shallow[t], ag::constant(Tensor(tr.hidden[t - 1].shape())), {});
            const Tensor sr0 = compose_sr(net.recb_forward(without), tr.upsampled).value();
            CHECK(max_abs_diff(sr0, tr.sr_images[t].value()) > 1e-8);
        }
    }

    TEST_CASE("small initial residuals keep the output near bilinear")
    {
        ParamStore store;
        Initializer init(13);
        const FsrNet net(store, init, FsrConfig{});
        const Tensor lr = random_tensor(Shape{1, 3, 16, 16}, 14);
        const IterationTrace tr = net.forward_unrolled(lr);
        CHECK(max_abs_diff(tr.sr_images.back().value(), tr.upsampled) < 0.25);
        zero_where(store, "recb.out.w");
        zero_where(store, "recb.out.b");
        CHECK(max_abs_diff(net.forward_unrolled(lr).sr_images.back().value(), tr.upsampled) == 0.0);
    }

    TEST_CASE("gradient of sum(sr3^2) matches central differences")
    {
        ParamStore store;
        Initializer init(15);
        const FsrNet net(store, init, compact());
        const Tensor lr = random_tensor(Shape{1, 3, 16, 16}, 16);
        std::vector<GradTarget> targets;
        for (const auto& n : store.names())
            targets.push_back({n, store.get(n)});
        GradCheckOptions opt;
        opt.samples = 32;
        opt.step = 1e-3;
        opt.tolerance = 1e-3;
        opt.max_kink_redraws = 3;
        const auto probes = check_gradients(
            [&] {
                const Var sr = net.forward_unrolled(lr).sr_images.back();
                return ops::sum(ops::mul(sr, sr));
            },
            targets, opt);
        CHECK(probes.size() == 32);
        for (const auto& p : probes) {
            INFO(p.name << "[" << p.index << "] a=" << p.analytic << " n=" << p.numeric << " rel=" << p.rel_error
                        << " kink=" << p.straddles_kink);
            CHECK(p.pass);
        }
    }
}
