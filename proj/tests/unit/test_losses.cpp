#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "mpsr/gradcheck.hpp"
#include "mpsr/losses.hpp"

using namespace mpsr;
using namespace mpsr::losses;
using testutil::random_tensor;

namespace {

Tensor vec(std::vector<double> v)
{
    const int k = static_cast<int>(v.size());
    return Tensor(Shape{1, k, 1, 1}, std::move(v));
}

double value(const Var& v)
{
    return v.item();
}

class Scaled : public FeatureExtractor {
public:
    Scaled(const FeatureExtractor& inner, double k) : inner_(inner), k_(k) {}
    Var features(const Var& image) const override { return ops::scale(inner_.features(image), k_); }

private:
    const FeatureExtractor& inner_;
    double k_;
};

} // namespace

TEST_SUITE("losses")
{
    TEST_CASE("heatmap loss")
    {
        const Tensor gt = random_tensor(Shape{2, 68, 64, 64}, 1);
        CHECK(value(heatmap_loss(ag::constant(gt), ag::constant(gt))) == 0.0);
        Tensor off = gt;
        for (double& v : off.values())
            v += 0.1;
        CHECK(value(heatmap_loss(ag::constant(off), ag::constant(gt))) == doctest::Approx(0.01).epsilon(1e-9));

        const Tensor pred = random_tensor(gt.shape(), 2);
        double acc = 0.0;
        for (std::size_t i = 0; i < gt.size(); i++)
            acc += (pred[i] - gt[i]) * (pred[i] - gt[i]);
        CHECK(std::abs(value(heatmap_loss(ag::constant(pred), ag::constant(gt))) - acc / gt.size()) < 1e-9);
        CHECK_THROWS(heatmap_loss(ag::constant(pred), ag::constant(Tensor(Shape{2, 68, 32, 32}))));
    }

    TEST_CASE("weighted cross-entropy closed forms")
    {
        CHECK(value(weighted_cross_entropy(vec({1}), ag::constant(vec({0.5})), {1.0})) ==
              doctest::Approx(std::log(2.0)).epsilon(1e-12));
        CHECK(value(weighted_cross_entropy(vec({0}), ag::constant(vec({1e-9})), {1.0})) < 1e-8);
        const double expect = -(4.0 / 3) * std::log(0.9) - (2.0 / 3) * std::log(0.8);
        const double got = value(weighted_cross_entropy(vec({1, 0}), ag::constant(vec({0.9, 0.2})), {4.0 / 3, 2.0 / 3}));
        CHECK(std::abs(got - expect) < 1e-12);
        CHECK(std::abs(got - 0.2892) < 1e-4);
        CHECK_THROWS(weighted_cross_entropy(vec({1, 0}), ag::constant(vec({0.5})), {1.0, 1.0}));
        CHECK_THROWS(weighted_cross_entropy(vec({1, 0}), ag::constant(vec({0.5, 0.5})), {1.0}));

        // logs clamp instead of producing inf
        const double clamped = value(weighted_cross_entropy(vec({1}), ag::constant(vec({0.0})), {1.0}));
        CHECK(std::isfinite(clamped));
        CHECK(clamped == doctest::Approx(-std::log(kLogFloor)));
    }

    TEST_CASE("printed cross-entropy variant")
    {
        // -w [p log p + (1 - y) log(1 - p)]
        const double got = value(weighted_cross_entropy(vec({1, 0}), ag::constant(vec({0.9, 0.2})), {1.0, 2.0},
                                                        CrossEntropyForm::printed));
        const double expect = -(0.9 * std::log(0.9)) - 2.0 * (0.2 * std::log(0.2) + std::log(0.8));
        CHECK(std::abs(got - expect) < 1e-12);
    }

    TEST_CASE("dice loss")
    {
        CHECK(value(dice_loss(vec({1}), ag::constant(vec({1})), {1.0}, 0.3)) == 0.0);
        CHECK(value(dice_loss(vec({0}), ag::constant(vec({0})), {1.0}, 0.3)) == 0.0);
        CHECK(value(dice_loss(vec({1}), ag::constant(vec({0.5})), {1.0}, 1.0)) ==
              doctest::Approx(1.0 - 2.0 / 2.25).epsilon(1e-12));
        CHECK(std::abs(value(dice_loss(vec({1}), ag::constant(vec({0.5})), {1.0}, 1.0)) - 0.1111) < 1e-4);

        // symmetric in (y, p) for scalars in [0, 1]
        std::mt19937_64 rng(3);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (int i = 0; i < 20; i++) {
            const double a = u(rng), b = u(rng);
            CHECK(value(dice_loss(vec({a}), ag::constant(vec({b})), {1.0}, 1.0)) ==
                  doctest::Approx(value(dice_loss(vec({b}), ag::constant(vec({a})), {1.0}, 1.0))).epsilon(1e-14));
        }
        CHECK_THROWS(dice_loss(vec({1}), ag::constant(vec({0.5})), {1.0}, 0.0));
        CHECK_THROWS(dice_loss(vec({1, 1}), ag::constant(vec({0.5})), {1.0}, 1.0));
    }

    TEST_CASE("AU loss is cross-entropy plus Dice")
    {
        const Tensor y(Shape{3, 12, 1, 1}, [] {
            std::vector<double> v(36);
            for (int i = 0; i < 36; i++)
                v[i] = (i * 7) % 3 == 0 ? 1.0 : 0.0;
            return v;
        }());
        const Tensor p = random_tensor(y.shape(), 4, 0.02, 0.98);
        std::vector<double> w(12);
        for (int i = 0; i < 12; i++)
            w[i] = 0.5 + 0.1 * i;
        const double total = value(au_loss(y, ag::constant(p), w));
        const double parts = value(weighted_cross_entropy(y, ag::constant(p), w)) + value(dice_loss(y, ag::constant(p), w));
        CHECK(std::abs(total - parts) < 1e-12);
        CHECK(value(au_loss(y, ag::constant(y), w)) < 1e-9);
    }

    TEST_CASE("AU loss gradient with respect to logits")
    {
        const Tensor y(Shape{2, 4, 1, 1}, std::vector<double>{1, 0, 0, 1, 0, 1, 1, 0});
        const Var logits = ag::leaf(random_tensor(y.shape(), 5, -2, 2));
        const std::vector<double> w{1.2, 0.8, 1.0, 0.6};
        GradCheckOptions opt;
        opt.samples = 8;
        opt.step = 1e-5;
        opt.tolerance = 1e-4;
        opt.tensor_scale_floor = false;
        for (auto form : {CrossEntropyForm::standard, CrossEntropyForm::printed}) {
            const auto probes = check_gradients([&] { return au_loss(y, ops::sigmoid(logits), w, 1.0, form); },
                                                {{"logits", logits}}, opt);
            for (const auto& pr : probes) {
                INFO(pr.index << " a=" << pr.analytic << " n=" << pr.numeric);
                CHECK(pr.rel_error < 1e-4);
            }
        }
    }

    TEST_CASE("reconstruction loss averages per-step MSE")
    {
        const Tensor hr = random_tensor(Shape{2, 3, 8, 8}, 6);
        CHECK(value(reconstruction_loss({ag::constant(hr), ag::constant(hr), ag::constant(hr)}, hr)) == 0.0);
        const Tensor a = random_tensor(hr.shape(), 7), b = random_tensor(hr.shape(), 8), c = random_tensor(hr.shape(), 9);
        const double ma = value(ops::mse(ag::constant(a), ag::constant(hr)));
        const double mb = value(ops::mse(ag::constant(b), ag::constant(hr)));
        const double mc = value(ops::mse(ag::constant(c), ag::constant(hr)));
        CHECK(value(reconstruction_loss({ag::constant(a)}, hr)) == doctest::Approx(ma).epsilon(1e-15));
        CHECK(value(reconstruction_loss({ag::constant(a), ag::constant(b), ag::constant(c)}, hr)) ==
              doctest::Approx((ma + mb + mc) / 3).epsilon(1e-14));
        CHECK_THROWS(reconstruction_loss({}, hr));
        CHECK_THROWS(reconstruction_loss({ag::constant(Tensor(Shape{2, 3, 4, 4}))}, hr));
    }

    TEST_CASE("perceptual loss")
    {
        const ConvFeatureExtractor phi(7, {6, 8, 8});
        const Tensor hr = random_tensor(Shape{1, 3, 16, 16}, 10);
        const Tensor sr = random_tensor(hr.shape(), 11);
        CHECK(value(perceptual_loss(ag::constant(hr), hr, phi)) == 0.0);
        const double base = value(perceptual_loss(ag::constant(sr), hr, phi));
        CHECK(base > 0.0);
        const Scaled phi3(phi, 3.0);
        CHECK(value(perceptual_loss(ag::constant(sr), hr, phi3)) == doctest::Approx(9.0 * base).epsilon(1e-12));

        Archive ar;
        phi.save(ar);
        const ConvFeatureExtractor loaded(ar);
        CHECK(loaded.stage_count() == 3);
        CHECK(value(perceptual_loss(ag::constant(sr), hr, loaded)) == base);

        const Var x = ag::leaf(sr);
        GradCheckOptions opt;
        opt.samples = 16;
        opt.max_kink_redraws = 8;
        for (const auto& pr : check_gradients([&] { return perceptual_loss(x, hr, phi); }, {{"sr", x}}, opt)) {
            INFO(pr.index << " a=" << pr.analytic << " n=" << pr.numeric);
            CHECK(pr.rel_error < 1e-3);
        }
    }

    TEST_CASE("adversarial losses")
    {
        const Var half = ag::constant(Tensor(Shape{4, 1, 1, 1}, 0.5));
        CHECK(value(generator_adversarial_loss(half)) == doctest::Approx(std::log(2.0)).epsilon(1e-14));
        CHECK(value(discriminator_loss(half, half)) == doctest::Approx(2 * std::log(2.0)).epsilon(1e-14));
        CHECK(std::abs(value(discriminator_loss(half, half)) - 1.3863) < 1e-4);
        const double perfect = value(discriminator_loss(ag::constant(Tensor(Shape{4, 1, 1, 1}, 1.0 - 1e-12)),
                                                        ag::constant(Tensor(Shape{4, 1, 1, 1}, 1e-12))));
        CHECK(perfect >= 0.0);
        CHECK(perfect < 1e-9);
        CHECK(std::isfinite(value(generator_adversarial_loss(ag::constant(Tensor(Shape{1, 1, 1, 1}, 0.0))))));
    }

    TEST_CASE("discriminator outputs lie strictly inside (0, 1)")
    {
        ParamStore store;
        Initializer init(12);
        const Discriminator d(store, init, DiscriminatorConfig{4, 16, 128});
        const Tensor p = d.forward(ag::constant(random_tensor(Shape{3, 3, 128, 128}, 13))).value();
        CHECK(p.shape() == Shape{3, 1, 1, 1});
        for (double v : p.values()) {
            CHECK(v > 0.0);
            CHECK(v < 1.0);
        }
        CHECK(store.names_with_prefix("disc.").size() == 2 * 8 + 4);
    }

    TEST_CASE("overall loss weighting")
    {
        const Var rec = ag::constant(Tensor(Shape{1, 1, 1, 1}, 0.5));
        const Var al = ag::constant(Tensor(Shape{1, 1, 1, 1}, 0.2));
        const Var au = ag::constant(Tensor(Shape{1, 1, 1, 1}, 3.0));
        const Var per = ag::constant(Tensor(Shape{1, 1, 1, 1}, 7.0));
        const Var adv = ag::constant(Tensor(Shape{1, 1, 1, 1}, 0.9));
        const LossParts parts{rec, al, au, per, adv};

        const WeightedLoss psnr = overall_loss(parts, LossWeights::psnr_phase());
        CHECK(value(psnr.total) == doctest::Approx(0.5 + 0.1 * 0.2 + 0.01 * 3.0).epsilon(1e-15));
        CHECK(psnr.breakdown.size() >= 3);

        const WeightedLoss gan = overall_loss(parts, LossWeights::gan_phase());
        CHECK(value(gan.total) == doctest::Approx(0.5 + 0.02 + 0.03 + 0.7 + 0.0009).epsilon(1e-15));

        CHECK(value(overall_loss(parts, LossWeights{0, 0, 0, 0}).total) == 0.5);

        const LossParts doubled{rec, al, ag::constant(Tensor(Shape{1, 1, 1, 1}, 6.0)), per, adv};
        CHECK(value(overall_loss(doubled, LossWeights::psnr_phase()).total) - value(psnr.total) ==
              doctest::Approx(0.03).epsilon(1e-12));

        CHECK(value(overall_loss(LossParts{rec, {}, {}, {}, {}}, LossWeights::gan_phase()).total) == 0.5);

        const LossParts broken{rec, al, ag::constant(Tensor(Shape{1, 1, 1, 1}, NAN)), per, adv};
        try {
            overall_loss(broken, LossWeights::psnr_phase());
            FAIL("expected NonFiniteLoss");
        } catch (const NonFiniteLoss& e) {
            CHECK(e.component() == "au");
        }
        CHECK_THROWS_AS((LossWeights{-0.1, 0, 0, 0}.validate()), std::invalid_argument);
    }

    TEST_CASE("losses are non-negative and finite on valid inputs")
    {
        for (std::uint64_t s = 0; s < 5; s++) {
            const Tensor y = random_tensor(Shape{2, 8, 1, 1}, 100 + s);
            Tensor yb = y;
            for (double& v : yb.values())
                v = v > 0.5 ? 1.0 : 0.0;
            const Var p = ag::constant(random_tensor(y.shape(), 200 + s, 0.001, 0.999));
            const std::vector<double> w(8, 1.0);
            for (double v : {value(weighted_cross_entropy(yb, p, w)), value(dice_loss(yb, p, w)), value(au_loss(yb, p, w)),
                             value(generator_adversarial_loss(p)), value(discriminator_loss(p, p))}) {
                CHECK(std::isfinite(v));
                CHECK(v >= 0.0);
            }
        }
    }
}
