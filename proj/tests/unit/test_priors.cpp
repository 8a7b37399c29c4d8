#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "mpsr/losses.hpp"
#include "mpsr/priors.hpp"
#include "mpsr/train.hpp"

using namespace mpsr;
using namespace mpsr::priors;
using testutil::random_tensor;

namespace {

AlignConfig small_align()
{
    return AlignConfig{8, 1, 2, 4, 68};
}

data::LandmarkSet all_at(double x, double y)
{
    data::LandmarkSet lm{};
    for (auto& p : lm)
        p = {x, y};
    return lm;
}

} // namespace

TEST_SUITE("priors")
{
    TEST_CASE("alignment network output shape and stack sensitivity")
    {
        ParamStore store;
        Initializer init(1);
        const AlignNet net(store, init, AlignConfig{});
        const Var img = ag::constant(random_tensor(Shape{1, 3, 128, 128}, 2));
        const Var h = net.forward(img);
        CHECK(h.shape() == Shape{1, 68, 64, 64});
        CHECK(all_finite(h.value()));
        const Var first_only = net.forward(img, 1);
        CHECK(max_abs_diff(first_only.value(), h.value()) > 0.0);
        CHECK_THROWS(net.forward(ag::constant(Tensor(Shape{1, 3, 100, 100}))));
    }

    TEST_CASE("decoding a rendered Gaussian recovers its centre")
    {
        const Tensor hm = data::render_heatmaps(all_at(40.0, 60.0), 64, 1.5);
        const auto lm = decode_heatmaps(hm);
        REQUIRE(lm.size() == 1);
        CHECK(std::abs(lm[0][0].x - 40.0) <= 0.5);
        CHECK(std::abs(lm[0][0].y - 60.0) <= 0.5);

        // round trip for interior points at 64x64: within 1 px
        std::mt19937_64 rng(3);
        std::uniform_real_distribution<double> u(8.0, 120.0);
        data::LandmarkSet pts{};
        for (auto& p : pts)
            p = {u(rng), u(rng)};
        const auto back = decode_heatmaps(data::render_heatmaps(pts, 64, 1.5))[0];
        for (int k = 0; k < 68; k++) {
            CHECK(std::abs(back[k].x - pts[k].x) <= 1.0);
            CHECK(std::abs(back[k].y - pts[k].y) <= 1.0);
            CHECK(back[k].x >= 0.0);
            CHECK(back[k].x < 128.0);
        }
    }

    TEST_CASE("AU classifier emits one logit per AU")
    {
        for (int n_au : {12, 8}) {
            ParamStore store;
            Initializer init(4);
            const AuNet net(store, init, AuConfig{n_au, 8, 2});
            CHECK(net.forward(ag::constant(random_tensor(Shape{2, 3, 128, 128}, 5))).shape() == Shape{2, n_au, 1, 1});
        }
        const Tensor logits(Shape{1, 3, 1, 1}, std::vector<double>{0.0, std::log(3.0), -std::log(3.0)});
        const Tensor p = ops::sigmoid(ag::constant(logits)).value();
        CHECK(p[0] == doctest::Approx(0.5).epsilon(1e-15));
        CHECK(p[1] == doctest::Approx(0.75).epsilon(1e-15));
        CHECK(p[2] == doctest::Approx(0.25).epsilon(1e-15));
    }

    TEST_CASE("attention ramp values")
    {
        const AuRuleTable t = AuRuleTable::parse("version 1\nAU1: center = midpoint(0,1) offset (0,0)\n");
        data::LandmarkSet lm = all_at(10.0, 10.0);
        lm[0] = {40.0, 50.0};
        lm[1] = {44.0, 50.0};
        const Tensor a = build_au_attention(lm, t, {1}, 4.0);
        CHECK(a.shape() == Shape{1, 1, 128, 128});
        CHECK(a.at(0, 0, 50, 42) == 1.0);
        CHECK(a.at(0, 0, 50, 54) == 0.0);            // Manhattan 12 = 3 sigma
        CHECK(a.at(0, 0, 53, 45) == 0.5);            // Manhattan 6
        CHECK(a.at(0, 0, 50, 48) == doctest::Approx(0.5));
        CHECK_THROWS_AS(build_au_attention(lm, t, {2}, 4.0), std::invalid_argument);
    }

    TEST_CASE("attention matches the ramp formula everywhere and is local")
    {
        for (int n_au : {12, 8}) {
            const AuRuleTable table = AuRuleTable::builtin(n_au);
            const auto& ids = data::au_ids(n_au);
            std::mt19937_64 rng(0);
            const data::Sample s = data::align_and_augment(data::generate_synthetic_sample(7, n_au), false, rng);
            const double sigma = 4.0;
            const Tensor att = build_au_attention(s.landmarks, table, ids, sigma);
            REQUIRE(att.shape() == Shape{1, n_au, 128, 128});
            for (int i = 0; i < n_au; i++) {
                const AuRule& rule = table.find(ids[i]);
                REQUIRE(!rule.centers.empty());
                REQUIRE(rule.centers.size() <= 2);
                std::vector<data::Point2> centres;
                for (const auto& c : rule.centers)
                    centres.push_back({(s.landmarks[c.landmark_a].x + s.landmarks[c.landmark_b].x) / 2 + c.dx,
                                       (s.landmarks[c.landmark_a].y + s.landmarks[c.landmark_b].y) / 2 + c.dy});
                double worst = 0.0;
                bool local = true;
                for (int y = 0; y < 128; y++)
                    for (int x = 0; x < 128; x++) {
                        double dmin = 1e300;
                        for (const auto& c : centres)
                            dmin = std::min(dmin, std::abs(x - c.x) + std::abs(y - c.y));
                        const double expect = std::max(0.0, 1.0 - dmin / (3 * sigma));
                        const double got = att.at(0, i, y, x);
                        worst = std::max(worst, std::abs(expect - got));
                        if (dmin > 3 * sigma && got != 0.0)
                            local = false;
                        if (got < 0.0 || got > 1.0)
                            local = false;
                    }
                CHECK(worst < 1e-12);
                CHECK(local);
            }
        }
    }

    TEST_CASE("rule table parsing")
    {
        const AuRuleTable t = AuRuleTable::parse(
            "# comment\nversion 1\nAU6: center = midpoint(1,15) offset (0,-2); center = midpoint(2,3) offset (1.5,0)\n");
        CHECK(t.version() == 1);
        REQUIRE(t.rules().size() == 1);
        CHECK(t.find(6).centers.size() == 2);
        CHECK(t.find(6).centers[1].dx == 1.5);
        CHECK_THROWS_AS(t.find(7), std::invalid_argument);
        CHECK_THROWS_AS(AuRuleTable::parse("version 1\nAU1: centre = nowhere\n"), std::invalid_argument);
        CHECK_THROWS_AS(AuRuleTable::parse("AU1: center = midpoint(0,1) offset (0,0)\n"), std::invalid_argument);
        CHECK_THROWS_AS(AuRuleTable::parse("version 1\nAU1: center = midpoint(0,99) offset (0,0)\n"),
                        std::invalid_argument);
        for (int n : {12, 8})
            for (int id : data::au_ids(n))
                CHECK_NOTHROW(AuRuleTable::builtin(n).find(id));
        CHECK(data::au_ids(12) == std::vector<int>{1, 2, 4, 6, 7, 10, 12, 14, 15, 17, 23, 24});
        CHECK(data::au_ids(8) == std::vector<int>{1, 2, 4, 6, 9, 12, 25, 26});
    }

    TEST_CASE("AU prior maps")
    {
        const Tensor att = random_tensor(Shape{2, 4, 128, 128}, 8);
        const Var zeros = ag::constant(Tensor(Shape{2, 4, 1, 1}));
        const fsr::PriorTensor z = au_prior_maps(zeros, att, 32);
        CHECK(z.kind == fsr::PriorKind::au_maps);
        CHECK(z.maps.shape() == Shape{2, 4, 32, 32});
        CHECK(z.maps.value().max_abs() == 0.0);

        const Tensor v = random_tensor(Shape{2, 4, 1, 1}, 9);
        const fsr::PriorTensor c = au_prior_maps(ag::constant(v), Tensor(att.shape(), 1.0), 32);
        for (int n = 0; n < 2; n++)
            for (int k = 0; k < 4; k++)
                for (int i = 0; i < 32 * 32; i++)
                    REQUIRE(c.maps.value().plane_ptr(n, k)[i] == doctest::Approx(v.at(n, k, 0, 0)).epsilon(1e-14));

        Tensor masked = att;
        for (int n = 0; n < 2; n++)
            for (int i = 0; i < 128 * 128; i++)
                masked.plane_ptr(n, 2)[i] = 0.0;
        Tensor v2 = v;
        v2.at(0, 2, 0, 0) = 0.9;
        v2.at(1, 2, 0, 0) = 0.1;
        CHECK(max_abs_diff(au_prior_maps(ag::constant(v), masked, 32).maps.value(),
                           au_prior_maps(ag::constant(v2), masked, 32).maps.value()) == 0.0);
        CHECK_THROWS(au_prior_maps(ag::constant(Tensor(Shape{2, 3, 1, 1})), att, 32));
    }

    TEST_CASE("landmark prior maps")
    {
        const fsr::PriorTensor c = landmark_prior_maps(ag::constant(Tensor(Shape{1, 68, 64, 64}, 0.3)), 32);
        CHECK(c.kind == fsr::PriorKind::landmark_heatmaps);
        CHECK(c.maps.shape() == Shape{1, 68, 32, 32});
        for (double x : c.maps.value().values())
            REQUIRE(x == doctest::Approx(0.3).epsilon(1e-15));
        Tensor block(Shape{1, 68, 64, 64});
        block.at(0, 0, 0, 0) = 1.0;
        CHECK(landmark_prior_maps(ag::constant(block), 32).maps.value().at(0, 0, 0, 0) == 0.25);
    }

    TEST_CASE("AU loss on sr2 reaches the SR branch parameters")
    {
        train::TrainConfig cfg;
        cfg.fsr.feature_channels = 8;
        cfg.fsr.feedback_groups = 2;
        cfg.align = small_align();
        cfg.au = AuConfig{12, 8, 1};
        const train::Generator g(cfg);
        std::mt19937_64 rng(0);
        std::vector<data::Sample> s{data::align_and_augment(data::generate_synthetic_sample(1, 12), false, rng)};
        const data::Batch b = data::make_batch(s);
        const train::JointForward jf = train::joint_forward(g, cfg, AuRuleTable::builtin(12), b.lr);
        REQUIRE(jf.au_probs.defined());
        for (double p : jf.au_probs.value().values()) {
            CHECK(p > 0.0);
            CHECK(p < 1.0);
        }
        ag::backward(losses::au_loss(b.au_labels, jf.au_probs, std::vector<double>(12, 1.0)));
        bool reached = false;
        for (const auto& n : g.store.names_with_prefix("fsr."))
            if (g.store.get(n).has_grad() && g.store.get(n).grad().max_abs() > 0.0)
                reached = true;
        CHECK(reached);
    }
}
