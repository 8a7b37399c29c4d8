#include <doctest.h>

#include <cmath>
#include <fstream>

#include "helpers.hpp"
#include "mpsr/train.hpp"

using namespace mpsr;
using namespace mpsr::train;
using testutil::random_tensor;

namespace {

TrainConfig tiny()
{
    TrainConfig c;
    for (const auto& [k, v] : std::vector<std::pair<std::string, std::string>>{
             {"fsr_channels", "8"},   {"fsr_groups", "2"},      {"align_channels", "8"},  {"align_blocks", "1"},
             {"au_width", "4"},       {"au_blocks", "1"},       {"disc_width", "4"},      {"disc_dense", "16"},
             {"perceptual_widths", "4,4,4"}, {"synth_subjects", "2"}, {"synth_frames", "4"}, {"batch_size", "2"},
             {"eval_split", "train"}, {"max_steps", "3"},       {"eval_every", "1"},      {"seed", "5"}})
        apply_setting(c, k, v);
    return c;
}

std::vector<std::string> read_lines(const std::filesystem::path& p)
{
    std::ifstream in(p);
    std::vector<std::string> out;
    for (std::string l; std::getline(in, l);)
        if (!l.empty())
            out.push_back(l);
    return out;
}

nlohmann::json without_time(nlohmann::json j)
{
    j.erase("elapsed_s");
    return j;
}

struct Fixture {
    TrainConfig cfg = tiny();
    data::Dataset ds = load_dataset(cfg);
    priors::AuRuleTable rules = priors::AuRuleTable::builtin(12);
    data::Batch batch;

    Fixture()
    {
        std::mt19937_64 rng(0);
        std::vector<data::Sample> s;
        for (int i = 0; i < 2; i++)
            s.push_back(data::align_and_augment(ds.samples()[i], false, rng));
        batch = data::make_batch(s);
    }

    StepContext context(const losses::FeatureExtractor* phi = nullptr) const
    {
        StepContext ctx;
        ctx.config = &cfg;
        ctx.rules = &rules;
        ctx.au_weights = data::compute_au_weights(ds.occurrence_rates(ds.all_indices()));
        ctx.phi = phi;
        return ctx;
    }
};

std::vector<std::string> names_of(const StepResult& r)
{
    std::vector<std::string> out;
    for (const auto& [k, v] : r.losses)
        out.push_back(k);
    return out;
}

} // namespace

TEST_SUITE("train")
{
    TEST_CASE("configuration files, overrides and serialisation")
    {
        const auto dir = testutil::scratch_dir("config");
        {
            std::ofstream base(dir / "base.cfg");
            base << "# base\nlr = 0.01\nbatch_size = 3\nuse_attention = false\n";
            std::ofstream top(dir / "top.cfg");
            top << "include = base.cfg\nbatch_size = 5   # later lines win\nlambda_au = 0.5\n";
            std::ofstream bad(dir / "bad.cfg");
            bad << "lr = 0.1\nno_such_key = 1\n";
            std::ofstream garbled(dir / "garbled.cfg");
            garbled << "lr 0.1\n";
        }
        TrainConfig c;
        load_config_file(c, dir / "top.cfg");
        CHECK(c.lr == 0.01);
        CHECK(c.batch_size == 5);
        CHECK_FALSE(c.ablation.use_attention);
        CHECK(c.weights().au == 0.5);
        CHECK(c.weights().align == 0.1);

        TrainConfig d;
        try {
            load_config_file(d, dir / "bad.cfg");
            FAIL("expected an error");
        } catch (const std::invalid_argument& e) {
            CHECK(std::string(e.what()).find("bad.cfg:2") != std::string::npos);
            CHECK(std::string(e.what()).find("no_such_key") != std::string::npos);
        }
        CHECK_THROWS_AS(load_config_file(d, dir / "garbled.cfg"), std::invalid_argument);
        CHECK_THROWS_AS(load_config_file(d, dir / "missing.cfg"), std::invalid_argument);
        CHECK_THROWS_AS(apply_setting(d, "batch_size", "many"), std::invalid_argument);
        CHECK_THROWS_AS(apply_setting(d, "phase", "warmup"), std::invalid_argument);

        TrainConfig e;
        e.n_au = 9;
        CHECK_THROWS_AS(e.validate(), std::invalid_argument);

        const TrainConfig round = config_from_json(to_json(c));
        CHECK(settings(round) == settings(c));

        for (const char* name : {"desk.cfg", "smoke.cfg", "gan.cfg"}) {
            TrainConfig shipped;
            CHECK_NOTHROW(load_config_file(shipped, std::filesystem::path(MPSR_SOURCE_DIR) / "configs" / name));
            CHECK_NOTHROW(shipped.validate());
        }
    }

    TEST_CASE("phase loss weights")
    {
        TrainConfig c;
        CHECK(c.weights().per == 0.0);
        CHECK(c.weights().adv == 0.0);
        c.phase = Phase::gan;
        CHECK(c.weights().per == 0.1);
        CHECK(c.weights().adv == 0.001);
        CHECK(c.weights().align == 0.1);
        CHECK(c.weights().au == 0.01);
    }

    TEST_CASE("Adam update closed forms and multi-step oracle")
    {
        const AdamHyper h{0.01, 0.9, 0.999, 1e-8};
        Tensor p(Shape{1, 1, 1, 3}, std::vector<double>{1.0, -2.0, 0.5});
        const Tensor g(Shape{1, 1, 1, 3}, std::vector<double>{0.3, -4.0, 0.0});
        Tensor m(p.shape()), v(p.shape());
        adam_update(p, g, m, v, 1, h);
        // t = 1: m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
        CHECK(p[0] == doctest::Approx(1.0 - 0.01 * 0.3 / (0.3 + 1e-8)).epsilon(1e-15));
        CHECK(p[1] == doctest::Approx(-2.0 + 0.01 * 4.0 / (4.0 + 1e-8)).epsilon(1e-15));
        CHECK(p[2] == 0.5);
        CHECK_THROWS(adam_update(p, g, m, v, 0, h));

        std::mt19937_64 rng(1);
        std::normal_distribution<double> n(0.0, 1.0);
        Tensor q(Shape{1, 1, 1, 4});
        Tensor mq(q.shape()), vq(q.shape());
        double ref[4] = {0, 0, 0, 0}, rm[4] = {0, 0, 0, 0}, rv[4] = {0, 0, 0, 0};
        for (long t = 1; t <= 100; t++) {
            Tensor grad(q.shape());
            for (int i = 0; i < 4; i++)
                grad[i] = n(rng);
            adam_update(q, grad, mq, vq, t, h);
            for (int i = 0; i < 4; i++) {
                rm[i] = 0.9 * rm[i] + 0.1 * grad[i];
                rv[i] = 0.999 * rv[i] + 0.001 * grad[i] * grad[i];
                const double mh = rm[i] / (1 - std::pow(0.9, t)), vh = rv[i] / (1 - std::pow(0.999, t));
                ref[i] -= 0.01 * mh / (std::sqrt(vh) + 1e-8);
            }
        }
        for (int i = 0; i < 4; i++)
            CHECK(std::abs(q[i] - ref[i]) < 1e-10);
    }

    TEST_CASE("Adam over a store: missing gradients leave parameters still, state round-trips")
    {
        ParamStore s;
        Var a = s.add("a", Tensor(Shape{1, 1, 1, 2}, 1.0));
        s.add("b", Tensor(Shape{1, 1, 1, 2}, 2.0));
        Adam opt(s, AdamHyper{0.1, 0.9, 0.999, 1e-8});
        ag::backward(ops::sum(ops::mul(a, a)));
        opt.step(s);
        CHECK(s.get("a").value()[0] < 1.0);
        CHECK(s.get("b").value()[0] == 2.0);
        CHECK(opt.time() == 1);
        Archive ar;
        opt.save(ar, "opt.");
        Adam other(s, AdamHyper{0.1, 0.9, 0.999, 1e-8});
        other.load(ar, "opt.");
        CHECK(other.time() == 1);
    }

    TEST_CASE("training step loss breakdown per phase")
    {
        Fixture f;
        Generator g(f.cfg);
        Adam opt(g.store, AdamHyper{});
        const StepContext ctx = f.context();
        const StepResult r = train_step(g, opt, nullptr, nullptr, f.batch, ctx);
        CHECK(names_of(r) == std::vector<std::string>{"rec", "align", "au"});
        CHECK(std::isfinite(r.total));
        CHECK(r.d_accuracy < 0);
        const double expect = r.losses[0].second + 0.1 * r.losses[1].second + 0.01 * r.losses[2].second;
        CHECK(r.total == doctest::Approx(expect).epsilon(1e-12));

        f.cfg.phase = Phase::gan;
        Critic d(f.cfg);
        Adam d_opt(d.store, AdamHyper{});
        const losses::ConvFeatureExtractor phi(3, {4, 4, 4});
        const StepContext gctx = f.context(&phi);
        const StepResult rg = train_step(g, opt, &d, &d_opt, f.batch, gctx);
        CHECK(names_of(rg) == std::vector<std::string>{"rec", "align", "au", "per", "adv_G", "adv_D"});
        CHECK(rg.d_accuracy >= 0.0);
        CHECK(rg.d_accuracy <= 1.0);
        CHECK_THROWS_AS(train_step(g, opt, nullptr, nullptr, f.batch, gctx), std::invalid_argument);
    }

    TEST_CASE("ablation gating of the joint forward pass")
    {
        Fixture f;
        f.cfg.ablation = Ablation{false, false, false};
        Generator g(f.cfg);
        Adam opt(g.store, AdamHyper{});
        const JointForward jf = joint_forward(g, f.cfg, f.rules, f.batch.lr);
        CHECK_FALSE(jf.heatmaps.defined());
        CHECK_FALSE(jf.au_probs.defined());
        const StepResult r = train_step(g, opt, nullptr, nullptr, f.batch, f.context());
        CHECK(r.total == r.losses[0].second);
        CHECK(r.losses[1].second == 0.0);
        CHECK(r.losses[2].second == 0.0);

        f.cfg.ablation = Ablation{true, false, false};
        const JointForward lm = joint_forward(g, f.cfg, f.rules, f.batch.lr);
        CHECK(lm.heatmaps.defined());
        CHECK_FALSE(lm.au_probs.defined());

        f.cfg.ablation = Ablation{false, true, false};
        const JointForward au = joint_forward(g, f.cfg, f.rules, f.batch.lr);
        CHECK_FALSE(au.heatmaps.defined());
        REQUIRE(au.au_probs.defined());
        for (double v : au.attention.values())
            REQUIRE(v == 1.0);

        f.cfg.ablation = Ablation{false, true, true};
        const JointForward att = joint_forward(g, f.cfg, f.rules, f.batch.lr);
        CHECK(att.heatmaps.defined());
        CHECK(att.attention.shape() == Shape{2, 12, 128, 128});
    }

    TEST_CASE("training steps are deterministic")
    {
        Fixture f;
        Generator g1(f.cfg), g2(f.cfg);
        Adam o1(g1.store, AdamHyper{1e-3}), o2(g2.store, AdamHyper{1e-3});
        for (int i = 0; i < 2; i++) {
            const StepResult a = train_step(g1, o1, nullptr, nullptr, f.batch, f.context());
            const StepResult b = train_step(g2, o2, nullptr, nullptr, f.batch, f.context());
            CHECK(a.total == b.total);
        }
        for (const auto& n : g1.store.names())
            REQUIRE(max_abs_diff(g1.store.get(n).value(), g2.store.get(n).value()) == 0.0);
    }

    TEST_CASE("splits")
    {
        TrainConfig c = tiny();
        c.synth_subjects = 3;
        const data::Dataset ds = load_dataset(c);
        const Split tr = make_split(ds, c);
        CHECK(tr.eval_is_train);
        CHECK(tr.train.size() == ds.size());

        c.eval_split = "fold";
        c.n_folds = 3;
        const data::Dataset ds3 = load_dataset(c);
        const Split fold = make_split(ds3, c);
        CHECK(fold.eval.size() + fold.train.size() == ds3.size());
        for (std::size_t i : fold.eval)
            CHECK(std::find(fold.train.begin(), fold.train.end(), i) == fold.train.end());

        c.eval_split = "holdout";
        c.holdout_fraction = 0.25;
        const Split h = make_split(ds3, c);
        CHECK(h.eval.size() == 3);
        CHECK_FALSE(h.eval_is_train);
        c.holdout_fraction = 0.0;
        CHECK(make_split(ds3, c).eval_is_train);
    }

    TEST_CASE("GAN phase requires an initial checkpoint")
    {
        TrainConfig c = tiny();
        c.phase = Phase::gan;
        TrainOptions o;
        o.out_dir = testutil::scratch_dir("gan_noinit");
        o.quiet = true;
        CHECK_THROWS_AS(run_training(c, o), std::invalid_argument);
    }

    TEST_CASE("short run: logs, history, checkpoints and exact resume")
    {
        const TrainConfig c = tiny();
        TrainOptions o;
        o.out_dir = testutil::scratch_dir("run_full");
        o.quiet = true;
        long calls = 0;
        o.on_step = [&](long, const StepResult&) { calls++; };
        const TrainResult full = run_training(c, o);
        CHECK(calls == 3);
        CHECK(full.steps == 3);
        REQUIRE(full.history.size() == 3);
        for (int i = 0; i < 3; i++) {
            CHECK(full.history[i].step == i + 1);
            const auto& rows = full.history[i].report.steps;
            REQUIRE(rows.size() == 4);
            CHECK(rows[0].label == "bicubic");
            for (int s = 1; s <= 3; s++)
                CHECK(rows[s].step == s);
        }
        const auto lines = read_lines(o.out_dir / "train_log.jsonl");
        REQUIRE(lines.size() == 3);
        const auto first = nlohmann::json::parse(lines[0]);
        CHECK(first["step"] == 1);
        CHECK(first.contains("loss_rec"));
        CHECK(first.contains("loss_total"));
        CHECK(std::filesystem::exists(o.out_dir / "last.ckpt"));
        CHECK(std::filesystem::exists(o.out_dir / "best.ckpt"));
        std::ifstream hist(o.out_dir / "history.json");
        CHECK(nlohmann::json::parse(hist).size() == 3);

        // checkpoint round trip
        const Archive last = Archive::load(o.out_dir / "last.ckpt");
        const CheckpointInfo info = read_checkpoint_info(last);
        CHECK(info.step == 3);
        CHECK(settings(info.config) == settings(c));
        Generator g(c);
        load_generator(last, g);
        Generator fresh(c);
        bool moved = false;
        for (const auto& n : g.store.names())
            moved = moved || max_abs_diff(g.store.get(n).value(), fresh.store.get(n).value()) > 0.0;
        CHECK(moved);
        CHECK(max_abs_diff(g.store.get("fsr.sfe.conv.w").value(), last.get("fsr.sfe.conv.w")) == 0.0);

        // stop after two steps, then resume to three
        TrainConfig two = c;
        two.max_steps = 2;
        TrainOptions o2;
        o2.out_dir = testutil::scratch_dir("run_split");
        o2.quiet = true;
        run_training(two, o2);
        TrainOptions o3 = o2;
        o3.resume = o2.out_dir / "last.ckpt";
        const TrainResult rest = run_training(c, o3);
        REQUIRE(rest.log.size() == 1);
        const auto resumed = read_lines(o2.out_dir / "train_log.jsonl");
        REQUIRE(resumed.size() == 3);
        for (int i = 0; i < 3; i++)
            CHECK(without_time(nlohmann::json::parse(resumed[i])) == without_time(nlohmann::json::parse(lines[i])));

        const Archive resumed_last = Archive::load(o2.out_dir / "last.ckpt");
        for (const auto& n : last.names())
            REQUIRE(max_abs_diff(last.get(n), resumed_last.get(n)) == 0.0);

        CHECK_THROWS_AS(read_checkpoint_info(Archive{}), std::exception);
    }
}
