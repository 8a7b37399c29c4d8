#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>
#include <sstream>

#include "mpsr/cli.hpp"

namespace mpsr::cli {

namespace {

constexpr double kHeadTolerance = 1e-3;
constexpr double kDeepTolerance = 1e-2;
constexpr double kAuTolerance = 1e-4;
constexpr double kStep = 1e-3;

bool ends_with(const std::string& s, const std::string& suffix)
{
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

/// Output layers of each branch: the reconstruction conv, the final
/// alignment head, the AU classifier and the critic's last dense layer.
bool is_head(const std::string& name, int align_stacks)
{
    const std::string stem = name.substr(0, name.rfind('.'));
    return ends_with(stem, ".recb.out") || stem == "au.head" || stem == "disc.out" ||
           stem == "align.hg" + std::to_string(align_stacks - 1) + ".head";
}

Tensor uniform(Shape shape, double lo, double hi, std::mt19937_64& rng)
{
    Tensor t(shape);
    std::uniform_real_distribution<double> u(lo, hi);
    for (double& v : t.values())
        v = u(rng);
    return t;
}

Tensor bernoulli(Shape shape, std::mt19937_64& rng)
{
    Tensor t(shape);
    std::bernoulli_distribution b(0.5);
    for (double& v : t.values())
        v = b(rng) ? 1.0 : 0.0;
    return t;
}

std::vector<GradTarget> param_targets(const ParamStore& store, const std::string& prefix = "")
{
    std::vector<GradTarget> out;
    for (const auto& name : store.names_with_prefix(prefix))
        out.push_back({name, store.get(name)});
    return out;
}

struct Suite {
    const char* name;
    const char* description;
    std::function<std::vector<GradProbe>(const GradCheckOptions& base)> run;
};

GradCheckOptions base_options(const GradcheckOptions& o, std::uint64_t salt)
{
    GradCheckOptions g;
    g.step = kStep;
    g.tolerance = kHeadTolerance;
    g.seed = o.seed * 1000003ULL + salt;
    g.corrupt_target = o.corrupt_target;
    return g;
}

std::vector<Suite> suites(const GradcheckOptions& opts)
{
    std::vector<Suite> out;

    out.push_back({"sr_graph", "unrolled 3-step SR pass, default width, loss sum(sr3^2)", [opts](GradCheckOptions g) {
                       ParamStore store;
                       Initializer init(opts.seed + 1);
                       const fsr::FsrNet net(store, init, fsr::FsrConfig{});
                       std::mt19937_64 rng(opts.seed + 2);
                       const Tensor lr = uniform(Shape{1, 3, 16, 16}, 0.0, 1.0, rng);
                       g.samples = 32;
                       g.tolerance_for = [](const std::string& n) { return is_head(n, 0) ? kHeadTolerance : kDeepTolerance; };
                       return check_gradients(
                           [&] {
                               const Var sr = net.forward_unrolled(lr).sr_images.back();
                               return ops::sum(ops::mul(sr, sr));
                           },
                           param_targets(store), g);
                   }});

    out.push_back({"heatmap", "landmark heatmap MSE", [opts](GradCheckOptions g) {
                       std::mt19937_64 rng(opts.seed + 3);
                       const Var pred = ag::leaf(uniform(Shape{2, 68, 8, 8}, 0.0, 1.0, rng));
                       const Var gt = ag::constant(uniform(Shape{2, 68, 8, 8}, 0.0, 1.0, rng));
                       g.samples = 16;
                       return check_gradients([&] { return losses::heatmap_loss(pred, gt); }, {{"heatmap.pred", pred}}, g);
                   }});

    out.push_back({"cross_entropy", "weighted AU cross-entropy (standard and printed forms)", [opts](GradCheckOptions g) {
                       std::mt19937_64 rng(opts.seed + 4);
                       const Tensor labels = bernoulli(Shape{3, 12, 1, 1}, rng);
                       const Var logits = ag::leaf(uniform(Shape{3, 12, 1, 1}, -2.0, 2.0, rng));
                       const auto w = data::compute_au_weights(std::vector<double>{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.15, 0.25,
                                                                                    0.35, 0.45, 0.55, 0.65});
                       g.samples = 12;
                       auto probes = check_gradients(
                           [&] { return losses::weighted_cross_entropy(labels, ops::sigmoid(logits), w); },
                           {{"cross_entropy.logits", logits}}, g);
                       const Var logits_p = ag::leaf(logits.value());
                       auto printed = check_gradients(
                           [&] {
                               return losses::weighted_cross_entropy(labels, ops::sigmoid(logits_p), w,
                                                                     losses::CrossEntropyForm::printed);
                           },
                           {{"cross_entropy.printed.logits", logits_p}}, g);
                       probes.insert(probes.end(), printed.begin(), printed.end());
                       return probes;
                   }});

    out.push_back({"dice", "weighted AU Dice loss", [opts](GradCheckOptions g) {
                       std::mt19937_64 rng(opts.seed + 5);
                       const Tensor labels = bernoulli(Shape{3, 8, 1, 1}, rng);
                       const Var logits = ag::leaf(uniform(Shape{3, 8, 1, 1}, -2.0, 2.0, rng));
                       const auto w = data::compute_au_weights(std::vector<double>{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8});
                       g.samples = 16;
                       return check_gradients([&] { return losses::dice_loss(labels, ops::sigmoid(logits), w); },
                                              {{"dice.logits", logits}}, g);
                   }});

    out.push_back({"au", "AU loss (cross-entropy + Dice) w.r.t. logits", [opts](GradCheckOptions g) {
                       std::mt19937_64 rng(opts.seed + 6);
                       const Tensor labels = bernoulli(Shape{4, 12, 1, 1}, rng);
                       const Var logits = ag::leaf(uniform(Shape{4, 12, 1, 1}, -3.0, 3.0, rng));
                       const auto w = data::compute_au_weights(std::vector<double>(12, 0.3));
                       g.samples = 24;
                       g.tolerance = kAuTolerance;
                       return check_gradients([&] { return losses::au_loss(labels, ops::sigmoid(logits), w); },
                                              {{"au.logits", logits}}, g);
                   }});

    out.push_back({"reconstruction", "mean of per-step pixel MSE over the SR outputs", [opts](GradCheckOptions g) {
                       std::mt19937_64 rng(opts.seed + 7);
                       const Tensor hr = uniform(Shape{2, 3, 16, 16}, 0.0, 1.0, rng);
                       std::vector<Var> sr;
                       std::vector<GradTarget> targets;
                       for (int t = 0; t < 3; t++) {
                           sr.push_back(ag::leaf(uniform(Shape{2, 3, 16, 16}, 0.0, 1.0, rng)));
                           targets.push_back({"reconstruction.sr" + std::to_string(t + 1), sr.back()});
                       }
                       g.samples = 18;
                       return check_gradients([&] { return losses::reconstruction_loss(sr, hr); }, targets, g);
                   }});

    out.push_back({"perceptual", "feature-space MSE through a small frozen extractor", [opts](GradCheckOptions g) {
                       std::mt19937_64 rng(opts.seed + 8);
                       const losses::ConvFeatureExtractor phi(opts.seed + 9, {6, 8, 8});
                       const Var sr = ag::leaf(uniform(Shape{2, 3, 16, 16}, 0.0, 1.0, rng));
                       const Tensor hr = uniform(Shape{2, 3, 16, 16}, 0.0, 1.0, rng);
                       g.samples = 16;
                       g.max_kink_redraws = 8;
                       return check_gradients([&] { return losses::perceptual_loss(sr, hr, phi); },
                                              {{"perceptual.sr", sr}}, g);
                   }});

    auto adversarial = [opts](bool generator_side) {
        return [opts, generator_side](GradCheckOptions g) {
            std::mt19937_64 rng(opts.seed + (generator_side ? 10 : 11));
            ParamStore store;
            Initializer init(opts.seed + 12);
            const losses::Discriminator d(store, init, losses::DiscriminatorConfig{4, 16, 16}, "disc");
            const Var sr = ag::leaf(uniform(Shape{2, 3, 16, 16}, 0.0, 1.0, rng));
            const Var hr = ag::constant(uniform(Shape{2, 3, 16, 16}, 0.0, 1.0, rng));
            std::vector<GradTarget> targets = param_targets(store);
            if (generator_side)
                targets.push_back({"adversarial.sr", sr});
            g.samples = 24;
            g.max_kink_redraws = 8;
            g.tolerance_for = [](const std::string& n) { return is_head(n, 0) ? kHeadTolerance : kDeepTolerance; };
            if (generator_side)
                return check_gradients([&] { return losses::generator_adversarial_loss(d.forward(sr)); }, targets, g);
            return check_gradients([&] { return losses::discriminator_loss(d.forward(hr), d.forward(sr)); }, targets, g);
        };
    };
    out.push_back({"adversarial_g", "generator adversarial loss through the critic", adversarial(true)});
    out.push_back({"adversarial_d", "critic loss on real and generated batches", adversarial(false)});

    out.push_back({"overall", "weighted full objective, 4-sample batch, all branches and priors active",
                   [opts](GradCheckOptions g) {
                       train::TrainConfig cfg;
                       cfg.seed = opts.seed + 13;
                       cfg.fsr.feature_channels = 16;
                       cfg.fsr.feedback_groups = 3;
                       cfg.align = priors::AlignConfig{16, 1, 2, 4, 68};
                       cfg.au = priors::AuConfig{12, 8, 1};
                       const auto weights = losses::LossWeights::gan_phase();
                       const train::Generator gen(cfg);
                       ParamStore d_store;
                       Initializer d_init(opts.seed + 14);
                       const losses::Discriminator d(d_store, d_init, losses::DiscriminatorConfig{4, 16, 128}, "disc");
                       const losses::ConvFeatureExtractor phi(opts.seed + 15, {6, 8, 8});
                       const priors::AuRuleTable rules = priors::AuRuleTable::builtin(12);

                       std::vector<data::Sample> samples;
                       std::mt19937_64 unused(0);
                       for (int i = 0; i < 4; i++)
                           samples.push_back(data::align_and_augment(
                               data::generate_synthetic_sample(opts.seed * 31 + static_cast<std::uint64_t>(i), 12), false, unused));
                       const data::Batch b = data::make_batch(samples);
                       const auto au_w = data::compute_au_weights(std::vector<double>(12, 0.4));

                       auto loss = [&] {
                           const train::JointForward jf = train::joint_forward(gen, cfg, rules, b.lr);
                           losses::LossParts parts;
                           parts.rec = losses::reconstruction_loss(jf.trace.sr_images, b.hr);
                           parts.align = losses::heatmap_loss(jf.heatmaps, ag::constant(b.heatmaps));
                           parts.au = losses::au_loss(b.au_labels, jf.au_probs, au_w);
                           parts.per = losses::perceptual_loss(jf.trace.sr_images.back(), b.hr, phi);
                           parts.adv_g = losses::generator_adversarial_loss(d.forward(jf.trace.sr_images.back()));
                           return losses::overall_loss(parts, weights).total;
                       };
                       const int stacks = cfg.align.stacks;
                       g.tolerance_for = [stacks](const std::string& n) {
                           return is_head(n, stacks) ? kHeadTolerance : kDeepTolerance;
                       };
                       std::vector<GradProbe> probes;
                       const std::pair<const char*, std::size_t> branches[] = {{"fsr.", 22}, {"align.", 21}, {"au.", 21}};
                       std::uint64_t salt = 0;
                       for (const auto& [prefix, count] : branches) {
                           GradCheckOptions bg = g;
                           bg.samples = count;
                           bg.max_kink_redraws = 3;
                           bg.seed = g.seed + salt++;
                           auto p = check_gradients(loss, param_targets(gen.store, prefix), bg);
                           probes.insert(probes.end(), p.begin(), p.end());
                       }
                       return probes;
                   }});
    return out;
}

} // namespace

std::vector<SuiteResult> run_gradcheck_suite(const GradcheckOptions& options)
{
    std::vector<SuiteResult> results;
    std::uint64_t salt = 0;
    for (const Suite& s : suites(options)) {
        const std::uint64_t suite_salt = salt++;
        if (!options.only.empty() && std::find(options.only.begin(), options.only.end(), s.name) == options.only.end())
            continue;
        SuiteResult r;
        r.name = s.name;
        r.description = s.description;
        const auto t0 = std::chrono::steady_clock::now();
        r.probes = s.run(base_options(options, suite_salt));
        r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        r.pass = !r.probes.empty() &&
                 std::all_of(r.probes.begin(), r.probes.end(), [](const GradProbe& p) { return p.pass; });
        results.push_back(std::move(r));
    }
    return results;
}

std::string format_suite_line(const SuiteResult& s)
{
    double worst = 0.0;
    int kinks = 0;
    for (const auto& p : s.probes) {
        worst = std::max(worst, p.rel_error);
        kinks += p.straddles_kink;
    }
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-4s %-15s probes=%-3zu max_rel=%.2e kinks=%-2d %6.1fs  %s", s.pass ? "PASS" : "FAIL",
                  s.name.c_str(), s.probes.size(), worst, kinks, s.seconds, s.description.c_str());
    std::ostringstream os;
    os << buf;
    for (const auto& p : s.probes)
        if (!p.pass) {
            std::snprintf(buf, sizeof buf, "\n     offending %s[%zu] analytic=%.6e numeric=%.6e rel=%.2e tol=%.0e",
                          p.name.c_str(), p.index, p.analytic, p.numeric, p.rel_error, p.tolerance);
            os << buf;
        }
    return os.str();
}

int cmd_gradcheck(const CommonOptions& common, const GradcheckOptions& options, std::ostream& out)
{
    (void)common;
    const auto t0 = std::chrono::steady_clock::now();
    const auto results = run_gradcheck_suite(options);
    if (results.empty())
        throw std::invalid_argument("no gradient suite matches the selection");
    bool ok = true;
    for (const auto& r : results) {
        out << format_suite_line(r) << "\n";
        ok = ok && r.pass;
    }
    const double total = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    char buf[96];
    std::snprintf(buf, sizeof buf, "gradcheck %s in %.1fs\n", ok ? "passed" : "FAILED", total);
    out << buf;
    return ok ? kOk : kInternalError;
}

} // namespace mpsr::cli
