#include "mpsr/gradcheck.hpp"

#include "mpsr/ops.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace mpsr {

double relative_error(double analytic, double numeric, double abs_floor)
{
    const double denom = std::max({std::abs(analytic), std::abs(numeric), abs_floor});
    return std::abs(analytic - numeric) / denom;
}

std::vector<GradProbe> check_gradients(const std::function<ag::Var()>& build_loss, const std::vector<GradTarget>& targets,
                                       const GradCheckOptions& options)
{
    std::size_t total = 0;
    for (const auto& t : targets)
        total += t.var.value().size();
    if (total == 0)
        return {};

    for (const auto& t : targets) {
        ag::Var v = t.var;
        v.zero_grad();
    }
    {
        ag::Var loss = build_loss();
        ag::backward(loss);
    }

    std::vector<double> grad_rms(targets.size(), 0.0);
    for (std::size_t i = 0; i < targets.size(); i++) {
        const ag::Var& v = targets[i].var;
        if (!v.has_grad())
            continue;
        double ss = 0.0;
        for (double g : v.grad().values())
            ss += g * g;
        grad_rms[i] = std::sqrt(ss / static_cast<double>(v.grad().size()));
    }

    ag::NoGradGuard guard;
    auto signature = [&] {
        ops::KinkTrace trace;
        const double value = build_loss().item();
        return std::make_pair(value, trace.signature());
    };
    const std::uint64_t base_sig = signature().second;

    std::mt19937_64 rng(options.seed);
    std::uniform_int_distribution<std::size_t> pick(0, total - 1);
    auto draw = [&] {
        std::size_t flat = pick(rng);
        std::size_t ti = 0;
        while (flat >= targets[ti].var.value().size()) {
            flat -= targets[ti].var.value().size();
            ti++;
        }
        return std::make_pair(ti, flat);
    };

    // The corruption hook always probes its target first so a self-test cannot miss it.
    std::size_t forced = targets.size();
    for (std::size_t i = 0; i < targets.size() && !options.corrupt_target.empty(); i++)
        if (targets[i].name == options.corrupt_target && targets[i].var.value().size() > 0)
            forced = i;

    std::vector<GradProbe> out;
    for (std::size_t s = 0; s < std::min(options.samples, total); s++) {
        GradProbe p;
        for (int attempt = 0;; attempt++) {
            auto [ti, idx] = draw();
            if (s == 0 && forced < targets.size()) {
                ti = forced;
                idx = pick(rng) % targets[ti].var.value().size();
            }
            ag::Var v = targets[ti].var;
            double& slot = v.mutable_value()[idx];
            const double orig = slot;
            slot = orig + options.step;
            const auto [plus, plus_sig] = signature();
            slot = orig - options.step;
            const auto [minus, minus_sig] = signature();
            slot = orig;

            p.name = targets[ti].name;
            p.index = idx;
            p.floor = options.tensor_scale_floor ? std::max(options.abs_floor, grad_rms[ti]) : options.abs_floor;
            p.analytic = v.has_grad() ? v.grad()[idx] : 0.0;
            p.numeric = (plus - minus) / (2.0 * options.step);
            p.straddles_kink = plus_sig != base_sig || minus_sig != base_sig;
            if (!p.straddles_kink || attempt >= options.max_kink_redraws)
                break;
            p.kink_redraws++;
        }
        if (!options.corrupt_target.empty() && p.name == options.corrupt_target)
            p.analytic += options.corrupt_amount * std::max(std::abs(p.analytic), p.floor);

        p.tolerance = options.tolerance;
        if (options.tolerance_for) {
            const double t = options.tolerance_for(p.name);
            if (t > 0.0)
                p.tolerance = t;
        }
        p.rel_error = relative_error(p.analytic, p.numeric, p.floor);
        p.pass = std::isfinite(p.rel_error) && p.rel_error < p.tolerance;
        out.push_back(p);
    }
    return out;
}

} // namespace mpsr
