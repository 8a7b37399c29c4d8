#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "mpsr/autograd.hpp"

namespace mpsr {

struct GradTarget {
    std::string name;
    ag::Var var;
};

struct GradProbe {
    std::string name;
    std::size_t index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    double rel_error = 0.0;
    double tolerance = 0.0;
    /// Denominator floor used for this probe.
    double floor = 0.0;
    /// Elements discarded before this one because the stencil crossed a kink.
    int kink_redraws = 0;
    /// True when no kink-free element was found within the redraw budget.
    bool straddles_kink = false;
    bool pass = false;
};

struct GradCheckOptions {
    std::size_t samples = 32;
    double step = 1e-3;
    double tolerance = 1e-3;
    /// Denominator floor so that near-zero gradients are judged absolutely.
    double abs_floor = 1e-6;
    /// Also floor the denominator at the RMS of the target's analytic
    /// gradient, so an entry is judged against its tensor's gradient scale.
    bool tensor_scale_floor = true;
    std::uint64_t seed = 0;
    int max_kink_redraws = 0;
    /// Per-target tolerance override; return <= 0 to keep the default.
    std::function<double(const std::string&)> tolerance_for;
    /// Test hook: the named target is always probed, and its analytic gradient
    /// is pushed off by corrupt_amount times its magnitude (or the floor).
    std::string corrupt_target;
    double corrupt_amount = 0.5;
};

/// Compares reverse-mode gradients of a scalar loss against central
/// differences on randomly sampled elements of the targets. The loss builder
/// is re-run for every probe, so it must be deterministic. An element whose
/// +-step evaluations change the side of any rectifier or max-pool decision is
/// replaced by a fresh draw, since the difference quotient is meaningless there.
std::vector<GradProbe> check_gradients(const std::function<ag::Var()>& build_loss, const std::vector<GradTarget>& targets,
                                       const GradCheckOptions& options);

double relative_error(double analytic, double numeric, double abs_floor);

} // namespace mpsr
