#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "mpsr/tensor.hpp"

namespace testutil {

inline mpsr::Tensor random_tensor(mpsr::Shape shape, std::uint64_t seed, double lo = 0.0, double hi = 1.0)
{
    mpsr::Tensor t(shape);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(lo, hi);
    for (double& v : t.values())
        v = u(rng);
    return t;
}

/// Fresh empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name)
{
    const auto p = std::filesystem::temp_directory_path() / ("mpsr_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

} // namespace testutil
