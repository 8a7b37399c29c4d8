#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "mpsr/ops.hpp"

namespace mpsr {

using ag::Var;

/// Named trainable tensors in registration order. Names are hierarchical
/// ("fsr.sfe.conv.w").
class ParamStore {
public:
    Var add(const std::string& name, Tensor init);
    Var get(const std::string& name) const;
    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    const std::vector<std::string>& names() const { return names_; }
    std::vector<std::string> names_with_prefix(const std::string& prefix) const;
    std::size_t count() const { return names_.size(); }
    std::size_t element_count() const;

    void zero_grad();
    /// Copy values from another store for every name both share.
    std::size_t copy_values_from(const ParamStore& other, const std::string& prefix = "");

private:
    std::vector<std::string> names_;
    std::vector<Var> vars_;
    std::map<std::string, std::size_t> index_;
};

/// Seeded initializer; draws are consumed in call order.
class Initializer {
public:
    explicit Initializer(std::uint64_t seed) : rng_(seed) {}

    /// U(-bound, bound) with bound = gain / sqrt(fan_in).
    Tensor fan_in_uniform(Shape shape, int fan_in, double gain = 1.0);
    Tensor normal(Shape shape, double stddev);

private:
    std::mt19937_64 rng_;
};

struct Conv2d {
    Var weight;
    Var bias;
    int stride = 1;
    int pad = 0;

    Conv2d() = default;
    Conv2d(ParamStore& store, Initializer& init, const std::string& name, int in, int out, int kernel, int stride, int pad,
           double gain = 1.0, bool with_bias = true);
    Var operator()(const Var& x) const { return ops::conv2d(x, weight, bias, stride, pad); }
    /// 1x1 layers only: applies to the implicit channel concatenation of parts.
    Var operator()(const std::vector<Var>& parts, const std::vector<int>& widths) const
    {
        return ops::pointwise_conv(parts, widths, weight, bias);
    }
};

struct ConvTranspose2d {
    Var weight;
    Var bias;
    int stride = 1;
    int pad = 0;

    ConvTranspose2d() = default;
    ConvTranspose2d(ParamStore& store, Initializer& init, const std::string& name, int in, int out, int kernel, int stride,
                    int pad);
    Var operator()(const Var& x) const { return ops::conv_transpose2d(x, weight, bias, stride, pad); }
};

struct PRelu {
    Var alpha;

    PRelu() = default;
    PRelu(ParamStore& store, const std::string& name, double init = 0.25);
    Var operator()(const Var& x) const { return ops::prelu(x, alpha); }
};

struct Linear {
    Var weight;
    Var bias;

    Linear() = default;
    Linear(ParamStore& store, Initializer& init, const std::string& name, int in, int out);
    Var operator()(const Var& x) const { return ops::linear(x, weight, bias); }
};

} // namespace mpsr
