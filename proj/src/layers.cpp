#include "mpsr/layers.hpp"

#include <algorithm>
#include <cmath>

namespace mpsr {

Var ParamStore::add(const std::string& name, Tensor init)
{
    if (index_.count(name))
        throw std::invalid_argument("duplicate parameter " + name);
    index_[name] = vars_.size();
    names_.push_back(name);
    vars_.push_back(ag::leaf(std::move(init), true));
    return vars_.back();
}

Var ParamStore::get(const std::string& name) const
{
    auto it = index_.find(name);
    if (it == index_.end())
        throw std::out_of_range("unknown parameter " + name);
    return vars_[it->second];
}

std::vector<std::string> ParamStore::names_with_prefix(const std::string& prefix) const
{
    std::vector<std::string> out;
    for (const auto& n : names_)
        if (n.rfind(prefix, 0) == 0)
            out.push_back(n);
    return out;
}

std::size_t ParamStore::element_count() const
{
    std::size_t total = 0;
    for (const Var& v : vars_)
        total += v.value().size();
    return total;
}

void ParamStore::zero_grad()
{
    for (Var& v : vars_)
        v.zero_grad();
}

std::size_t ParamStore::copy_values_from(const ParamStore& other, const std::string& prefix)
{
    std::size_t copied = 0;
    for (std::size_t i = 0; i < names_.size(); i++) {
        if (names_[i].rfind(prefix, 0) != 0 || !other.contains(names_[i]))
            continue;
        const Tensor& src = other.get(names_[i]).value();
        Tensor& dst = vars_[i].mutable_value();
        require_same_shape(dst, src, names_[i].c_str());
        dst = src;
        copied++;
    }
    return copied;
}

Tensor Initializer::fan_in_uniform(Shape shape, int fan_in, double gain)
{
    const double bound = gain / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Tensor t(shape);
    for (double& v : t.values())
        v = dist(rng_);
    return t;
}

Tensor Initializer::normal(Shape shape, double stddev)
{
    std::normal_distribution<double> dist(0.0, stddev);
    Tensor t(shape);
    for (double& v : t.values())
        v = dist(rng_);
    return t;
}

Conv2d::Conv2d(ParamStore& store, Initializer& init, const std::string& name, int in, int out, int kernel, int stride_,
               int pad_, double gain, bool with_bias)
    : stride(stride_), pad(pad_)
{
    const int fan_in = in * kernel * kernel;
    weight = store.add(name + ".w", init.fan_in_uniform(Shape{out, in, kernel, kernel}, fan_in, gain));
    if (with_bias)
        bias = store.add(name + ".b", init.fan_in_uniform(Shape{1, out, 1, 1}, fan_in, gain));
}

ConvTranspose2d::ConvTranspose2d(ParamStore& store, Initializer& init, const std::string& name, int in, int out,
                                 int kernel, int stride_, int pad_)
    : stride(stride_), pad(pad_)
{
    // Each output pixel receives (kernel / stride)^2 taps per input channel.
    const int taps = std::max(1, kernel / stride);
    const int fan_in = in * taps * taps;
    weight = store.add(name + ".w", init.fan_in_uniform(Shape{in, out, kernel, kernel}, fan_in));
    bias = store.add(name + ".b", init.fan_in_uniform(Shape{1, out, 1, 1}, fan_in));
}

PRelu::PRelu(ParamStore& store, const std::string& name, double init)
{
    alpha = store.add(name + ".alpha", Tensor(Shape{1, 1, 1, 1}, init));
}

Linear::Linear(ParamStore& store, Initializer& init, const std::string& name, int in, int out)
{
    weight = store.add(name + ".w", init.fan_in_uniform(Shape{out, in, 1, 1}, in));
    bias = store.add(name + ".b", init.fan_in_uniform(Shape{1, out, 1, 1}, in));
}

} // namespace mpsr
