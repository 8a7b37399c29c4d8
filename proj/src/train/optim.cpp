#include <cmath>

#include "mpsr/train.hpp"

namespace mpsr::train {

void adam_update(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v, long t, const AdamHyper& hyper)
{
    require_same_shape(param, grad, "adam_update");
    require_same_shape(param, m, "adam_update");
    require_same_shape(param, v, "adam_update");
    if (t < 1)
        throw std::invalid_argument("adam_update: time step must be >= 1");
    const double c1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < param.size(); i++) {
        const double g = grad[i];
        m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g;
        v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g * g;
        const double m_hat = m[i] / c1;
        const double v_hat = v[i] / c2;
        param[i] -= hyper.lr * m_hat / (std::sqrt(v_hat) + hyper.eps);
    }
}

Adam::Adam(const ParamStore& store, AdamHyper hyper)
    : hyper_(hyper), names_(store.names())
{
    for (const auto& name : names_) {
        m_.emplace_back(store.get(name).shape());
        v_.emplace_back(store.get(name).shape());
    }
}

void Adam::step(ParamStore& store)
{
    t_++;
    for (std::size_t i = 0; i < names_.size(); i++) {
        Var p = store.get(names_[i]);
        const Tensor grad = p.has_grad() ? p.grad() : Tensor(p.shape());
        adam_update(p.mutable_value(), grad, m_[i], v_[i], t_, hyper_);
    }
}

void Adam::save(Archive& archive, const std::string& prefix) const
{
    archive.put(prefix + "t", Tensor(Shape{1, 1, 1, 1}, static_cast<double>(t_)));
    for (std::size_t i = 0; i < names_.size(); i++) {
        archive.put(prefix + "m." + names_[i], m_[i]);
        archive.put(prefix + "v." + names_[i], v_[i]);
    }
}

void Adam::load(const Archive& archive, const std::string& prefix)
{
    if (!archive.contains(prefix + "t"))
        throw IoError("checkpoint has no optimizer state under '" + prefix + "'");
    t_ = static_cast<long>(archive.get(prefix + "t")[0]);
    for (std::size_t i = 0; i < names_.size(); i++) {
        const std::string mk = prefix + "m." + names_[i];
        const std::string vk = prefix + "v." + names_[i];
        if (!archive.contains(mk) || !archive.contains(vk))
            throw IoError("checkpoint optimizer state lacks " + names_[i]);
        if (!(archive.get(mk).shape() == m_[i].shape()) || !(archive.get(vk).shape() == v_[i].shape()))
            throw IoError("checkpoint optimizer state for " + names_[i] + " has the wrong shape");
        m_[i] = archive.get(mk);
        v_[i] = archive.get(vk);
    }
}

} // namespace mpsr::train
