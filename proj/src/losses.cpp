#include "mpsr/losses.hpp"

#include <cmath>
#include <numeric>
#include <random>

namespace mpsr::losses {

void LossWeights::validate() const
{
    for (double v : {align, au, per, adv})
        if (!(v >= 0.0))
            throw std::invalid_argument("loss weights must be >= 0");
}

Var heatmap_loss(const Var& pred, const Var& gt)
{
    if (!(pred.shape() == gt.shape()))
        throw ShapeError("heatmap_loss: " + pred.shape().str() + " vs " + gt.shape().str());
    return ops::mse(pred, gt);
}

namespace {

// Broadcasts per-AU weights over the batch as a [n, k, 1, 1] constant.
Var weight_tensor(const Shape& s, const std::vector<double>& weights)
{
    Tensor t(s);
    for (int n = 0; n < s.n; n++)
        for (int k = 0; k < s.c; k++)
            t[static_cast<std::size_t>(n) * s.c + k] = weights[k];
    return ag::constant(std::move(t));
}

void check_au_inputs(const Tensor& labels, const Var& probs, const std::vector<double>& weights, const char* what)
{
    const Shape s = probs.shape();
    if (!(labels.shape() == s) || s.h != 1 || s.w != 1 || weights.size() != static_cast<std::size_t>(s.c))
        throw ShapeError(std::string(what) + ": labels " + labels.shape().str() + ", probabilities " + s.str() + ", " +
                         std::to_string(weights.size()) + " weights");
}

Var batch_mean(const Var& per_element, int batch)
{
    return ops::scale(ops::sum(per_element), 1.0 / batch);
}

} // namespace

Var weighted_cross_entropy(const Tensor& labels, const Var& probs, const std::vector<double>& weights, CrossEntropyForm form)
{
    check_au_inputs(labels, probs, weights, "weighted_cross_entropy");
    Tensor complement = labels;
    for (double& v : complement.values())
        v = 1.0 - v;
    const Var first = form == CrossEntropyForm::standard ? ag::constant(labels) : probs;
    Var term = ops::add(ops::mul(first, ops::log_clamped(probs, kLogFloor)),
                        ops::mul(ag::constant(complement), ops::log_clamped(ops::affine(probs, -1.0, 1.0), kLogFloor)));
    term = ops::mul(weight_tensor(probs.shape(), weights), term);
    return ops::scale(batch_mean(term, probs.shape().n), -1.0);
}

Var dice_loss(const Tensor& labels, const Var& probs, const std::vector<double>& weights, double epsilon)
{
    check_au_inputs(labels, probs, weights, "dice_loss");
    if (!(epsilon > 0.0))
        throw std::invalid_argument("dice_loss: epsilon must be positive");
    Tensor y_sq_eps = labels;
    for (double& v : y_sq_eps.values())
        v = v * v + epsilon;
    const Var y = ag::constant(labels);
    Var numer = ops::affine(ops::mul(y, probs), 2.0, epsilon);
    Var denom = ops::add(ops::mul(probs, probs), ag::constant(y_sq_eps));
    Var gap = ops::affine(ops::div(numer, denom), -1.0, 1.0);
    return batch_mean(ops::mul(weight_tensor(probs.shape(), weights), gap), probs.shape().n);
}

Var au_loss(const Tensor& labels, const Var& probs, const std::vector<double>& weights, double epsilon, CrossEntropyForm form)
{
    return ops::add(weighted_cross_entropy(labels, probs, weights, form), dice_loss(labels, probs, weights, epsilon));
}

Var reconstruction_loss(const std::vector<Var>& sr, const Tensor& hr)
{
    if (sr.empty())
        throw ShapeError("reconstruction_loss: no outputs");
    const Var target = ag::constant(hr);
    std::vector<Var> terms;
    for (const Var& s : sr) {
        if (!(s.shape() == hr.shape()))
            throw ShapeError("reconstruction_loss: output " + s.shape().str() + " vs target " + hr.shape().str());
        terms.push_back(ops::mse(s, target));
    }
    return ops::weighted_sum(terms, std::vector<double>(terms.size(), 1.0 / static_cast<double>(terms.size())));
}

ConvFeatureExtractor::ConvFeatureExtractor(std::uint64_t seed, std::vector<int> widths)
{
    if (widths.empty())
        throw std::invalid_argument("feature extractor needs at least one stage");
    Initializer init(seed);
    int in = 3;
    for (int out : widths) {
        if (out < 1)
            throw std::invalid_argument("feature extractor widths must be positive");
        const int fan_in = in * 9;
        Conv2d c;
        c.stride = 2;
        c.pad = 1;
        // He-uniform keeps activation scale roughly constant through ReLU stages.
        c.weight = ag::constant(init.fan_in_uniform(Shape{out, in, 3, 3}, fan_in, std::sqrt(6.0)));
        c.bias = ag::constant(Tensor(Shape{1, out, 1, 1}));
        stages_.push_back(std::move(c));
        in = out;
    }
}

ConvFeatureExtractor::ConvFeatureExtractor(const Archive& archive)
{
    for (std::size_t i = 0;; i++) {
        const std::string p = "phi.stage" + std::to_string(i);
        if (!archive.contains(p + ".w"))
            break;
        const Tensor& w = archive.get(p + ".w");
        const int in = stages_.empty() ? 3 : stages_.back().weight.shape().n;
        if (w.shape().c != in || w.shape().h != 3 || w.shape().w != 3)
            throw IoError("feature extractor stage " + std::to_string(i) + " has weight " + w.shape().str());
        Conv2d c;
        c.stride = 2;
        c.pad = 1;
        c.weight = ag::constant(w);
        c.bias = ag::constant(archive.contains(p + ".b") ? archive.get(p + ".b") : Tensor(Shape{1, w.shape().n, 1, 1}));
        stages_.push_back(std::move(c));
    }
    if (stages_.empty())
        throw IoError("archive holds no feature extractor stages");
}

void ConvFeatureExtractor::save(Archive& archive) const
{
    for (std::size_t i = 0; i < stages_.size(); i++) {
        const std::string p = "phi.stage" + std::to_string(i);
        archive.put(p + ".w", stages_[i].weight.value());
        archive.put(p + ".b", stages_[i].bias.value());
    }
}

Var ConvFeatureExtractor::features(const Var& image) const
{
    Var x = image;
    for (const auto& stage : stages_)
        x = ops::relu(stage(x));
    return x;
}

Var perceptual_loss(const Var& sr, const Tensor& hr, const FeatureExtractor& phi)
{
    if (!(sr.shape() == hr.shape()))
        throw ShapeError("perceptual_loss: " + sr.shape().str() + " vs " + hr.shape().str());
    Var target;
    {
        ag::NoGradGuard guard;
        target = phi.features(ag::constant(hr));
    }
    Var pred = phi.features(sr);
    if (!(pred.shape() == target.shape()))
        throw ShapeError("perceptual_loss: extractor produced " + pred.shape().str() + " vs " + target.shape().str());
    return ops::mse(pred, target);
}

void DiscriminatorConfig::validate() const
{
    if (base_width < 1 || dense_width < 1 || image_size < 16 || image_size % 16 != 0)
        throw std::invalid_argument("discriminator: invalid configuration");
}

Discriminator::Discriminator(ParamStore& store, Initializer& init, DiscriminatorConfig config, const std::string& prefix)
    : config_(config)
{
    config_.validate();
    int in = 3;
    for (int i = 0; i < 8; i++) {
        const int out = config_.base_width << (i / 2);
        const int stride = i % 2 == 0 ? 1 : 2;
        convs_.emplace_back(store, init, prefix + ".conv" + std::to_string(i), in, out, 3, stride, 1);
        in = out;
    }
    const int side = config_.image_size / 16;
    dense_ = Linear(store, init, prefix + ".dense", in * side * side, config_.dense_width);
    out_ = Linear(store, init, prefix + ".out", config_.dense_width, 1);
}

Var Discriminator::forward(const Var& image) const
{
    const Shape s = image.shape();
    if (s.c != 3 || s.h != config_.image_size || s.w != config_.image_size)
        throw ShapeError("discriminator: expected [n, 3, " + std::to_string(config_.image_size) + ", " +
                         std::to_string(config_.image_size) + "], got " + s.str());
    Var x = image;
    for (const auto& conv : convs_)
        x = ops::leaky_relu(conv(x), 0.2);
    x = ops::leaky_relu(dense_(x), 0.2);
    return ops::sigmoid(out_(x));
}

Var generator_adversarial_loss(const Var& d_sr)
{
    return ops::scale(ops::mean(ops::log_clamped(d_sr, kLogFloor)), -1.0);
}

Var discriminator_loss(const Var& d_hr, const Var& d_sr)
{
    Var real = ops::mean(ops::log_clamped(d_hr, kLogFloor));
    Var fake = ops::mean(ops::log_clamped(ops::affine(d_sr, -1.0, 1.0), kLogFloor));
    return ops::scale(ops::add(real, fake), -1.0);
}

NonFiniteLoss::NonFiniteLoss(std::string component, double value)
    : std::runtime_error("non-finite loss component '" + component + "': " + std::to_string(value)),
      component_(std::move(component))
{
}

WeightedLoss overall_loss(const LossParts& parts, const LossWeights& weights)
{
    weights.validate();
    const std::pair<const char*, std::pair<const Var*, double>> terms[] = {
        {"rec", {&parts.rec, 1.0}},           {"align", {&parts.align, weights.align}}, {"au", {&parts.au, weights.au}},
        {"per", {&parts.per, weights.per}}, {"adv_G", {&parts.adv_g, weights.adv}},
    };
    WeightedLoss out;
    std::vector<Var> used;
    std::vector<double> factors;
    for (const auto& [name, term] : terms) {
        const auto& [var, lambda] = term;
        double value = 0.0;
        if (var->defined()) {
            value = var->item();
            if (!std::isfinite(value))
                throw NonFiniteLoss(name, value);
            used.push_back(*var);
            factors.push_back(lambda);
        }
        out.breakdown.emplace_back(name, value);
    }
    if (used.empty())
        throw std::invalid_argument("overall_loss: no components");
    out.total = ops::weighted_sum(used, factors);
    return out;
}

} // namespace mpsr::losses
