#pragma once

#include <memory>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mpsr/archive.hpp"
#include "mpsr/layers.hpp"

namespace mpsr::losses {

inline constexpr double kLogFloor = 1e-12;

struct LossWeights {
    double align = 0.1;
    double au = 0.01;
    double per = 0.0;
    double adv = 0.0;

    static LossWeights psnr_phase() { return {0.1, 0.01, 0.0, 0.0}; }
    static LossWeights gan_phase() { return {0.1, 0.01, 0.1, 0.001}; }
    /// Throws std::invalid_argument on a negative weight.
    void validate() const;
};

/// Mean squared error over every element (batch mean of per-sample MSE).
Var heatmap_loss(const Var& pred, const Var& gt);

enum class CrossEntropyForm {
    standard,  // -sum w [y log p + (1 - y) log(1 - p)]
    printed,   // -sum w [p log p + (1 - y) log(1 - p)]
};

/// labels and probs are [n, k, 1, 1]; weights has k entries. Summed over AUs,
/// averaged over the batch. Logs are clamped at kLogFloor.
Var weighted_cross_entropy(const Tensor& labels, const Var& probs, const std::vector<double>& weights,
                           CrossEntropyForm form = CrossEntropyForm::standard);
/// sum_i w_i (1 - (2 y p + eps) / (y^2 + p^2 + eps)), averaged over the batch.
Var dice_loss(const Tensor& labels, const Var& probs, const std::vector<double>& weights, double epsilon = 1.0);
Var au_loss(const Tensor& labels, const Var& probs, const std::vector<double>& weights, double epsilon = 1.0,
            CrossEntropyForm form = CrossEntropyForm::standard);

/// Mean over the list of per-output MSE against hr.
Var reconstruction_loss(const std::vector<Var>& sr, const Tensor& hr);

/// Fixed feature map used by the perceptual loss.
class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;
    virtual Var features(const Var& image) const = 0;
};

/// Strided 3x3 conv + ReLU stages with frozen weights, either drawn from a
/// seed or loaded from an archive holding "phi.stage<i>.w" / ".b" entries.
class ConvFeatureExtractor : public FeatureExtractor {
public:
    static std::vector<int> default_widths() { return {32, 64, 128, 256, 256}; }

    ConvFeatureExtractor(std::uint64_t seed, std::vector<int> widths = default_widths());
    explicit ConvFeatureExtractor(const Archive& archive);

    Var features(const Var& image) const override;
    void save(Archive& archive) const;
    std::size_t stage_count() const { return stages_.size(); }

private:
    std::vector<Conv2d> stages_;
};

Var perceptual_loss(const Var& sr, const Tensor& hr, const FeatureExtractor& phi);

struct DiscriminatorConfig {
    int base_width = 64;
    int dense_width = 1024;
    int image_size = 128;

    void validate() const;
};

/// Eight 3x3 convs (widths w, w, 2w, 2w, 4w, 4w, 8w, 8w; strides alternating
/// 1, 2), leaky ReLU 0.2, dense -> leaky ReLU -> dense(1) -> sigmoid.
class Discriminator {
public:
    Discriminator(ParamStore& store, Initializer& init, DiscriminatorConfig config, const std::string& prefix = "disc");
    /// Probabilities [n, 1, 1, 1].
    Var forward(const Var& image) const;
    const DiscriminatorConfig& config() const { return config_; }

private:
    DiscriminatorConfig config_;
    std::vector<Conv2d> convs_;
    Linear dense_;
    Linear out_;
};

/// -mean log D(sr)
Var generator_adversarial_loss(const Var& d_sr);
/// -mean log D(hr) - mean log(1 - D(sr))
Var discriminator_loss(const Var& d_hr, const Var& d_sr);

class NonFiniteLoss : public std::runtime_error {
public:
    NonFiniteLoss(std::string component, double value);
    const std::string& component() const { return component_; }

private:
    std::string component_;
};

/// Undefined parts contribute zero.
struct LossParts {
    Var rec, align, au, per, adv_g;
};

struct WeightedLoss {
    Var total;
    std::vector<std::pair<std::string, double>> breakdown;  // unweighted component values
};

/// rec + lambda_align align + lambda_au au + lambda_per per + lambda_adv adv_g.
/// Throws NonFiniteLoss naming the first non-finite component.
WeightedLoss overall_loss(const LossParts& parts, const LossWeights& weights);

} // namespace mpsr::losses
