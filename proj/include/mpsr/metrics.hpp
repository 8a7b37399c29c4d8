#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "mpsr/tensor.hpp"

namespace mpsr::metrics {

/// BT.601 studio-swing luma of an RGB image in [0, 1]: [n, 3, h, w] ->
/// [n, 1, h, w] in [16, 235].
Tensor rgb_to_y(const Tensor& image);

/// Copy with every value clamped to [0, 1].
Tensor clamp_unit(const Tensor& image);

/// 10 log10(peak^2 / MSE) over all elements; +inf when identical.
double psnr(const Tensor& a, const Tensor& b, double peak = 255.0);

/// Mean SSIM over all valid 11x11 Gaussian (sigma 1.5) windows of a single
/// plane [1, 1, h, w] on a 0..255 scale.
double ssim(const Tensor& a, const Tensor& b);

/// Y-channel PSNR and SSIM of one RGB image pair (values clamped to [0, 1]).
struct ImageQuality {
    double psnr = 0.0;
    double ssim = 0.0;
};
ImageQuality image_quality(const Tensor& sr, const Tensor& hr);

struct AuScores {
    std::vector<double> f1;   // per AU, percent
    std::vector<double> acc;  // per AU, percent
    double mean_f1 = 0.0;
    double mean_acc = 0.0;
};

/// Rows are samples, columns AUs, entries 0/1. F1 of an AU with no positives
/// in either is 0.
AuScores au_f1_acc(const std::vector<std::vector<int>>& pred, const std::vector<std::vector<int>>& gt);

/// Maps an RGB image [1, 3, h, w] to per-AU occurrence probabilities.
using AuDetector = std::function<std::vector<double>(const Tensor& image)>;

/// Thresholds detector outputs at 0.5 and scores them against gt. A detector
/// exception is rethrown as std::runtime_error naming the image index.
AuScores evaluate_detail_restoration(const std::vector<Tensor>& images, const std::vector<std::vector<int>>& gt,
                                     const AuDetector& detector);

struct ImageRecord {
    std::size_t index = 0;
    std::string frame;
    double psnr = 0.0;
    double ssim = 0.0;
};

struct StepMetrics {
    int step = 0;  // 1-based iteration; 0 for a baseline such as bicubic
    std::string label;
    double psnr_db = 0.0;
    double ssim = 0.0;
    bool has_au = false;
    AuScores au;
    std::vector<ImageRecord> images;
};

struct MetricReport {
    static constexpr int kVersion = 1;
    std::vector<int> au_ids;
    std::vector<StepMetrics> steps;
};

/// Per-image Y PSNR/SSIM; psnr_db/ssim are per-image means.
StepMetrics score_images(const std::vector<Tensor>& sr, const std::vector<Tensor>& hr, int step, const std::string& label);

/// Arithmetic mean over folds of every scalar field.
StepMetrics fold_mean(const std::vector<StepMetrics>& folds);

/// +inf is written as the string "inf".
nlohmann::json to_json(const MetricReport& report);
nlohmann::json psnr_to_json(double db);
double psnr_from_json(const nlohmann::json& j);
/// Fixed-width text table, one row per step.
std::string format_table(const MetricReport& report);

} // namespace mpsr::metrics
