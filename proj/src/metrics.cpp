#include "mpsr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace mpsr::metrics {

Tensor rgb_to_y(const Tensor& image)
{
    const Shape s = image.shape();
    if (s.c != 3)
        throw ShapeError("rgb_to_y: expected 3 channels, got " + s.str());
    Tensor out(Shape{s.n, 1, s.h, s.w});
    for (int n = 0; n < s.n; n++) {
        const double* r = image.plane_ptr(n, 0);
        const double* g = image.plane_ptr(n, 1);
        const double* b = image.plane_ptr(n, 2);
        double* y = out.plane_ptr(n, 0);
        for (std::size_t i = 0; i < s.plane(); i++)
            y[i] = 16.0 + (65.481 * r[i] + 128.553 * g[i] + 24.966 * b[i]);
    }
    return out;
}

Tensor clamp_unit(const Tensor& image)
{
    Tensor out = image;
    for (double& v : out.values())
        v = std::clamp(v, 0.0, 1.0);
    return out;
}

double psnr(const Tensor& a, const Tensor& b, double peak)
{
    require_same_shape(a, b, "psnr");
    double se = 0.0;
    for (std::size_t i = 0; i < a.size(); i++) {
        const double d = a[i] - b[i];
        se += d * d;
    }
    if (se == 0.0)
        return std::numeric_limits<double>::infinity();
    const double mse = se / static_cast<double>(a.size());
    return 10.0 * std::log10(peak * peak / mse);
}

namespace {

std::vector<double> gaussian_window(int size, double sigma)
{
    std::vector<double> g(size);
    double total = 0.0;
    for (int i = 0; i < size; i++) {
        const double d = i - (size - 1) / 2.0;
        g[i] = std::exp(-d * d / (2.0 * sigma * sigma));
        total += g[i];
    }
    for (double& v : g)
        v /= total;
    return g;
}

// Separable valid-mode filtering of a single plane.
std::vector<double> filter_valid(const double* x, int h, int w, const std::vector<double>& g)
{
    const int k = static_cast<int>(g.size());
    const int oh = h - k + 1;
    const int ow = w - k + 1;
    std::vector<double> rows(static_cast<std::size_t>(h) * ow);
    for (int y = 0; y < h; y++)
        for (int xo = 0; xo < ow; xo++) {
            double s = 0.0;
            for (int i = 0; i < k; i++)
                s += g[i] * x[static_cast<std::size_t>(y) * w + xo + i];
            rows[static_cast<std::size_t>(y) * ow + xo] = s;
        }
    std::vector<double> out(static_cast<std::size_t>(oh) * ow);
    for (int yo = 0; yo < oh; yo++)
        for (int xo = 0; xo < ow; xo++) {
            double s = 0.0;
            for (int i = 0; i < k; i++)
                s += g[i] * rows[static_cast<std::size_t>(yo + i) * ow + xo];
            out[static_cast<std::size_t>(yo) * ow + xo] = s;
        }
    return out;
}

} // namespace

double ssim(const Tensor& a, const Tensor& b)
{
    require_same_shape(a, b, "ssim");
    const Shape s = a.shape();
    if (s.n != 1 || s.c != 1)
        throw ShapeError("ssim: expected a single plane, got " + s.str());
    constexpr int kWindow = 11;
    if (s.h < kWindow || s.w < kWindow)
        throw ShapeError("ssim: image " + s.str() + " smaller than the 11x11 window");
    const double c1 = std::pow(0.01 * 255.0, 2);
    const double c2 = std::pow(0.03 * 255.0, 2);
    const auto g = gaussian_window(kWindow, 1.5);

    std::vector<double> aa(a.size()), bb(a.size()), ab(a.size());
    for (std::size_t i = 0; i < a.size(); i++) {
        aa[i] = a[i] * a[i];
        bb[i] = b[i] * b[i];
        ab[i] = a[i] * b[i];
    }
    const auto mu_a = filter_valid(a.data(), s.h, s.w, g);
    const auto mu_b = filter_valid(b.data(), s.h, s.w, g);
    const auto e_aa = filter_valid(aa.data(), s.h, s.w, g);
    const auto e_bb = filter_valid(bb.data(), s.h, s.w, g);
    const auto e_ab = filter_valid(ab.data(), s.h, s.w, g);

    double total = 0.0;
    for (std::size_t i = 0; i < mu_a.size(); i++) {
        const double va = e_aa[i] - mu_a[i] * mu_a[i];
        const double vb = e_bb[i] - mu_b[i] * mu_b[i];
        const double cov = e_ab[i] - mu_a[i] * mu_b[i];
        total += ((2.0 * mu_a[i] * mu_b[i] + c1) * (2.0 * cov + c2)) /
                 ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + c1) * (va + vb + c2));
    }
    return total / static_cast<double>(mu_a.size());
}

ImageQuality image_quality(const Tensor& sr, const Tensor& hr)
{
    require_same_shape(sr, hr, "image_quality");
    if (sr.shape().n != 1)
        throw ShapeError("image_quality: expects one image, got " + sr.shape().str());
    const Tensor ya = rgb_to_y(clamp_unit(sr));
    const Tensor yb = rgb_to_y(clamp_unit(hr));
    return {psnr(ya, yb), ssim(ya, yb)};
}

AuScores au_f1_acc(const std::vector<std::vector<int>>& pred, const std::vector<std::vector<int>>& gt)
{
    if (pred.size() != gt.size() || pred.empty())
        throw ShapeError("au_f1_acc: " + std::to_string(pred.size()) + " predictions vs " + std::to_string(gt.size()) +
                         " labels");
    const std::size_t k = gt[0].size();
    for (std::size_t i = 0; i < gt.size(); i++)
        if (pred[i].size() != k || gt[i].size() != k)
            throw ShapeError("au_f1_acc: row " + std::to_string(i) + " has the wrong width");
    AuScores out;
    for (std::size_t j = 0; j < k; j++) {
        long tp = 0, fp = 0, fn = 0, tn = 0;
        for (std::size_t i = 0; i < gt.size(); i++) {
            const bool p = pred[i][j] != 0;
            const bool g = gt[i][j] != 0;
            tp += p && g;
            fp += p && !g;
            fn += !p && g;
            tn += !p && !g;
        }
        const long denom = 2 * tp + fp + fn;
        out.f1.push_back(denom == 0 ? 0.0 : 100.0 * 2.0 * tp / denom);
        out.acc.push_back(100.0 * (tp + tn) / static_cast<double>(gt.size()));
    }
    for (std::size_t j = 0; j < k; j++) {
        out.mean_f1 += out.f1[j] / static_cast<double>(k);
        out.mean_acc += out.acc[j] / static_cast<double>(k);
    }
    return out;
}

AuScores evaluate_detail_restoration(const std::vector<Tensor>& images, const std::vector<std::vector<int>>& gt,
                                     const AuDetector& detector)
{
    if (images.size() != gt.size())
        throw ShapeError("evaluate_detail_restoration: " + std::to_string(images.size()) + " images vs " +
                         std::to_string(gt.size()) + " label rows");
    std::vector<std::vector<int>> pred;
    for (std::size_t i = 0; i < images.size(); i++) {
        std::vector<double> probs;
        try {
            probs = detector(images[i]);
        } catch (const std::exception& e) {
            throw std::runtime_error("AU detector failed on image " + std::to_string(i) + ": " + e.what());
        }
        std::vector<int> row;
        for (double p : probs)
            row.push_back(p >= 0.5 ? 1 : 0);
        pred.push_back(std::move(row));
    }
    return au_f1_acc(pred, gt);
}

StepMetrics score_images(const std::vector<Tensor>& sr, const std::vector<Tensor>& hr, int step, const std::string& label)
{
    if (sr.size() != hr.size() || sr.empty())
        throw ShapeError("score_images: " + std::to_string(sr.size()) + " outputs vs " + std::to_string(hr.size()) + " targets");
    StepMetrics m;
    m.step = step;
    m.label = label;
    for (std::size_t i = 0; i < sr.size(); i++) {
        const ImageQuality q = image_quality(sr[i], hr[i]);
        m.images.push_back({i, "", q.psnr, q.ssim});
        m.psnr_db += q.psnr / static_cast<double>(sr.size());
        m.ssim += q.ssim / static_cast<double>(sr.size());
    }
    return m;
}

StepMetrics fold_mean(const std::vector<StepMetrics>& folds)
{
    if (folds.empty())
        throw std::invalid_argument("fold_mean: no folds");
    StepMetrics out;
    out.step = folds[0].step;
    out.label = folds[0].label;
    out.has_au = std::all_of(folds.begin(), folds.end(), [](const StepMetrics& f) { return f.has_au; });
    const double n = static_cast<double>(folds.size());
    if (out.has_au) {
        out.au.f1.assign(folds[0].au.f1.size(), 0.0);
        out.au.acc.assign(folds[0].au.acc.size(), 0.0);
    }
    for (const auto& f : folds) {
        out.psnr_db += f.psnr_db / n;
        out.ssim += f.ssim / n;
        if (!out.has_au)
            continue;
        if (f.au.f1.size() != out.au.f1.size())
            throw ShapeError("fold_mean: folds disagree on the AU count");
        out.au.mean_f1 += f.au.mean_f1 / n;
        out.au.mean_acc += f.au.mean_acc / n;
        for (std::size_t j = 0; j < out.au.f1.size(); j++) {
            out.au.f1[j] += f.au.f1[j] / n;
            out.au.acc[j] += f.au.acc[j] / n;
        }
    }
    return out;
}

nlohmann::json psnr_to_json(double db)
{
    if (std::isinf(db) && db > 0)
        return "inf";
    return db;
}

double psnr_from_json(const nlohmann::json& j)
{
    if (j.is_string() && j.get<std::string>() == "inf")
        return std::numeric_limits<double>::infinity();
    return j.get<double>();
}

nlohmann::json to_json(const MetricReport& report)
{
    nlohmann::json steps = nlohmann::json::array();
    for (const auto& s : report.steps) {
        nlohmann::json images = nlohmann::json::array();
        for (const auto& r : s.images)
            images.push_back({{"index", r.index}, {"frame", r.frame}, {"psnr_db", psnr_to_json(r.psnr)}, {"ssim", r.ssim}});
        nlohmann::json entry = {{"step", s.step},
                                {"label", s.label},
                                {"aggregate", {{"psnr_db", psnr_to_json(s.psnr_db)}, {"ssim", s.ssim}}},
                                {"images", images}};
        if (s.has_au) {
            entry["aggregate"]["au_f1"] = s.au.mean_f1;
            entry["aggregate"]["au_acc"] = s.au.mean_acc;
            nlohmann::json per_au = nlohmann::json::array();
            for (std::size_t j = 0; j < s.au.f1.size(); j++)
                per_au.push_back({{"au", j < report.au_ids.size() ? report.au_ids[j] : static_cast<int>(j)},
                                  {"f1", s.au.f1[j]},
                                  {"acc", s.au.acc[j]}});
            entry["per_au"] = per_au;
        }
        steps.push_back(entry);
    }
    return {{"format", "mpsr-metrics"}, {"version", MetricReport::kVersion}, {"steps", steps}};
}

std::string format_table(const MetricReport& report)
{
    std::ostringstream out;
    char line[160];
    std::snprintf(line, sizeof line, "%-14s %10s %8s %8s %8s\n", "output", "PSNR(dB)", "SSIM", "F1(%)", "Acc(%)");
    out << line;
    for (const auto& s : report.steps) {
        const std::string label = s.label.empty() ? "step " + std::to_string(s.step) : s.label;
        if (s.has_au)
            std::snprintf(line, sizeof line, "%-14s %10.3f %8.4f %8.2f %8.2f\n", label.c_str(), s.psnr_db, s.ssim,
                          s.au.mean_f1, s.au.mean_acc);
        else
            std::snprintf(line, sizeof line, "%-14s %10.3f %8.4f %8s %8s\n", label.c_str(), s.psnr_db, s.ssim, "-", "-");
        out << line;
    }
    return out.str();
}

} // namespace mpsr::metrics
