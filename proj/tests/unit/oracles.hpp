#pragma once

// Straight-from-definition reference implementations used only by the tests.

#include <cmath>
#include <vector>

#include "mpsr/tensor.hpp"

namespace oracle {

/// Two-pass PSNR on a 0..255 scale: mean squared error first, then the log.
inline double psnr(const mpsr::Tensor& a, const mpsr::Tensor& b)
{
    double mse = 0.0;
    for (std::size_t i = 0; i < a.size(); i++)
        mse += (a[i] - b[i]) * (a[i] - b[i]);
    mse /= static_cast<double>(a.size());
    if (mse == 0.0)
        return INFINITY;
    return 20.0 * std::log10(255.0) - 10.0 * std::log10(mse);
}

/// SSIM evaluated window by window with a full 2-D Gaussian kernel.
inline double ssim(const mpsr::Tensor& a, const mpsr::Tensor& b)
{
    const int h = a.shape().h, w = a.shape().w, k = 11;
    double kernel[11][11];
    double total = 0.0;
    for (int i = 0; i < k; i++)
        for (int j = 0; j < k; j++) {
            const double di = i - 5.0, dj = j - 5.0;
            kernel[i][j] = std::exp(-(di * di + dj * dj) / (2.0 * 1.5 * 1.5));
            total += kernel[i][j];
        }
    const double c1 = (0.01 * 255) * (0.01 * 255), c2 = (0.03 * 255) * (0.03 * 255);
    double acc = 0.0;
    int count = 0;
    for (int y = 0; y + k <= h; y++)
        for (int x = 0; x + k <= w; x++) {
            double mx = 0, my = 0;
            for (int i = 0; i < k; i++)
                for (int j = 0; j < k; j++) {
                    const double g = kernel[i][j] / total;
                    mx += g * a.at(0, 0, y + i, x + j);
                    my += g * b.at(0, 0, y + i, x + j);
                }
            double vx = 0, vy = 0, cxy = 0;
            for (int i = 0; i < k; i++)
                for (int j = 0; j < k; j++) {
                    const double g = kernel[i][j] / total;
                    const double dx = a.at(0, 0, y + i, x + j) - mx, dy = b.at(0, 0, y + i, x + j) - my;
                    vx += g * dx * dx;
                    vy += g * dy * dy;
                    cxy += g * dx * dy;
                }
            acc += ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count++;
        }
    return acc / count;
}

struct Confusion {
    int tp = 0, fp = 0, fn = 0, tn = 0;
};

inline Confusion confusion(const std::vector<std::vector<int>>& pred, const std::vector<std::vector<int>>& gt, int au)
{
    Confusion c;
    for (std::size_t i = 0; i < pred.size(); i++) {
        const int p = pred[i][au], g = gt[i][au];
        c.tp += p && g;
        c.fp += p && !g;
        c.fn += !p && g;
        c.tn += !p && !g;
    }
    return c;
}

inline double f1_percent(const Confusion& c)
{
    const int denom = 2 * c.tp + c.fp + c.fn;
    return denom == 0 ? 0.0 : 100.0 * 2 * c.tp / denom;
}

inline double acc_percent(const Confusion& c)
{
    return 100.0 * (c.tp + c.tn) / (c.tp + c.tn + c.fp + c.fn);
}

} // namespace oracle
