#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "mpsr/datakit.hpp"
#include "mpsr/embedded_data.hpp"

namespace mpsr::data {

std::array<int, kNumLandmarks> parse_flip_table(const std::string& text)
{
    std::array<int, kNumLandmarks> perm{};
    for (int i = 0; i < kNumLandmarks; i++)
        perm[i] = i;
    std::istringstream is(text);
    std::string line;
    bool versioned = false;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#')
            continue;
        std::istringstream ls(line);
        if (line.rfind("version", 0) == 0) {
            std::string kw;
            int v = 0;
            ls >> kw >> v;
            if (v != 1)
                throw std::invalid_argument("flip table: unsupported version " + std::to_string(v));
            versioned = true;
            continue;
        }
        int a = -1, b = -1;
        if (!(ls >> a >> b) || a < 0 || b < 0 || a >= kNumLandmarks || b >= kNumLandmarks)
            throw std::invalid_argument("flip table: bad line '" + line + "'");
        if (perm[a] != a || perm[b] != b)
            throw std::invalid_argument("flip table: index listed twice in '" + line + "'");
        perm[a] = b;
        perm[b] = a;
    }
    if (!versioned)
        throw std::invalid_argument("flip table: missing version line");
    return perm;
}

const std::array<int, kNumLandmarks>& flip_permutation()
{
    static const std::array<int, kNumLandmarks> perm = parse_flip_table(embedded::kLandmarkFlipTable);
    return perm;
}

Sample crop(const Sample& s, int x0, int y0, int size)
{
    const Shape is = s.image.shape();
    if (is.h < size || is.w < size)
        throw std::invalid_argument("crop: image " + std::to_string(is.w) + "x" + std::to_string(is.h) + " smaller than " +
                                    std::to_string(size));
    if (x0 < 0 || y0 < 0 || x0 + size > is.w || y0 + size > is.h)
        throw std::invalid_argument("crop: window out of bounds");
    Sample out = s;
    out.image = Tensor(Shape{1, is.c, size, size});
    for (int c = 0; c < is.c; c++)
        for (int y = 0; y < size; y++)
            for (int x = 0; x < size; x++)
                out.image.at(0, c, y, x) = s.image.at(0, c, y + y0, x + x0);
    for (auto& p : out.landmarks) {
        p.x -= x0;
        p.y -= y0;
    }
    return out;
}

Sample flip_horizontal(const Sample& s)
{
    const Shape is = s.image.shape();
    Sample out = s;
    for (int c = 0; c < is.c; c++)
        for (int y = 0; y < is.h; y++)
            for (int x = 0; x < is.w; x++)
                out.image.at(0, c, y, x) = s.image.at(0, c, y, is.w - 1 - x);
    const auto& perm = flip_permutation();
    for (int i = 0; i < kNumLandmarks; i++) {
        const Point2 src = s.landmarks[perm[i]];
        out.landmarks[i] = {is.w - 1 - src.x, src.y};
    }
    return out;
}

Sample align_and_augment(const Sample& s, bool train_mode, std::mt19937_64& rng)
{
    const Shape is = s.image.shape();
    if (is.h < kCropSize || is.w < kCropSize)
        throw std::invalid_argument("align_and_augment: image " + std::to_string(is.w) + "x" + std::to_string(is.h) +
                                    " smaller than 128x128");
    if (!train_mode)
        return crop(s, (is.w - kCropSize) / 2, (is.h - kCropSize) / 2);
    const int x0 = std::uniform_int_distribution<int>(0, is.w - kCropSize)(rng);
    const int y0 = std::uniform_int_distribution<int>(0, is.h - kCropSize)(rng);
    const bool flip = std::bernoulli_distribution(0.5)(rng);
    Sample out = crop(s, x0, y0);
    return flip ? flip_horizontal(out) : out;
}

double keys_cubic(double x, double a)
{
    x = std::abs(x);
    if (x < 1.0)
        return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
    if (x < 2.0)
        return (((x - 5.0) * x + 8.0) * x - 4.0) * a;
    return 0.0;
}

namespace {

struct Taps {
    int first = 0;
    std::vector<double> weights;
};

std::vector<Taps> resize_taps(int in, int out)
{
    const double scale = static_cast<double>(in) / out;
    const double stretch = std::max(scale, 1.0);
    const double support = 2.0 * stretch;
    std::vector<Taps> taps(out);
    for (int o = 0; o < out; o++) {
        const double centre = (o + 0.5) * scale - 0.5;
        const int lo = std::max(0, static_cast<int>(std::ceil(centre - support)));
        const int hi = std::min(in - 1, static_cast<int>(std::floor(centre + support)));
        Taps& t = taps[o];
        t.first = lo;
        double total = 0.0;
        for (int j = lo; j <= hi; j++) {
            const double w = keys_cubic((j - centre) / stretch);
            t.weights.push_back(w);
            total += w;
        }
        for (double& w : t.weights)
            w /= total;
    }
    return taps;
}

} // namespace

Tensor bicubic_resize(const Tensor& image, int out_h, int out_w)
{
    const Shape is = image.shape();
    if (out_h <= 0 || out_w <= 0)
        throw std::invalid_argument("bicubic_resize: non-positive output size");
    const auto tx = resize_taps(is.w, out_w);
    const auto ty = resize_taps(is.h, out_h);
    Tensor rows(Shape{is.n, is.c, is.h, out_w});
    for (int n = 0; n < is.n; n++)
        for (int c = 0; c < is.c; c++)
            for (int y = 0; y < is.h; y++)
                for (int x = 0; x < out_w; x++) {
                    double s = 0.0;
                    for (std::size_t k = 0; k < tx[x].weights.size(); k++)
                        s += tx[x].weights[k] * image.at(n, c, y, tx[x].first + static_cast<int>(k));
                    rows.at(n, c, y, x) = s;
                }
    Tensor out(Shape{is.n, is.c, out_h, out_w});
    for (int n = 0; n < is.n; n++)
        for (int c = 0; c < is.c; c++)
            for (int y = 0; y < out_h; y++)
                for (int x = 0; x < out_w; x++) {
                    double s = 0.0;
                    for (std::size_t k = 0; k < ty[y].weights.size(); k++)
                        s += ty[y].weights[k] * rows.at(n, c, ty[y].first + static_cast<int>(k), x);
                    out.at(n, c, y, x) = std::clamp(s, 0.0, 1.0);
                }
    return out;
}

Tensor bicubic_downsample(const Tensor& image, int factor)
{
    const Shape is = image.shape();
    if (factor < 1 || is.h % factor != 0 || is.w % factor != 0)
        throw std::invalid_argument("bicubic_downsample: " + std::to_string(is.w) + "x" + std::to_string(is.h) +
                                    " not divisible by " + std::to_string(factor));
    return bicubic_resize(image, is.h / factor, is.w / factor);
}

Tensor render_heatmaps(const LandmarkSet& landmarks, int out_size, double sigma, int frame_size)
{
    if (out_size <= 0 || sigma <= 0.0 || frame_size <= 0)
        throw std::invalid_argument("render_heatmaps: size and sigma must be positive");
    const double s = static_cast<double>(out_size) / frame_size;
    const double inv = 1.0 / (2.0 * sigma * sigma);
    Tensor out(Shape{1, kNumLandmarks, out_size, out_size});
    std::vector<double> gx(out_size), gy(out_size);
    for (int k = 0; k < kNumLandmarks; k++) {
        const double cx = landmarks[k].x * s;
        const double cy = landmarks[k].y * s;
        for (int i = 0; i < out_size; i++) {
            gx[i] = (i - cx) * (i - cx);
            gy[i] = (i - cy) * (i - cy);
        }
        double* plane = out.plane_ptr(0, k);
        for (int y = 0; y < out_size; y++)
            for (int x = 0; x < out_size; x++)
                plane[y * out_size + x] = std::exp(-(gx[x] + gy[y]) * inv);
    }
    return out;
}

std::vector<double> compute_au_weights(std::span<const double> occurrence_rates)
{
    if (occurrence_rates.empty())
        throw std::invalid_argument("compute_au_weights: empty rate vector");
    double inv_sum = 0.0;
    for (double r : occurrence_rates) {
        if (!(r > 0.0))
            throw std::invalid_argument("compute_au_weights: occurrence rate must be > 0, got " + std::to_string(r));
        inv_sum += 1.0 / r;
    }
    const double n = static_cast<double>(occurrence_rates.size());
    std::vector<double> w;
    w.reserve(occurrence_rates.size());
    for (double r : occurrence_rates)
        w.push_back((1.0 / r) * n / inv_sum);
    return w;
}

std::vector<int> binarize_intensities(std::span<const int> intensities)
{
    std::vector<int> out;
    out.reserve(intensities.size());
    for (int v : intensities) {
        if (v < 0 || v > 5)
            throw std::invalid_argument("binarize_intensities: intensity " + std::to_string(v) + " outside 0..5");
        out.push_back(v >= 2 ? 1 : 0);
    }
    return out;
}

Batch make_batch(std::span<const Sample> samples)
{
    if (samples.empty())
        throw std::invalid_argument("make_batch: empty batch");
    std::vector<Tensor> hr, lr, hm;
    const int n_au = static_cast<int>(samples[0].au_labels.size());
    Batch b;
    b.au_labels = Tensor(Shape{static_cast<int>(samples.size()), n_au, 1, 1});
    for (std::size_t i = 0; i < samples.size(); i++) {
        const Sample& s = samples[i];
        const Shape is = s.image.shape();
        if (is.h != kCropSize || is.w != kCropSize || is.c != 3)
            throw ShapeError("make_batch: expected 128x128 RGB sample, got " + is.str());
        if (static_cast<int>(s.au_labels.size()) != n_au)
            throw ShapeError("make_batch: inconsistent AU label width");
        hr.push_back(s.image);
        lr.push_back(bicubic_downsample(s.image, kScale));
        hm.push_back(render_heatmaps(s.landmarks, kHeatmapSize, kHeatmapSigma));
        for (int k = 0; k < n_au; k++)
            b.au_labels[i * n_au + k] = s.au_labels[k];
        b.landmarks.push_back(s.landmarks);
    }
    b.hr = stack_batch(hr);
    b.lr = stack_batch(lr);
    b.heatmaps = stack_batch(hm);
    return b;
}

} // namespace mpsr::data
