#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <stdexcept>

#include "mpsr/datakit.hpp"

namespace mpsr::data {

namespace {

constexpr int kSupersample = 2;

struct Rgb {
    double r, g, b;
};

Rgb mix(Rgb a, Rgb b, double t)
{
    return {a.r + (b.r - a.r) * t, a.g + (b.g - a.g) * t, a.b + (b.b - a.b) * t};
}

Rgb scaled(Rgb a, double f)
{
    return {a.r * f, a.g * f, a.b * f};
}

// Coverage masks are rasterised at kSupersample x resolution and blended
// onto the canvas; resolve() box-filters back to the frame size.
class Canvas {
public:
    explicit Canvas(int size)
        : size_(size * kSupersample), rgb_(3 * static_cast<std::size_t>(size_) * size_, 0.0),
          mask_(static_cast<std::size_t>(size_) * size_, 0)
    {
    }

    void gradient(Rgb top, Rgb bottom)
    {
        for (int y = 0; y < size_; y++) {
            const Rgb c = mix(top, bottom, static_cast<double>(y) / (size_ - 1));
            for (int x = 0; x < size_; x++)
                set(x, y, c);
        }
    }

    void fill_polygon(const std::vector<Point2>& pts, Rgb col, double alpha = 1.0)
    {
        clear_mask();
        polygon_mask(pts);
        blend(col, alpha);
    }

    void fill_ellipse(Point2 c, double rx, double ry, double angle, Rgb col, double alpha = 1.0)
    {
        clear_mask();
        ellipse_mask(c, rx, ry, angle);
        blend(col, alpha);
    }

    void disk(Point2 c, double r, Rgb col, double alpha = 1.0)
    {
        fill_ellipse(c, r, r, 0.0, col, alpha);
    }

    void stroke(const std::vector<Point2>& pts, double width, Rgb col, double alpha = 1.0)
    {
        clear_mask();
        for (std::size_t i = 0; i + 1 < pts.size(); i++)
            segment_mask(pts[i], pts[i + 1], width);
        blend(col, alpha);
    }

    /// Iris-style fill: disk clipped to a polygon.
    void disk_in_polygon(Point2 c, double r, const std::vector<Point2>& clip, Rgb col)
    {
        clear_mask();
        polygon_mask(clip);
        std::vector<unsigned char> poly = mask_;
        clear_mask();
        ellipse_mask(c, r, r, 0.0);
        for (std::size_t i = 0; i < mask_.size(); i++)
            mask_[i] = mask_[i] & poly[i];
        blend(col, 1.0);
    }

    /// Darkens pixels towards the rim of an ellipse, inside the last polygon.
    void rim_shade(const std::vector<Point2>& region, Point2 c, double rx, double ry, double strength)
    {
        clear_mask();
        polygon_mask(region);
        for (int y = 0; y < size_; y++)
            for (int x = 0; x < size_; x++) {
                if (!mask_[idx(x, y)])
                    continue;
                const Point2 p = to_frame(x, y);
                const double u = (p.x - c.x) / rx;
                const double v = (p.y - c.y) / ry;
                const double f = 1.0 - strength * std::min(1.0, u * u + v * v);
                for (int ch = 0; ch < 3; ch++)
                    rgb_[ch * plane() + idx(x, y)] *= f;
            }
    }

    Tensor resolve(const std::vector<double>& noise, int noise_grid, double noise_amp) const
    {
        const int out = size_ / kSupersample;
        Tensor t(Shape{1, 3, out, out});
        for (int y = 0; y < out; y++)
            for (int x = 0; x < out; x++) {
                // bilinear lookup into the coarse noise lattice
                const double gx = (x + 0.5) / out * (noise_grid - 1);
                const double gy = (y + 0.5) / out * (noise_grid - 1);
                const int ix = std::min(static_cast<int>(gx), noise_grid - 2);
                const int iy = std::min(static_cast<int>(gy), noise_grid - 2);
                const double fx = gx - ix;
                const double fy = gy - iy;
                const double n = (1 - fy) * ((1 - fx) * noise[iy * noise_grid + ix] + fx * noise[iy * noise_grid + ix + 1]) +
                                 fy * ((1 - fx) * noise[(iy + 1) * noise_grid + ix] + fx * noise[(iy + 1) * noise_grid + ix + 1]);
                for (int c = 0; c < 3; c++) {
                    double s = 0.0;
                    for (int dy = 0; dy < kSupersample; dy++)
                        for (int dx = 0; dx < kSupersample; dx++)
                            s += rgb_[c * plane() + idx(x * kSupersample + dx, y * kSupersample + dy)];
                    const double v = std::clamp(s / (kSupersample * kSupersample) + noise_amp * n, 0.0, 1.0);
                    t.at(0, c, y, x) = std::round(v * 255.0) / 255.0;
                }
            }
        return t;
    }

private:
    std::size_t plane() const { return static_cast<std::size_t>(size_) * size_; }
    std::size_t idx(int x, int y) const { return static_cast<std::size_t>(y) * size_ + x; }

    // Supersampled pixel centre in frame coordinates.
    static Point2 to_frame(int x, int y)
    {
        return {(x + 0.5) / kSupersample - 0.5, (y + 0.5) / kSupersample - 0.5};
    }
    static double to_canvas(double v) { return (v + 0.5) * kSupersample - 0.5; }

    void set(int x, int y, Rgb c)
    {
        rgb_[idx(x, y)] = c.r;
        rgb_[plane() + idx(x, y)] = c.g;
        rgb_[2 * plane() + idx(x, y)] = c.b;
    }

    void clear_mask() { std::fill(mask_.begin(), mask_.end(), 0); }

    void blend(Rgb col, double alpha)
    {
        const double v[3] = {col.r, col.g, col.b};
        for (std::size_t i = 0; i < mask_.size(); i++) {
            if (!mask_[i])
                continue;
            for (int c = 0; c < 3; c++) {
                double& dst = rgb_[c * plane() + i];
                dst = dst * (1.0 - alpha) + v[c] * alpha;
            }
        }
    }

    void polygon_mask(const std::vector<Point2>& pts)
    {
        std::vector<double> xs;
        for (int y = 0; y < size_; y++) {
            const double py = y;
            xs.clear();
            for (std::size_t i = 0; i < pts.size(); i++) {
                const Point2 a{to_canvas(pts[i].x), to_canvas(pts[i].y)};
                const Point2 b{to_canvas(pts[(i + 1) % pts.size()].x), to_canvas(pts[(i + 1) % pts.size()].y)};
                if ((a.y <= py && b.y > py) || (b.y <= py && a.y > py))
                    xs.push_back(a.x + (py - a.y) / (b.y - a.y) * (b.x - a.x));
            }
            std::sort(xs.begin(), xs.end());
            for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
                const int x0 = std::max(0, static_cast<int>(std::ceil(xs[k])));
                const int x1 = std::min(size_ - 1, static_cast<int>(std::floor(xs[k + 1])));
                for (int x = x0; x <= x1; x++)
                    mask_[idx(x, y)] = 1;
            }
        }
    }

    void ellipse_mask(Point2 c, double rx, double ry, double angle)
    {
        const double cx = to_canvas(c.x);
        const double cy = to_canvas(c.y);
        const double sx = rx * kSupersample;
        const double sy = ry * kSupersample;
        const double r = std::max(sx, sy) + 1;
        const double ca = std::cos(angle);
        const double sa = std::sin(angle);
        for (int y = std::max(0, static_cast<int>(cy - r)); y <= std::min(size_ - 1, static_cast<int>(cy + r)); y++)
            for (int x = std::max(0, static_cast<int>(cx - r)); x <= std::min(size_ - 1, static_cast<int>(cx + r)); x++) {
                const double dx = x - cx;
                const double dy = y - cy;
                const double u = (dx * ca + dy * sa) / sx;
                const double v = (-dx * sa + dy * ca) / sy;
                if (u * u + v * v <= 1.0)
                    mask_[idx(x, y)] = 1;
            }
    }

    void segment_mask(Point2 a, Point2 b, double width)
    {
        const double ax = to_canvas(a.x), ay = to_canvas(a.y);
        const double bx = to_canvas(b.x), by = to_canvas(b.y);
        const double hw = 0.5 * width * kSupersample;
        const double len2 = (bx - ax) * (bx - ax) + (by - ay) * (by - ay);
        const int x0 = std::max(0, static_cast<int>(std::min(ax, bx) - hw - 1));
        const int x1 = std::min(size_ - 1, static_cast<int>(std::max(ax, bx) + hw + 1));
        const int y0 = std::max(0, static_cast<int>(std::min(ay, by) - hw - 1));
        const int y1 = std::min(size_ - 1, static_cast<int>(std::max(ay, by) + hw + 1));
        for (int y = y0; y <= y1; y++)
            for (int x = x0; x <= x1; x++) {
                double t = len2 > 0 ? ((x - ax) * (bx - ax) + (y - ay) * (by - ay)) / len2 : 0.0;
                t = std::clamp(t, 0.0, 1.0);
                const double dx = x - (ax + t * (bx - ax));
                const double dy = y - (ay + t * (by - ay));
                if (dx * dx + dy * dy <= hw * hw)
                    mask_[idx(x, y)] = 1;
            }
    }

    int size_;
    std::vector<double> rgb_;
    std::vector<unsigned char> mask_;
};

struct Identity {
    double half_width, half_height;
    double eye_dx, eye_y, eye_w, eye_h;
    double brow_y;
    double mouth_y, mouth_w;
    Rgb skin, hair, lips, iris, bg_top, bg_bottom;
};

struct Expression {
    double dx, dy, angle, scale;
    std::vector<int> labels;
};

double uniform(std::mt19937_64& rng, double lo, double hi)
{
    return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Rgb random_colour(std::mt19937_64& rng, Rgb lo, Rgb hi)
{
    return {uniform(rng, lo.r, hi.r), uniform(rng, lo.g, hi.g), uniform(rng, lo.b, hi.b)};
}

Identity draw_identity(std::uint64_t seed)
{
    std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ull + 0x51ED2701ull);
    Identity id{};
    id.half_width = uniform(rng, 40.0, 45.0);
    id.half_height = uniform(rng, 50.0, 54.0);
    id.eye_dx = uniform(rng, 0.33, 0.39);
    id.eye_y = uniform(rng, -0.2, -0.16);
    id.eye_w = uniform(rng, 0.13, 0.15);
    id.eye_h = uniform(rng, 0.055, 0.07);
    id.brow_y = uniform(rng, -0.40, -0.35);
    id.mouth_y = uniform(rng, 0.47, 0.53);
    id.mouth_w = uniform(rng, 0.27, 0.32);
    id.skin = random_colour(rng, {0.55, 0.38, 0.28}, {0.95, 0.80, 0.70});
    id.hair = random_colour(rng, {0.05, 0.03, 0.02}, {0.45, 0.32, 0.2});
    id.lips = random_colour(rng, {0.55, 0.2, 0.2}, {0.8, 0.4, 0.4});
    id.iris = random_colour(rng, {0.1, 0.1, 0.05}, {0.35, 0.45, 0.55});
    id.bg_top = random_colour(rng, {0.2, 0.2, 0.2}, {0.9, 0.9, 0.9});
    id.bg_bottom = random_colour(rng, {0.1, 0.1, 0.1}, {0.8, 0.8, 0.8});
    return id;
}

// Base occurrence rates give the label imbalance real AU corpora show.
double au_base_rate(int au)
{
    switch (au) {
    case 1: return 0.22;
    case 2: return 0.18;
    case 4: return 0.2;
    case 6: return 0.42;
    case 7: return 0.5;
    case 9: return 0.08;
    case 10: return 0.55;
    case 12: return 0.5;
    case 14: return 0.42;
    case 15: return 0.16;
    case 17: return 0.32;
    case 23: return 0.16;
    case 24: return 0.14;
    case 25: return 0.35;
    case 26: return 0.2;
    default: return 0.2;
    }
}

Expression draw_expression(std::uint64_t seed, int n_au)
{
    std::mt19937_64 rng(seed * 0xD1B54A32D192ED03ull + 0x2545F491ull);
    Expression e{};
    e.dx = uniform(rng, -3.0, 3.0);
    e.dy = uniform(rng, -3.0, 3.0);
    e.angle = uniform(rng, -0.08, 0.08);
    e.scale = uniform(rng, 0.96, 1.04);
    for (int au : au_ids(n_au))
        e.labels.push_back(std::bernoulli_distribution(au_base_rate(au))(rng) ? 1 : 0);
    return e;
}

class FaceFrame {
public:
    FaceFrame(const Identity& id, const Expression& e)
        : cx_(72.0 + e.dx), cy_(70.0 + e.dy), a_(id.half_width * e.scale), b_(id.half_height * e.scale),
          ca_(std::cos(e.angle)), sa_(std::sin(e.angle))
    {
    }

    Point2 operator()(double u, double v) const
    {
        const double x = u * a_;
        const double y = v * b_;
        return {cx_ + ca_ * x - sa_ * y, cy_ + sa_ * x + ca_ * y};
    }

    Point2 centre() const { return {cx_, cy_}; }
    double a() const { return a_; }
    double b() const { return b_; }
    double angle() const { return std::atan2(sa_, ca_); }

private:
    double cx_, cy_, a_, b_, ca_, sa_;
};

bool active(const std::vector<int>& ids, const std::vector<int>& labels, int au)
{
    for (std::size_t i = 0; i < ids.size(); i++)
        if (ids[i] == au)
            return labels[i] != 0;
    return false;
}

struct FaceLayout {
    LandmarkSet pts{};
    double lip_gap = 0.0;
};

FaceLayout layout_landmarks(const Identity& id, const std::vector<int>& ids, const std::vector<int>& labels,
                            const FaceFrame& f)
{
    auto on = [&](int au) { return active(ids, labels, au); };
    FaceLayout out;
    LandmarkSet uv{};

    const double jaw_drop = on(26) ? 0.07 : 0.0;
    for (int k = 0; k <= 16; k++) {
        const double beta = -0.15 + k * (std::numbers::pi + 0.3) / 16.0;
        const double s = std::max(0.0, std::sin(beta));
        uv[k] = {-std::cos(beta) * 0.95, std::sin(beta) * 0.92 + jaw_drop * s * s};
    }

    // brows: 17..21 image-left (outer -> inner), 22..26 image-right (inner -> outer)
    for (int k = 0; k < 5; k++) {
        const double s = k / 4.0;
        const double arch = 0.06 * std::sin(std::numbers::pi * (0.2 + 0.7 * s));
        double vy = id.brow_y - arch;
        const bool inner = k >= 3;
        const bool outer = k <= 1;
        if (on(1) && inner)
            vy -= 0.06;
        if (on(2) && outer)
            vy -= 0.06;
        double ux = -0.62 + 0.5 * s;
        if (on(4)) {
            vy += 0.04 + (inner ? 0.03 : 0.0);
            if (inner)
                ux += 0.03;
        }
        uv[17 + k] = {ux, vy};
        uv[26 - k] = {-ux, vy};
    }

    for (int k = 0; k < 4; k++)
        uv[27 + k] = {0.0, -0.22 + 0.11 * k};
    const double nose_lift = on(9) ? -0.02 : 0.0;
    for (int k = 0; k < 5; k++) {
        const double ux = -0.14 + 0.07 * k;
        uv[31 + k] = {ux, 0.2 + nose_lift + (k == 2 ? 0.02 : 0.0)};
    }

    double eye_h = id.eye_h;
    if (on(7))
        eye_h *= 0.5;
    const double lower_lift = on(6) ? 0.02 : 0.0;
    for (int side = 0; side < 2; side++) {
        const double sign = side == 0 ? -1.0 : 1.0;
        const double ex = sign * id.eye_dx;
        const double ey = id.eye_y;
        const double w = id.eye_w;
        // outer corner, upper outer, upper inner, inner corner, lower inner, lower outer
        const Point2 ring[6] = {
            {ex + sign * w, ey},
            {ex + sign * w / 3, ey - eye_h},
            {ex - sign * w / 3, ey - eye_h},
            {ex - sign * w, ey},
            {ex - sign * w / 3, ey + eye_h - lower_lift},
            {ex + sign * w / 3, ey + eye_h - lower_lift},
        };
        if (side == 0) {
            for (int k = 0; k < 6; k++)
                uv[36 + k] = ring[k];
        } else {
            // right eye runs inner corner first: 42 inner, 43/44 upper, 45 outer, 46/47 lower
            uv[42] = ring[3];
            uv[43] = ring[2];
            uv[44] = ring[1];
            uv[45] = ring[0];
            uv[46] = ring[5];
            uv[47] = ring[4];
        }
    }

    double mw = id.mouth_w;
    double corner_dy = 0.0;
    double upper = 0.07;
    double lower = 0.08;
    double gap = 0.0;
    double upper_shift = 0.0;
    double lower_shift = 0.0;
    if (on(12)) {
        mw *= 1.12;
        corner_dy -= 0.06;
    }
    if (on(14))
        mw *= 1.05;
    if (on(15))
        corner_dy += 0.05;
    if (on(10))
        upper_shift -= 0.03;
    if (on(17))
        lower_shift -= 0.02;
    if (on(23)) {
        upper *= 0.6;
        lower *= 0.6;
    }
    if (on(24)) {
        upper *= 0.7;
        lower *= 0.7;
    }
    if (on(25))
        gap = 0.04;
    if (on(26))
        gap = std::max(gap, 0.09);
    const double my = id.mouth_y + jaw_drop * 0.3;
    auto mouth = [&](double ux, double vy) { return Point2{ux, my + vy}; };
    const double half = 0.5 * gap;
    uv[48] = mouth(-mw, corner_dy);
    uv[49] = mouth(-mw * 0.6, -half - upper + upper_shift + 0.3 * corner_dy);
    uv[50] = mouth(-mw * 0.25, -half - upper - 0.01 + upper_shift);
    uv[51] = mouth(0.0, -half - upper + 0.005 + upper_shift);
    uv[52] = mouth(mw * 0.25, -half - upper - 0.01 + upper_shift);
    uv[53] = mouth(mw * 0.6, -half - upper + upper_shift + 0.3 * corner_dy);
    uv[54] = mouth(mw, corner_dy);
    uv[55] = mouth(mw * 0.6, half + lower + lower_shift + 0.3 * corner_dy);
    uv[56] = mouth(mw * 0.25, half + lower + 0.01 + lower_shift);
    uv[57] = mouth(0.0, half + lower + 0.015 + lower_shift);
    uv[58] = mouth(-mw * 0.25, half + lower + 0.01 + lower_shift);
    uv[59] = mouth(-mw * 0.6, half + lower + lower_shift + 0.3 * corner_dy);
    uv[60] = mouth(-mw * 0.85, 0.8 * corner_dy);
    uv[61] = mouth(-mw * 0.3, -half + upper_shift * 0.5);
    uv[62] = mouth(0.0, -half + upper_shift * 0.5);
    uv[63] = mouth(mw * 0.3, -half + upper_shift * 0.5);
    uv[64] = mouth(mw * 0.85, 0.8 * corner_dy);
    uv[65] = mouth(mw * 0.3, half + lower_shift * 0.5);
    uv[66] = mouth(0.0, half + lower_shift * 0.5);
    uv[67] = mouth(-mw * 0.3, half + lower_shift * 0.5);

    for (int i = 0; i < kNumLandmarks; i++) {
        Point2 p = f(uv[i].x, uv[i].y);
        // Keeps every point inside [0, 128) under any 128 crop of the 144 frame.
        p.x = std::clamp(p.x, 16.5, 127.0);
        p.y = std::clamp(p.y, 16.5, 127.0);
        out.pts[i] = p;
    }
    out.lip_gap = gap;
    return out;
}

std::vector<Point2> range(const LandmarkSet& pts, int first, int last)
{
    std::vector<Point2> out;
    for (int i = first; i <= last; i++)
        out.push_back(pts[i]);
    return out;
}

Point2 lerp(Point2 a, Point2 b, double t)
{
    return {a.x + (b.x - a.x) * t, a.y + (b.y - a.y) * t};
}

Tensor paint(const Identity& id, const std::vector<int>& ids, const std::vector<int>& labels, const FaceFrame& f,
             const FaceLayout& layout, std::uint64_t noise_seed)
{
    auto on = [&](int au) { return active(ids, labels, au); };
    const LandmarkSet& p = layout.pts;
    Canvas cv(kFrameSize);
    cv.gradient(id.bg_top, id.bg_bottom);

    // hair mass and neck
    cv.fill_ellipse(f(0.0, -0.25), f.a() * 1.1, f.b() * 0.95, f.angle(), id.hair);
    cv.fill_polygon({f(-0.45, 0.6), f(0.45, 0.6), f(0.55, 1.5), f(-0.55, 1.5)}, scaled(id.skin, 0.82));

    // face: jaw contour closed by a forehead arc
    std::vector<Point2> face = range(p, 0, 16);
    for (int k = 1; k < 12; k++) {
        const double t = 0.15 + k * (std::numbers::pi - 0.3) / 12.0;
        face.push_back(f(std::cos(t) * 0.95, -std::sin(t) * 0.85 - 0.1));
    }
    cv.fill_polygon(face, id.skin);
    cv.rim_shade(face, f(0.0, 0.05), f.a() * 1.05, f.b() * 1.05, 0.2);
    cv.fill_ellipse(f(0.0, -0.82), f.a() * 0.92, f.b() * 0.3, f.angle(), id.hair);

    const Rgb dark = scaled(id.skin, 0.45);
    if (on(6)) {
        cv.fill_ellipse(lerp(p[41], p[31], 0.45), 6.0, 3.5, f.angle(), {0.85, 0.35, 0.35}, 0.3);
        cv.fill_ellipse(lerp(p[46], p[35], 0.45), 6.0, 3.5, f.angle(), {0.85, 0.35, 0.35}, 0.3);
        for (int k = -1; k <= 1; k++) {
            const double d = 3.0 * k;
            cv.stroke({{p[36].x - 2, p[36].y + d * 0.5}, {p[36].x - 6, p[36].y + d}}, 0.8, dark, 0.6);
            cv.stroke({{p[45].x + 2, p[45].y + d * 0.5}, {p[45].x + 6, p[45].y + d}}, 0.8, dark, 0.6);
        }
    }

    cv.stroke(range(p, 17, 21), 2.4, id.hair);
    cv.stroke(range(p, 22, 26), 2.4, id.hair);
    if (on(4)) {
        const Point2 m = lerp(p[21], p[22], 0.5);
        cv.stroke({{m.x - 2, m.y - 1}, {m.x - 2, m.y + 6}}, 0.9, dark, 0.7);
        cv.stroke({{m.x + 2, m.y - 1}, {m.x + 2, m.y + 6}}, 0.9, dark, 0.7);
    }

    const Rgb sclera{0.95, 0.94, 0.92};
    const double iris_r = std::max(2.0, 0.075 * f.a() * 2.0 * 0.5);
    for (int side = 0; side < 2; side++) {
        const int first = side == 0 ? 36 : 42;
        std::vector<Point2> eye = range(p, first, first + 5);
        cv.fill_polygon(eye, sclera);
        const Point2 c = lerp(p[first], p[first + 3], 0.5);
        cv.disk_in_polygon(c, iris_r, eye, id.iris);
        cv.disk_in_polygon(c, iris_r * 0.45, eye, {0.02, 0.02, 0.02});
        cv.stroke(range(p, first, first + 3), 1.2, scaled(id.hair, 0.6));
    }

    cv.stroke(range(p, 27, 30), 1.5, dark, 0.35);
    cv.stroke(range(p, 31, 35), 1.2, dark, 0.6);
    cv.disk(p[32], 1.3, scaled(id.skin, 0.3));
    cv.disk(p[34], 1.3, scaled(id.skin, 0.3));
    if (on(9))
        for (int k = 0; k < 3; k++) {
            const Point2 c = lerp(p[27], p[29], 0.2 + 0.3 * k);
            cv.stroke({{c.x - 4, c.y}, {c.x + 4, c.y}}, 0.8, dark, 0.7);
        }
    if (on(10)) {
        cv.stroke({p[31], lerp(p[31], p[48], 0.5), p[48]}, 1.0, dark, 0.5);
        cv.stroke({p[35], lerp(p[35], p[54], 0.5), p[54]}, 1.0, dark, 0.5);
    }

    cv.fill_polygon(range(p, 48, 59), id.lips);
    if (layout.lip_gap > 0.0) {
        cv.fill_polygon(range(p, 60, 67), {0.2, 0.05, 0.05});
        if (on(25))
            cv.fill_polygon({p[61], p[62], p[63], lerp(p[63], p[65], 0.35), lerp(p[62], p[66], 0.35), lerp(p[61], p[67], 0.35)},
                            {0.95, 0.93, 0.88});
    } else {
        cv.stroke(range(p, 60, 64), on(24) ? 1.6 : 0.9, {0.25, 0.08, 0.08});
    }
    if (on(14)) {
        cv.disk({p[48].x - 3.0, p[48].y + 1.0}, 1.5, dark, 0.55);
        cv.disk({p[54].x + 3.0, p[54].y + 1.0}, 1.5, dark, 0.55);
    }
    if (on(17)) {
        const Point2 chin = lerp(p[57], p[8], 0.55);
        for (int k = -1; k <= 1; k++)
            cv.disk({chin.x + 3.0 * k, chin.y + (k == 0 ? 1.5 : 0.0)}, 1.1, dark, 0.4);
    }

    constexpr int kNoiseGrid = 19;
    std::mt19937_64 rng(noise_seed);
    std::normal_distribution<double> n01(0.0, 1.0);
    std::vector<double> noise(kNoiseGrid * kNoiseGrid);
    for (double& v : noise)
        v = n01(rng);
    return cv.resolve(noise, kNoiseGrid, 0.02);
}

} // namespace

const std::vector<int>& au_ids(int n_au)
{
    static const std::vector<int> twelve{1, 2, 4, 6, 7, 10, 12, 14, 15, 17, 23, 24};
    static const std::vector<int> eight{1, 2, 4, 6, 9, 12, 25, 26};
    if (n_au == 12)
        return twelve;
    if (n_au == 8)
        return eight;
    throw std::invalid_argument("unsupported AU count " + std::to_string(n_au) + " (expected 12 or 8)");
}

Sample generate_synthetic_frame(std::uint64_t subject_seed, std::uint64_t frame_seed, int n_au, const std::string& subject_id,
                                const std::string& frame_id)
{
    const std::vector<int>& ids = au_ids(n_au);
    const Identity id = draw_identity(subject_seed);
    const Expression e = draw_expression(frame_seed ^ (subject_seed << 20), n_au);
    const FaceFrame frame(id, e);
    const FaceLayout layout = layout_landmarks(id, ids, e.labels, frame);

    Sample s;
    s.image = paint(id, ids, e.labels, frame, layout, frame_seed * 31 + subject_seed * 131 + 7);
    s.landmarks = layout.pts;
    s.au_labels = e.labels;
    s.subject_id = subject_id;
    s.frame_id = frame_id;
    return s;
}

Sample generate_synthetic_sample(std::uint64_t seed, int n_au)
{
    return generate_synthetic_frame(seed, seed, n_au, "s" + std::to_string(seed), "f0");
}

} // namespace mpsr::data
