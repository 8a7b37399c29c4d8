#include "mpsr/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace mpsr::ops {

using ag::Node;
using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using ConstMapRM = Eigen::Map<const MatRM>;

namespace {

struct Geometry {
    int channels, height, width;
    int kernel, stride, pad;
    int out_h, out_w;
};

// Rows of col are (channel, ky, kx); columns are output positions.
void im2col(const double* x, const Geometry& g, double* col)
{
    const int out_plane = g.out_h * g.out_w;
    for (int c = 0; c < g.channels; c++) {
        for (int ky = 0; ky < g.kernel; ky++) {
            for (int kx = 0; kx < g.kernel; kx++) {
                double* dst = col + static_cast<std::size_t>((c * g.kernel + ky) * g.kernel + kx) * out_plane;
                for (int oy = 0; oy < g.out_h; oy++) {
                    const int iy = oy * g.stride - g.pad + ky;
                    double* row = dst + oy * g.out_w;
                    if (iy < 0 || iy >= g.height) {
                        std::fill(row, row + g.out_w, 0.0);
                        continue;
                    }
                    const double* src = x + (static_cast<std::size_t>(c) * g.height + iy) * g.width;
                    for (int ox = 0; ox < g.out_w; ox++) {
                        const int ix = ox * g.stride - g.pad + kx;
                        row[ox] = (ix >= 0 && ix < g.width) ? src[ix] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im_add(const double* col, const Geometry& g, double* x)
{
    const int out_plane = g.out_h * g.out_w;
    for (int c = 0; c < g.channels; c++) {
        for (int ky = 0; ky < g.kernel; ky++) {
            for (int kx = 0; kx < g.kernel; kx++) {
                const double* src = col + static_cast<std::size_t>((c * g.kernel + ky) * g.kernel + kx) * out_plane;
                for (int oy = 0; oy < g.out_h; oy++) {
                    const int iy = oy * g.stride - g.pad + ky;
                    if (iy < 0 || iy >= g.height)
                        continue;
                    const double* row = src + oy * g.out_w;
                    double* dst = x + (static_cast<std::size_t>(c) * g.height + iy) * g.width;
                    for (int ox = 0; ox < g.out_w; ox++) {
                        const int ix = ox * g.stride - g.pad + kx;
                        if (ix >= 0 && ix < g.width)
                            dst[ix] += row[ox];
                    }
                }
            }
        }
    }
}

bool is_pointwise(const Geometry& g)
{
    return g.kernel == 1 && g.stride == 1 && g.pad == 0;
}

void check_bias(const Var& bias, int channels, const char* op)
{
    if (bias.defined() && bias.value().size() != static_cast<std::size_t>(channels))
        throw ShapeError(std::string(op) + ": bias " + bias.shape().str() + " for " + std::to_string(channels) + " channels");
}

Node* input(Node& self, std::size_t i)
{
    return i < self.inputs.size() ? self.inputs[i].get() : nullptr;
}

thread_local KinkTrace* g_kink = nullptr;

} // namespace

KinkTrace::KinkTrace()
    : previous_(g_kink)
{
    g_kink = this;
}

KinkTrace::~KinkTrace()
{
    g_kink = previous_;
}

std::uint64_t KinkTrace::signature() const
{
    return (hash_ ^ word_ ^ static_cast<std::uint64_t>(bits_)) * 0x100000001b3ULL;
}

void note_kink_index(std::uint64_t v)
{
    KinkTrace* k = g_kink;
    if (!k)
        return;
    k->hash_ = (k->hash_ ^ v) * 0x100000001b3ULL;
}

void note_kink_side(bool positive)
{
    KinkTrace* k = g_kink;
    if (!k)
        return;
    k->word_ = (k->word_ << 1) | (positive ? 1u : 0u);
    if (++k->bits_ == 64) {
        note_kink_index(k->word_);
        k->word_ = 0;
        k->bits_ = 0;
    }
}

namespace {

void note_signs(const Tensor& t)
{
    if (!g_kink)
        return;
    for (std::size_t i = 0; i < t.size(); i++)
        note_kink_side(t[i] > 0.0);
}

} // namespace

Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad)
{
    const Shape xs = x.shape();
    const Shape ws = weight.shape();
    if (ws.c != xs.c || ws.h != ws.w)
        throw ShapeError("conv2d: weight " + ws.str() + " for input " + xs.str());
    check_bias(bias, ws.n, "conv2d");
    Geometry g{xs.c, xs.h, xs.w, ws.h, stride, pad, 0, 0};
    g.out_h = (xs.h + 2 * pad - g.kernel) / stride + 1;
    g.out_w = (xs.w + 2 * pad - g.kernel) / stride + 1;
    if (g.out_h <= 0 || g.out_w <= 0)
        throw ShapeError("conv2d: empty output for input " + xs.str());

    const int cout = ws.n;
    const int rows = xs.c * g.kernel * g.kernel;
    const int cols = g.out_h * g.out_w;
    Tensor out(Shape{xs.n, cout, g.out_h, g.out_w});
    ConstMapRM wmat(weight.value().data(), cout, rows);
    MatRM col;
    if (!is_pointwise(g))
        col.resize(rows, cols);
    for (int n = 0; n < xs.n; n++) {
        MapRM o(out.item_ptr(n), cout, cols);
        if (is_pointwise(g)) {
            o.noalias() = wmat * ConstMapRM(x.value().item_ptr(n), rows, cols);
        } else {
            im2col(x.value().item_ptr(n), g, col.data());
            o.noalias() = wmat * col;
        }
        if (bias.defined())
            o.colwise() += Eigen::Map<const Eigen::VectorXd>(bias.value().data(), cout);
    }

    std::vector<Var> inputs{x, weight};
    if (bias.defined())
        inputs.push_back(bias);
    return ag::make_result(std::move(out), std::move(inputs), [g, cout, rows, cols](Node& self) {
        Node* xn = input(self, 0);
        Node* wn = input(self, 1);
        Node* bn = input(self, 2);
        const Tensor& gout = self.grad;
        const int batch = gout.shape().n;
        ConstMapRM wmat(wn->value.data(), cout, rows);
        MatRM col(rows, cols);
        for (int n = 0; n < batch; n++) {
            ConstMapRM go(gout.item_ptr(n), cout, cols);
            if (wn->requires_grad) {
                MapRM gw(wn->grad_buffer().data(), cout, rows);
                if (is_pointwise(g)) {
                    gw.noalias() += go * ConstMapRM(xn->value.item_ptr(n), rows, cols).transpose();
                } else {
                    im2col(xn->value.item_ptr(n), g, col.data());
                    gw.noalias() += go * col.transpose();
                }
            }
            if (bn && bn->requires_grad) {
                Eigen::Map<Eigen::VectorXd> gb(bn->grad_buffer().data(), cout);
                gb += go.rowwise().sum();
            }
            if (xn->requires_grad) {
                if (is_pointwise(g)) {
                    MapRM gx(xn->grad_buffer().item_ptr(n), rows, cols);
                    gx.noalias() += wmat.transpose() * go;
                } else {
                    col.noalias() = wmat.transpose() * go;
                    col2im_add(col.data(), g, xn->grad_buffer().item_ptr(n));
                }
            }
        }
    });
}

Var pointwise_conv(const std::vector<Var>& parts, const std::vector<int>& widths, const Var& weight, const Var& bias)
{
    if (parts.empty() || parts.size() != widths.size())
        throw ShapeError("pointwise_conv: parts and widths disagree");
    const Shape ws = weight.shape();
    int total = 0;
    Shape ref{0, 0, 0, 0};
    for (std::size_t i = 0; i < parts.size(); i++) {
        total += widths[i];
        if (!parts[i].defined())
            continue;
        const Shape ps = parts[i].shape();
        if (ps.c != widths[i])
            throw ShapeError("pointwise_conv: part " + std::to_string(i) + " is " + ps.str() + ", expected " +
                             std::to_string(widths[i]) + " channels");
        if (ref.n == 0)
            ref = ps;
        else if (ps.n != ref.n || ps.h != ref.h || ps.w != ref.w)
            throw ShapeError("pointwise_conv: part " + ps.str() + " vs " + ref.str());
    }
    if (ref.n == 0)
        throw ShapeError("pointwise_conv: every part is empty");
    if (ws.c != total || ws.h != 1 || ws.w != 1)
        throw ShapeError("pointwise_conv: weight " + ws.str() + " for " + std::to_string(total) + " input channels");
    check_bias(bias, ws.n, "pointwise_conv");

    const int cout = ws.n;
    const int cols = ref.h * ref.w;
    std::vector<int> offsets;
    for (std::size_t i = 0, off = 0; i < widths.size(); off += widths[i], i++)
        offsets.push_back(static_cast<int>(off));
    Tensor out(Shape{ref.n, cout, ref.h, ref.w});
    ConstMapRM wmat(weight.value().data(), cout, total);
    for (int n = 0; n < ref.n; n++) {
        MapRM o(out.item_ptr(n), cout, cols);
        o.setZero();
        for (std::size_t i = 0; i < parts.size(); i++)
            if (parts[i].defined())
                o.noalias() += wmat.middleCols(offsets[i], widths[i]) * ConstMapRM(parts[i].value().item_ptr(n), widths[i], cols);
        if (bias.defined())
            o.colwise() += Eigen::Map<const Eigen::VectorXd>(bias.value().data(), cout);
    }

    // inputs: defined parts in order, then weight, then bias
    std::vector<Var> inputs;
    std::vector<int> part_slot;
    for (std::size_t i = 0; i < parts.size(); i++)
        if (parts[i].defined()) {
            part_slot.push_back(static_cast<int>(i));
            inputs.push_back(parts[i]);
        }
    const std::size_t np = inputs.size();
    inputs.push_back(weight);
    if (bias.defined())
        inputs.push_back(bias);
    return ag::make_result(std::move(out), std::move(inputs),
                           [np, part_slot, offsets, widths, cout, total, cols](Node& self) {
        Node* wn = input(self, np);
        Node* bn = input(self, np + 1);
        const int batch = self.value.shape().n;
        ConstMapRM wmat(wn->value.data(), cout, total);
        for (int n = 0; n < batch; n++) {
            ConstMapRM go(self.grad.item_ptr(n), cout, cols);
            for (std::size_t k = 0; k < np; k++) {
                Node* xn = input(self, k);
                const int off = offsets[part_slot[k]];
                const int width = widths[part_slot[k]];
                if (wn->requires_grad) {
                    MapRM gw(wn->grad_buffer().data(), cout, total);
                    gw.middleCols(off, width).noalias() += go * ConstMapRM(xn->value.item_ptr(n), width, cols).transpose();
                }
                if (xn->requires_grad) {
                    MapRM gx(xn->grad_buffer().item_ptr(n), width, cols);
                    gx.noalias() += wmat.middleCols(off, width).transpose() * go;
                }
            }
            if (bn && bn->requires_grad) {
                Eigen::Map<Eigen::VectorXd> gb(bn->grad_buffer().data(), cout);
                gb += go.rowwise().sum();
            }
        }
    });
}

Var conv_transpose2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad)
{
    const Shape xs = x.shape();
    const Shape ws = weight.shape();
    if (ws.n != xs.c || ws.h != ws.w)
        throw ShapeError("conv_transpose2d: weight " + ws.str() + " for input " + xs.str());
    const int cout = ws.c;
    check_bias(bias, cout, "conv_transpose2d");
    const int k = ws.h;
    // Geometry of the adjoint convolution that maps the output back to x.
    Geometry g{cout, (xs.h - 1) * stride - 2 * pad + k, (xs.w - 1) * stride - 2 * pad + k, k, stride, pad, xs.h, xs.w};
    if (g.height <= 0 || g.width <= 0)
        throw ShapeError("conv_transpose2d: empty output for input " + xs.str());

    const int cin = xs.c;
    const int rows = cout * k * k;
    const int cols = xs.h * xs.w;
    Tensor out(Shape{xs.n, cout, g.height, g.width});
    ConstMapRM wmat(weight.value().data(), cin, rows);
    MatRM col(rows, cols);
    for (int n = 0; n < xs.n; n++) {
        col.noalias() = wmat.transpose() * ConstMapRM(x.value().item_ptr(n), cin, cols);
        double* o = out.item_ptr(n);
        col2im_add(col.data(), g, o);
        if (bias.defined()) {
            const std::size_t plane = out.shape().plane();
            for (int c = 0; c < cout; c++) {
                const double b = bias.value()[c];
                double* p = o + c * plane;
                for (std::size_t i = 0; i < plane; i++)
                    p[i] += b;
            }
        }
    }

    std::vector<Var> inputs{x, weight};
    if (bias.defined())
        inputs.push_back(bias);
    return ag::make_result(std::move(out), std::move(inputs), [g, cin, rows, cols](Node& self) {
        Node* xn = input(self, 0);
        Node* wn = input(self, 1);
        Node* bn = input(self, 2);
        const Tensor& gout = self.grad;
        const int batch = gout.shape().n;
        const std::size_t plane = gout.shape().plane();
        ConstMapRM wmat(wn->value.data(), cin, rows);
        MatRM col(rows, cols);
        for (int n = 0; n < batch; n++) {
            im2col(gout.item_ptr(n), g, col.data());
            if (xn->requires_grad) {
                MapRM gx(xn->grad_buffer().item_ptr(n), cin, cols);
                gx.noalias() += wmat * col;
            }
            if (wn->requires_grad) {
                MapRM gw(wn->grad_buffer().data(), cin, rows);
                gw.noalias() += ConstMapRM(xn->value.item_ptr(n), cin, cols) * col.transpose();
            }
            if (bn && bn->requires_grad) {
                Tensor& gb = bn->grad_buffer();
                for (int c = 0; c < g.channels; c++) {
                    const double* p = gout.plane_ptr(n, c);
                    double s = 0.0;
                    for (std::size_t i = 0; i < plane; i++)
                        s += p[i];
                    gb[c] += s;
                }
            }
        }
    });
}

Var pixel_shuffle(const Var& x, int r)
{
    const Shape xs = x.shape();
    if (r < 1 || xs.c % (r * r) != 0)
        throw ShapeError("pixel_shuffle: " + std::to_string(xs.c) + " channels not divisible by " + std::to_string(r * r));
    const Shape os{xs.n, xs.c / (r * r), xs.h * r, xs.w * r};
    Tensor out(os);
    const Tensor& in = x.value();
    for (int n = 0; n < xs.n; n++)
        for (int c = 0; c < os.c; c++)
            for (int i = 0; i < r; i++)
                for (int j = 0; j < r; j++) {
                    const double* src = in.plane_ptr(n, c * r * r + i * r + j);
                    for (int h = 0; h < xs.h; h++)
                        for (int w = 0; w < xs.w; w++)
                            out.at(n, c, h * r + i, w * r + j) = src[h * xs.w + w];
                }
    return ag::make_result(std::move(out), {x}, [r](Node& self) {
        Node* xn = input(self, 0);
        Tensor& gx = xn->grad_buffer();
        const Shape xs = gx.shape();
        const int oc = xs.c / (r * r);
        for (int n = 0; n < xs.n; n++)
            for (int c = 0; c < oc; c++)
                for (int i = 0; i < r; i++)
                    for (int j = 0; j < r; j++) {
                        double* dst = gx.plane_ptr(n, c * r * r + i * r + j);
                        for (int h = 0; h < xs.h; h++)
                            for (int w = 0; w < xs.w; w++)
                                dst[h * xs.w + w] += self.grad.at(n, c, h * r + i, w * r + j);
                    }
    });
}

Var prelu(const Var& x, const Var& alpha)
{
    const Shape xs = x.shape();
    const std::size_t na = alpha.value().size();
    if (na != 1 && na != static_cast<std::size_t>(xs.c))
        throw ShapeError("prelu: " + std::to_string(na) + " slopes for " + std::to_string(xs.c) + " channels");
    Tensor out(xs);
    const Tensor& in = x.value();
    note_signs(in);
    const std::size_t plane = xs.plane();
    for (int n = 0; n < xs.n; n++)
        for (int c = 0; c < xs.c; c++) {
            const double a = alpha.value()[na == 1 ? 0 : c];
            const double* src = in.plane_ptr(n, c);
            double* dst = out.plane_ptr(n, c);
            for (std::size_t i = 0; i < plane; i++)
                dst[i] = src[i] > 0.0 ? src[i] : a * src[i];
        }
    return ag::make_result(std::move(out), {x, alpha}, [na](Node& self) {
        Node* xn = input(self, 0);
        Node* an = input(self, 1);
        const Shape xs = xn->value.shape();
        const std::size_t plane = xs.plane();
        for (int n = 0; n < xs.n; n++)
            for (int c = 0; c < xs.c; c++) {
                const std::size_t ai = na == 1 ? 0 : c;
                const double a = an->value[ai];
                const double* src = xn->value.plane_ptr(n, c);
                const double* go = self.grad.plane_ptr(n, c);
                if (xn->requires_grad) {
                    double* gx = xn->grad_buffer().plane_ptr(n, c);
                    for (std::size_t i = 0; i < plane; i++)
                        gx[i] += src[i] > 0.0 ? go[i] : a * go[i];
                }
                if (an->requires_grad) {
                    double s = 0.0;
                    for (std::size_t i = 0; i < plane; i++)
                        if (src[i] <= 0.0)
                            s += go[i] * src[i];
                    an->grad_buffer()[ai] += s;
                }
            }
    });
}

Var leaky_relu(const Var& x, double slope)
{
    Tensor out(x.shape());
    const Tensor& in = x.value();
    note_signs(in);
    for (std::size_t i = 0; i < in.size(); i++)
        out[i] = in[i] > 0.0 ? in[i] : slope * in[i];
    return ag::make_result(std::move(out), {x}, [slope](Node& self) {
        Node* xn = input(self, 0);
        Tensor& gx = xn->grad_buffer();
        for (std::size_t i = 0; i < gx.size(); i++)
            gx[i] += xn->value[i] > 0.0 ? self.grad[i] : slope * self.grad[i];
    });
}

Var relu(const Var& x)
{
    return leaky_relu(x, 0.0);
}

Var sigmoid(const Var& x)
{
    Tensor out(x.shape());
    const Tensor& in = x.value();
    for (std::size_t i = 0; i < in.size(); i++)
        out[i] = 1.0 / (1.0 + std::exp(-in[i]));
    return ag::make_result(std::move(out), {x}, [](Node& self) {
        Tensor& gx = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < gx.size(); i++) {
            const double s = self.value[i];
            gx[i] += self.grad[i] * s * (1.0 - s);
        }
    });
}

Var add(const Var& a, const Var& b)
{
    require_same_shape(a.value(), b.value(), "add");
    Tensor out = a.value();
    out += b.value();
    return ag::make_result(std::move(out), {a, b}, [](Node& self) {
        for (auto& in : self.inputs)
            if (in->requires_grad)
                in->grad_buffer() += self.grad;
    });
}

Var sub(const Var& a, const Var& b)
{
    require_same_shape(a.value(), b.value(), "sub");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); i++)
        out[i] -= b.value()[i];
    return ag::make_result(std::move(out), {a, b}, [](Node& self) {
        if (self.inputs[0]->requires_grad)
            self.inputs[0]->grad_buffer() += self.grad;
        if (self.inputs[1]->requires_grad) {
            Tensor& gb = self.inputs[1]->grad_buffer();
            for (std::size_t i = 0; i < gb.size(); i++)
                gb[i] -= self.grad[i];
        }
    });
}

Var mul(const Var& a, const Var& b)
{
    require_same_shape(a.value(), b.value(), "mul");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); i++)
        out[i] *= b.value()[i];
    return ag::make_result(std::move(out), {a, b}, [](Node& self) {
        Node* an = input(self, 0);
        Node* bn = input(self, 1);
        if (an->requires_grad) {
            Tensor& ga = an->grad_buffer();
            for (std::size_t i = 0; i < ga.size(); i++)
                ga[i] += self.grad[i] * bn->value[i];
        }
        if (bn->requires_grad) {
            Tensor& gb = bn->grad_buffer();
            for (std::size_t i = 0; i < gb.size(); i++)
                gb[i] += self.grad[i] * an->value[i];
        }
    });
}

Var div(const Var& a, const Var& b)
{
    require_same_shape(a.value(), b.value(), "div");
    Tensor out = a.value();
    for (std::size_t i = 0; i < out.size(); i++)
        out[i] /= b.value()[i];
    return ag::make_result(std::move(out), {a, b}, [](Node& self) {
        Node* an = input(self, 0);
        Node* bn = input(self, 1);
        if (an->requires_grad) {
            Tensor& ga = an->grad_buffer();
            for (std::size_t i = 0; i < ga.size(); i++)
                ga[i] += self.grad[i] / bn->value[i];
        }
        if (bn->requires_grad) {
            Tensor& gb = bn->grad_buffer();
            for (std::size_t i = 0; i < gb.size(); i++)
                gb[i] -= self.grad[i] * self.value[i] / bn->value[i];
        }
    });
}

Var affine(const Var& x, double a, double b)
{
    Tensor out = x.value();
    for (std::size_t i = 0; i < out.size(); i++)
        out[i] = a * out[i] + b;
    return ag::make_result(std::move(out), {x}, [a](Node& self) {
        Tensor& gx = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < gx.size(); i++)
            gx[i] += a * self.grad[i];
    });
}

Var log_clamped(const Var& x, double floor)
{
    Tensor out(x.shape());
    for (std::size_t i = 0; i < out.size(); i++)
        out[i] = std::log(std::max(x.value()[i], floor));
    return ag::make_result(std::move(out), {x}, [floor](Node& self) {
        Node* xn = self.inputs[0].get();
        Tensor& gx = xn->grad_buffer();
        for (std::size_t i = 0; i < gx.size(); i++)
            if (xn->value[i] > floor)
                gx[i] += self.grad[i] / xn->value[i];
    });
}

Var scale(const Var& a, double s)
{
    Tensor out = a.value();
    out *= s;
    return ag::make_result(std::move(out), {a}, [s](Node& self) {
        Tensor& ga = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < ga.size(); i++)
            ga[i] += s * self.grad[i];
    });
}

Var channel_scale(const Var& x, const Var& s)
{
    const Shape xs = x.shape();
    const Shape ss = s.shape();
    if (ss.n != xs.n || ss.c != xs.c || ss.h != 1 || ss.w != 1)
        throw ShapeError("channel_scale: scales " + ss.str() + " for " + xs.str());
    Tensor out = x.value();
    const std::size_t plane = xs.plane();
    for (int n = 0; n < xs.n; n++)
        for (int c = 0; c < xs.c; c++) {
            const double f = s.value()[n * xs.c + c];
            double* p = out.plane_ptr(n, c);
            for (std::size_t i = 0; i < plane; i++)
                p[i] *= f;
        }
    return ag::make_result(std::move(out), {x, s}, [](Node& self) {
        Node* xn = input(self, 0);
        Node* sn = input(self, 1);
        const Shape xs = xn->value.shape();
        const std::size_t plane = xs.plane();
        for (int n = 0; n < xs.n; n++)
            for (int c = 0; c < xs.c; c++) {
                const std::size_t si = n * xs.c + c;
                const double* go = self.grad.plane_ptr(n, c);
                if (xn->requires_grad) {
                    double* gx = xn->grad_buffer().plane_ptr(n, c);
                    const double f = sn->value[si];
                    for (std::size_t i = 0; i < plane; i++)
                        gx[i] += f * go[i];
                }
                if (sn->requires_grad) {
                    const double* xv = xn->value.plane_ptr(n, c);
                    double acc = 0.0;
                    for (std::size_t i = 0; i < plane; i++)
                        acc += go[i] * xv[i];
                    sn->grad_buffer()[si] += acc;
                }
            }
    });
}

Var concat_channels(const std::vector<Var>& parts)
{
    if (parts.empty())
        throw ShapeError("concat_channels: no inputs");
    Shape os = parts[0].shape();
    os.c = 0;
    for (const Var& p : parts) {
        const Shape ps = p.shape();
        if (ps.n != os.n || ps.h != os.h || ps.w != os.w)
            throw ShapeError("concat_channels: " + ps.str() + " vs " + parts[0].shape().str());
        os.c += ps.c;
    }
    Tensor out(os);
    for (int n = 0; n < os.n; n++) {
        double* dst = out.item_ptr(n);
        for (const Var& p : parts) {
            const std::size_t count = p.shape().item();
            std::memcpy(dst, p.value().item_ptr(n), count * sizeof(double));
            dst += count;
        }
    }
    return ag::make_result(std::move(out), parts, [](Node& self) {
        const int batch = self.value.shape().n;
        for (int n = 0; n < batch; n++) {
            const double* src = self.grad.item_ptr(n);
            for (auto& in : self.inputs) {
                const std::size_t count = in->value.shape().item();
                if (in->requires_grad) {
                    double* gx = in->grad_buffer().item_ptr(n);
                    for (std::size_t i = 0; i < count; i++)
                        gx[i] += src[i];
                }
                src += count;
            }
        }
    });
}

Var slice_channels(const Var& x, int first, int count)
{
    const Shape xs = x.shape();
    if (first < 0 || count <= 0 || first + count > xs.c)
        throw ShapeError("slice_channels: [" + std::to_string(first) + ", +" + std::to_string(count) + ") of " + xs.str());
    Tensor out(Shape{xs.n, count, xs.h, xs.w});
    const std::size_t bytes = count * xs.plane() * sizeof(double);
    for (int n = 0; n < xs.n; n++)
        std::memcpy(out.item_ptr(n), x.value().plane_ptr(n, first), bytes);
    return ag::make_result(std::move(out), {x}, [first, count](Node& self) {
        Tensor& gx = self.inputs[0]->grad_buffer();
        const std::size_t len = count * gx.shape().plane();
        for (int n = 0; n < gx.shape().n; n++) {
            double* dst = gx.plane_ptr(n, first);
            const double* src = self.grad.item_ptr(n);
            for (std::size_t i = 0; i < len; i++)
                dst[i] += src[i];
        }
    });
}

Var avg_pool(const Var& x, int k)
{
    const Shape xs = x.shape();
    if (k < 1 || xs.h % k != 0 || xs.w % k != 0)
        throw ShapeError("avg_pool: " + xs.str() + " not divisible by " + std::to_string(k));
    const Shape os{xs.n, xs.c, xs.h / k, xs.w / k};
    Tensor out(os);
    const double inv = 1.0 / (k * k);
    for (int n = 0; n < xs.n; n++)
        for (int c = 0; c < xs.c; c++)
            for (int oy = 0; oy < os.h; oy++)
                for (int ox = 0; ox < os.w; ox++) {
                    double s = 0.0;
                    for (int dy = 0; dy < k; dy++)
                        for (int dx = 0; dx < k; dx++)
                            s += x.value().at(n, c, oy * k + dy, ox * k + dx);
                    out.at(n, c, oy, ox) = s * inv;
                }
    return ag::make_result(std::move(out), {x}, [k, inv](Node& self) {
        Tensor& gx = self.inputs[0]->grad_buffer();
        const Shape os = self.value.shape();
        for (int n = 0; n < os.n; n++)
            for (int c = 0; c < os.c; c++)
                for (int oy = 0; oy < os.h; oy++)
                    for (int ox = 0; ox < os.w; ox++) {
                        const double g = self.grad.at(n, c, oy, ox) * inv;
                        for (int dy = 0; dy < k; dy++)
                            for (int dx = 0; dx < k; dx++)
                                gx.at(n, c, oy * k + dy, ox * k + dx) += g;
                    }
    });
}

Var max_pool(const Var& x, int k, int stride, int pad)
{
    const Shape xs = x.shape();
    const Shape os{xs.n, xs.c, (xs.h + 2 * pad - k) / stride + 1, (xs.w + 2 * pad - k) / stride + 1};
    if (os.h <= 0 || os.w <= 0)
        throw ShapeError("max_pool: empty output for " + xs.str());
    Tensor out(os);
    std::vector<std::size_t> argmax(os.size());
    std::size_t o = 0;
    for (int n = 0; n < xs.n; n++)
        for (int c = 0; c < xs.c; c++)
            for (int oy = 0; oy < os.h; oy++)
                for (int ox = 0; ox < os.w; ox++, o++) {
                    double best = -std::numeric_limits<double>::infinity();
                    std::size_t where = 0;
                    for (int dy = 0; dy < k; dy++) {
                        const int iy = oy * stride - pad + dy;
                        if (iy < 0 || iy >= xs.h)
                            continue;
                        for (int dx = 0; dx < k; dx++) {
                            const int ix = ox * stride - pad + dx;
                            if (ix < 0 || ix >= xs.w)
                                continue;
                            const std::size_t idx = ((static_cast<std::size_t>(n) * xs.c + c) * xs.h + iy) * xs.w + ix;
                            if (x.value()[idx] > best) {
                                best = x.value()[idx];
                                where = idx;
                            }
                        }
                    }
                    out[o] = best;
                    argmax[o] = where;
                    if (g_kink)
                        note_kink_index(where);
                }
    return ag::make_result(std::move(out), {x}, [argmax = std::move(argmax)](Node& self) {
        Tensor& gx = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < argmax.size(); i++)
            gx[argmax[i]] += self.grad[i];
    });
}

Var upsample_nearest(const Var& x, int r)
{
    const Shape xs = x.shape();
    const Shape os{xs.n, xs.c, xs.h * r, xs.w * r};
    Tensor out(os);
    for (int n = 0; n < os.n; n++)
        for (int c = 0; c < os.c; c++)
            for (int y = 0; y < os.h; y++)
                for (int xx = 0; xx < os.w; xx++)
                    out.at(n, c, y, xx) = x.value().at(n, c, y / r, xx / r);
    return ag::make_result(std::move(out), {x}, [r](Node& self) {
        Tensor& gx = self.inputs[0]->grad_buffer();
        const Shape os = self.value.shape();
        for (int n = 0; n < os.n; n++)
            for (int c = 0; c < os.c; c++)
                for (int y = 0; y < os.h; y++)
                    for (int xx = 0; xx < os.w; xx++)
                        gx.at(n, c, y / r, xx / r) += self.grad.at(n, c, y, xx);
    });
}

Var global_avg_pool(const Var& x)
{
    const Shape xs = x.shape();
    Tensor out(Shape{xs.n, xs.c, 1, 1});
    const std::size_t plane = xs.plane();
    for (int n = 0; n < xs.n; n++)
        for (int c = 0; c < xs.c; c++) {
            const double* p = x.value().plane_ptr(n, c);
            double s = 0.0;
            for (std::size_t i = 0; i < plane; i++)
                s += p[i];
            out[n * xs.c + c] = s / static_cast<double>(plane);
        }
    return ag::make_result(std::move(out), {x}, [plane](Node& self) {
        Tensor& gx = self.inputs[0]->grad_buffer();
        const Shape xs = gx.shape();
        for (int n = 0; n < xs.n; n++)
            for (int c = 0; c < xs.c; c++) {
                const double g = self.grad[n * xs.c + c] / static_cast<double>(plane);
                double* p = gx.plane_ptr(n, c);
                for (std::size_t i = 0; i < plane; i++)
                    p[i] += g;
            }
    });
}

Var linear(const Var& x, const Var& weight, const Var& bias)
{
    const Shape xs = x.shape();
    const Shape ws = weight.shape();
    const int in = static_cast<int>(xs.item());
    if (static_cast<std::size_t>(ws.c) * ws.h * ws.w != static_cast<std::size_t>(in))
        throw ShapeError("linear: weight " + ws.str() + " for input " + xs.str());
    check_bias(bias, ws.n, "linear");
    const int outf = ws.n;
    Tensor out(Shape{xs.n, outf, 1, 1});
    ConstMapRM xm(x.value().data(), xs.n, in);
    ConstMapRM wm(weight.value().data(), outf, in);
    MapRM om(out.data(), xs.n, outf);
    om.noalias() = xm * wm.transpose();
    if (bias.defined())
        om.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(bias.value().data(), outf);
    std::vector<Var> inputs{x, weight};
    if (bias.defined())
        inputs.push_back(bias);
    return ag::make_result(std::move(out), std::move(inputs), [in, outf](Node& self) {
        Node* xn = input(self, 0);
        Node* wn = input(self, 1);
        Node* bn = input(self, 2);
        const int batch = self.value.shape().n;
        ConstMapRM go(self.grad.data(), batch, outf);
        if (xn->requires_grad) {
            MapRM gx(xn->grad_buffer().data(), batch, in);
            gx.noalias() += go * ConstMapRM(wn->value.data(), outf, in);
        }
        if (wn->requires_grad) {
            MapRM gw(wn->grad_buffer().data(), outf, in);
            gw.noalias() += go.transpose() * ConstMapRM(xn->value.data(), batch, in);
        }
        if (bn && bn->requires_grad) {
            Eigen::Map<Eigen::RowVectorXd> gb(bn->grad_buffer().data(), outf);
            gb += go.colwise().sum();
        }
    });
}

Var sum(const Var& x)
{
    Tensor out(Shape{1, 1, 1, 1}, x.value().sum());
    return ag::make_result(std::move(out), {x}, [](Node& self) {
        Tensor& gx = self.inputs[0]->grad_buffer();
        const double g = self.grad[0];
        for (std::size_t i = 0; i < gx.size(); i++)
            gx[i] += g;
    });
}

Var mean(const Var& x)
{
    return scale(sum(x), 1.0 / static_cast<double>(x.value().size()));
}

Var mse(const Var& a, const Var& b)
{
    require_same_shape(a.value(), b.value(), "mse");
    const std::size_t count = a.value().size();
    double s = 0.0;
    for (std::size_t i = 0; i < count; i++) {
        const double d = a.value()[i] - b.value()[i];
        s += d * d;
    }
    Tensor out(Shape{1, 1, 1, 1}, s / static_cast<double>(count));
    return ag::make_result(std::move(out), {a, b}, [count](Node& self) {
        Node* an = input(self, 0);
        Node* bn = input(self, 1);
        const double f = 2.0 * self.grad[0] / static_cast<double>(count);
        for (std::size_t i = 0; i < count; i++) {
            const double d = f * (an->value[i] - bn->value[i]);
            if (an->requires_grad)
                an->grad_buffer()[i] += d;
            if (bn->requires_grad)
                bn->grad_buffer()[i] -= d;
        }
    });
}

Var weighted_sum(const std::vector<Var>& scalars, const std::vector<double>& weights)
{
    if (scalars.size() != weights.size() || scalars.empty())
        throw ShapeError("weighted_sum: " + std::to_string(scalars.size()) + " terms, " + std::to_string(weights.size()) + " weights");
    double s = 0.0;
    for (std::size_t i = 0; i < scalars.size(); i++) {
        if (scalars[i].value().size() != 1)
            throw ShapeError("weighted_sum: non-scalar term " + scalars[i].shape().str());
        s += weights[i] * scalars[i].value()[0];
    }
    return ag::make_result(Tensor(Shape{1, 1, 1, 1}, s), scalars, [weights](Node& self) {
        for (std::size_t i = 0; i < weights.size(); i++)
            if (self.inputs[i]->requires_grad)
                self.inputs[i]->grad_buffer()[0] += weights[i] * self.grad[0];
    });
}

} // namespace mpsr::ops
