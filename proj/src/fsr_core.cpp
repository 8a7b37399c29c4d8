#include "mpsr/fsr_core.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mpsr::fsr {

void FsrConfig::validate() const
{
    if (n_iterations < 1)
        throw std::invalid_argument("fsr: n_iterations must be >= 1");
    if (feature_channels < 1)
        throw std::invalid_argument("fsr: feature_channels must be > 0");
    if (feedback_groups < 1)
        throw std::invalid_argument("fsr: feedback_groups must be >= 1");
    if (sfe_shuffle < 1 || scale_factor % sfe_shuffle != 0 || projection_stride() != 4)
        throw std::invalid_argument("fsr: scale_factor must equal sfe_shuffle * 4");
    if (landmark_channels < 0 || au_channels < 0)
        throw std::invalid_argument("fsr: prior channel counts must be >= 0");
}

Tensor bilinear_upsample(const Tensor& image, int factor)
{
    const Shape is = image.shape();
    const int oh = is.h * factor;
    const int ow = is.w * factor;
    struct Tap {
        int i0, i1;
        double frac;
    };
    auto taps = [factor](int in, int out) {
        std::vector<Tap> t(out);
        for (int o = 0; o < out; o++) {
            const double src = std::max(0.0, (o + 0.5) / factor - 0.5);
            const int i0 = std::min(static_cast<int>(src), in - 1);
            t[o] = {i0, std::min(i0 + 1, in - 1), src - i0};
        }
        return t;
    };
    const auto tx = taps(is.w, ow);
    const auto ty = taps(is.h, oh);
    Tensor out(Shape{is.n, is.c, oh, ow});
    for (int n = 0; n < is.n; n++)
        for (int c = 0; c < is.c; c++)
            for (int y = 0; y < oh; y++) {
                const Tap& a = ty[y];
                for (int x = 0; x < ow; x++) {
                    const Tap& b = tx[x];
                    const double top = image.at(n, c, a.i0, b.i0) * (1.0 - b.frac) + image.at(n, c, a.i0, b.i1) * b.frac;
                    const double bot = image.at(n, c, a.i1, b.i0) * (1.0 - b.frac) + image.at(n, c, a.i1, b.i1) * b.frac;
                    out.at(n, c, y, x) = top * (1.0 - a.frac) + bot * a.frac;
                }
            }
    return out;
}

Var compose_sr(const Var& residual, const Tensor& upsampled)
{
    if (!(residual.shape() == upsampled.shape()))
        throw ShapeError("compose_sr: residual " + residual.shape().str() + " vs upsampled " + upsampled.shape().str());
    return ops::add(residual, ag::constant(upsampled));
}

FsrNet::FsrNet(ParamStore& store, Initializer& init, FsrConfig config, const std::string& prefix)
    : config_(config)
{
    config_.validate();
    const int c = config_.feature_channels;
    const int r = config_.sfe_shuffle;
    const int stride = config_.projection_stride();
    const int k = 2 * stride;
    const int pad = stride / 2;
    const std::string p = prefix + ".";

    sfe_conv_ = Conv2d(store, init, p + "sfe.conv", 3, c * r * r, 3, 1, 1);
    sfe_act_ = PRelu(store, p + "sfe.act");
    fuse_pointwise_ = Conv2d(store, init, p + "perb.fuse1x1", config_.fusion_channels(), c, 1, 1, 0);
    fuse_pointwise_act_ = PRelu(store, p + "perb.fuse1x1.act");
    fuse_conv_ = Conv2d(store, init, p + "perb.fuse3x3", c, c, 3, 1, 1);
    fuse_conv_act_ = PRelu(store, p + "perb.fuse3x3.act");
    for (int g = 0; g < config_.feedback_groups; g++) {
        const std::string gp = p + "perb.fb.group" + std::to_string(g);
        if (g > 0) {
            up_tran_.emplace_back(store, init, gp + ".uptran", c * (g + 1), c, 1, 1, 0);
            up_tran_act_.emplace_back(store, gp + ".uptran.act");
            down_tran_.emplace_back(store, init, gp + ".downtran", c * (g + 1), c, 1, 1, 0);
            down_tran_act_.emplace_back(store, gp + ".downtran.act");
        }
        up_.emplace_back(store, init, gp + ".up", c, c, k, stride, pad);
        up_act_.emplace_back(store, gp + ".up.act");
        down_.emplace_back(store, init, gp + ".down", c, c, k, stride, pad);
        down_act_.emplace_back(store, gp + ".down.act");
    }
    compress_out_ = Conv2d(store, init, p + "perb.fb.out", c * config_.feedback_groups, c, 1, 1, 0);
    compress_out_act_ = PRelu(store, p + "perb.fb.out.act");
    recb_up_ = ConvTranspose2d(store, init, p + "recb.up", c, c, k, stride, pad);
    recb_up_act_ = PRelu(store, p + "recb.up.act");
    recb_out_ = Conv2d(store, init, p + "recb.out", c, 3, 3, 1, 1, config_.recb_init_scale);
}

Var FsrNet::shallow_extract(const Var& lr) const
{
    const Shape s = lr.shape();
    if (s.c != 3)
        throw ShapeError("shallow_extract: expected 3-channel input, got " + s.str());
    return ops::pixel_shuffle(sfe_act_(sfe_conv_(lr)), config_.sfe_shuffle);
}

Var FsrNet::perb_forward(const Var& shallow, const Var& feedback, const PriorTensor& prior) const
{
    const Shape s = shallow.shape();
    const int c = config_.feature_channels;
    if (s.c != c)
        throw ShapeError("perb_forward: shallow features " + s.str() + ", expected " + std::to_string(c) + " channels");
    std::vector<Var> parts{shallow, feedback};
    std::vector<int> widths{c, c};
    if (feedback.defined() && !(feedback.shape() == s))
        throw ShapeError("perb_forward: feedback " + feedback.shape().str() + " vs shallow " + s.str());

    Var landmark;
    Var au;
    if (prior.kind != PriorKind::none) {
        const Shape ps = prior.maps.shape();
        if (ps.n != s.n || ps.h != s.h || ps.w != s.w)
            throw ShapeError("perb_forward: prior " + ps.str() + " does not match working resolution " + s.str());
        const int expected = prior.kind == PriorKind::landmark_heatmaps ? config_.landmark_channels : config_.au_channels;
        if (ps.c != expected)
            throw ShapeError("perb_forward: prior has " + std::to_string(ps.c) + " channels, expected " + std::to_string(expected));
        (prior.kind == PriorKind::landmark_heatmaps ? landmark : au) = prior.maps;
    }
    // Absent inputs occupy their slot as implicit zeros.
    if (config_.landmark_channels > 0) {
        parts.push_back(landmark);
        widths.push_back(config_.landmark_channels);
    }
    if (config_.au_channels > 0) {
        parts.push_back(au);
        widths.push_back(config_.au_channels);
    }

    Var x = fuse_pointwise_act_(fuse_pointwise_(parts, widths));
    x = fuse_conv_act_(fuse_conv_(x));
    return feedback_block(x);
}

Var FsrNet::feedback_block(const Var& x) const
{
    const int c = config_.feature_channels;
    std::vector<Var> low{x};
    std::vector<Var> high;
    for (int g = 0; g < config_.feedback_groups; g++) {
        const std::vector<int> widths(g + 1, c);
        Var l = g == 0 ? low[0] : up_tran_act_[g - 1](up_tran_[g - 1](low, widths));
        high.push_back(up_act_[g](up_[g](l)));
        Var hcat = g == 0 ? high[0] : down_tran_act_[g - 1](down_tran_[g - 1](high, widths));
        low.push_back(down_act_[g](down_[g](hcat)));
    }
    std::vector<Var> outputs(low.begin() + 1, low.end());
    return compress_out_act_(compress_out_(outputs, std::vector<int>(outputs.size(), c)));
}

Var FsrNet::recb_forward(const Var& hidden) const
{
    if (hidden.shape().c != config_.feature_channels)
        throw ShapeError("recb_forward: expected " + std::to_string(config_.feature_channels) + " channels, got " +
                         hidden.shape().str());
    return recb_out_(recb_up_act_(recb_up_(hidden)));
}

IterationTrace FsrNet::forward_unrolled(const Tensor& lr, const PriorProvider& provider) const
{
    const Shape s = lr.shape();
    if (s.c != 3 || s.h < 1 || s.w < 1)
        throw ShapeError("forward_unrolled: expected [n, 3, h, w] input, got " + s.str());
    IterationTrace trace;
    trace.upsampled = bilinear_upsample(lr, config_.scale_factor);
    const Var input = ag::constant(lr);
    // The LR input is the same at every step, so F_sf is computed once.
    const Var shallow = shallow_extract(input);
    Var feedback;
    for (int t = 1; t <= config_.n_iterations; t++) {
        PriorTensor prior;
        if (t > 1 && provider)
            prior = provider(t, trace);
        Var hidden = perb_forward(shallow, feedback, prior);
        Var residual = recb_forward(hidden);
        trace.shallow.push_back(shallow);
        trace.hidden.push_back(hidden);
        trace.residuals.push_back(residual);
        trace.sr_images.push_back(compose_sr(residual, trace.upsampled));
        feedback = hidden;
    }
    return trace;
}

} // namespace mpsr::fsr
