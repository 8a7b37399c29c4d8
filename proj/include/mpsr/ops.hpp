#pragma once

#include <cstdint>
#include <vector>

#include "mpsr/autograd.hpp"

// Differentiable NCHW operators. Every op validates shapes and throws
// ShapeError on mismatch.
namespace mpsr::ops {

using ag::Var;

/// Weight [out, in, k, k]; bias [1, out, 1, 1] or undefined.
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad);

/// 1x1 convolution over the channel concatenation of parts without
/// materialising it. widths[i] is the channel count of parts[i]; an undefined
/// part stands for a block of zeros and is skipped.
Var pointwise_conv(const std::vector<Var>& parts, const std::vector<int>& widths, const Var& weight, const Var& bias);

/// Weight [in, out, k, k]; output extent (in - 1) * stride - 2 * pad + k.
Var conv_transpose2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad);

/// Depth-to-space: [n, c*r*r, h, w] -> [n, c, h*r, w*r]; channel c*r*r + i*r + j feeds offset (i, j).
Var pixel_shuffle(const Var& x, int r);

/// alpha holds one shared slope or one slope per channel.
Var prelu(const Var& x, const Var& alpha);
Var relu(const Var& x);
Var leaky_relu(const Var& x, double slope);
Var sigmoid(const Var& x);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var scale(const Var& a, double s);
/// a * x + b elementwise.
Var affine(const Var& x, double a, double b);
/// log(max(x, floor)); the gradient is zero where the floor is active.
Var log_clamped(const Var& x, double floor);
/// x [n, c, h, w] times s [n, c, 1, 1], broadcast over the plane.
Var channel_scale(const Var& x, const Var& s);

Var concat_channels(const std::vector<Var>& parts);
/// Channels [first, first + count).
Var slice_channels(const Var& x, int first, int count);

/// Non-overlapping k x k mean.
Var avg_pool(const Var& x, int k);
Var max_pool(const Var& x, int k, int stride, int pad);
Var upsample_nearest(const Var& x, int r);
Var global_avg_pool(const Var& x);

/// Flattens each batch item; weight [out, in, 1, 1]; bias [1, out, 1, 1].
Var linear(const Var& x, const Var& weight, const Var& bias);

Var sum(const Var& x);
Var mean(const Var& x);
Var mse(const Var& a, const Var& b);
/// Sum of a weighted list of scalar variables.
Var weighted_sum(const std::vector<Var>& scalars, const std::vector<double>& weights);

/// Records which side of every non-differentiable point (rectifier sign,
/// max-pool winner) the forward passes on this thread land on, while active.
/// Finite differences taken across such a point do not estimate the gradient.
class KinkTrace {
public:
    KinkTrace();
    ~KinkTrace();
    KinkTrace(const KinkTrace&) = delete;
    KinkTrace& operator=(const KinkTrace&) = delete;

    std::uint64_t signature() const;

private:
    KinkTrace* previous_;
    std::uint64_t hash_ = 0xcbf29ce484222325ULL;
    std::uint64_t word_ = 0;
    int bits_ = 0;

    friend void note_kink_side(bool);
    friend void note_kink_index(std::uint64_t);
};

/// Folds a discrete decision into the active KinkTrace; no-op without one.
void note_kink_index(std::uint64_t decision);
void note_kink_side(bool positive);

} // namespace mpsr::ops
