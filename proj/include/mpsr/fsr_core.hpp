#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mpsr/layers.hpp"

namespace mpsr::fsr {

struct FsrConfig {
    int n_iterations = 3;
    int feature_channels = 48;
    int feedback_groups = 6;
    int scale_factor = 8;
    int sfe_shuffle = 2;
    int landmark_channels = 68;
    int au_channels = 12;
    double recb_init_scale = 0.1;

    /// Throws std::invalid_argument on a broken invariant.
    void validate() const;
    /// Stride of the up/down projections (scale_factor / sfe_shuffle).
    int projection_stride() const { return scale_factor / sfe_shuffle; }
    /// Width of the PERB fusion input: shallow + feedback + both prior slots.
    int fusion_channels() const { return 2 * feature_channels + landmark_channels + au_channels; }
};

enum class PriorKind { none, landmark_heatmaps, au_maps };

struct PriorTensor {
    PriorKind kind = PriorKind::none;
    Var maps;  // [n, k, h, w] at the PERB working resolution
};

struct IterationTrace {
    std::vector<Var> sr_images;
    std::vector<Var> residuals;
    std::vector<Var> hidden;
    std::vector<Var> shallow;
    Tensor upsampled;  // bilinear x8 of the LR input, shared by every step
};

/// Called with the 1-based step index before steps 2..N.
using PriorProvider = std::function<PriorTensor(int step, const IterationTrace& so_far)>;

/// Half-pixel-centre bilinear upsampling (align_corners = false).
Tensor bilinear_upsample(const Tensor& image, int factor);

/// residual + upsampled, no clamping.
Var compose_sr(const Var& residual, const Tensor& upsampled);

class FsrNet {
public:
    FsrNet(ParamStore& store, Initializer& init, FsrConfig config, const std::string& prefix = "fsr");

    const FsrConfig& config() const { return config_; }

    /// [n, 3, h, w] -> [n, C, 2h, 2w]
    Var shallow_extract(const Var& lr) const;
    /// feedback may be undefined (first step).
    Var perb_forward(const Var& shallow, const Var& feedback, const PriorTensor& prior) const;
    /// [n, C, h, w] -> [n, 3, 4h, 4w] residual.
    Var recb_forward(const Var& hidden) const;

    IterationTrace forward_unrolled(const Tensor& lr, const PriorProvider& provider = {}) const;

private:
    Var feedback_block(const Var& x) const;

    FsrConfig config_;
    Conv2d sfe_conv_;
    PRelu sfe_act_;
    Conv2d fuse_pointwise_;
    PRelu fuse_pointwise_act_;
    Conv2d fuse_conv_;
    PRelu fuse_conv_act_;
    std::vector<ConvTranspose2d> up_;
    std::vector<PRelu> up_act_;
    std::vector<Conv2d> down_;
    std::vector<PRelu> down_act_;
    std::vector<Conv2d> up_tran_;  // compresses low-res features before group i >= 1
    std::vector<PRelu> up_tran_act_;
    std::vector<Conv2d> down_tran_;  // compresses high-res features before group i >= 1
    std::vector<PRelu> down_tran_act_;
    Conv2d compress_out_;
    PRelu compress_out_act_;
    ConvTranspose2d recb_up_;
    PRelu recb_up_act_;
    Conv2d recb_out_;
};

} // namespace mpsr::fsr
