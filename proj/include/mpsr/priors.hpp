#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mpsr/datakit.hpp"
#include "mpsr/fsr_core.hpp"
#include "mpsr/layers.hpp"

namespace mpsr::priors {

struct AlignConfig {
    int channels = 64;
    int residual_blocks = 3;
    int stacks = 2;
    int depth = 4;  // hourglass levels
    int landmarks = data::kNumLandmarks;

    void validate() const;
};

/// Stem (3x3 stride-2 conv + residual blocks) and stacked hourglasses with
/// intermediate heatmap re-injection. Input [n, 3, 128, 128], output
/// [n, 68, 64, 64] heatmaps from the last active stack.
class AlignNet {
public:
    AlignNet(ParamStore& store, Initializer& init, AlignConfig config, const std::string& prefix = "align");

    const AlignConfig& config() const { return config_; }
    /// active_stacks < 0 runs every stack; fewer stops early and returns the
    /// heatmaps of the last stack that ran.
    Var forward(const Var& image, int active_stacks = -1) const;

private:
    struct Residual {
        Conv2d a, b;
        Var operator()(const Var& x) const;
    };
    struct Hourglass {
        std::vector<Residual> up, down, after;  // one per level
        Residual bottom;
    };
    Residual residual(ParamStore& store, Initializer& init, const std::string& name) const;
    Var hourglass(const Hourglass& hg, const Var& x, int level) const;

    AlignConfig config_;
    Conv2d stem_;
    std::vector<Residual> stem_blocks_;
    std::vector<Hourglass> hourglasses_;
    std::vector<Residual> stack_res_;
    std::vector<Conv2d> stack_feat_;
    std::vector<Conv2d> stack_head_;
    std::vector<Conv2d> remap_feat_;  // feed features back into the next stack
    std::vector<Conv2d> remap_head_;  // feed heatmaps back into the next stack
};

/// Argmax per map, a quarter-pixel nudge toward the larger horizontal and
/// vertical neighbour, then scaled into the frame and clamped to [0, frame).
std::vector<data::LandmarkSet> decode_heatmaps(const Tensor& heatmaps, int frame_size = data::kCropSize);

struct AuConfig {
    int n_au = 12;
    int base_width = 64;
    int blocks_per_stage = 2;

    void validate() const;
};

/// 18-layer residual classifier (basic blocks, no normalisation layers):
/// 7x7/2 stem, 3x3/2 max pool, four stages, global average pool, linear.
class AuNet {
public:
    AuNet(ParamStore& store, Initializer& init, AuConfig config, const std::string& prefix = "au");

    const AuConfig& config() const { return config_; }
    /// Logits [n, n_au, 1, 1].
    Var forward(const Var& image) const;

private:
    struct Block {
        Conv2d a, b;
        Conv2d shortcut;  // undefined weight for identity
        Var operator()(const Var& x) const;
    };

    AuConfig config_;
    Conv2d stem_;
    std::vector<Block> blocks_;
    Linear head_;
};

struct AuCenter {
    int landmark_a = 0;
    int landmark_b = 0;
    double dx = 0.0;
    double dy = 0.0;
};

struct AuRule {
    int au = 0;
    std::vector<AuCenter> centers;
};

class AuRuleTable {
public:
    /// Text format: a "version 1" line, then "AU<k>: center = midpoint(i,j)
    /// offset (dx,dy)" with further centres separated by ';'. '#' starts a
    /// comment. Throws std::invalid_argument with the line number on errors.
    static AuRuleTable parse(const std::string& text);
    static AuRuleTable load(const std::filesystem::path& path);
    /// The table shipped for 12 or 8 AUs.
    static AuRuleTable builtin(int n_au);

    int version() const { return version_; }
    const std::vector<AuRule>& rules() const { return rules_; }
    /// Throws std::invalid_argument for an AU without a rule.
    const AuRule& find(int au) const;

private:
    int version_ = 0;
    std::vector<AuRule> rules_;
};

inline constexpr double kAttentionSigma = 4.0;

/// [1, au_ids.size(), size, size]: per AU, the max over its centres of
/// max(0, 1 - manhattan(p, c) / (3 sigma)).
Tensor build_au_attention(const data::LandmarkSet& landmarks, const AuRuleTable& table, const std::vector<int>& au_ids,
                          double sigma_att = kAttentionSigma, int size = data::kCropSize);

/// probs [n, k, 1, 1] times attention [n, k, H, W], area-averaged to
/// target_resolution.
fsr::PriorTensor au_prior_maps(const Var& probs, const Tensor& attention, int target_resolution);

/// heatmaps [n, 68, H, W] area-averaged to target_resolution.
fsr::PriorTensor landmark_prior_maps(const Var& heatmaps, int target_resolution);

} // namespace mpsr::priors
