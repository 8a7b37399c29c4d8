#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "mpsr/tensor.hpp"

namespace mpsr::data {

inline constexpr int kNumLandmarks = 68;
inline constexpr int kCropSize = 128;
inline constexpr int kFrameSize = 144;
inline constexpr int kLrSize = 16;
inline constexpr int kScale = 8;
inline constexpr int kHeatmapSize = 64;
inline constexpr double kHeatmapSigma = 1.5;

struct Point2 {
    double x = 0.0;
    double y = 0.0;
    bool operator==(const Point2&) const = default;
};

/// 68 points in pixel coordinates of the image they belong to
/// (pixel centres at integer positions).
using LandmarkSet = std::array<Point2, kNumLandmarks>;

struct Sample {
    Tensor image;  // [1, 3, h, w] in [0, 1]
    LandmarkSet landmarks{};
    std::vector<int> au_labels;
    std::string subject_id;
    std::string frame_id;
};

/// AU numbers tracked for a label width: 12 (BP4D-style) or 8 (DISFA-style).
const std::vector<int>& au_ids(int n_au);

/// Index permutation mapping each landmark to its mirror partner.
const std::array<int, kNumLandmarks>& flip_permutation();
/// Parses the "i j" pair table format (each pair listed once).
std::array<int, kNumLandmarks> parse_flip_table(const std::string& text);

/// Deterministic 144x144 face-like frame; AU labels drive local geometry and
/// texture. subject_id is "s<seed>".
Sample generate_synthetic_sample(std::uint64_t seed, int n_au);
/// Same generator with identity (shape, colours) drawn from subject_seed and
/// pose/expression drawn from frame_seed.
Sample generate_synthetic_frame(std::uint64_t subject_seed, std::uint64_t frame_seed, int n_au, const std::string& subject_id,
                                const std::string& frame_id);

Sample crop(const Sample& s, int x0, int y0, int size = kCropSize);
/// Mirror about the vertical axis: x' = w - 1 - x and left/right indices swapped.
Sample flip_horizontal(const Sample& s);
/// Train: random 128 crop and coin-flip mirror. Eval: centre crop.
Sample align_and_augment(const Sample& s, bool train_mode, std::mt19937_64& rng);

double keys_cubic(double x, double a = -0.5);
/// Separable Keys bicubic with the kernel stretched by the scale factor when
/// shrinking; taps outside the image are dropped and the rest renormalised.
/// Output clamped to [0, 1].
Tensor bicubic_resize(const Tensor& image, int out_h, int out_w);
Tensor bicubic_downsample(const Tensor& image, int factor);

/// [1, 68, out_size, out_size]. Coordinates are scaled by out_size / frame_size.
Tensor render_heatmaps(const LandmarkSet& landmarks, int out_size, double sigma, int frame_size = kCropSize);

std::vector<double> compute_au_weights(std::span<const double> occurrence_rates);
std::vector<int> binarize_intensities(std::span<const int> intensities);

/// Training tensors for one batch of already cropped samples.
struct Batch {
    Tensor lr;         // [n, 3, 16, 16]
    Tensor hr;         // [n, 3, 128, 128]
    Tensor heatmaps;   // [n, 68, 64, 64]
    Tensor au_labels;  // [n, n_au, 1, 1]
    std::vector<LandmarkSet> landmarks;
};
Batch make_batch(std::span<const Sample> samples);

struct DatasetSpec {
    enum class Source { synthetic, directory };
    Source source = Source::synthetic;
    int n_au = 12;
    int n_folds = 3;
    std::map<std::string, int> fold_assignment;
    std::vector<double> occurrence_rates;
};

/// Round-robin over sorted subject ids.
std::map<std::string, int> assign_folds(std::vector<std::string> subjects, int n_folds);

class Dataset {
public:
    Dataset() = default;
    Dataset(DatasetSpec spec, std::vector<Sample> samples);

    static Dataset synthetic(int subjects, int frames, int n_au, std::uint64_t seed, int n_folds = 3);
    /// Layout: images/<subject>/<frame>.png, landmarks/<subject>/<frame>.txt,
    /// au_labels.csv, folds.json.
    static Dataset load_directory(const std::filesystem::path& root);
    void save_directory(const std::filesystem::path& root) const;

    const DatasetSpec& spec() const { return spec_; }
    const std::vector<Sample>& samples() const { return samples_; }
    std::size_t size() const { return samples_.size(); }
    int n_au() const { return spec_.n_au; }

    std::vector<std::size_t> fold_indices(int fold) const;
    std::vector<std::size_t> all_indices() const;
    /// Per-AU positive rate; AUs never seen are floored at half a count.
    std::vector<double> occurrence_rates(std::span<const std::size_t> indices) const;
    /// Recomputes spec().occurrence_rates over the given training indices.
    void set_training_split(std::span<const std::size_t> indices);

private:
    DatasetSpec spec_;
    std::vector<Sample> samples_;
};

} // namespace mpsr::data
