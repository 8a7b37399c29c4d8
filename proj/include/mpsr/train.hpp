#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mpsr/archive.hpp"
#include "mpsr/datakit.hpp"
#include "mpsr/fsr_core.hpp"
#include "mpsr/losses.hpp"
#include "mpsr/metrics.hpp"
#include "mpsr/priors.hpp"

namespace mpsr::train {

enum class Phase { psnr, gan };

struct Ablation {
    bool use_landmark_prior = true;
    bool use_au_prior = true;
    bool use_attention = true;

    /// The alignment branch is needed for the landmark prior and for
    /// attention-masked AU priors.
    bool alignment_active() const { return use_landmark_prior || (use_au_prior && use_attention); }
};

struct TrainConfig {
    int batch_size = 4;
    double lr = 1e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    int epochs = 2;
    long max_steps = 0;  // > 0 replaces the epoch count
    Phase phase = Phase::psnr;
    std::optional<double> lambda_align, lambda_au, lambda_per, lambda_adv;  // unset: phase default
    std::uint64_t seed = 0;
    Ablation ablation;
    double grad_clip = 0.0;  // global L2 norm; 0 disables
    losses::CrossEntropyForm bce_form = losses::CrossEntropyForm::standard;
    double dice_epsilon = 1.0;
    bool augment = true;

    // data
    std::string dataset = "synthetic";  // or a directory in the documented layout
    int synth_subjects = 6;
    int synth_frames = 4;
    int n_au = 12;
    int n_folds = 3;
    std::string eval_split = "holdout";  // holdout | train | fold
    int eval_fold = 0;
    double holdout_fraction = 0.1;
    int eval_every = 0;  // steps; 0 evaluates once per epoch and at the end

    // model
    fsr::FsrConfig fsr;
    priors::AlignConfig align;
    priors::AuConfig au;
    losses::DiscriminatorConfig disc;
    std::vector<int> perceptual_widths = losses::ConvFeatureExtractor::default_widths();
    std::uint64_t perceptual_seed = 7;
    std::string perceptual_archive;
    std::string au_rules;  // empty: built-in table for n_au
    double attention_sigma = priors::kAttentionSigma;

    std::string init_checkpoint;  // required for the gan phase

    // frozen AU detector used for the F1 / accuracy metrics
    int detector_steps = 300;
    int detector_width = 64;
    int detector_batch = 8;
    double detector_lr = 1e-3;

    losses::LossWeights weights() const;
    /// Throws std::invalid_argument on an out-of-range value.
    void validate() const;
};

/// Applies one "key = value" setting; throws std::invalid_argument for an
/// unknown key or a malformed value.
void apply_setting(TrainConfig& config, const std::string& key, const std::string& value);
/// Flat key = value lines, '#' comments, "include = other.cfg" resolved
/// relative to the including file.
void load_config_file(TrainConfig& config, const std::filesystem::path& path);
/// Every key with its current value, in a stable order.
std::vector<std::pair<std::string, std::string>> settings(const TrainConfig& config);
nlohmann::json to_json(const TrainConfig& config);
TrainConfig config_from_json(const nlohmann::json& j);

struct AdamHyper {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

/// One bias-corrected Adam step at 1-based time step t.
void adam_update(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v, long t, const AdamHyper& hyper);

class Adam {
public:
    Adam(const ParamStore& store, AdamHyper hyper);
    /// Applies one update from the current gradients (missing gradients count
    /// as zero).
    void step(ParamStore& store);
    long time() const { return t_; }
    const AdamHyper& hyper() const { return hyper_; }

    void save(Archive& archive, const std::string& prefix) const;
    void load(const Archive& archive, const std::string& prefix);

private:
    AdamHyper hyper_;
    std::vector<std::string> names_;
    std::vector<Tensor> m_, v_;
    long t_ = 0;
};

/// Generator-side networks (SR, alignment, AU branches) sharing one store.
struct Generator {
    ParamStore store;
    std::unique_ptr<fsr::FsrNet> fsr;
    std::unique_ptr<priors::AlignNet> align;
    std::unique_ptr<priors::AuNet> au;

    explicit Generator(const TrainConfig& config);
};

struct Critic {
    ParamStore store;
    std::unique_ptr<losses::Discriminator> net;

    explicit Critic(const TrainConfig& config);
};

/// Everything produced by one joint forward pass.
struct JointForward {
    fsr::IterationTrace trace;
    Var heatmaps;  // alignment output on sr1 (undefined when inactive)
    Var au_probs;  // AU probabilities on sr2 (undefined when inactive)
    Tensor attention;
    std::vector<data::LandmarkSet> landmarks;  // decoded from heatmaps
};

/// Runs the unrolled SR pass with priors wired according to the ablation.
JointForward joint_forward(const Generator& g, const TrainConfig& config, const priors::AuRuleTable& rules,
                           const Tensor& lr);

struct StepResult {
    std::vector<std::pair<std::string, double>> losses;
    double total = 0.0;
    double d_accuracy = -1.0;  // gan phase only
};

/// Loss weights, AU weights and fixed helpers shared by every training step.
struct StepContext {
    const TrainConfig* config = nullptr;
    const priors::AuRuleTable* rules = nullptr;
    std::vector<double> au_weights;
    const losses::FeatureExtractor* phi = nullptr;
};

/// One optimisation step. The gan phase first updates the critic on detached
/// outputs, then updates the generator through a fresh critic pass.
StepResult train_step(Generator& g, Adam& g_opt, Critic* d, Adam* d_opt, const data::Batch& batch, const StepContext& ctx);

/// The training set and evaluation set implied by the configuration.
struct Split {
    std::vector<std::size_t> train;
    std::vector<std::size_t> eval;
    bool eval_is_train = false;
};
Split make_split(const data::Dataset& dataset, const TrainConfig& config);

data::Dataset load_dataset(const TrainConfig& config);

/// Centre-cropped eval samples with LR made by bicubic downsampling.
std::vector<data::Sample> eval_samples(const data::Dataset& dataset, const std::vector<std::size_t>& indices);

/// Per-step PSNR/SSIM (and AU scores when a detector is given) plus a bicubic row.
metrics::MetricReport evaluate(const Generator& g, const TrainConfig& config, const priors::AuRuleTable& rules,
                               const std::vector<data::Sample>& samples, const metrics::AuDetector* detector,
                               int batch_size = 4);

struct EvalPoint {
    long step = 0;
    metrics::MetricReport report;
};

struct TrainOptions {
    std::filesystem::path out_dir;
    std::filesystem::path resume;  // checkpoint to continue from
    bool quiet = false;
    /// Called after every step with (step, result).
    std::function<void(long, const StepResult&)> on_step;
    const metrics::AuDetector* detector = nullptr;
};

struct TrainResult {
    long steps = 0;
    std::vector<StepResult> log;  // steps run in this invocation
    std::vector<EvalPoint> history;
    double best_psnr = 0.0;
    std::filesystem::path last_checkpoint;
    std::filesystem::path best_checkpoint;
};

/// Writes <out>/train_log.jsonl, <out>/last.ckpt, <out>/best.ckpt and
/// <out>/history.json.
TrainResult run_training(const TrainConfig& config, const TrainOptions& options);

/// Checkpoint IO. Parameters are stored as f64 so resumed runs are
/// bit-identical.
void save_checkpoint(const std::filesystem::path& path, const TrainConfig& config, const Generator& g, const Adam& g_opt,
                     const Critic* d, const Adam* d_opt, long step, double best_psnr);
struct CheckpointInfo {
    TrainConfig config;
    long step = 0;
    double best_psnr = 0.0;
};
CheckpointInfo read_checkpoint_info(const Archive& archive);
/// Loads generator parameters (fsr/align/au) from a checkpoint archive.
void load_generator(const Archive& archive, Generator& g);

struct DetectorConfig {
    priors::AuConfig au;
    int steps = 300;
    int batch_size = 8;
    double lr = 1e-3;
    std::uint64_t seed = 11;
};

DetectorConfig detector_config(const TrainConfig& config);

/// An AU classifier trained on HR crops and then frozen.
class FrozenAuDetector {
public:
    FrozenAuDetector(const DetectorConfig& config);
    static FrozenAuDetector train(const data::Dataset& dataset, const std::vector<std::size_t>& indices,
                                  const DetectorConfig& config, bool quiet = true);
    static FrozenAuDetector load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

    std::vector<double> operator()(const Tensor& image) const;
    metrics::AuDetector as_function() const;

private:
    DetectorConfig config_;
    std::shared_ptr<ParamStore> store_;
    std::shared_ptr<priors::AuNet> net_;
};

} // namespace mpsr::train
