#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mpsr/gradcheck.hpp"
#include "mpsr/train.hpp"

namespace mpsr::cli {

enum ExitCode : int { kOk = 0, kUserError = 1, kInternalError = 2 };

/// Options every command accepts.
struct CommonOptions {
    std::optional<std::uint64_t> seed;
    std::string config;                // key = value file
    std::filesystem::path out;
    std::vector<std::string> settings;  // "key=value" overrides applied after the file
    bool quiet = false;
};

/// Defaults, then the config file, then --set overrides, then --seed.
train::TrainConfig resolve_config(const CommonOptions& common);

/// Runs body and maps exceptions onto exit codes: invalid input and IO
/// problems are user errors, anything else is an internal failure.
int guarded(const std::function<int()>& body, std::ostream& err);

struct SynthOptions {
    std::filesystem::path out;
    int subjects = 3;
    int frames = 4;
    int n_au = 12;
    int n_folds = 3;
    std::uint64_t seed = 0;
};
int cmd_synth_data(const SynthOptions& options, std::ostream& out);

int cmd_train(const CommonOptions& common, const std::filesystem::path& resume, std::ostream& out);

struct EvalOptions {
    std::filesystem::path checkpoint;
    std::filesystem::path detector;       // load instead of training one
    std::filesystem::path save_detector;  // optional
    std::string split = "eval";           // eval | all
};
int cmd_eval(const CommonOptions& common, const EvalOptions& options, std::ostream& out);

struct SrOptions {
    std::filesystem::path input;
    std::filesystem::path checkpoint;
    bool emit_steps = false;
};
int cmd_sr(const CommonOptions& common, const SrOptions& options, std::ostream& out, std::ostream& err);

struct AblationRow {
    std::string name;
    train::Ablation flags;
    double psnr_db = 0.0;
    double ssim = 0.0;
    double au_f1 = 0.0;
    double au_acc = 0.0;
};

struct AblationReport {
    std::vector<AblationRow> rows;
    double bicubic_psnr_db = 0.0;
    nlohmann::json to_json() const;
    std::string table() const;
};

/// The four variants in order: baseline, +landmarks, +landmarks+AUs,
/// +landmarks+AUs+attention.
std::vector<std::pair<std::string, train::Ablation>> ablation_variants();
AblationReport run_ablation(const train::TrainConfig& config, const std::filesystem::path& out_dir, bool quiet);
int cmd_ablate(const CommonOptions& common, std::ostream& out);

struct SuiteResult {
    std::string name;
    std::string description;
    std::vector<GradProbe> probes;
    double seconds = 0.0;
    bool pass = false;
};

struct GradcheckOptions {
    std::uint64_t seed = 0;
    std::string corrupt_target;      // test hook
    std::vector<std::string> only;  // run just these suites (all when empty)
};
std::vector<SuiteResult> run_gradcheck_suite(const GradcheckOptions& options);
std::string format_suite_line(const SuiteResult& s);
int cmd_gradcheck(const CommonOptions& common, const GradcheckOptions& options, std::ostream& out);

} // namespace mpsr::cli
