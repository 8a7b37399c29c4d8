#include <cerrno>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

#include "mpsr/train.hpp"

namespace mpsr::train {

namespace {

std::string trim(const std::string& s)
{
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos)
        return {};
    return s.substr(a, s.find_last_not_of(" \t\r") - a + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected)
{
    throw std::invalid_argument("setting '" + key + "': '" + value + "' is not " + expected);
}

long long to_int(const std::string& key, const std::string& v)
{
    char* end = nullptr;
    errno = 0;
    const long long x = std::strtoll(v.c_str(), &end, 10);
    if (v.empty() || *end != '\0' || errno != 0)
        bad_value(key, v, "an integer");
    return x;
}

double to_double(const std::string& key, const std::string& v)
{
    char* end = nullptr;
    errno = 0;
    const double x = std::strtod(v.c_str(), &end);
    if (v.empty() || *end != '\0' || errno != 0)
        bad_value(key, v, "a number");
    return x;
}

bool to_bool(const std::string& key, const std::string& v)
{
    if (v == "true" || v == "1" || v == "yes" || v == "on")
        return true;
    if (v == "false" || v == "0" || v == "no" || v == "off")
        return false;
    bad_value(key, v, "a boolean");
}

std::string fmt(double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt_bool(bool b)
{
    return b ? "true" : "false";
}

struct Setting {
    const char* key;
    std::function<std::string(const TrainConfig&)> get;
    std::function<void(TrainConfig&, const std::string& key, const std::string&)> set;
};

template <typename T>
Setting int_setting(const char* key, T TrainConfig::*field)
{
    return {key, [field](const TrainConfig& c) { return std::to_string(c.*field); },
            [field](TrainConfig& c, const std::string& k, const std::string& v) { c.*field = static_cast<T>(to_int(k, v)); }};
}

Setting double_setting(const char* key, double TrainConfig::*field)
{
    return {key, [field](const TrainConfig& c) { return fmt(c.*field); },
            [field](TrainConfig& c, const std::string& k, const std::string& v) { c.*field = to_double(k, v); }};
}

Setting string_setting(const char* key, std::string TrainConfig::*field)
{
    return {key, [field](const TrainConfig& c) { return c.*field; },
            [field](TrainConfig& c, const std::string&, const std::string& v) { c.*field = v; }};
}

Setting lambda_setting(const char* key, std::optional<double> TrainConfig::*field)
{
    return {key, [field](const TrainConfig& c) { return (c.*field) ? fmt(*(c.*field)) : std::string("default"); },
            [field](TrainConfig& c, const std::string& k, const std::string& v) {
                if (v == "default")
                    (c.*field).reset();
                else
                    c.*field = to_double(k, v);
            }};
}

template <typename Get, typename Set>
Setting custom(const char* key, Get get, Set set)
{
    return {key, get, set};
}

#define NESTED_INT(key, outer, inner)                                                                                   \
    custom(key, [](const TrainConfig& c) { return std::to_string(c.outer.inner); },                                     \
           [](TrainConfig& c, const std::string& k, const std::string& v) { c.outer.inner = static_cast<int>(to_int(k, v)); })

const std::vector<Setting>& registry()
{
    static const std::vector<Setting> table = {
        int_setting("batch_size", &TrainConfig::batch_size),
        double_setting("lr", &TrainConfig::lr),
        double_setting("adam_beta1", &TrainConfig::adam_beta1),
        double_setting("adam_beta2", &TrainConfig::adam_beta2),
        double_setting("adam_eps", &TrainConfig::adam_eps),
        int_setting("epochs", &TrainConfig::epochs),
        int_setting("max_steps", &TrainConfig::max_steps),
        custom(
            "phase", [](const TrainConfig& c) { return std::string(c.phase == Phase::gan ? "gan" : "psnr"); },
            [](TrainConfig& c, const std::string& k, const std::string& v) {
                if (v == "psnr")
                    c.phase = Phase::psnr;
                else if (v == "gan")
                    c.phase = Phase::gan;
                else
                    bad_value(k, v, "psnr or gan");
            }),
        lambda_setting("lambda_align", &TrainConfig::lambda_align),
        lambda_setting("lambda_au", &TrainConfig::lambda_au),
        lambda_setting("lambda_per", &TrainConfig::lambda_per),
        lambda_setting("lambda_adv", &TrainConfig::lambda_adv),
        custom(
            "seed", [](const TrainConfig& c) { return std::to_string(c.seed); },
            [](TrainConfig& c, const std::string& k, const std::string& v) {
                const long long s = to_int(k, v);
                if (s < 0)
                    bad_value(k, v, "a non-negative integer");
                c.seed = static_cast<std::uint64_t>(s);
            }),
        custom(
            "use_landmark_prior", [](const TrainConfig& c) { return fmt_bool(c.ablation.use_landmark_prior); },
            [](TrainConfig& c, const std::string& k, const std::string& v) { c.ablation.use_landmark_prior = to_bool(k, v); }),
        custom(
            "use_au_prior", [](const TrainConfig& c) { return fmt_bool(c.ablation.use_au_prior); },
            [](TrainConfig& c, const std::string& k, const std::string& v) { c.ablation.use_au_prior = to_bool(k, v); }),
        custom(
            "use_attention", [](const TrainConfig& c) { return fmt_bool(c.ablation.use_attention); },
            [](TrainConfig& c, const std::string& k, const std::string& v) { c.ablation.use_attention = to_bool(k, v); }),
        double_setting("grad_clip", &TrainConfig::grad_clip),
        custom(
            "bce_form",
            [](const TrainConfig& c) {
                return std::string(c.bce_form == losses::CrossEntropyForm::printed ? "printed" : "standard");
            },
            [](TrainConfig& c, const std::string& k, const std::string& v) {
                if (v == "standard")
                    c.bce_form = losses::CrossEntropyForm::standard;
                else if (v == "printed")
                    c.bce_form = losses::CrossEntropyForm::printed;
                else
                    bad_value(k, v, "standard or printed");
            }),
        double_setting("dice_epsilon", &TrainConfig::dice_epsilon),
        custom(
            "augment", [](const TrainConfig& c) { return fmt_bool(c.augment); },
            [](TrainConfig& c, const std::string& k, const std::string& v) { c.augment = to_bool(k, v); }),
        string_setting("dataset", &TrainConfig::dataset),
        int_setting("synth_subjects", &TrainConfig::synth_subjects),
        int_setting("synth_frames", &TrainConfig::synth_frames),
        int_setting("n_au", &TrainConfig::n_au),
        int_setting("n_folds", &TrainConfig::n_folds),
        string_setting("eval_split", &TrainConfig::eval_split),
        int_setting("eval_fold", &TrainConfig::eval_fold),
        double_setting("holdout_fraction", &TrainConfig::holdout_fraction),
        int_setting("eval_every", &TrainConfig::eval_every),
        NESTED_INT("fsr_iterations", fsr, n_iterations),
        NESTED_INT("fsr_channels", fsr, feature_channels),
        NESTED_INT("fsr_groups", fsr, feedback_groups),
        custom(
            "recb_init_scale", [](const TrainConfig& c) { return fmt(c.fsr.recb_init_scale); },
            [](TrainConfig& c, const std::string& k, const std::string& v) { c.fsr.recb_init_scale = to_double(k, v); }),
        NESTED_INT("align_channels", align, channels),
        NESTED_INT("align_blocks", align, residual_blocks),
        NESTED_INT("align_stacks", align, stacks),
        NESTED_INT("align_depth", align, depth),
        NESTED_INT("au_width", au, base_width),
        NESTED_INT("au_blocks", au, blocks_per_stage),
        NESTED_INT("disc_width", disc, base_width),
        NESTED_INT("disc_dense", disc, dense_width),
        custom(
            "perceptual_widths",
            [](const TrainConfig& c) {
                std::string s;
                for (std::size_t i = 0; i < c.perceptual_widths.size(); i++)
                    s += (i ? "," : "") + std::to_string(c.perceptual_widths[i]);
                return s;
            },
            [](TrainConfig& c, const std::string& k, const std::string& v) {
                std::vector<int> widths;
                std::stringstream ss(v);
                std::string item;
                while (std::getline(ss, item, ','))
                    widths.push_back(static_cast<int>(to_int(k, trim(item))));
                if (widths.empty())
                    bad_value(k, v, "a comma-separated width list");
                c.perceptual_widths = widths;
            }),
        custom(
            "perceptual_seed", [](const TrainConfig& c) { return std::to_string(c.perceptual_seed); },
            [](TrainConfig& c, const std::string& k, const std::string& v) {
                c.perceptual_seed = static_cast<std::uint64_t>(to_int(k, v));
            }),
        string_setting("perceptual_archive", &TrainConfig::perceptual_archive),
        string_setting("au_rules", &TrainConfig::au_rules),
        double_setting("attention_sigma", &TrainConfig::attention_sigma),
        string_setting("init_checkpoint", &TrainConfig::init_checkpoint),
        int_setting("detector_steps", &TrainConfig::detector_steps),
        int_setting("detector_width", &TrainConfig::detector_width),
        int_setting("detector_batch", &TrainConfig::detector_batch),
        double_setting("detector_lr", &TrainConfig::detector_lr),
    };
    return table;
}

#undef NESTED_INT

} // namespace

losses::LossWeights TrainConfig::weights() const
{
    losses::LossWeights w = phase == Phase::gan ? losses::LossWeights::gan_phase() : losses::LossWeights::psnr_phase();
    if (lambda_align)
        w.align = *lambda_align;
    if (lambda_au)
        w.au = *lambda_au;
    if (lambda_per)
        w.per = *lambda_per;
    if (lambda_adv)
        w.adv = *lambda_adv;
    return w;
}

void TrainConfig::validate() const
{
    auto require = [](bool ok, const std::string& what) {
        if (!ok)
            throw std::invalid_argument("config: " + what);
    };
    require(batch_size > 0, "batch_size must be positive");
    require(lr > 0.0, "lr must be positive");
    require(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0, "Adam betas must be in [0, 1)");
    require(adam_eps > 0.0, "adam_eps must be positive");
    require(epochs > 0, "epochs must be positive");
    require(max_steps >= 0, "max_steps must be >= 0");
    require(grad_clip >= 0.0, "grad_clip must be >= 0");
    require(dice_epsilon > 0.0, "dice_epsilon must be positive");
    require(n_au == 8 || n_au == 12, "n_au must be 8 or 12");
    require(synth_subjects > 0 && synth_frames > 0, "synthetic set size must be positive");
    require(n_folds > 0, "n_folds must be positive");
    require(eval_split == "holdout" || eval_split == "train" || eval_split == "fold", "eval_split must be holdout, train or fold");
    require(holdout_fraction >= 0.0 && holdout_fraction < 1.0, "holdout_fraction must be in [0, 1)");
    require(eval_every >= 0, "eval_every must be >= 0");
    require(attention_sigma > 0.0, "attention_sigma must be positive");
    require(detector_steps >= 0 && detector_width > 0 && detector_batch > 0 && detector_lr > 0.0,
            "detector settings must be positive");
    weights().validate();
    fsr.validate();
    align.validate();
    au.validate();
    disc.validate();
}

void apply_setting(TrainConfig& config, const std::string& key, const std::string& value)
{
    for (const auto& s : registry())
        if (key == s.key) {
            s.set(config, key, trim(value));
            return;
        }
    throw std::invalid_argument("unknown setting '" + key + "'");
}

namespace {

void load_config_file(TrainConfig& config, const std::filesystem::path& path, int depth)
{
    if (depth > 8)
        throw std::invalid_argument("config include nesting too deep at " + path.string());
    std::ifstream in(path);
    if (!in)
        throw std::invalid_argument("cannot read config file " + path.string());
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
        line_no++;
        const std::string line = trim(raw.substr(0, raw.find('#')));
        if (line.empty())
            continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument(path.string() + ":" + std::to_string(line_no) + ": expected key = value");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        try {
            if (key == "include")
                load_config_file(config, path.parent_path() / value, depth + 1);
            else
                apply_setting(config, key, value);
        } catch (const std::invalid_argument& e) {
            throw std::invalid_argument(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
    }
}

} // namespace

void load_config_file(TrainConfig& config, const std::filesystem::path& path)
{
    load_config_file(config, path, 0);
}

std::vector<std::pair<std::string, std::string>> settings(const TrainConfig& config)
{
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& s : registry())
        out.emplace_back(s.key, s.get(config));
    return out;
}

nlohmann::json to_json(const TrainConfig& config)
{
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : settings(config))
        j[k] = v;
    return j;
}

TrainConfig config_from_json(const nlohmann::json& j)
{
    TrainConfig c;
    for (const auto& [k, v] : j.items())
        apply_setting(c, k, v.get<std::string>());
    return c;
}

DetectorConfig detector_config(const TrainConfig& config)
{
    DetectorConfig d;
    d.au.n_au = config.n_au;
    d.au.base_width = config.detector_width;
    d.au.blocks_per_stage = config.au.blocks_per_stage;
    d.steps = config.detector_steps;
    d.batch_size = config.detector_batch;
    d.lr = config.detector_lr;
    d.seed = config.seed ^ 0xde7ec7ULL;
    return d;
}

} // namespace mpsr::train
