#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "mpsr/cli.hpp"
#include "mpsr/image_io.hpp"

namespace mpsr::cli {

namespace {

std::string trim(const std::string& s)
{
    const auto a = s.find_first_not_of(" \t");
    if (a == std::string::npos)
        return {};
    return s.substr(a, s.find_last_not_of(" \t") - a + 1);
}

void apply_overrides(train::TrainConfig& config, const CommonOptions& common)
{
    for (const auto& kv : common.settings) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("--set expects key=value, got '" + kv + "'");
        train::apply_setting(config, trim(kv.substr(0, eq)), trim(kv.substr(eq + 1)));
    }
    if (common.seed)
        config.seed = *common.seed;
}

void write_text(const std::filesystem::path& path, const std::string& text)
{
    std::ofstream f(path, std::ios::trunc);
    if (!f)
        throw IoError("cannot write " + path.string());
    f << text;
}

priors::AuRuleTable rules_for(const train::TrainConfig& config)
{
    return config.au_rules.empty() ? priors::AuRuleTable::builtin(config.n_au) : priors::AuRuleTable::load(config.au_rules);
}

std::vector<std::size_t> detector_indices(const train::Split& split)
{
    return split.train.empty() ? split.eval : split.train;
}

Tensor nearest_upsample(const Tensor& image, int factor)
{
    const Shape s = image.shape();
    Tensor out(Shape{s.n, s.c, s.h * factor, s.w * factor});
    for (int n = 0; n < s.n; n++)
        for (int c = 0; c < s.c; c++)
            for (int y = 0; y < s.h * factor; y++)
                for (int x = 0; x < s.w * factor; x++)
                    out.at(n, c, y, x) = image.at(n, c, y / factor, x / factor);
    return out;
}

/// Panels side by side with a white 2-pixel gutter.
Tensor side_by_side(const std::vector<Tensor>& panels)
{
    constexpr int gutter = 2;
    const int h = panels.front().shape().h;
    int w = 0;
    for (const auto& p : panels)
        w += p.shape().w;
    w += gutter * static_cast<int>(panels.size() - 1);
    Tensor out(Shape{1, 3, h, w}, 1.0);
    int x0 = 0;
    for (const auto& p : panels) {
        for (int c = 0; c < 3; c++)
            for (int y = 0; y < h; y++)
                for (int x = 0; x < p.shape().w; x++)
                    out.at(0, c, y, x0 + x) = p.at(0, c, y, x);
        x0 += p.shape().w + gutter;
    }
    return out;
}

std::string fmt(const char* f, double v)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

} // namespace

train::TrainConfig resolve_config(const CommonOptions& common)
{
    train::TrainConfig config;
    if (!common.config.empty())
        train::load_config_file(config, common.config);
    apply_overrides(config, common);
    config.validate();
    return config;
}

int guarded(const std::function<int()>& body, std::ostream& err)
{
    try {
        return body();
    } catch (const losses::NonFiniteLoss& e) {
        err << "error: " << e.what() << "\n";
        return kInternalError;
    } catch (const std::invalid_argument& e) {
        err << "error: " << e.what() << "\n";
        return kUserError;
    } catch (const IoError& e) {
        err << "error: " << e.what() << "\n";
        return kUserError;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << "\n";
        return kUserError;
    } catch (const nlohmann::json::exception& e) {
        err << "error: malformed JSON: " << e.what() << "\n";
        return kUserError;
    } catch (const std::exception& e) {
        err << "internal error: " << e.what() << "\n";
        return kInternalError;
    }
}

int cmd_synth_data(const SynthOptions& options, std::ostream& out)
{
    if (options.out.empty())
        throw std::invalid_argument("synth-data needs --out");
    if (options.subjects <= 0 || options.frames <= 0)
        throw std::invalid_argument("--subjects and --frames must be positive");
    if (options.n_folds <= 0 || options.n_folds > options.subjects)
        throw std::invalid_argument("--folds must lie in [1, subjects]");
    const data::Dataset ds =
        data::Dataset::synthetic(options.subjects, options.frames, options.n_au, options.seed, options.n_folds);
    ds.save_directory(options.out);
    out << "wrote " << ds.size() << " samples (" << options.subjects << " subjects x " << options.frames << " frames, "
        << options.n_au << " AUs) to " << options.out.string() << "\n";
    return kOk;
}

int cmd_train(const CommonOptions& common, const std::filesystem::path& resume, std::ostream& out)
{
    if (common.out.empty())
        throw std::invalid_argument("train needs --out");
    const train::TrainConfig config = resolve_config(common);
    train::TrainOptions opts;
    opts.out_dir = common.out;
    opts.resume = resume;
    opts.quiet = common.quiet;
    const train::TrainResult r = train::run_training(config, opts);
    out << "trained to step " << r.steps << "; best step-" << config.fsr.n_iterations
        << " PSNR " << fmt("%.3f", r.best_psnr) << " dB\n";
    if (!r.history.empty())
        out << metrics::format_table(r.history.back().report);
    out << "checkpoints: " << r.last_checkpoint.string() << ", " << r.best_checkpoint.string() << "\n";
    return kOk;
}

int cmd_eval(const CommonOptions& common, const EvalOptions& options, std::ostream& out)
{
    if (options.checkpoint.empty())
        throw std::invalid_argument("eval needs --checkpoint");
    if (options.split != "eval" && options.split != "all")
        throw std::invalid_argument("--split must be eval or all");
    const Archive archive = Archive::load(options.checkpoint);
    train::TrainConfig config = train::read_checkpoint_info(archive).config;
    if (!common.config.empty())
        train::load_config_file(config, common.config);
    apply_overrides(config, common);
    config.validate();

    train::Generator g(config);
    train::load_generator(archive, g);
    const data::Dataset ds = train::load_dataset(config);
    const train::Split split = train::make_split(ds, config);
    const auto indices = options.split == "all" ? ds.all_indices() : split.eval;

    const train::FrozenAuDetector detector =
        options.detector.empty()
            ? train::FrozenAuDetector::train(ds, detector_indices(split), train::detector_config(config), common.quiet)
            : train::FrozenAuDetector::load(options.detector);
    if (!options.save_detector.empty())
        detector.save(options.save_detector);
    const metrics::AuDetector fn = detector.as_function();

    const metrics::MetricReport report =
        train::evaluate(g, config, rules_for(config), train::eval_samples(ds, indices), &fn, config.batch_size);
    const std::string table = metrics::format_table(report);
    if (!common.out.empty()) {
        std::filesystem::create_directories(common.out);
        write_text(common.out / "report.json", metrics::to_json(report).dump(2) + "\n");
        write_text(common.out / "report.txt", table);
    }
    out << table;
    return kOk;
}

int cmd_sr(const CommonOptions& common, const SrOptions& options, std::ostream& out, std::ostream& err)
{
    if (options.checkpoint.empty())
        throw std::invalid_argument("sr needs --checkpoint");
    if (common.out.empty())
        throw std::invalid_argument("sr needs --out");
    if (!std::filesystem::is_directory(options.input))
        throw std::invalid_argument("input directory " + options.input.string() + " does not exist");

    std::vector<std::filesystem::path> inputs;
    for (const auto& e : std::filesystem::directory_iterator(options.input))
        if (e.is_regular_file() && e.path().extension() == ".png")
            inputs.push_back(e.path());
    std::sort(inputs.begin(), inputs.end());
    if (inputs.empty()) {
        err << "error: no .png images in " << options.input.string() << "\n";
        return kUserError;
    }

    const Archive archive = Archive::load(options.checkpoint);
    train::TrainConfig config = train::read_checkpoint_info(archive).config;
    apply_overrides(config, common);
    config.validate();
    train::Generator g(config);
    train::load_generator(archive, g);
    const priors::AuRuleTable rules = rules_for(config);
    std::filesystem::create_directories(common.out);

    int written = 0;
    for (const auto& path : inputs) {
        Tensor image;
        try {
            image = read_png(path);
        } catch (const std::exception& e) {
            err << "warning: skipping " << path.filename().string() << ": " << e.what() << "\n";
            continue;
        }
        Tensor lr = image;
        Tensor hr;
        const Shape s = image.shape();
        if (s.h != data::kLrSize || s.w != data::kLrSize) {
            err << "warning: " << path.filename().string() << " is " << s.h << "x" << s.w << ", downsampling to "
                << data::kLrSize << "x" << data::kLrSize << "\n";
            lr = data::bicubic_resize(image, data::kLrSize, data::kLrSize);
            if (s.h == data::kCropSize && s.w == data::kCropSize)
                hr = image;
        }

        train::JointForward jf;
        {
            ag::NoGradGuard guard;
            jf = train::joint_forward(g, config, rules, lr);
        }
        const std::string stem = path.stem().string();
        const auto& steps = jf.trace.sr_images;
        const Tensor sr = steps.back().value();
        write_png(common.out / (stem + "_sr.png"), sr);
        if (options.emit_steps)
            for (std::size_t t = 0; t + 1 < steps.size(); t++)
                write_png(common.out / (stem + "_step" + std::to_string(t + 1) + ".png"), steps[t].value());

        std::vector<Tensor> panels = {nearest_upsample(lr, data::kScale),
                                      data::bicubic_resize(lr, data::kCropSize, data::kCropSize), metrics::clamp_unit(sr)};
        if (!hr.empty())
            panels.push_back(hr);
        write_png(common.out / (stem + "_strip.png"), side_by_side(panels));
        if (!common.quiet)
            out << path.filename().string() << " -> " << stem << "_sr.png\n";
        written++;
    }
    if (written == 0) {
        err << "error: none of the " << inputs.size() << " inputs could be read\n";
        return kUserError;
    }
    out << "super-resolved " << written << " of " << inputs.size() << " images into " << common.out.string() << "\n";
    return kOk;
}

std::vector<std::pair<std::string, train::Ablation>> ablation_variants()
{
    return {{"baseline", {false, false, false}},
            {"+landmarks", {true, false, false}},
            {"+landmarks+AUs", {true, true, false}},
            {"+landmarks+AUs+attention", {true, true, true}}};
}

nlohmann::json AblationReport::to_json() const
{
    nlohmann::json rows_j = nlohmann::json::array();
    for (const auto& r : rows)
        rows_j.push_back({{"name", r.name},
                          {"use_landmark_prior", r.flags.use_landmark_prior},
                          {"use_au_prior", r.flags.use_au_prior},
                          {"use_attention", r.flags.use_attention},
                          {"psnr_db", metrics::psnr_to_json(r.psnr_db)},
                          {"ssim", r.ssim},
                          {"au_f1", r.au_f1},
                          {"au_acc", r.au_acc}});
    return {{"bicubic_psnr_db", metrics::psnr_to_json(bicubic_psnr_db)}, {"rows", rows_j}};
}

std::string AblationReport::table() const
{
    std::ostringstream os;
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-26s %3s %3s %3s %9s %7s %7s %7s\n", "variant", "L", "AU", "A", "PSNR", "SSIM", "F1",
                  "Acc");
    os << buf;
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof buf, "%-26s %3s %3s %3s %9.3f %7.4f %7.2f %7.2f\n", r.name.c_str(),
                      r.flags.use_landmark_prior ? "x" : "", r.flags.use_au_prior ? "x" : "",
                      r.flags.use_attention ? "x" : "", r.psnr_db, r.ssim, r.au_f1, r.au_acc);
        os << buf;
    }
    std::snprintf(buf, sizeof buf, "bicubic PSNR %.3f dB\n", bicubic_psnr_db);
    os << buf;
    return os.str();
}

AblationReport run_ablation(const train::TrainConfig& config, const std::filesystem::path& out_dir, bool quiet)
{
    config.validate();
    if (config.phase != train::Phase::psnr)
        throw std::invalid_argument("ablation runs the psnr phase");
    const data::Dataset ds = train::load_dataset(config);
    const train::Split split = train::make_split(ds, config);
    const train::FrozenAuDetector detector =
        train::FrozenAuDetector::train(ds, detector_indices(split), train::detector_config(config), quiet);
    const metrics::AuDetector fn = detector.as_function();

    AblationReport report;
    int k = 0;
    for (const auto& [name, flags] : ablation_variants()) {
        train::TrainConfig cfg = config;
        cfg.ablation = flags;
        train::TrainOptions opts;
        opts.out_dir = out_dir / ("variant" + std::to_string(k++));
        opts.quiet = quiet;
        opts.detector = &fn;
        if (!quiet)
            std::cerr << "== " << name << "\n";
        const train::TrainResult r = train::run_training(cfg, opts);
        const metrics::MetricReport& m = r.history.back().report;
        const metrics::StepMetrics& last = m.steps.back();
        report.bicubic_psnr_db = m.steps.front().psnr_db;
        report.rows.push_back({name, flags, last.psnr_db, last.ssim, last.au.mean_f1, last.au.mean_acc});
    }
    std::filesystem::create_directories(out_dir);
    write_text(out_dir / "ablation.json", report.to_json().dump(2) + "\n");
    write_text(out_dir / "ablation.txt", report.table());
    return report;
}

int cmd_ablate(const CommonOptions& common, std::ostream& out)
{
    if (common.out.empty())
        throw std::invalid_argument("ablate needs --out");
    const AblationReport report = run_ablation(resolve_config(common), common.out, common.quiet);
    out << report.table();
    return kOk;
}

} // namespace mpsr::cli
