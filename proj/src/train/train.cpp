#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <numeric>
#include <random>

#include "mpsr/train.hpp"

namespace mpsr::train {

namespace {

fsr::FsrConfig fsr_config(const TrainConfig& c)
{
    fsr::FsrConfig f = c.fsr;
    f.au_channels = c.n_au;
    return f;
}

priors::AuConfig au_config(const TrainConfig& c)
{
    priors::AuConfig a = c.au;
    a.n_au = c.n_au;
    return a;
}

std::uint64_t mix(std::uint64_t a, std::uint64_t b)
{
    // splitmix64 finaliser over a combined word
    std::uint64_t z = a * 0x9e3779b97f4a7c15ULL + b + 0x632be59bd9b4e019ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

double global_norm(const ParamStore& store)
{
    double ss = 0.0;
    for (const auto& name : store.names()) {
        const Var p = store.get(name);
        if (p.has_grad())
            for (double g : p.grad().values())
                ss += g * g;
    }
    return std::sqrt(ss);
}

void clip_gradients(ParamStore& store, double max_norm)
{
    if (max_norm <= 0.0)
        return;
    const double norm = global_norm(store);
    if (norm <= max_norm || norm == 0.0)
        return;
    const double f = max_norm / norm;
    for (const auto& name : store.names()) {
        Var p = store.get(name);
        if (p.has_grad())
            p.mutable_grad() *= f;
    }
}

} // namespace

Generator::Generator(const TrainConfig& config)
{
    Initializer init(config.seed);
    fsr = std::make_unique<fsr::FsrNet>(store, init, fsr_config(config), "fsr");
    align = std::make_unique<priors::AlignNet>(store, init, config.align, "align");
    au = std::make_unique<priors::AuNet>(store, init, au_config(config), "au");
}

Critic::Critic(const TrainConfig& config)
{
    Initializer init(mix(config.seed, 0xd15c));
    net = std::make_unique<losses::Discriminator>(store, init, config.disc, "disc");
}

JointForward joint_forward(const Generator& g, const TrainConfig& config, const priors::AuRuleTable& rules, const Tensor& lr)
{
    const Ablation& ab = config.ablation;
    JointForward out;
    auto provider = [&](int t, const fsr::IterationTrace& trace) -> fsr::PriorTensor {
        const int resolution = trace.shallow.front().shape().h;
        if (t == 2) {
            if (ab.alignment_active()) {
                out.heatmaps = g.align->forward(trace.sr_images[0]);
                out.landmarks = priors::decode_heatmaps(out.heatmaps.value());
            }
            if (ab.use_landmark_prior)
                return priors::landmark_prior_maps(out.heatmaps, resolution);
            return {};
        }
        if (t == 3 && ab.use_au_prior) {
            out.au_probs = ops::sigmoid(g.au->forward(trace.sr_images[1]));
            const int n = lr.shape().n;
            const auto& ids = data::au_ids(config.n_au);
            if (ab.use_attention) {
                std::vector<Tensor> maps;
                for (int i = 0; i < n; i++)
                    maps.push_back(priors::build_au_attention(out.landmarks[i], rules, ids, config.attention_sigma));
                out.attention = stack_batch(maps);
            } else {
                out.attention = Tensor(Shape{n, config.n_au, data::kCropSize, data::kCropSize}, 1.0);
            }
            return priors::au_prior_maps(out.au_probs, out.attention, resolution);
        }
        return {};
    };
    out.trace = g.fsr->forward_unrolled(lr, provider);
    return out;
}

StepResult train_step(Generator& g, Adam& g_opt, Critic* d, Adam* d_opt, const data::Batch& batch, const StepContext& ctx)
{
    const TrainConfig& cfg = *ctx.config;
    const bool gan = cfg.phase == Phase::gan;
    if (gan && (!d || !d_opt || !ctx.phi))
        throw std::invalid_argument("train_step: gan phase needs a critic, its optimizer and a feature extractor");

    g.store.zero_grad();
    JointForward jf = joint_forward(g, cfg, *ctx.rules, batch.lr);
    losses::LossParts parts;
    parts.rec = losses::reconstruction_loss(jf.trace.sr_images, batch.hr);
    if (jf.heatmaps.defined())
        parts.align = losses::heatmap_loss(jf.heatmaps, ag::constant(batch.heatmaps));
    if (jf.au_probs.defined())
        parts.au = losses::au_loss(batch.au_labels, jf.au_probs, ctx.au_weights, cfg.dice_epsilon, cfg.bce_form);

    StepResult result;
    double loss_d = 0.0;
    if (gan) {
        const Var sr = jf.trace.sr_images.back();
        d->store.zero_grad();
        Var d_real = d->net->forward(ag::constant(batch.hr));
        Var d_fake = d->net->forward(ag::detach(sr));
        Var ld = losses::discriminator_loss(d_real, d_fake);
        loss_d = ld.item();
        if (!std::isfinite(loss_d))
            throw losses::NonFiniteLoss("adv_D", loss_d);
        int correct = 0;
        for (double p : d_real.value().values())
            correct += p > 0.5;
        for (double p : d_fake.value().values())
            correct += p < 0.5;
        result.d_accuracy = correct / static_cast<double>(d_real.value().size() + d_fake.value().size());
        ag::backward(ld);
        clip_gradients(d->store, cfg.grad_clip);
        d_opt->step(d->store);

        parts.per = losses::perceptual_loss(sr, batch.hr, *ctx.phi);
        parts.adv_g = losses::generator_adversarial_loss(d->net->forward(sr));
    }

    losses::WeightedLoss total = losses::overall_loss(parts, cfg.weights());
    ag::backward(total.total);
    clip_gradients(g.store, cfg.grad_clip);
    g_opt.step(g.store);

    for (const auto& [name, value] : total.breakdown)
        if (gan || (name != "per" && name != "adv_G"))
            result.losses.emplace_back(name, value);
    if (gan)
        result.losses.emplace_back("adv_D", loss_d);
    result.total = total.total.item();
    return result;
}

data::Dataset load_dataset(const TrainConfig& config)
{
    if (config.dataset == "synthetic")
        return data::Dataset::synthetic(config.synth_subjects, config.synth_frames, config.n_au, config.seed, config.n_folds);
    data::Dataset ds = data::Dataset::load_directory(config.dataset);
    if (ds.n_au() != config.n_au)
        throw std::invalid_argument("dataset " + config.dataset + " has " + std::to_string(ds.n_au()) + " AUs, config says " +
                                    std::to_string(config.n_au));
    return ds;
}

Split make_split(const data::Dataset& dataset, const TrainConfig& config)
{
    Split s;
    const auto all = dataset.all_indices();
    if (all.empty())
        throw std::invalid_argument("dataset is empty");
    if (config.eval_split == "train") {
        s.train = all;
        s.eval = all;
        s.eval_is_train = true;
    } else if (config.eval_split == "fold") {
        s.eval = dataset.fold_indices(config.eval_fold);
        for (std::size_t i : all)
            if (std::find(s.eval.begin(), s.eval.end(), i) == s.eval.end())
                s.train.push_back(i);
        if (s.eval.empty() || s.train.empty())
            throw std::invalid_argument("fold " + std::to_string(config.eval_fold) + " leaves an empty train or eval split");
    } else {
        std::vector<std::size_t> order = all;
        std::mt19937_64 rng(mix(config.seed, 0x5b17));
        std::shuffle(order.begin(), order.end(), rng);
        const auto n_eval = static_cast<std::size_t>(std::llround(config.holdout_fraction * static_cast<double>(all.size())));
        if (n_eval == 0) {
            s.train = all;
            s.eval = all;
            s.eval_is_train = true;
        } else {
            s.eval.assign(order.begin(), order.begin() + static_cast<long>(n_eval));
            s.train.assign(order.begin() + static_cast<long>(n_eval), order.end());
            std::sort(s.eval.begin(), s.eval.end());
            std::sort(s.train.begin(), s.train.end());
        }
    }
    return s;
}

std::vector<data::Sample> eval_samples(const data::Dataset& dataset, const std::vector<std::size_t>& indices)
{
    std::vector<data::Sample> out;
    std::mt19937_64 unused(0);
    for (std::size_t i : indices)
        out.push_back(data::align_and_augment(dataset.samples()[i], false, unused));
    return out;
}

metrics::MetricReport evaluate(const Generator& g, const TrainConfig& config, const priors::AuRuleTable& rules,
                               const std::vector<data::Sample>& samples, const metrics::AuDetector* detector, int batch_size)
{
    if (samples.empty())
        throw std::invalid_argument("evaluate: no samples");
    ag::NoGradGuard guard;
    const int n_steps = config.fsr.n_iterations;
    std::vector<std::vector<Tensor>> sr(n_steps);
    std::vector<Tensor> hr, bicubic;
    std::vector<std::vector<int>> labels;
    for (std::size_t start = 0; start < samples.size(); start += batch_size) {
        const std::size_t end = std::min(samples.size(), start + static_cast<std::size_t>(batch_size));
        const data::Batch b = data::make_batch(std::span(samples).subspan(start, end - start));
        const JointForward jf = joint_forward(g, config, rules, b.lr);
        for (std::size_t i = 0; i < end - start; i++) {
            const int n = static_cast<int>(i);
            for (int t = 0; t < n_steps; t++)
                sr[t].push_back(jf.trace.sr_images[t].value().slice_batch(n, 1));
            hr.push_back(b.hr.slice_batch(n, 1));
            bicubic.push_back(data::bicubic_resize(b.lr.slice_batch(n, 1), data::kCropSize, data::kCropSize));
            labels.push_back(samples[start + i].au_labels);
        }
    }

    metrics::MetricReport report;
    report.au_ids = data::au_ids(config.n_au);
    auto add_row = [&](const std::vector<Tensor>& images, int step, const std::string& label) {
        metrics::StepMetrics m = metrics::score_images(images, hr, step, label);
        for (std::size_t i = 0; i < samples.size(); i++)
            m.images[i].frame = samples[i].subject_id + "/" + samples[i].frame_id;
        if (detector) {
            std::vector<Tensor> clamped;
            for (const auto& im : images)
                clamped.push_back(metrics::clamp_unit(im));
            m.au = metrics::evaluate_detail_restoration(clamped, labels, *detector);
            m.has_au = true;
        }
        report.steps.push_back(std::move(m));
    };
    add_row(bicubic, 0, "bicubic");
    for (int t = 0; t < n_steps; t++)
        add_row(sr[t], t + 1, "step " + std::to_string(t + 1));
    return report;
}

void save_checkpoint(const std::filesystem::path& path, const TrainConfig& config, const Generator& g, const Adam& g_opt,
                     const Critic* d, const Adam* d_opt, long step, double best_psnr)
{
    Archive a;
    a.manifest = {{"kind", "mpsr-checkpoint"},
                  {"config", to_json(config)},
                  {"step", step},
                  {"best_psnr", metrics::psnr_to_json(best_psnr)},
                  // data order and augmentation are pure functions of (seed, step)
                  {"rng", {{"seed", config.seed}, {"next_step", step}}},
                  {"has_critic", d != nullptr}};
    put_params(a, g.store);
    g_opt.save(a, "opt.g.");
    if (d && d_opt) {
        put_params(a, d->store);
        d_opt->save(a, "opt.d.");
    }
    a.save(path);
}

CheckpointInfo read_checkpoint_info(const Archive& archive)
{
    if (archive.manifest.value("kind", "") != "mpsr-checkpoint")
        throw IoError("archive is not a training checkpoint");
    CheckpointInfo info;
    info.config = config_from_json(archive.manifest.at("config"));
    info.step = archive.manifest.at("step").get<long>();
    const auto& best = archive.manifest.at("best_psnr");
    info.best_psnr = best.is_null() ? -std::numeric_limits<double>::infinity() : metrics::psnr_from_json(best);
    return info;
}

void load_generator(const Archive& archive, Generator& g)
{
    get_params(archive, g.store);
}

namespace {

struct Loop {
    const TrainConfig& cfg;
    const data::Dataset& dataset;
    const Split& split;
    long batches_per_epoch;

    std::vector<std::size_t> epoch_order(long epoch) const
    {
        std::vector<std::size_t> order = split.train;
        std::mt19937_64 rng(mix(cfg.seed, 0xe90c + static_cast<std::uint64_t>(epoch)));
        std::shuffle(order.begin(), order.end(), rng);
        return order;
    }

    data::Batch batch(long step) const
    {
        const long epoch = step / batches_per_epoch;
        const long pos = step % batches_per_epoch;
        const auto order = epoch_order(epoch);
        const std::size_t first = static_cast<std::size_t>(pos) * cfg.batch_size;
        const std::size_t last = std::min(order.size(), first + static_cast<std::size_t>(cfg.batch_size));
        std::vector<data::Sample> samples;
        for (std::size_t i = first; i < last; i++) {
            std::mt19937_64 rng(mix(mix(cfg.seed, static_cast<std::uint64_t>(step)), i));
            samples.push_back(data::align_and_augment(dataset.samples()[order[i]], cfg.augment, rng));
        }
        return data::make_batch(samples);
    }
};

std::string log_line(long step, long epoch, const StepResult& r, double lr, double seconds)
{
    nlohmann::json j;
    j["step"] = step;
    j["epoch"] = epoch;
    for (const auto& [k, v] : r.losses)
        j["loss_" + k] = v;
    j["loss_total"] = r.total;
    if (r.d_accuracy >= 0.0)
        j["d_accuracy"] = r.d_accuracy;
    j["lr"] = lr;
    j["elapsed_s"] = seconds;
    return j.dump();
}

} // namespace

TrainResult run_training(const TrainConfig& config_in, const TrainOptions& options)
{
    TrainConfig config = config_in;
    long start = 0;
    double best = -std::numeric_limits<double>::infinity();
    std::optional<Archive> resume;
    if (!options.resume.empty()) {
        resume = Archive::load(options.resume);
        const CheckpointInfo info = read_checkpoint_info(*resume);
        // The checkpoint fixes the model and data; only the step budget may change.
        const long max_steps = config.max_steps;
        const int epochs = config.epochs;
        const int eval_every = config.eval_every;
        config = info.config;
        config.max_steps = max_steps;
        config.epochs = epochs;
        config.eval_every = eval_every;
        start = info.step;
        best = info.best_psnr;
    }
    config.validate();
    const bool gan = config.phase == Phase::gan;
    if (gan && config.init_checkpoint.empty() && !resume)
        throw std::invalid_argument("the gan phase must start from a trained psnr-phase checkpoint (set init_checkpoint)");

    const data::Dataset dataset = load_dataset(config);
    const Split split = make_split(dataset, config);
    if (split.train.empty())
        throw std::invalid_argument("training split is empty");
    const priors::AuRuleTable rules =
        config.au_rules.empty() ? priors::AuRuleTable::builtin(config.n_au) : priors::AuRuleTable::load(config.au_rules);
    const auto eval_set = eval_samples(dataset, split.eval);

    StepContext ctx;
    ctx.config = &config;
    ctx.rules = &rules;
    ctx.au_weights = data::compute_au_weights(dataset.occurrence_rates(split.train));
    std::unique_ptr<losses::ConvFeatureExtractor> phi;
    if (gan) {
        phi = config.perceptual_archive.empty()
                  ? std::make_unique<losses::ConvFeatureExtractor>(config.perceptual_seed, config.perceptual_widths)
                  : std::make_unique<losses::ConvFeatureExtractor>(Archive::load(config.perceptual_archive));
        ctx.phi = phi.get();
    }

    Generator g(config);
    const AdamHyper hyper{config.lr, config.adam_beta1, config.adam_beta2, config.adam_eps};
    Adam g_opt(g.store, hyper);
    std::unique_ptr<Critic> d;
    std::unique_ptr<Adam> d_opt;
    if (gan) {
        d = std::make_unique<Critic>(config);
        d_opt = std::make_unique<Adam>(d->store, hyper);
    }
    if (resume) {
        load_generator(*resume, g);
        g_opt.load(*resume, "opt.g.");
        if (gan) {
            get_params(*resume, d->store);
            d_opt->load(*resume, "opt.d.");
        }
    } else if (gan) {
        load_generator(Archive::load(config.init_checkpoint), g);
    }

    const long batches_per_epoch = (static_cast<long>(split.train.size()) + config.batch_size - 1) / config.batch_size;
    const long total_steps = config.max_steps > 0 ? config.max_steps : config.epochs * batches_per_epoch;
    const Loop loop{config, dataset, split, batches_per_epoch};

    std::filesystem::create_directories(options.out_dir);
    const auto log_path = options.out_dir / "train_log.jsonl";
    std::ofstream log(log_path, resume ? std::ios::app : std::ios::trunc);
    if (!log)
        throw IoError("cannot write " + log_path.string());

    TrainResult result;
    result.best_psnr = best;
    result.last_checkpoint = options.out_dir / "last.ckpt";
    result.best_checkpoint = options.out_dir / "best.ckpt";
    const auto history_path = options.out_dir / "history.json";
    nlohmann::json history_disk = nlohmann::json::array();
    if (resume && std::filesystem::exists(history_path)) {
        std::ifstream in(history_path);
        history_disk = nlohmann::json::parse(in);
    }

    const auto t0 = std::chrono::steady_clock::now();
    for (long step = start; step < total_steps; step++) {
        const data::Batch batch = loop.batch(step);
        StepResult r = train_step(g, g_opt, d.get(), d_opt.get(), batch, ctx);
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        log << log_line(step + 1, step / batches_per_epoch, r, config.lr, seconds) << '\n';
        log.flush();
        if (options.on_step)
            options.on_step(step + 1, r);
        if (!options.quiet && ((step + 1) % 10 == 0 || step + 1 == total_steps)) {
            std::cerr << "step " << step + 1 << "/" << total_steps << " total " << r.total;
            for (const auto& [k, v] : r.losses)
                std::cerr << " " << k << "=" << v;
            std::cerr << "\n";
        }
        result.log.push_back(std::move(r));

        const bool due = config.eval_every > 0 ? (step + 1) % config.eval_every == 0 : (step + 1) % batches_per_epoch == 0;
        if (due || step + 1 == total_steps) {
            EvalPoint p{step + 1, evaluate(g, config, rules, eval_set, options.detector, config.batch_size)};
            const double psnr_last = p.report.steps.back().psnr_db;
            history_disk.push_back({{"step", p.step}, {"report", metrics::to_json(p.report)}});
            if (!options.quiet)
                std::cerr << "eval @" << p.step << "\n" << metrics::format_table(p.report);
            if (psnr_last > best) {
                best = psnr_last;
                save_checkpoint(result.best_checkpoint, config, g, g_opt, d.get(), d_opt.get(), step + 1, best);
            }
            result.history.push_back(std::move(p));
            std::ofstream h(history_path, std::ios::trunc);
            h << history_disk.dump(2) << '\n';
        }
    }
    result.steps = std::max(total_steps, start);
    result.best_psnr = best;
    save_checkpoint(result.last_checkpoint, config, g, g_opt, d.get(), d_opt.get(), result.steps, best);
    return result;
}

FrozenAuDetector::FrozenAuDetector(const DetectorConfig& config)
    : config_(config), store_(std::make_shared<ParamStore>())
{
    Initializer init(config.seed);
    net_ = std::make_shared<priors::AuNet>(*store_, init, config.au, "detector");
}

FrozenAuDetector FrozenAuDetector::train(const data::Dataset& dataset, const std::vector<std::size_t>& indices,
                                         const DetectorConfig& config, bool quiet)
{
    if (indices.empty())
        throw std::invalid_argument("detector training set is empty");
    FrozenAuDetector det(config);
    Adam opt(*det.store_, AdamHyper{config.lr, 0.9, 0.999, 1e-8});
    const auto weights = data::compute_au_weights(dataset.occurrence_rates(indices));
    for (int step = 0; step < config.steps; step++) {
        std::vector<data::Sample> samples;
        std::mt19937_64 rng(mix(config.seed, static_cast<std::uint64_t>(step)));
        std::uniform_int_distribution<std::size_t> pick(0, indices.size() - 1);
        for (int i = 0; i < config.batch_size; i++)
            samples.push_back(data::align_and_augment(dataset.samples()[indices[pick(rng)]], true, rng));
        const data::Batch b = data::make_batch(samples);
        det.store_->zero_grad();
        Var probs = ops::sigmoid(det.net_->forward(ag::constant(b.hr)));
        Var loss = losses::au_loss(b.au_labels, probs, weights);
        ag::backward(loss);
        opt.step(*det.store_);
        if (!quiet && (step + 1) % 50 == 0)
            std::cerr << "detector step " << step + 1 << " loss " << loss.item() << "\n";
    }
    return det;
}

std::vector<double> FrozenAuDetector::operator()(const Tensor& image) const
{
    ag::NoGradGuard guard;
    const Tensor p = ops::sigmoid(net_->forward(ag::constant(image))).value();
    return std::vector<double>(p.values().begin(), p.values().end());
}

metrics::AuDetector FrozenAuDetector::as_function() const
{
    FrozenAuDetector copy = *this;
    return [copy](const Tensor& image) { return copy(image); };
}

void FrozenAuDetector::save(const std::filesystem::path& path) const
{
    Archive a;
    a.manifest = {{"kind", "mpsr-au-detector"},
                  {"n_au", config_.au.n_au},
                  {"base_width", config_.au.base_width},
                  {"blocks_per_stage", config_.au.blocks_per_stage}};
    put_params(a, *store_);
    a.save(path);
}

FrozenAuDetector FrozenAuDetector::load(const std::filesystem::path& path)
{
    const Archive a = Archive::load(path);
    if (a.manifest.value("kind", "") != "mpsr-au-detector")
        throw IoError(path.string() + " is not an AU detector archive");
    DetectorConfig cfg;
    cfg.au.n_au = a.manifest.at("n_au").get<int>();
    cfg.au.base_width = a.manifest.at("base_width").get<int>();
    cfg.au.blocks_per_stage = a.manifest.at("blocks_per_stage").get<int>();
    FrozenAuDetector det(cfg);
    get_params(a, *det.store_);
    return det;
}

} // namespace mpsr::train
