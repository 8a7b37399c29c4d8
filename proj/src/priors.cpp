#include "mpsr/priors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <regex>
#include <sstream>
#include <stdexcept>

#include "mpsr/embedded_data.hpp"

namespace mpsr::priors {

void AlignConfig::validate() const
{
    if (channels < 1 || residual_blocks < 0 || stacks < 1 || depth < 1 || landmarks < 1)
        throw std::invalid_argument("align: invalid configuration");
}

AlignNet::Residual AlignNet::residual(ParamStore& store, Initializer& init, const std::string& name) const
{
    const int c = config_.channels;
    return Residual{Conv2d(store, init, name + ".a", c, c, 3, 1, 1), Conv2d(store, init, name + ".b", c, c, 3, 1, 1)};
}

Var AlignNet::Residual::operator()(const Var& x) const
{
    return ops::add(x, b(ops::relu(a(ops::relu(x)))));
}

AlignNet::AlignNet(ParamStore& store, Initializer& init, AlignConfig config, const std::string& prefix)
    : config_(config)
{
    config_.validate();
    const int c = config_.channels;
    const std::string p = prefix + ".";
    stem_ = Conv2d(store, init, p + "stem.conv", 3, c, 3, 2, 1);
    for (int i = 0; i < config_.residual_blocks; i++)
        stem_blocks_.push_back(residual(store, init, p + "stem.res" + std::to_string(i)));
    for (int s = 0; s < config_.stacks; s++) {
        const std::string sp = p + "hg" + std::to_string(s);
        Hourglass hg;
        for (int l = 0; l < config_.depth; l++) {
            const std::string lp = sp + ".level" + std::to_string(l);
            hg.up.push_back(residual(store, init, lp + ".up"));
            hg.down.push_back(residual(store, init, lp + ".down"));
            hg.after.push_back(residual(store, init, lp + ".after"));
        }
        hg.bottom = residual(store, init, sp + ".bottom");
        hourglasses_.push_back(std::move(hg));
        stack_res_.push_back(residual(store, init, sp + ".res"));
        stack_feat_.emplace_back(store, init, sp + ".feat", c, c, 1, 1, 0);
        stack_head_.emplace_back(store, init, sp + ".head", c, config_.landmarks, 1, 1, 0);
        if (s + 1 < config_.stacks) {
            remap_feat_.emplace_back(store, init, sp + ".remap_feat", c, c, 1, 1, 0);
            remap_head_.emplace_back(store, init, sp + ".remap_head", config_.landmarks, c, 1, 1, 0);
        }
    }
}

Var AlignNet::hourglass(const Hourglass& hg, const Var& x, int level) const
{
    Var up = hg.up[level](x);
    Var low = hg.down[level](ops::max_pool(x, 2, 2, 0));
    low = level + 1 < config_.depth ? hourglass(hg, low, level + 1) : hg.bottom(low);
    low = hg.after[level](low);
    return ops::add(up, ops::upsample_nearest(low, 2));
}

Var AlignNet::forward(const Var& image, int active_stacks) const
{
    const Shape s = image.shape();
    const int min_extent = 2 << config_.depth;
    if (s.c != 3 || s.h % min_extent != 0 || s.w % min_extent != 0)
        throw ShapeError("align: input " + s.str() + " must be 3-channel with sides divisible by " + std::to_string(min_extent));
    const int stacks = active_stacks < 0 ? config_.stacks : std::min(active_stacks, config_.stacks);
    if (stacks < 1)
        throw std::invalid_argument("align: at least one stack must run");

    Var x = stem_(image);
    for (const auto& block : stem_blocks_)
        x = block(x);
    Var heat;
    for (int i = 0; i < stacks; i++) {
        Var y = stack_res_[i](hourglass(hourglasses_[i], x, 0));
        Var feat = ops::relu(stack_feat_[i](y));
        heat = stack_head_[i](feat);
        if (i + 1 < stacks)
            x = ops::add(x, ops::add(remap_feat_[i](feat), remap_head_[i](heat)));
    }
    return heat;
}

std::vector<data::LandmarkSet> decode_heatmaps(const Tensor& heatmaps, int frame_size)
{
    const Shape s = heatmaps.shape();
    if (s.c != data::kNumLandmarks)
        throw ShapeError("decode_heatmaps: expected 68 maps, got " + s.str());
    const double sx = static_cast<double>(frame_size) / s.w;
    const double sy = static_cast<double>(frame_size) / s.h;
    const double limit = std::nextafter(static_cast<double>(frame_size), 0.0);
    std::vector<data::LandmarkSet> out(s.n);
    for (int n = 0; n < s.n; n++)
        for (int k = 0; k < s.c; k++) {
            const double* m = heatmaps.plane_ptr(n, k);
            const std::size_t best = std::max_element(m, m + s.plane()) - m;
            const int by = static_cast<int>(best / s.w);
            const int bx = static_cast<int>(best % s.w);
            ops::note_kink_index(best);
            auto at = [&](int y, int x) { return m[static_cast<std::size_t>(y) * s.w + x]; };
            double x = bx;
            double y = by;
            if (bx > 0 && bx + 1 < s.w)
                ops::note_kink_side(at(by, bx + 1) > at(by, bx - 1));
            if (by > 0 && by + 1 < s.h)
                ops::note_kink_side(at(by + 1, bx) > at(by - 1, bx));
            if (bx > 0 && bx + 1 < s.w && at(by, bx + 1) != at(by, bx - 1))
                x += at(by, bx + 1) > at(by, bx - 1) ? 0.25 : -0.25;
            if (by > 0 && by + 1 < s.h && at(by + 1, bx) != at(by - 1, bx))
                y += at(by + 1, bx) > at(by - 1, bx) ? 0.25 : -0.25;
            out[n][k] = {std::clamp(x * sx, 0.0, limit), std::clamp(y * sy, 0.0, limit)};
        }
    return out;
}

void AuConfig::validate() const
{
    if (n_au < 1 || base_width < 1 || blocks_per_stage < 1)
        throw std::invalid_argument("au: invalid configuration");
}

Var AuNet::Block::operator()(const Var& x) const
{
    Var skip = shortcut.weight.defined() ? shortcut(x) : x;
    return ops::relu(ops::add(b(ops::relu(a(x))), skip));
}

AuNet::AuNet(ParamStore& store, Initializer& init, AuConfig config, const std::string& prefix)
    : config_(config)
{
    config_.validate();
    const std::string p = prefix + ".";
    const int w = config_.base_width;
    stem_ = Conv2d(store, init, p + "stem", 3, w, 7, 2, 3);
    int in = w;
    for (int stage = 0; stage < 4; stage++) {
        const int out = w << stage;
        for (int b = 0; b < config_.blocks_per_stage; b++) {
            const std::string bp = p + "layer" + std::to_string(stage + 1) + "." + std::to_string(b);
            const int stride = (stage > 0 && b == 0) ? 2 : 1;
            Block block;
            block.a = Conv2d(store, init, bp + ".a", in, out, 3, stride, 1);
            block.b = Conv2d(store, init, bp + ".b", out, out, 3, 1, 1);
            if (stride != 1 || in != out)
                block.shortcut = Conv2d(store, init, bp + ".shortcut", in, out, 1, stride, 0);
            blocks_.push_back(std::move(block));
            in = out;
        }
    }
    head_ = Linear(store, init, p + "head", in, config_.n_au);
}

Var AuNet::forward(const Var& image) const
{
    const Shape s = image.shape();
    if (s.c != 3 || s.h < 32 || s.w < 32)
        throw ShapeError("au: expected [n, 3, >=32, >=32] input, got " + s.str());
    Var x = ops::max_pool(ops::relu(stem_(image)), 3, 2, 1);
    for (const auto& block : blocks_)
        x = block(x);
    return head_(ops::global_avg_pool(x));
}

namespace {

std::string trim(const std::string& s)
{
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos)
        return {};
    return s.substr(a, s.find_last_not_of(" \t\r") - a + 1);
}

} // namespace

AuRuleTable AuRuleTable::parse(const std::string& text)
{
    static const std::regex au_line(R"(AU(\d+)\s*:\s*(.*))");
    static const std::regex center(
        R"(center\s*=\s*midpoint\(\s*(\d+)\s*,\s*(\d+)\s*\)\s*offset\s*\(\s*([-+]?[0-9.]+)\s*,\s*([-+]?[0-9.]+)\s*\))");

    AuRuleTable table;
    std::istringstream in(text);
    std::string raw;
    int line_no = 0;
    auto fail = [&](const std::string& what) {
        throw std::invalid_argument("AU rule table line " + std::to_string(line_no) + ": " + what);
    };
    while (std::getline(in, raw)) {
        line_no++;
        const std::string line = trim(raw.substr(0, raw.find('#')));
        if (line.empty())
            continue;
        if (table.version_ == 0) {
            if (line != "version 1")
                fail("expected 'version 1', got '" + line + "'");
            table.version_ = 1;
            continue;
        }
        std::smatch m;
        if (!std::regex_match(line, m, au_line))
            fail("unrecognised '" + line + "'");
        AuRule rule;
        rule.au = std::stoi(m[1]);
        std::stringstream parts(m[2].str());
        std::string part;
        while (std::getline(parts, part, ';')) {
            std::smatch c;
            const std::string item = trim(part);
            if (!std::regex_match(item, c, center))
                fail("bad centre '" + item + "'");
            AuCenter ctr{std::stoi(c[1]), std::stoi(c[2]), std::stod(c[3]), std::stod(c[4])};
            if (ctr.landmark_a >= data::kNumLandmarks || ctr.landmark_b >= data::kNumLandmarks)
                fail("landmark index out of range");
            rule.centers.push_back(ctr);
        }
        if (rule.centers.empty())
            fail("AU" + std::to_string(rule.au) + " has no centres");
        for (const auto& r : table.rules_)
            if (r.au == rule.au)
                fail("duplicate AU" + std::to_string(rule.au));
        table.rules_.push_back(std::move(rule));
    }
    if (table.version_ == 0)
        throw std::invalid_argument("AU rule table: missing version line");
    return table;
}

AuRuleTable AuRuleTable::load(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in)
        throw std::invalid_argument("cannot read AU rule table " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

AuRuleTable AuRuleTable::builtin(int n_au)
{
    if (n_au == 12)
        return parse(embedded::kAuRules12);
    if (n_au == 8)
        return parse(embedded::kAuRules8);
    throw std::invalid_argument("no built-in AU rule table for " + std::to_string(n_au) + " AUs");
}

const AuRule& AuRuleTable::find(int au) const
{
    for (const auto& r : rules_)
        if (r.au == au)
            return r;
    throw std::invalid_argument("AU rule table has no entry for AU" + std::to_string(au));
}

Tensor build_au_attention(const data::LandmarkSet& landmarks, const AuRuleTable& table, const std::vector<int>& au_ids,
                          double sigma_att, int size)
{
    if (sigma_att <= 0.0)
        throw std::invalid_argument("build_au_attention: sigma_att must be positive");
    const double reach = 3.0 * sigma_att;
    Tensor out(Shape{1, static_cast<int>(au_ids.size()), size, size});
    for (std::size_t k = 0; k < au_ids.size(); k++) {
        const AuRule& rule = table.find(au_ids[k]);
        double* map = out.plane_ptr(0, static_cast<int>(k));
        for (const AuCenter& c : rule.centers) {
            const double cx = 0.5 * (landmarks[c.landmark_a].x + landmarks[c.landmark_b].x) + c.dx;
            const double cy = 0.5 * (landmarks[c.landmark_a].y + landmarks[c.landmark_b].y) + c.dy;
            for (int y = 0; y < size; y++)
                for (int x = 0; x < size; x++) {
                    const double v = std::max(0.0, 1.0 - (std::abs(x - cx) + std::abs(y - cy)) / reach);
                    double& slot = map[static_cast<std::size_t>(y) * size + x];
                    slot = std::max(slot, v);
                }
        }
    }
    return out;
}

namespace {

int pool_factor(int from_h, int from_w, int target, const char* what)
{
    if (target < 1 || from_h != from_w || from_h % target != 0)
        throw ShapeError(std::string(what) + ": cannot area-resample " + std::to_string(from_h) + "x" + std::to_string(from_w) +
                         " to " + std::to_string(target));
    return from_h / target;
}

} // namespace

fsr::PriorTensor au_prior_maps(const Var& probs, const Tensor& attention, int target_resolution)
{
    const Shape ps = probs.shape();
    const Shape as = attention.shape();
    if (ps.n != as.n || ps.c != as.c || ps.h != 1 || ps.w != 1)
        throw ShapeError("au_prior_maps: probabilities " + ps.str() + " vs attention " + as.str());
    const int k = pool_factor(as.h, as.w, target_resolution, "au_prior_maps");
    Var maps = ops::channel_scale(ag::constant(attention), probs);
    return {fsr::PriorKind::au_maps, k == 1 ? maps : ops::avg_pool(maps, k)};
}

fsr::PriorTensor landmark_prior_maps(const Var& heatmaps, int target_resolution)
{
    const Shape s = heatmaps.shape();
    const int k = pool_factor(s.h, s.w, target_resolution, "landmark_prior_maps");
    return {fsr::PriorKind::landmark_heatmaps, k == 1 ? heatmaps : ops::avg_pool(heatmaps, k)};
}

} // namespace mpsr::priors
