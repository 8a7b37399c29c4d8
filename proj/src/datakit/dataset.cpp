#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "mpsr/archive.hpp"
#include "mpsr/datakit.hpp"
#include "mpsr/image_io.hpp"

namespace mpsr::data {

namespace fs = std::filesystem;

std::map<std::string, int> assign_folds(std::vector<std::string> subjects, int n_folds)
{
    if (n_folds < 1)
        throw std::invalid_argument("assign_folds: need at least one fold");
    std::sort(subjects.begin(), subjects.end());
    subjects.erase(std::unique(subjects.begin(), subjects.end()), subjects.end());
    std::map<std::string, int> out;
    for (std::size_t i = 0; i < subjects.size(); i++)
        out[subjects[i]] = static_cast<int>(i % n_folds);
    return out;
}

Dataset::Dataset(DatasetSpec spec, std::vector<Sample> samples)
    : spec_(std::move(spec)), samples_(std::move(samples))
{
    for (const Sample& s : samples_) {
        if (static_cast<int>(s.au_labels.size()) != spec_.n_au)
            throw std::invalid_argument("dataset: sample " + s.subject_id + "/" + s.frame_id + " has " +
                                        std::to_string(s.au_labels.size()) + " AU labels, expected " + std::to_string(spec_.n_au));
        for (int v : s.au_labels)
            if (v != 0 && v != 1)
                throw std::invalid_argument("dataset: AU labels must be 0/1");
    }
    if (spec_.fold_assignment.empty()) {
        std::vector<std::string> subjects;
        for (const Sample& s : samples_)
            subjects.push_back(s.subject_id);
        spec_.fold_assignment = assign_folds(subjects, spec_.n_folds);
    }
    if (spec_.occurrence_rates.empty() && !samples_.empty())
        set_training_split(all_indices());
}

Dataset Dataset::synthetic(int subjects, int frames, int n_au, std::uint64_t seed, int n_folds)
{
    if (subjects < 1 || frames < 1)
        throw std::invalid_argument("synthetic dataset: subjects and frames must be positive");
    std::vector<Sample> samples;
    for (int s = 0; s < subjects; s++) {
        char sid[16];
        std::snprintf(sid, sizeof(sid), "s%03d", s);
        const std::uint64_t subject_seed = seed * 1000003ull + static_cast<std::uint64_t>(s);
        for (int f = 0; f < frames; f++) {
            char fid[16];
            std::snprintf(fid, sizeof(fid), "f%04d", f);
            samples.push_back(generate_synthetic_frame(subject_seed, static_cast<std::uint64_t>(f) + 1, n_au, sid, fid));
        }
    }
    DatasetSpec spec;
    spec.source = DatasetSpec::Source::synthetic;
    spec.n_au = n_au;
    spec.n_folds = n_folds;
    return Dataset(std::move(spec), std::move(samples));
}

std::vector<std::size_t> Dataset::fold_indices(int fold) const
{
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < samples_.size(); i++) {
        auto it = spec_.fold_assignment.find(samples_[i].subject_id);
        if (it != spec_.fold_assignment.end() && it->second == fold)
            out.push_back(i);
    }
    return out;
}

std::vector<std::size_t> Dataset::all_indices() const
{
    std::vector<std::size_t> out(samples_.size());
    for (std::size_t i = 0; i < out.size(); i++)
        out[i] = i;
    return out;
}

std::vector<double> Dataset::occurrence_rates(std::span<const std::size_t> indices) const
{
    if (indices.empty())
        throw std::invalid_argument("occurrence_rates: empty split");
    std::vector<double> counts(spec_.n_au, 0.0);
    for (std::size_t i : indices)
        for (int k = 0; k < spec_.n_au; k++)
            counts[k] += samples_.at(i).au_labels[k];
    const double n = static_cast<double>(indices.size());
    std::vector<double> rates;
    for (double c : counts)
        rates.push_back(std::max(c, 0.5) / n);
    return rates;
}

void Dataset::set_training_split(std::span<const std::size_t> indices)
{
    spec_.occurrence_rates = occurrence_rates(indices);
}

void Dataset::save_directory(const fs::path& root) const
{
    fs::create_directories(root);
    std::ofstream csv(root / "au_labels.csv");
    if (!csv)
        throw IoError("dataset: cannot write " + (root / "au_labels.csv").string());
    csv << "path";
    for (int au : au_ids(spec_.n_au))
        csv << ",AU" << au;
    csv << "\n";
    for (const Sample& s : samples_) {
        const fs::path rel = fs::path("images") / s.subject_id / (s.frame_id + ".png");
        write_png(root / rel, s.image);
        const fs::path lm = root / "landmarks" / s.subject_id / (s.frame_id + ".txt");
        fs::create_directories(lm.parent_path());
        std::ofstream lf(lm);
        lf.precision(17);
        for (const Point2& p : s.landmarks)
            lf << p.x << " " << p.y << "\n";
        if (!lf)
            throw IoError("dataset: cannot write " + lm.string());
        csv << rel.generic_string();
        for (int v : s.au_labels)
            csv << "," << v;
        csv << "\n";
    }
    nlohmann::json folds;
    folds["version"] = 1;
    folds["n_folds"] = spec_.n_folds;
    folds["subjects"] = spec_.fold_assignment;
    std::ofstream(root / "folds.json") << folds.dump(2) << "\n";
}

namespace {

std::vector<std::string> split_csv(const std::string& line)
{
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ','))
        out.push_back(cell);
    return out;
}

LandmarkSet read_landmarks(const fs::path& path)
{
    std::ifstream is(path);
    if (!is)
        throw IoError("dataset: cannot read landmarks " + path.string());
    LandmarkSet pts{};
    for (int i = 0; i < kNumLandmarks; i++)
        if (!(is >> pts[i].x >> pts[i].y))
            throw IoError("dataset: " + path.string() + " has fewer than 68 \"x y\" lines");
    return pts;
}

} // namespace

Dataset Dataset::load_directory(const fs::path& root)
{
    std::ifstream csv(root / "au_labels.csv");
    if (!csv)
        throw IoError("dataset: missing " + (root / "au_labels.csv").string());
    std::string line;
    if (!std::getline(csv, line))
        throw IoError("dataset: empty au_labels.csv");
    const auto header = split_csv(line);
    const int n_au = static_cast<int>(header.size()) - 1;
    au_ids(n_au);

    std::vector<Sample> samples;
    int row = 1;
    while (std::getline(csv, line)) {
        row++;
        if (line.empty())
            continue;
        const auto cells = split_csv(line);
        if (static_cast<int>(cells.size()) != n_au + 1)
            throw IoError("dataset: au_labels.csv row " + std::to_string(row) + " has " + std::to_string(cells.size()) + " columns");
        const fs::path rel(cells[0]);
        Sample s;
        s.subject_id = rel.parent_path().filename().string();
        s.frame_id = rel.stem().string();
        s.image = read_png(root / rel);
        s.landmarks = read_landmarks(root / "landmarks" / s.subject_id / (s.frame_id + ".txt"));
        for (int k = 0; k < n_au; k++) {
            const std::string& c = cells[k + 1];
            if (c != "0" && c != "1")
                throw IoError("dataset: non-binary AU label '" + c + "' in row " + std::to_string(row));
            s.au_labels.push_back(c == "1" ? 1 : 0);
        }
        samples.push_back(std::move(s));
    }
    if (samples.empty())
        throw IoError("dataset: no samples listed in " + (root / "au_labels.csv").string());

    DatasetSpec spec;
    spec.source = DatasetSpec::Source::directory;
    spec.n_au = n_au;
    const fs::path folds_path = root / "folds.json";
    if (fs::exists(folds_path)) {
        std::ifstream fj(folds_path);
        nlohmann::json folds = nlohmann::json::parse(fj);
        spec.n_folds = folds.value("n_folds", 3);
        spec.fold_assignment = folds.at("subjects").get<std::map<std::string, int>>();
        std::set<std::string> missing;
        for (const Sample& s : samples)
            if (!spec.fold_assignment.count(s.subject_id))
                missing.insert(s.subject_id);
        if (!missing.empty())
            throw IoError("dataset: folds.json has no fold for subject " + *missing.begin());
    }
    return Dataset(std::move(spec), std::move(samples));
}

} // namespace mpsr::data
