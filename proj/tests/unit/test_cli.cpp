#include <doctest.h>

#include <array>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <sys/wait.h>

#include "helpers.hpp"
#include "mpsr/cli.hpp"
#include "mpsr/image_io.hpp"

using namespace mpsr;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code = -1;
    std::string output;
};

/// Runs the command-line tool with stdout and stderr merged.
Run run_cli(const std::string& args)
{
    const std::string cmd = std::string("\"") + MPSR_CLI_PATH + "\" " + args + " 2>&1";
    Run r;
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    std::array<char, 4096> buf{};
    std::size_t n;
    while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0)
        r.output.append(buf.data(), n);
    const int status = pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<fs::path> files_under(const fs::path& root)
{
    std::vector<fs::path> out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file())
            out.push_back(fs::relative(e.path(), root));
    std::sort(out.begin(), out.end());
    return out;
}

const char* kTinySettings =
    "--set fsr_channels=8 --set fsr_groups=2 --set align_channels=8 --set align_blocks=1 --set au_width=4 "
    "--set au_blocks=1 --set synth_subjects=1 --set synth_frames=2 --set batch_size=2 --set eval_split=train "
    "--set max_steps=1 --set detector_width=4 --set detector_steps=2 --set detector_batch=2";

} // namespace

TEST_SUITE("cli")
{
    TEST_CASE("synth-data writes the documented layout and is reproducible")
    {
        const auto dir = testutil::scratch_dir("cli_synth");
        const Run a = run_cli("synth-data --out \"" + (dir / "a").string() + "\" --subjects 2 --frames 2 --folds 2 --seed 3");
        REQUIRE(a.code == 0);
        CHECK(a.output.find("wrote 4 samples") != std::string::npos);
        CHECK(fs::exists(dir / "a" / "au_labels.csv"));
        CHECK(fs::exists(dir / "a" / "folds.json"));
        CHECK(fs::is_directory(dir / "a" / "images"));
        CHECK(fs::is_directory(dir / "a" / "landmarks"));
        const auto ds = data::Dataset::load_directory(dir / "a");
        CHECK(ds.size() == 4);

        REQUIRE(run_cli("synth-data --out \"" + (dir / "b").string() + "\" --subjects 2 --frames 2 --folds 2 --seed 3").code == 0);
        const auto fa = files_under(dir / "a"), fb = files_under(dir / "b");
        REQUIRE(fa == fb);
        for (const auto& f : fa)
            CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));

        CHECK(run_cli("synth-data --out \"" + (dir / "c").string() + "\" --subjects 0").code == 1);
        CHECK(run_cli("synth-data --out \"" + (dir / "c").string() + "\" --n-au 10").code == 1);
    }

    TEST_CASE("argument errors exit with 1")
    {
        CHECK(run_cli("frobnicate").code == 1);
        CHECK(run_cli("").code == 1);
        CHECK(run_cli("train --set nonsense").code == 1);
        const Run help = run_cli("--help");
        CHECK(help.code == 0);
        CHECK(help.output.find("synth-data") != std::string::npos);
    }

    TEST_CASE("train, eval and sr on a tiny configuration")
    {
        const auto dir = testutil::scratch_dir("cli_pipeline");
        const Run t = run_cli("train -q --out \"" + (dir / "run").string() + "\" " + kTinySettings);
        INFO(t.output);
        REQUIRE(t.code == 0);
        const fs::path ckpt = dir / "run" / "last.ckpt";
        REQUIRE(fs::exists(ckpt));

        const Run e = run_cli("eval -q --checkpoint \"" + ckpt.string() + "\" --out \"" + (dir / "eval").string() +
                              "\" --save-detector \"" + (dir / "det.bin").string() + "\"");
        INFO(e.output);
        CHECK(e.code == 0);
        CHECK(fs::exists(dir / "eval" / "report.json"));
        CHECK(fs::exists(dir / "det.bin"));
        CHECK(e.output.find("bicubic") != std::string::npos);

        fs::create_directories(dir / "in");
        write_png(dir / "in" / "face.png", testutil::random_tensor(Shape{1, 3, 16, 16}, 1));
        const Run s = run_cli("sr --input \"" + (dir / "in").string() + "\" --checkpoint \"" + ckpt.string() +
                              "\" --out \"" + (dir / "out").string() + "\" --emit-steps");
        INFO(s.output);
        CHECK(s.code == 0);
        CHECK(fs::exists(dir / "out" / "face_sr.png"));
        CHECK(fs::exists(dir / "out" / "face_step1.png"));
        CHECK(read_png(dir / "out" / "face_sr.png").shape() == Shape{1, 3, 128, 128});

        // an unreadable file is skipped with a warning
        {
            std::ofstream junk(dir / "in" / "broken.png");
            junk << "not a png";
        }
        const Run partial = run_cli("sr --input \"" + (dir / "in").string() + "\" --checkpoint \"" + ckpt.string() +
                                    "\" --out \"" + (dir / "out2").string() + "\"");
        CHECK(partial.code == 0);
        CHECK(partial.output.find("skipping broken.png") != std::string::npos);
        CHECK(fs::exists(dir / "out2" / "face_sr.png"));

        fs::remove(dir / "in" / "face.png");
        CHECK(run_cli("sr --input \"" + (dir / "in").string() + "\" --checkpoint \"" + ckpt.string() + "\" --out \"" +
                      (dir / "out3").string() + "\"")
                  .code != 0);
        fs::create_directories(dir / "empty");
        CHECK(run_cli("sr --input \"" + (dir / "empty").string() + "\" --checkpoint \"" + ckpt.string() + "\" --out \"" +
                      (dir / "out4").string() + "\"")
                  .code == 1);
        CHECK(run_cli("eval --checkpoint \"" + (dir / "nope.ckpt").string() + "\"").code == 1);
    }

    TEST_CASE("ablation variants in order")
    {
        const auto v = cli::ablation_variants();
        REQUIRE(v.size() == 4);
        CHECK(v[0].first == "baseline");
        CHECK_FALSE(v[0].second.use_landmark_prior);
        CHECK_FALSE(v[0].second.use_au_prior);
        CHECK(v[1].second.use_landmark_prior);
        CHECK_FALSE(v[1].second.use_au_prior);
        CHECK(v[2].second.use_au_prior);
        CHECK_FALSE(v[2].second.use_attention);
        CHECK(v[3].second.use_attention);
        CHECK(v[3].first == "+landmarks+AUs+attention");
    }

    TEST_CASE("exception to exit code mapping")
    {
        std::ostringstream err;
        CHECK(cli::guarded([] { return 0; }, err) == cli::kOk);
        CHECK(cli::guarded([]() -> int { throw std::invalid_argument("bad"); }, err) == cli::kUserError);
        CHECK(cli::guarded([]() -> int { throw IoError("gone"); }, err) == cli::kUserError);
        CHECK(cli::guarded([]() -> int { throw losses::NonFiniteLoss("rec", NAN); }, err) == cli::kInternalError);
        CHECK(cli::guarded([]() -> int { throw std::runtime_error("oops"); }, err) == cli::kInternalError);
        CHECK(err.str().find("gone") != std::string::npos);
    }

    TEST_CASE("gradcheck reports a corrupted gradient path")
    {
        const Run ok = run_cli("gradcheck --only heatmap");
        INFO(ok.output);
        CHECK(ok.code == 0);
        CHECK(ok.output.find("PASS heatmap") != std::string::npos);

        const Run bad = run_cli("gradcheck --only heatmap --corrupt heatmap.pred");
        INFO(bad.output);
        CHECK(bad.code == 2);
        CHECK(bad.output.find("FAIL heatmap") != std::string::npos);
        CHECK(bad.output.find("heatmap.pred[") != std::string::npos);

        CHECK(run_cli("gradcheck --only nothing_like_this").code == 1);
    }
}
