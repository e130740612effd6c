// Drives the pan binary (path in PAN_CLI_BIN) as a subprocess and checks
// the documented grammar, artifacts, and exit codes: 0 success, 2 usage,
// 3 data/parse error, 4 numerical abort.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "pan/config.hpp"
#include "pan/data.hpp"
#include "pan/projection.hpp"
#include "pan/report.hpp"

using namespace pan;
namespace fs = std::filesystem;

namespace {

const fs::path& tmp_root() {
    static const fs::path root = [] {
        fs::path p = fs::temp_directory_path() / "pan_cli_tests";
        fs::remove_all(p);
        fs::create_directories(p);
        return p;
    }();
    return root;
}

std::string bin_path() {
    const char* b = std::getenv("PAN_CLI_BIN");
    if (!b) FAIL("PAN_CLI_BIN not set (points at the pan binary)");
    return b ? b : "";
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

struct RunResult {
    int exit = -1;
    std::string out, err;
};

RunResult run_cli(const std::string& args) {
    static int counter = 0;
    const std::string stem = (tmp_root() / ("io" + std::to_string(counter++))).string();
    const std::string cmd = "'" + bin_path() + "' " + args + " >'" + stem + ".out' 2>'" +
                            stem + ".err'";
    const int status = std::system(cmd.c_str());
    RunResult r;
    if (status >= 0 && WIFEXITED(status)) r.exit = WEXITSTATUS(status);
    r.out = slurp(stem + ".out");
    r.err = slurp(stem + ".err");
    return r;
}

void write_file(const std::string& path, const std::string& body) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    out << body;
}

int count_volumes(const std::string& dir) {
    int n = 0;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".panvol") ++n;
    return n;
}

} // namespace

TEST_CASE("usage errors exit 2 with usage text on stderr") {
    RunResult r = run_cli("");
    CHECK(r.exit == 2);
    CHECK(r.out.empty());
    CHECK(r.err.find("usage: pan") != std::string::npos);

    CHECK(run_cli("frobnicate").exit == 2);
    CHECK(run_cli("train --data x --out y --frob z").exit == 2);
    CHECK(run_cli("train --out y").exit == 2);             // missing --data
    CHECK(run_cli("gen-data --out d --volumes abc").exit == 2);
    CHECK(run_cli("gen-data --out d --dhw 8,16").exit == 2);
    CHECK(run_cli("gen-data --out d --seed -1").exit == 2);
    CHECK(run_cli("ablate --data d --out o --seeds 1,,3").exit == 2);
    CHECK(run_cli("eval --checkpoint c --data d --threshold x").exit == 2);

    r = run_cli("eval --checkpoint");
    CHECK(r.exit == 2);
    CHECK(r.err.find("expects a value") != std::string::npos);
}

TEST_CASE("help covers every documented config key") {
    RunResult r = run_cli("--help");
    REQUIRE(r.exit == 0);
    CHECK(r.out.find("usage: pan") != std::string::npos);
    for (const auto& f : config_fields())
        CHECK(r.out.find(f.key) != std::string::npos);

    // Per-command help exits 0 and repeats the key table for commands that
    // read --config.
    r = run_cli("train --help");
    CHECK(r.exit == 0);
    CHECK(r.out.find("train.lambda") != std::string::npos);
    CHECK(run_cli("gen-data --help").exit == 0);
    CHECK(run_cli("project --help").exit == 0);
}

TEST_CASE("gen-data writes the documented artifacts deterministically") {
    const std::string d1 = (tmp_root() / "gen1").string();
    const std::string d2 = (tmp_root() / "gen2").string();

    RunResult r = run_cli("gen-data --out '" + d1 + "' --volumes 4 --dhw 8,16,16 --seed 7");
    REQUIRE(r.exit == 0);
    CHECK(r.out.find("wrote 4 volumes") != std::string::npos);
    CHECK(count_volumes(d1) == 4);
    REQUIRE(fs::exists(d1 + "/manifest.tsv"));

    const DatasetManifest man = read_manifest(d1 + "/manifest.tsv");
    CHECK(man.entries.size() == 4);
    CHECK(man.ids("train").size() == 3); // 4:1 split, at least one test volume
    CHECK(man.ids("test").size() == 1);
    CHECK(man.seed == 7);

    // Same invocation, fresh directory: byte-identical dataset.
    REQUIRE(run_cli("gen-data --out '" + d2 + "' --volumes 4 --dhw 8,16,16 --seed 7").exit == 0);
    CHECK(slurp(d1 + "/manifest.tsv") == slurp(d2 + "/manifest.tsv"));
    for (const auto& e : man.entries)
        CHECK(slurp(d1 + "/" + e.id + ".panvol") == slurp(d2 + "/" + e.id + ".panvol"));

    // Every file parses back as a valid sample.
    for (const auto& e : man.entries) {
        const Sample s = read_volume_file(d1 + "/" + e.id + ".panvol");
        validate_sample(s);
        CHECK(s.volume.d() == 8);
        CHECK(s.volume.h() == 16);
        CHECK(s.volume.w() == 16);
    }
}

TEST_CASE("train / eval / project pipeline") {
    const std::string data = (tmp_root() / "pipe_data").string();
    const std::string out = (tmp_root() / "pipe_run").string();
    const std::string cfg_path = (tmp_root() / "pipe.cfg").string();

    // 2 volumes -> 1 train / 1 test: the documented one-volume smoke run.
    REQUIRE(run_cli("gen-data --out '" + data + "' --volumes 2 --dhw 16,32,32 --seed 3").exit == 0);
    write_file(cfg_path, "train.epochs = 1\ntrain.batch_size = 8\n");

    const auto t0 = std::chrono::steady_clock::now();
    RunResult r = run_cli("train --data '" + data + "' --out '" + out + "' --config '" +
                          cfg_path + "'");
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    REQUIRE(r.exit == 0);
    CHECK(seconds < 60.0);
    CHECK(r.out.find("# effective configuration") != std::string::npos);
    CHECK(r.out.find("train.epochs = 1") != std::string::npos);
    CHECK(r.out.find("done: 1 epochs") != std::string::npos);
    REQUIRE(fs::exists(out + "/checkpoint.bin"));
    REQUIRE(fs::exists(out + "/metrics.csv"));
    CHECK(fs::exists(out + "/curves.svg"));
    CHECK(read_metrics_csv(out + "/metrics.csv").size() == 1);

    // eval against the matching config; per-volume lines then the summary.
    r = run_cli("eval --checkpoint '" + out + "/checkpoint.bin' --data '" + data +
                "' --config '" + cfg_path + "'");
    REQUIRE(r.exit == 0);
    CHECK(r.out.find("checkpoint after 1 epochs") != std::string::npos);
    CHECK(r.out.find("mean ") != std::string::npos);
    CHECK(r.out.find("(n=1)") != std::string::npos);

    // The checkpoint refuses to load under a different config: exit 3.
    r = run_cli("eval --checkpoint '" + out + "/checkpoint.bin' --data '" + data + "'");
    CHECK(r.exit == 3);
    CHECK(r.err.find("different configuration") != std::string::npos);

    // Threshold flag overrides the config value.
    r = run_cli("eval --checkpoint '" + out + "/checkpoint.bin' --data '" + data +
                "' --config '" + cfg_path + "' --threshold 0.25");
    CHECK(r.exit == 0);
    CHECK(r.out.find("threshold 0.25") != std::string::npos);

    // project without a checkpoint: the mask's own projection.
    const DatasetManifest man = read_manifest(data + "/manifest.tsv");
    const std::string vol = data + "/" + man.entries[0].id + ".panvol";
    const std::string prefix = (tmp_root() / "proj_gt").string();
    r = run_cli("project --volume '" + vol + "' --out '" + prefix + "'");
    REQUIRE(r.exit == 0);
    REQUIRE(fs::exists(prefix + ".csv"));
    REQUIRE(fs::exists(prefix + ".pgm"));
    CHECK(slurp(prefix + ".pgm").rfind("P5\n32 32\n255\n", 0) == 0);

    // CSV matches the in-process projection oracle at its printed precision.
    const Sample s = read_volume_file(vol);
    const Tensor expect = project_volume(hwd_from_dhw(s.mask)).image;
    std::ifstream csv(prefix + ".csv");
    std::string line;
    int rows = 0;
    int64_t flat = 0;
    while (std::getline(csv, line)) {
        ++rows;
        size_t start = 0;
        int cols = 0;
        while (start <= line.size()) {
            size_t comma = line.find(',', start);
            const std::string tok =
                line.substr(start, comma == std::string::npos ? comma : comma - start);
            CHECK(std::abs(std::stod(tok) - expect[flat++]) <= 5e-7);
            ++cols;
            if (comma == std::string::npos) break;
            start = comma + 1;
        }
        CHECK(cols == 32);
    }
    CHECK(rows == 32);
    CHECK(flat == expect.numel());

    // project through the trained segmentor's stacked predictions.
    const std::string prefix2 = (tmp_root() / "proj_pred").string();
    r = run_cli("project --volume '" + vol + "' --out '" + prefix2 + "' --checkpoint '" +
                out + "/checkpoint.bin' --config '" + cfg_path + "'");
    REQUIRE(r.exit == 0);
    CHECK(fs::exists(prefix2 + ".csv"));
    CHECK(fs::exists(prefix2 + ".pgm"));
    CHECK(slurp(prefix2 + ".csv") != slurp(prefix + ".csv"));
}

TEST_CASE("ablate runs the grid and rejects short seed lists") {
    const std::string data = (tmp_root() / "abl_data").string();
    const std::string out = (tmp_root() / "abl_out").string();
    const std::string cfg_path = (tmp_root() / "abl.cfg").string();
    REQUIRE(run_cli("gen-data --out '" + data + "' --volumes 3 --dhw 8,16,16 --seed 11").exit == 0);
    write_file(cfg_path, "train.epochs = 1\ntrain.batch_size = 8\ntrain.w_pos = 3\n");

    RunResult r = run_cli("ablate --data '" + data + "' --out '" + out + "' --seeds 1,2,3 --config '" +
                          cfg_path + "'");
    REQUIRE(r.exit == 0);
    CHECK(fs::exists(out + "/ablation.csv"));
    CHECK(r.out.find("mean over seeds") != std::string::npos);
    CHECK(r.out.find("S+Ds+A+Dp") != std::string::npos);
    CHECK(r.out.find("FAILED") == std::string::npos);

    CHECK(run_cli("ablate --data '" + data + "' --out '" + out + "2' --seeds 1,2 --config '" +
                  cfg_path + "'")
              .exit == 3);
}

TEST_CASE("config and data faults exit 3") {
    const std::string cfg_path = (tmp_root() / "bad.cfg").string();
    write_file(cfg_path, "train.epochs = 1\nnot.a.key = 5\n");
    RunResult r = run_cli("train --data x --out y --config '" + cfg_path + "'");
    CHECK(r.exit == 3);
    CHECK(r.err.find("line 2") != std::string::npos);

    // Malformed volume container.
    const std::string junk = (tmp_root() / "junk.panvol").string();
    write_file(junk, std::string("PANVOL1\0garbage", 15));
    r = run_cli("project --volume '" + junk + "' --out '" + (tmp_root() / "junkp").string() + "'");
    CHECK(r.exit == 3);

    // Missing dataset directory.
    CHECK(run_cli("train --data '" + (tmp_root() / "nowhere").string() + "' --out '" +
                  (tmp_root() / "nowhere_out").string() + "'")
              .exit == 3);
}

TEST_CASE("mid-training divergence exits 4") {
    const std::string data = (tmp_root() / "nan_data").string();
    const std::string cfg_path = (tmp_root() / "nan.cfg").string();
    REQUIRE(run_cli("gen-data --out '" + data + "' --volumes 2 --dhw 8,16,16 --seed 13").exit == 0);
    write_file(cfg_path, "train.epochs = 3\ntrain.lr_s = 1e300\n");
    RunResult r = run_cli("train --data '" + data + "' --out '" +
                          (tmp_root() / "nan_run").string() + "' --config '" + cfg_path + "'");
    CHECK(r.exit == 4);
    CHECK(r.err.find("numerical abort") != std::string::npos);
}
