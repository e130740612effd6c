// Command-line front end: data generation, training, evaluation, the
// ablation grid, and volume projection as one-process subcommands.
//
// Exit codes: 0 success, 2 usage error, 3 data/parse/config error,
// 4 numerical abort.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "pan/config.hpp"
#include "pan/data.hpp"
#include "pan/errors.hpp"
#include "pan/eval.hpp"
#include "pan/projection.hpp"
#include "pan/report.hpp"
#include "pan/rng.hpp"
#include "pan/training.hpp"

namespace fs = std::filesystem;
using namespace pan;

namespace {

const char* const kUsage =
    "usage: pan <command> [options]\n"
    "\n"
    "commands:\n"
    "  gen-data --out DIR [--volumes N] [--dhw D,H,W] [--seed S]\n"
    "      synthesize a dataset (4:1 train/test split) with manifest\n"
    "  train --data DIR --out DIR [--config FILE]\n"
    "      train on DIR's train split, evaluating on its test split\n"
    "  eval --checkpoint FILE --data DIR [--threshold T] [--config FILE]\n"
    "      per-volume test DSC for a saved checkpoint\n"
    "  ablate --data DIR --seeds S1,S2,... --out DIR [--config FILE]\n"
    "      variant-by-seed grid over the discriminator switches\n"
    "  project --volume FILE --out PREFIX [--checkpoint FILE] [--config FILE]\n"
    "      axial projection (of the mask, or of the model's stacked\n"
    "      predictions when a checkpoint is given) as CSV + PGM preview\n"
    "\n"
    "`pan <command> --help` lists the command's flags; commands taking\n"
    "--config also print the config key table. The config file holds flat\n"
    "`key = value` lines with `#` comments; unknown keys are rejected.\n";

using FlagMap = std::map<std::string, std::string>;

// One value per flag, `--help` short-circuits, unknown flags are usage
// errors. Last duplicate wins, matching the config-file rule.
FlagMap parse_flags(int argc, char** argv, int start, const char* cmd,
                    std::initializer_list<const char*> allowed, bool* help) {
    FlagMap out;
    for (int i = start; i < argc; ++i) {
        const std::string arg = argv[i];
        if (arg == "--help" || arg == "-h") {
            *help = true;
            return out;
        }
        bool known = false;
        for (const char* a : allowed)
            if (arg == a) known = true;
        if (!known)
            throw UsageError("unknown flag '" + arg + "' for '" + cmd + "'");
        if (i + 1 >= argc) throw UsageError("flag '" + arg + "' expects a value");
        out[arg] = argv[++i];
    }
    return out;
}

const std::string& need(const FlagMap& f, const char* flag, const char* cmd) {
    auto it = f.find(flag);
    if (it == f.end())
        throw UsageError(std::string("'") + cmd + "' requires " + flag);
    return it->second;
}

uint64_t flag_u64(const FlagMap& f, const char* flag, uint64_t fallback) {
    auto it = f.find(flag);
    if (it == f.end()) return fallback;
    uint64_t v = 0;
    const char* b = it->second.data();
    const char* e = b + it->second.size();
    auto r = std::from_chars(b, e, v);
    if (r.ec != std::errc() || r.ptr != e)
        throw UsageError(std::string(flag) + " expects a non-negative integer, got '" +
                         it->second + "'");
    return v;
}

int flag_int(const FlagMap& f, const char* flag, int fallback) {
    auto it = f.find(flag);
    if (it == f.end()) return fallback;
    int v = 0;
    const char* b = it->second.data();
    const char* e = b + it->second.size();
    auto r = std::from_chars(b, e, v);
    if (r.ec != std::errc() || r.ptr != e)
        throw UsageError(std::string(flag) + " expects an integer, got '" + it->second +
                         "'");
    return v;
}

double flag_real(const FlagMap& f, const char* flag, double fallback) {
    auto it = f.find(flag);
    if (it == f.end()) return fallback;
    double v = 0.0;
    const char* b = it->second.data();
    const char* e = b + it->second.size();
    auto r = std::from_chars(b, e, v);
    if (r.ec != std::errc() || r.ptr != e)
        throw UsageError(std::string(flag) + " expects a real, got '" + it->second + "'");
    return v;
}

std::vector<uint64_t> flag_u64_list(const FlagMap& f, const char* flag, const char* cmd) {
    const std::string& raw = need(f, flag, cmd);
    std::vector<uint64_t> out;
    size_t start = 0;
    while (start <= raw.size()) {
        size_t comma = raw.find(',', start);
        const std::string tok =
            raw.substr(start, comma == std::string::npos ? comma : comma - start);
        uint64_t v = 0;
        const char* b = tok.data();
        auto r = std::from_chars(b, b + tok.size(), v);
        if (tok.empty() || r.ec != std::errc() || r.ptr != b + tok.size())
            throw UsageError(std::string(flag) + ": bad list element '" + tok + "'");
        out.push_back(v);
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

std::array<int, 3> flag_dhw(const FlagMap& f, const char* flag, std::array<int, 3> fallback) {
    auto it = f.find(flag);
    if (it == f.end()) return fallback;
    std::array<int, 3> v{};
    const std::string& raw = it->second;
    size_t start = 0;
    for (int k = 0; k < 3; ++k) {
        size_t comma = raw.find(',', start);
        if ((k < 2) != (comma != std::string::npos))
            throw UsageError(std::string(flag) + " expects D,H,W, got '" + raw + "'");
        const std::string tok =
            raw.substr(start, comma == std::string::npos ? comma : comma - start);
        const char* b = tok.data();
        auto r = std::from_chars(b, b + tok.size(), v[size_t(k)]);
        if (tok.empty() || r.ec != std::errc() || r.ptr != b + tok.size())
            throw UsageError(std::string(flag) + " expects D,H,W, got '" + raw + "'");
        start = comma + 1;
    }
    return v;
}

// Shared by every command that accepts --config: file -> CliConfig with
// duplicate-key warnings to stderr, defaults when the flag is absent.
CliConfig config_from(const FlagMap& f) {
    auto it = f.find("--config");
    if (it == f.end()) return CliConfig{};
    std::vector<std::string> warnings;
    CliConfig c = load_config_file(it->second, &warnings);
    for (const auto& w : warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
    return c;
}

int print_help(const char* cmd_usage, bool with_keys) {
    std::fputs(cmd_usage, stdout);
    if (with_keys) {
        std::fputs("\nconfig keys:\n", stdout);
        std::fputs(config_help().c_str(), stdout);
    }
    return 0;
}

int cmd_gen_data(int argc, char** argv) {
    bool help = false;
    const FlagMap f = parse_flags(argc, argv, 2, "gen-data",
                                  {"--out", "--volumes", "--dhw", "--seed"}, &help);
    if (help)
        return print_help(
            "usage: pan gen-data --out DIR [--volumes N] [--dhw D,H,W] [--seed S]\n"
            "defaults: --volumes 50, --dhw 16,32,32, --seed 1\n",
            false);

    const std::string out_dir = need(f, "--out", "gen-data");
    const int volumes = flag_int(f, "--volumes", 50);
    if (volumes < 1) throw UsageError("--volumes must be at least 1");
    const uint64_t seed = flag_u64(f, "--seed", 1);

    CliConfig base;
    base.dhw = flag_dhw(f, "--dhw", base.dhw);
    const GeneratorConfig gcfg = generator_config_from(base);
    gcfg.validate();

    const int n_test = volumes >= 2 ? std::max(1, volumes / 5) : 0;
    const int n_train = volumes - n_test;

    fs::create_directories(out_dir);
    DatasetManifest man;
    man.seed = seed;
    man.config_hash = derive_seed(seed, config_banner(base));
    for (int i = 0; i < volumes; ++i) {
        const Sample s = generate_sample(gcfg, derive_seed(seed, "sample", uint64_t(i)));
        write_volume_file(s, out_dir + "/" + s.id + ".panvol");
        man.entries.push_back({s.id, i < n_train ? "train" : "test"});
    }
    write_manifest(man, out_dir + "/manifest.tsv");
    std::printf("wrote %d volumes (%d train / %d test, %dx%dx%d) to %s\n", volumes,
                n_train, n_test, gcfg.d, gcfg.h, gcfg.w, out_dir.c_str());
    return 0;
}

int cmd_train(int argc, char** argv) {
    bool help = false;
    const FlagMap f =
        parse_flags(argc, argv, 2, "train", {"--data", "--out", "--config"}, &help);
    if (help)
        return print_help("usage: pan train --data DIR --out DIR [--config FILE]\n", true);

    const std::string data = need(f, "--data", "train");
    const std::string out = need(f, "--out", "train");
    const CliConfig cli = config_from(f);
    std::fputs(config_banner(cli).c_str(), stdout);

    const TrainResult r = train(training_config_from(cli), data, out);
    const DscSummary dsc = summarize_dsc(r.final_per_volume_dsc);
    std::printf("done: %d epochs, test DSC %.4f +/- %.4f (min %.4f, max %.4f)\n",
                r.epochs_done, dsc.mean, dsc.sd, dsc.min, dsc.max);
    std::printf("checkpoint: %s\n", r.checkpoint_path.c_str());
    std::printf("metrics: %s/metrics.csv\ncurves: %s/curves.svg\n", out.c_str(),
                out.c_str());
    return 0;
}

int cmd_eval(int argc, char** argv) {
    bool help = false;
    const FlagMap f = parse_flags(argc, argv, 2, "eval",
                                  {"--checkpoint", "--data", "--threshold", "--config"},
                                  &help);
    if (help)
        return print_help(
            "usage: pan eval --checkpoint FILE --data DIR [--threshold T] [--config FILE]\n"
            "--config must describe the run that wrote the checkpoint (defaults\n"
            "otherwise); the checkpoint refuses to load under a different config.\n",
            true);

    const std::string ckpt = need(f, "--checkpoint", "eval");
    const std::string data = need(f, "--data", "eval");
    const CliConfig cli = config_from(f);
    const double threshold = flag_real(f, "--threshold", cli.eval_threshold);

    const std::vector<Sample> test_set = load_split(data, "test");
    if (test_set.empty()) throw ConfigError("no test volumes in " + data);

    Trainer tr(training_config_from(cli), test_set[0].volume.h(), test_set[0].volume.w());
    const int epochs_done = tr.load_checkpoint(ckpt);
    const DscSummary dsc = evaluate(tr.segmentor(), test_set, threshold);

    std::printf("checkpoint after %d epochs, threshold %g\n", epochs_done, threshold);
    for (size_t i = 0; i < test_set.size(); ++i)
        std::printf("%s\t%.6f\n", test_set[i].id.c_str(), dsc.per_volume[i]);
    std::printf("mean %.6f  sd %.6f  min %.6f  max %.6f  (n=%zu)\n", dsc.mean, dsc.sd,
                dsc.min, dsc.max, test_set.size());
    return 0;
}

int cmd_ablate(int argc, char** argv) {
    bool help = false;
    const FlagMap f = parse_flags(argc, argv, 2, "ablate",
                                  {"--data", "--seeds", "--out", "--config"}, &help);
    if (help)
        return print_help(
            "usage: pan ablate --data DIR --seeds S1,S2,... --out DIR [--config FILE]\n"
            "Runs S, S+Ds, S+Ds+A, S+Ds+A+Dp per seed (three seeds minimum).\n",
            true);

    const std::string data = need(f, "--data", "ablate");
    const std::string out = need(f, "--out", "ablate");
    const std::vector<uint64_t> seeds = flag_u64_list(f, "--seeds", "ablate");
    const CliConfig cli = config_from(f);
    std::fputs(config_banner(cli).c_str(), stdout);

    const AblationResult res = run_ablation(training_config_from(cli), seeds, data, out);
    for (const auto& cell : res.cells) {
        if (cell.failed)
            std::printf("%-10s seed %-6llu FAILED: %s\n", cell.variant.c_str(),
                        static_cast<unsigned long long>(cell.seed), cell.error.c_str());
        else
            std::printf("%-10s seed %-6llu mean DSC %.4f\n", cell.variant.c_str(),
                        static_cast<unsigned long long>(cell.seed), cell.mean_dsc);
    }
    for (const auto& v : res.variants)
        std::printf("%-10s mean over seeds: %.4f\n", v.c_str(), variant_mean(res, v));
    std::printf("table: %s/ablation.csv\n", out.c_str());
    return 0;
}

void write_projection_csv(const Tensor& img, const std::string& path) {
    const int h = img.dim(0), w = img.dim(1);
    std::string body;
    char buf[32];
    for (int i = 0; i < h; ++i) {
        for (int j = 0; j < w; ++j) {
            std::snprintf(buf, sizeof buf, "%.6f", img[int64_t(i) * w + j]);
            body += buf;
            body += (j + 1 == w) ? '\n' : ',';
        }
    }
    std::ofstream outf(path, std::ios::binary | std::ios::trunc);
    if (!outf || !(outf << body)) throw IoError("cannot write " + path);
}

// 8-bit binary PGM; projection values live in [0,1).
void write_projection_pgm(const Tensor& img, const std::string& path) {
    const int h = img.dim(0), w = img.dim(1);
    std::string bytes = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    for (int64_t i = 0; i < img.numel(); ++i) {
        const double v = std::clamp(img[i], 0.0, 1.0);
        bytes += static_cast<char>(std::lround(v * 255.0));
    }
    std::ofstream outf(path, std::ios::binary | std::ios::trunc);
    if (!outf || !outf.write(bytes.data(), std::streamsize(bytes.size())))
        throw IoError("cannot write " + path);
}

int cmd_project(int argc, char** argv) {
    bool help = false;
    const FlagMap f = parse_flags(argc, argv, 2, "project",
                                  {"--volume", "--out", "--checkpoint", "--config"}, &help);
    if (help)
        return print_help(
            "usage: pan project --volume FILE --out PREFIX [--checkpoint FILE] "
            "[--config FILE]\n"
            "Projects the ground-truth mask; with --checkpoint, projects the\n"
            "model's stacked slice predictions instead. Writes PREFIX.csv and\n"
            "PREFIX.pgm.\n",
            true);

    const std::string vol_path = need(f, "--volume", "project");
    const std::string prefix = need(f, "--out", "project");
    const Sample sample = read_volume_file(vol_path);

    Tensor img({1});
    if (f.count("--checkpoint")) {
        const CliConfig cli = config_from(f);
        Trainer tr(training_config_from(cli), sample.volume.h(), sample.volume.w());
        tr.load_checkpoint(f.at("--checkpoint"));
        Tape t;
        const PredictionStack stack =
            project_prediction_stack(t, tr.segmentor(), sample.volume.intensities, false);
        img = t.value(stack.projection);
    } else {
        img = project_volume(hwd_from_dhw(sample.mask)).image;
    }

    write_projection_csv(img, prefix + ".csv");
    write_projection_pgm(img, prefix + ".pgm");
    std::printf("wrote %s.csv and %s.pgm (%dx%d, volume '%s')\n", prefix.c_str(),
                prefix.c_str(), img.dim(0), img.dim(1), sample.id.c_str());
    return 0;
}

int run(int argc, char** argv) {
    if (argc < 2) throw UsageError("no command given");
    const std::string cmd = argv[1];
    if (cmd == "--help" || cmd == "-h" || cmd == "help") {
        std::fputs(kUsage, stdout);
        std::fputs("\nconfig keys:\n", stdout);
        std::fputs(config_help().c_str(), stdout);
        return 0;
    }
    if (cmd == "gen-data") return cmd_gen_data(argc, argv);
    if (cmd == "train") return cmd_train(argc, argv);
    if (cmd == "eval") return cmd_eval(argc, argv);
    if (cmd == "ablate") return cmd_ablate(argc, argv);
    if (cmd == "project") return cmd_project(argc, argv);
    throw UsageError("unknown command '" + cmd + "'");
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const UsageError& e) {
        std::fprintf(stderr, "error: %s\n\n%s", e.what(), kUsage);
        return 2;
    } catch (const NumericalAbort& e) {
        std::fprintf(stderr, "numerical abort: %s\n", e.what());
        return 4;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return 1;
    }
}
