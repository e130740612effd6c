#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pan/data.hpp"
#include "pan/training.hpp"

namespace pan {

// Flat `key = value` application config. One struct carries every documented
// key; member initializers are the defaults. Subcommands consume the slice
// they need (train/ablate read model.*/train.*/eval.*, gen-data reads
// data.*), but the file format and the banner always cover the whole table.
struct CliConfig {
    uint64_t seed = 1; // master seed; every subsystem derives from it

    int width = 1; // model.width

    // data.* — synthetic generator parameters.
    std::array<int, 3> dhw{16, 32, 32};
    std::array<double, 2> radius_d{0.18, 0.32};
    std::array<double, 2> radius_hw{0.14, 0.30};
    double deform = 0.25;
    double max_tilt = 0.3;
    double object_mean = 0.55;
    double background_mean = 0.45;
    double noise_sigma = 0.05;
    std::array<double, 2> pos_fraction{0.01, 0.15};

    // train.*
    double lambda = 0.1;
    double beta = 0.1;
    double w_pos = 0.0; // 0 derives the weight from the training masks
    double epsilon = 1e-7;
    double lr_s = 1e-3, lr_ds = 1e-4, lr_dp = 1e-4;
    double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;
    int epochs = 30;
    int batch_size = 4;
    int ds_steps = 1, s_steps = 1;
    int dp_every = 1;
    bool use_ds = true, use_attention = true, use_dp = true;
    bool attention_tap_open = false; // train.attention_tap = blocked|open
    bool nonsaturating = false;      // train.adversarial = minmax|nonsaturating
    DsInput ds_input = DsInput::Product;
    DpInput dp_input = DpInput::Pair;
    bool shuffle_slices = true;
    int early_stop_patience = 0;

    double eval_threshold = 0.5; // eval.threshold

    bool operator==(const CliConfig&) const = default;
};

// One registry row per documented key. The parser, the defaults listing,
// --help, and the effective-config banner all read this table, so they
// cannot drift apart.
struct FieldDef {
    std::string key;
    std::string type_desc; // "real", "int", "bool", "int,int,int", "a|b"
    std::string doc;
    std::function<void(CliConfig&, const std::string&)> set; // throws ParseError
    std::function<std::string(const CliConfig&)> get;        // canonical text
};

const std::vector<FieldDef>& config_fields();

// Parses flat `key = value` lines; `#` starts a comment, blank lines are
// skipped, order never matters. Unknown keys and malformed values raise a
// ParseError naming the line. A duplicate key keeps the last value and
// appends a note to *warnings (when given).
CliConfig parse_config(const std::string& text,
                       std::vector<std::string>* warnings = nullptr);

// Reads and parses a config file; missing file -> IoError.
CliConfig load_config_file(const std::string& path,
                           std::vector<std::string>* warnings = nullptr);

// Every key in registry order with its current value, parseable as a config
// file. Feeding the banner back through parse_config reproduces it byte for
// byte (values print in shortest round-trip form).
std::string config_banner(const CliConfig& cfg);

// The documented key table: key, type, default, description.
std::string config_help();

TrainingConfig training_config_from(const CliConfig& c);
GeneratorConfig generator_config_from(const CliConfig& c);

} // namespace pan
