#include "pan/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "pan/errors.hpp"

namespace pan {
namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

// Value parsers. They throw location-free ParseErrors; parse_config attaches
// the line number. Every parser demands full consumption of the text so
// trailing garbage ("0.1x", "3 4") never slips through.

[[noreturn]] void bad_value(const std::string& key, const std::string& raw,
                            const std::string& want) {
    throw ParseError(key + ": expected " + want + ", got '" + raw + "'");
}

double to_real(const std::string& key, const std::string& raw) {
    double v = 0.0;
    const char* b = raw.data();
    const char* e = b + raw.size();
    auto r = std::from_chars(b, e, v);
    if (r.ec != std::errc() || r.ptr != e) bad_value(key, raw, "a real");
    return v;
}

int to_int(const std::string& key, const std::string& raw) {
    int v = 0;
    const char* b = raw.data();
    const char* e = b + raw.size();
    auto r = std::from_chars(b, e, v);
    if (r.ec != std::errc() || r.ptr != e) bad_value(key, raw, "an integer");
    return v;
}

uint64_t to_u64(const std::string& key, const std::string& raw) {
    uint64_t v = 0;
    const char* b = raw.data();
    const char* e = b + raw.size();
    auto r = std::from_chars(b, e, v);
    if (r.ec != std::errc() || r.ptr != e)
        bad_value(key, raw, "a non-negative integer");
    return v;
}

bool to_bool(const std::string& key, const std::string& raw) {
    if (raw == "true") return true;
    if (raw == "false") return false;
    bad_value(key, raw, "true|false");
}

std::vector<std::string> split_commas(const std::string& key, const std::string& raw,
                                      size_t n, const std::string& want) {
    std::vector<std::string> parts;
    size_t start = 0;
    while (true) {
        size_t comma = raw.find(',', start);
        parts.push_back(trim(raw.substr(start, comma - start)));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    if (parts.size() != n) bad_value(key, raw, want);
    return parts;
}

// Shortest text that parses back to the same double ("0.1", "1e-08").
std::string fmt_real(double v) {
    char buf[64];
    auto r = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, r.ptr);
}

std::string fmt_bool(bool v) { return v ? "true" : "false"; }

using IntMem = int CliConfig::*;
using RealMem = double CliConfig::*;
using BoolMem = bool CliConfig::*;

FieldDef f_int(std::string key, IntMem m, std::string doc) {
    return {key, "int", std::move(doc),
            [key, m](CliConfig& c, const std::string& raw) { c.*m = to_int(key, raw); },
            [m](const CliConfig& c) { return std::to_string(c.*m); }};
}

FieldDef f_real(std::string key, RealMem m, std::string doc) {
    return {key, "real", std::move(doc),
            [key, m](CliConfig& c, const std::string& raw) { c.*m = to_real(key, raw); },
            [m](const CliConfig& c) { return fmt_real(c.*m); }};
}

FieldDef f_bool(std::string key, BoolMem m, std::string doc) {
    return {key, "bool", std::move(doc),
            [key, m](CliConfig& c, const std::string& raw) { c.*m = to_bool(key, raw); },
            [m](const CliConfig& c) { return fmt_bool(c.*m); }};
}

FieldDef f_u64(std::string key, uint64_t CliConfig::* m, std::string doc) {
    return {key, "uint", std::move(doc),
            [key, m](CliConfig& c, const std::string& raw) { c.*m = to_u64(key, raw); },
            [m](const CliConfig& c) { return std::to_string(c.*m); }};
}

FieldDef f_int3(std::string key, std::array<int, 3> CliConfig::* m, std::string doc) {
    return {key, "int,int,int", std::move(doc),
            [key, m](CliConfig& c, const std::string& raw) {
                auto p = split_commas(key, raw, 3, "three comma-separated integers");
                for (int i = 0; i < 3; ++i) (c.*m)[size_t(i)] = to_int(key, p[size_t(i)]);
            },
            [m](const CliConfig& c) {
                const auto& a = c.*m;
                return std::to_string(a[0]) + "," + std::to_string(a[1]) + "," +
                       std::to_string(a[2]);
            }};
}

FieldDef f_real2(std::string key, std::array<double, 2> CliConfig::* m, std::string doc) {
    return {key, "real,real", std::move(doc),
            [key, m](CliConfig& c, const std::string& raw) {
                auto p = split_commas(key, raw, 2, "two comma-separated reals");
                (c.*m)[0] = to_real(key, p[0]);
                (c.*m)[1] = to_real(key, p[1]);
            },
            [m](const CliConfig& c) {
                const auto& a = c.*m;
                return fmt_real(a[0]) + "," + fmt_real(a[1]);
            }};
}

// Two-state switches spelled as words in the file, stored as the bool the
// training config wants. The first token is the false state.
FieldDef f_switch(std::string key, BoolMem m, std::string off, std::string on,
                  std::string doc) {
    std::string desc = off + "|" + on;
    return {key, desc, std::move(doc),
            [key, m, off, on, desc](CliConfig& c, const std::string& raw) {
                if (raw == off) c.*m = false;
                else if (raw == on) c.*m = true;
                else bad_value(key, raw, desc);
            },
            [m, off, on](const CliConfig& c) { return c.*m ? on : off; }};
}

std::vector<FieldDef> make_fields() {
    std::vector<FieldDef> f;
    f.push_back(f_u64("seed", &CliConfig::seed,
                      "master seed; subsystem seeds derive from it by fixed labels"));

    f.push_back(f_int("model.width", &CliConfig::width,
                      "channel multiplier for all three networks"));

    f.push_back(f_int3("data.dhw", &CliConfig::dhw,
                       "generated volume dims D,H,W; H and W divisible by 8"));
    f.push_back(f_real2("data.radius_d", &CliConfig::radius_d,
                        "object radius range along D, fraction of D"));
    f.push_back(f_real2("data.radius_hw", &CliConfig::radius_hw,
                        "object radius range in-plane, fraction of H resp. W"));
    f.push_back(f_real("data.deform", &CliConfig::deform,
                       "relative amplitude of the radial surface perturbation"));
    f.push_back(f_real("data.max_tilt", &CliConfig::max_tilt,
                       "out-of-plane rotation bound, radians"));
    f.push_back(f_real("data.object_mean", &CliConfig::object_mean,
                       "mean intensity inside the object"));
    f.push_back(f_real("data.background_mean", &CliConfig::background_mean,
                       "mean intensity outside the object"));
    f.push_back(f_real("data.noise_sigma", &CliConfig::noise_sigma,
                       "additive Gaussian noise level"));
    f.push_back(f_real2("data.pos_fraction", &CliConfig::pos_fraction,
                        "accepted positive-voxel fraction band"));

    f.push_back(f_real("train.lambda", &CliConfig::lambda,
                       "weight of the spatial adversarial term"));
    f.push_back(f_real("train.beta", &CliConfig::beta,
                       "weight of the projective adversarial term"));
    f.push_back(f_real("train.w_pos", &CliConfig::w_pos,
                       "positive-class BCE weight; 0 derives #neg/#pos from the data"));
    f.push_back(f_real("train.epsilon", &CliConfig::epsilon,
                       "probability clamp inside every BCE"));
    f.push_back(f_real("train.lr_s", &CliConfig::lr_s, "segmentor Adam learning rate"));
    f.push_back(f_real("train.lr_ds", &CliConfig::lr_ds,
                       "spatial discriminator Adam learning rate"));
    f.push_back(f_real("train.lr_dp", &CliConfig::lr_dp,
                       "projective discriminator Adam learning rate"));
    f.push_back(f_real("train.adam_beta1", &CliConfig::adam_beta1, "Adam beta1"));
    f.push_back(f_real("train.adam_beta2", &CliConfig::adam_beta2, "Adam beta2"));
    f.push_back(f_real("train.adam_eps", &CliConfig::adam_eps, "Adam denominator epsilon"));
    f.push_back(f_int("train.epochs", &CliConfig::epochs, "training epochs"));
    f.push_back(f_int("train.batch_size", &CliConfig::batch_size, "slices per batch"));
    f.push_back(f_int("train.ds_steps", &CliConfig::ds_steps,
                      "spatial discriminator updates per batch"));
    f.push_back(f_int("train.s_steps", &CliConfig::s_steps, "segmentor updates per batch"));
    f.push_back(f_int("train.dp_every", &CliConfig::dp_every,
                      "update the projective discriminator every n-th volume"));
    f.push_back(f_bool("train.use_ds", &CliConfig::use_ds,
                       "train against the spatial discriminator"));
    f.push_back(f_bool("train.use_attention", &CliConfig::use_attention,
                       "gate the spatial discriminator with soft attention"));
    f.push_back(f_bool("train.use_dp", &CliConfig::use_dp,
                       "train against the projective discriminator"));
    f.push_back(f_switch("train.attention_tap", &CliConfig::attention_tap_open,
                         "blocked", "open",
                         "whether adversarial gradient may enter S via the bottleneck tap"));
    f.push_back(f_switch("train.adversarial", &CliConfig::nonsaturating,
                         "minmax", "nonsaturating", "generator-side adversarial form"));
    f.push_back({"train.ds_input", "product|pair",
                 "how prediction and image reach the spatial discriminator",
                 [](CliConfig& c, const std::string& raw) {
                     if (raw == "product") c.ds_input = DsInput::Product;
                     else if (raw == "pair") c.ds_input = DsInput::Pair;
                     else bad_value("train.ds_input", raw, "product|pair");
                 },
                 [](const CliConfig& c) {
                     return c.ds_input == DsInput::Product ? "product" : "pair";
                 }});
    f.push_back({"train.dp_input", "pair|mask_only",
                 "whether the projective discriminator also sees the image projection",
                 [](CliConfig& c, const std::string& raw) {
                     if (raw == "pair") c.dp_input = DpInput::Pair;
                     else if (raw == "mask_only") c.dp_input = DpInput::MaskOnly;
                     else bad_value("train.dp_input", raw, "pair|mask_only");
                 },
                 [](const CliConfig& c) {
                     return c.dp_input == DpInput::Pair ? "pair" : "mask_only";
                 }});
    f.push_back(f_bool("train.shuffle_slices", &CliConfig::shuffle_slices,
                       "shuffle slices within a volume each epoch"));
    f.push_back(f_int("train.early_stop_patience", &CliConfig::early_stop_patience,
                      "epochs without test-DSC improvement before stopping; 0 disables"));

    f.push_back(f_real("eval.threshold", &CliConfig::eval_threshold,
                       "binarization threshold for DSC"));
    return f;
}

} // namespace

const std::vector<FieldDef>& config_fields() {
    static const std::vector<FieldDef> fields = make_fields();
    return fields;
}

CliConfig parse_config(const std::string& text, std::vector<std::string>* warnings) {
    const auto& fields = config_fields();
    CliConfig cfg;
    std::vector<std::pair<std::string, int>> seen; // key -> first line

    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;

        size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ParseError("expected 'key = value'", line_no, true);
        const std::string key = trim(line.substr(0, eq));
        const std::string raw = trim(line.substr(eq + 1));
        if (key.empty()) throw ParseError("empty key", line_no, true);

        const FieldDef* field = nullptr;
        for (const auto& f : fields)
            if (f.key == key) { field = &f; break; }
        if (!field) throw ParseError("unknown key '" + key + "'", line_no, true);

        auto prev = std::find_if(seen.begin(), seen.end(),
                                 [&](const auto& s) { return s.first == key; });
        if (prev != seen.end()) {
            if (warnings)
                warnings->push_back("line " + std::to_string(line_no) +
                                    ": duplicate key '" + key + "' overrides line " +
                                    std::to_string(prev->second));
            prev->second = line_no;
        } else {
            seen.emplace_back(key, line_no);
        }

        try {
            field->set(cfg, raw);
        } catch (const ParseError& e) {
            throw ParseError(e.what(), line_no, true);
        }
    }
    return cfg;
}

CliConfig load_config_file(const std::string& path, std::vector<std::string>* warnings) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config(buf.str(), warnings);
}

std::string config_banner(const CliConfig& cfg) {
    std::string out = "# effective configuration\n";
    for (const auto& f : config_fields()) out += f.key + " = " + f.get(cfg) + "\n";
    return out;
}

std::string config_help() {
    const auto& fields = config_fields();
    const CliConfig defaults;
    size_t kw = 0, tw = 0, dw = 0;
    std::vector<std::string> defs;
    for (const auto& f : fields) {
        defs.push_back(f.get(defaults));
        kw = std::max(kw, f.key.size());
        tw = std::max(tw, f.type_desc.size());
        dw = std::max(dw, defs.back().size());
    }
    std::string out;
    char buf[256];
    std::snprintf(buf, sizeof(buf), "  %-*s  %-*s  %-*s  %s\n", int(kw), "key", int(tw),
                  "type", int(dw), "default", "description");
    out += buf;
    for (size_t i = 0; i < fields.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "  %-*s  %-*s  %-*s  %s\n", int(kw),
                      fields[i].key.c_str(), int(tw), fields[i].type_desc.c_str(), int(dw),
                      defs[i].c_str(), fields[i].doc.c_str());
        out += buf;
    }
    return out;
}

TrainingConfig training_config_from(const CliConfig& c) {
    TrainingConfig t;
    t.weights.lambda = c.lambda;
    t.weights.beta = c.beta;
    t.weights.w_pos = c.w_pos;
    t.weights.epsilon = c.epsilon;
    t.width = c.width;
    t.lr_s = c.lr_s;
    t.lr_ds = c.lr_ds;
    t.lr_dp = c.lr_dp;
    t.adam_beta1 = c.adam_beta1;
    t.adam_beta2 = c.adam_beta2;
    t.adam_eps = c.adam_eps;
    t.epochs = c.epochs;
    t.batch_size = c.batch_size;
    t.ds_steps = c.ds_steps;
    t.s_steps = c.s_steps;
    t.dp_every = c.dp_every;
    t.seed = c.seed;
    t.use_ds = c.use_ds;
    t.use_attention = c.use_attention;
    t.use_dp = c.use_dp;
    t.attention_tap_open = c.attention_tap_open;
    t.nonsaturating = c.nonsaturating;
    t.ds_input = c.ds_input;
    t.dp_input = c.dp_input;
    t.shuffle_slices = c.shuffle_slices;
    t.early_stop_patience = c.early_stop_patience;
    t.eval_threshold = c.eval_threshold;
    return t;
}

GeneratorConfig generator_config_from(const CliConfig& c) {
    GeneratorConfig g;
    g.d = c.dhw[0];
    g.h = c.dhw[1];
    g.w = c.dhw[2];
    g.radius_d_lo = c.radius_d[0];
    g.radius_d_hi = c.radius_d[1];
    g.radius_hw_lo = c.radius_hw[0];
    g.radius_hw_hi = c.radius_hw[1];
    g.deform = c.deform;
    g.max_tilt = c.max_tilt;
    g.object_mean = c.object_mean;
    g.background_mean = c.background_mean;
    g.noise_sigma = c.noise_sigma;
    g.pos_lo = c.pos_fraction[0];
    g.pos_hi = c.pos_fraction[1];
    return g;
}

} // namespace pan
