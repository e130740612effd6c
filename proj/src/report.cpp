#include "pan/report.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <utility>

#include "pan/errors.hpp"

namespace pan {

const char* const kMetricsCsvHeader =
    "epoch,bce,l_ds,l_dp,hybrid,ds_real_score,ds_fake_score,dp_real_score,dp_fake_score,"
    "test_dsc_mean";

namespace {

std::string metrics_row(const EpochMetrics& r) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f", r.epoch,
                  r.bce, r.l_ds, r.l_dp, r.hybrid, r.ds_real_score, r.ds_fake_score,
                  r.dp_real_score, r.dp_fake_score, r.test_dsc_mean);
    return buf;
}

void write_text(const std::string& path, const std::string& body, bool append) {
    std::ofstream f(path, append ? std::ios::app : std::ios::trunc);
    if (!f) throw IoError("cannot open " + path + " for writing");
    f << body;
    if (!f) throw IoError("short write to " + path);
}

} // namespace

void write_metrics_csv(const std::string& path, const std::vector<EpochMetrics>& rows) {
    std::string body = std::string(kMetricsCsvHeader) + "\n";
    for (const EpochMetrics& r : rows) body += metrics_row(r) + "\n";
    write_text(path, body, false);
}

void append_metrics_row(const std::string& path, const EpochMetrics& row) {
    if (!std::filesystem::exists(path))
        write_text(path, std::string(kMetricsCsvHeader) + "\n", false);
    write_text(path, metrics_row(row) + "\n", true);
}

std::vector<EpochMetrics> read_metrics_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(f, line)) throw ParseError("empty metrics file", 1, true);
    if (line != kMetricsCsvHeader) throw ParseError("unexpected metrics header", 1, true);
    std::vector<EpochMetrics> rows;
    long long lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::array<double, 10> v{};
        const char* p = line.data();
        const char* end = line.data() + line.size();
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (i > 0) {
                if (p >= end || *p != ',')
                    throw ParseError("expected 10 comma-separated fields", lineno, true);
                ++p;
            }
            const auto [next, err] = std::from_chars(p, end, v[i]);
            if (err != std::errc()) throw ParseError("bad numeric field", lineno, true);
            p = next;
        }
        if (p != end) throw ParseError("trailing characters after last field", lineno, true);
        EpochMetrics r;
        r.epoch = static_cast<int>(v[0]);
        r.bce = v[1];
        r.l_ds = v[2];
        r.l_dp = v[3];
        r.hybrid = v[4];
        r.ds_real_score = v[5];
        r.ds_fake_score = v[6];
        r.dp_real_score = v[7];
        r.dp_fake_score = v[8];
        r.test_dsc_mean = v[9];
        rows.push_back(r);
    }
    return rows;
}

namespace {

// All geometry is emitted through %.2f so the file is byte-deterministic
// for a given history.
std::string f2(double v) {
    char b[40];
    std::snprintf(b, sizeof b, "%.2f", v);
    return b;
}

struct Panel {
    double x0, y0, w, h; // plot area, y grows downward
    double ymin, ymax;
    int n; // points per series

    double px(int i) const {
        return n > 1 ? x0 + w * static_cast<double>(i) / static_cast<double>(n - 1) : x0 + w / 2;
    }
    double py(double v) const { return y0 + h - (v - ymin) / (ymax - ymin) * h; }
};

void draw_frame(std::string& s, const Panel& p, const std::string& title, int first_epoch,
                int last_epoch) {
    s += "<rect x=\"" + f2(p.x0) + "\" y=\"" + f2(p.y0) + "\" width=\"" + f2(p.w) +
         "\" height=\"" + f2(p.h) + "\" fill=\"none\" stroke=\"#999999\"/>\n";
    s += "<text x=\"" + f2(p.x0 + p.w / 2) + "\" y=\"" + f2(p.y0 - 10) +
         "\" text-anchor=\"middle\" font-family=\"monospace\" font-size=\"13\" "
         "fill=\"#222222\">" +
         title + "</text>\n";
    for (int k = 0; k <= 4; ++k) {
        const double v = p.ymin + (p.ymax - p.ymin) * static_cast<double>(k) / 4.0;
        const double y = p.py(v);
        s += "<line x1=\"" + f2(p.x0 - 4) + "\" y1=\"" + f2(y) + "\" x2=\"" + f2(p.x0) +
             "\" y2=\"" + f2(y) + "\" stroke=\"#999999\"/>\n";
        s += "<text x=\"" + f2(p.x0 - 8) + "\" y=\"" + f2(y + 4) +
             "\" text-anchor=\"end\" font-family=\"monospace\" font-size=\"11\" "
             "fill=\"#444444\">" +
             f2(v) + "</text>\n";
    }
    s += "<text x=\"" + f2(p.x0) + "\" y=\"" + f2(p.y0 + p.h + 16) +
         "\" text-anchor=\"middle\" font-family=\"monospace\" font-size=\"11\" "
         "fill=\"#444444\">" +
         std::to_string(first_epoch) + "</text>\n";
    s += "<text x=\"" + f2(p.x0 + p.w) + "\" y=\"" + f2(p.y0 + p.h + 16) +
         "\" text-anchor=\"middle\" font-family=\"monospace\" font-size=\"11\" "
         "fill=\"#444444\">" +
         std::to_string(last_epoch) + "</text>\n";
    s += "<text x=\"" + f2(p.x0 + p.w / 2) + "\" y=\"" + f2(p.y0 + p.h + 16) +
         "\" text-anchor=\"middle\" font-family=\"monospace\" font-size=\"11\" "
         "fill=\"#444444\">epoch</text>\n";
}

void draw_series(std::string& s, const Panel& p, const std::vector<double>& y,
                 const char* color) {
    if (p.n > 1) {
        s += "<polyline fill=\"none\" stroke=\"";
        s += color;
        s += "\" stroke-width=\"1.5\" points=\"";
        for (int i = 0; i < p.n; ++i) {
            if (i > 0) s += ' ';
            s += f2(p.px(i)) + "," + f2(p.py(y[static_cast<std::size_t>(i)]));
        }
        s += "\"/>\n";
    }
    for (int i = 0; i < p.n; ++i)
        s += "<circle cx=\"" + f2(p.px(i)) + "\" cy=\"" + f2(p.py(y[static_cast<std::size_t>(i)])) +
             "\" r=\"2\" fill=\"" + color + "\"/>\n";
}

void legend_entry(std::string& s, double x, double y, const char* color, const char* label) {
    s += "<rect x=\"" + f2(x) + "\" y=\"" + f2(y - 9) +
         "\" width=\"10\" height=\"10\" fill=\"" + std::string(color) + "\"/>\n";
    s += "<text x=\"" + f2(x + 14) + "\" y=\"" + f2(y) +
         "\" font-family=\"monospace\" font-size=\"11\" fill=\"#222222\">" + label + "</text>\n";
}

} // namespace

void write_curves_svg(const std::string& path, const std::vector<EpochMetrics>& rows) {
    std::string s;
    s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"880\" height=\"380\" "
         "viewBox=\"0 0 880 380\">\n";
    s += "<rect width=\"880\" height=\"380\" fill=\"#ffffff\"/>\n";
    if (rows.empty()) {
        s += "<text x=\"440\" y=\"190\" text-anchor=\"middle\" font-family=\"monospace\" "
             "font-size=\"14\" fill=\"#444444\">no epochs recorded</text>\n";
        s += "</svg>\n";
        write_text(path, s, false);
        return;
    }

    const int n = static_cast<int>(rows.size());
    std::vector<double> bce, hybrid, lds, ldp, dsc_mean;
    for (const EpochMetrics& r : rows) {
        bce.push_back(r.bce);
        hybrid.push_back(r.hybrid);
        lds.push_back(r.l_ds);
        ldp.push_back(r.l_dp);
        dsc_mean.push_back(r.test_dsc_mean);
    }
    double lo = bce.front(), hi = bce.front();
    for (const auto* series : {&bce, &hybrid, &lds, &ldp})
        for (double v : *series) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    if (hi - lo < 1e-12) {
        lo -= 0.5;
        hi += 0.5;
    } else {
        const double pad = 0.05 * (hi - lo);
        lo -= pad;
        hi += pad;
    }

    Panel losses{64, 40, 352, 264, lo, hi, n};
    Panel dice{536, 40, 320, 264, 0.0, 1.0, n};
    const int e0 = rows.front().epoch, e1 = rows.back().epoch;
    draw_frame(s, losses, "losses", e0, e1);
    draw_frame(s, dice, "test DSC", e0, e1);

    draw_series(s, losses, bce, "#1f77b4");
    draw_series(s, losses, hybrid, "#111111");
    draw_series(s, losses, lds, "#ff7f0e");
    draw_series(s, losses, ldp, "#2ca02c");
    draw_series(s, dice, dsc_mean, "#d62728");

    legend_entry(s, 64, 348, "#1f77b4", "bce");
    legend_entry(s, 140, 348, "#111111", "hybrid");
    legend_entry(s, 236, 348, "#ff7f0e", "l_ds");
    legend_entry(s, 318, 348, "#2ca02c", "l_dp");
    legend_entry(s, 536, 348, "#d62728", "mean test DSC");
    s += "</svg>\n";
    write_text(path, s, false);
}

AblationResult run_ablation(const TrainingConfig& base, const std::vector<uint64_t>& seeds,
                            const std::string& data_dir, const std::string& out_dir) {
    if (seeds.size() < 3) throw ParameterError("ablation needs at least 3 seeds");
    struct Row {
        const char* name;
        bool ds, att, dp;
    };
    // Cumulative study: each row enables one more component.
    static constexpr Row kRows[] = {
        {"S", false, false, false},
        {"S+Ds", true, false, false},
        {"S+Ds+A", true, true, false},
        {"S+Ds+A+Dp", true, true, true},
    };
    AblationResult out;
    out.seeds = seeds;
    for (const Row& row : kRows) out.variants.emplace_back(row.name);
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());
    for (const Row& row : kRows) {
        for (uint64_t seed : seeds) {
            TrainingConfig cfg = base;
            cfg.use_ds = row.ds;
            cfg.use_attention = row.att;
            cfg.use_dp = row.dp;
            cfg.seed = seed;
            AblationCell cell;
            cell.variant = row.name;
            cell.seed = seed;
            const std::string run_dir =
                out_dir + "/" + row.name + "/" + std::to_string(seed);
            try {
                const TrainResult res = train(cfg, data_dir, run_dir);
                const DscSummary sum = summarize_dsc(res.final_per_volume_dsc);
                cell.mean_dsc = sum.mean;
                cell.std_dsc = sum.sd;
                cell.min_dsc = sum.min;
                cell.max_dsc = sum.max;
            } catch (const Error& e) {
                cell.failed = true;
                cell.error = e.what();
            }
            out.cells.push_back(std::move(cell));
        }
    }
    write_ablation_csv(out_dir + "/ablation.csv", out);
    return out;
}

void write_ablation_csv(const std::string& path, const AblationResult& r) {
    std::string body = "variant,seed,mean_dsc,std_dsc,min_dsc,max_dsc\n";
    char buf[192];
    for (const AblationCell& c : r.cells) {
        if (c.failed)
            std::snprintf(buf, sizeof buf, "%s,%llu,nan,nan,nan,nan\n", c.variant.c_str(),
                          static_cast<unsigned long long>(c.seed));
        else
            std::snprintf(buf, sizeof buf, "%s,%llu,%.6f,%.6f,%.6f,%.6f\n", c.variant.c_str(),
                          static_cast<unsigned long long>(c.seed), c.mean_dsc, c.std_dsc,
                          c.min_dsc, c.max_dsc);
        body += buf;
    }
    write_text(path, body, false);
}

double variant_mean(const AblationResult& r, const std::string& variant) {
    double sum = 0.0;
    int n = 0;
    for (const AblationCell& c : r.cells)
        if (c.variant == variant && !c.failed) {
            sum += c.mean_dsc;
            ++n;
        }
    return n > 0 ? sum / n : std::numeric_limits<double>::quiet_NaN();
}

} // namespace pan
