#pragma once

#include <string>
#include <vector>

#include "pan/eval.hpp"
#include "pan/training.hpp"

namespace pan {

extern const char* const kMetricsCsvHeader;

// Creates/truncates the file and writes the header plus all rows.
void write_metrics_csv(const std::string& path,
                       const std::vector<EpochMetrics>& rows);
// Appends one row, writing the header first if the file does not exist.
void append_metrics_row(const std::string& path, const EpochMetrics& row);

// Parses a file written by the two functions above (resume reloads its own
// history this way). Malformed content is a parse error naming the line.
std::vector<EpochMetrics> read_metrics_csv(const std::string& path);

// Training curves as a self-contained SVG: loss panel (bce, hybrid, l_ds,
// l_dp) and a test-DSC panel. Byte-deterministic for a given history.
void write_curves_svg(const std::string& path,
                      const std::vector<EpochMetrics>& rows);

struct AblationCell {
    std::string variant;
    uint64_t seed = 0;
    bool failed = false;   // training aborted; excluded from aggregates
    std::string error;     // what() of the abort, empty otherwise
    double mean_dsc = 0.0, std_dsc = 0.0, min_dsc = 0.0, max_dsc = 0.0;
};

struct AblationResult {
    std::vector<AblationCell> cells; // variant-major, seed order within
    std::vector<std::string> variants;
    std::vector<uint64_t> seeds;
};

// Cumulative component study: S alone, S+Ds without attention, S+Ds with
// attention, and the full model. Each variant trains once per seed under
// base with only the component switches changed, writing into
// out_dir/<variant>/<seed>/.
AblationResult run_ablation(const TrainingConfig& base,
                            const std::vector<uint64_t>& seeds,
                            const std::string& data_dir,
                            const std::string& out_dir);

void write_ablation_csv(const std::string& path, const AblationResult& r);

// Mean test DSC of a variant's non-failed cells; NaN if every cell failed.
double variant_mean(const AblationResult& r, const std::string& variant);

} // namespace pan
