#pragma once

#include <functional>
#include <string>
#include <vector>

#include "pan/data.hpp"
#include "pan/models.hpp"

namespace pan {

// Dice-Sørensen coefficient of two binary volumes of equal shape,
// 2|A∩B| / (|A|+|B|). Two empty masks agree perfectly: 1.
double dsc(const Tensor& a, const Tensor& b);

struct DscSummary {
    std::vector<double> per_volume; // dataset order
    double mean = 0.0, sd = 0.0, min = 0.0, max = 0.0;
};

// Maps a [N,1,H,W] image batch to per-pixel foreground probabilities of the
// same shape. Lets the aggregation be tested against closed-form predictors.
using SlicePredictor = std::function<Tensor(const Tensor&)>;

// Aggregation used wherever a per-volume DSC vector is reduced: mean,
// sample standard deviation (0 for a single volume), extremes.
DscSummary summarize_dsc(std::vector<double> per_volume);

// Volumetric DSC per sample — all slices predicted in one batch, binarized
// at threshold — then summary stats over the set.
DscSummary evaluate_with(const SlicePredictor& predict,
                         const std::vector<Sample>& test_set, double threshold);

DscSummary evaluate(Segmentor& s, const std::vector<Sample>& test_set,
                    double threshold);

} // namespace pan
