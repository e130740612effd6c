#include "pan/eval.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "pan/errors.hpp"
#include "pan/tape.hpp"

namespace pan {

double dsc(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b))
        throw DimensionError("dsc: " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    double inter = 0.0, mass = 0.0;
    for (int64_t i = 0; i < a.numel(); ++i) {
        const double x = a[i], y = b[i];
        if ((x != 0.0 && x != 1.0) || (y != 0.0 && y != 1.0))
            throw DomainError("dsc expects binary masks");
        inter += x * y;
        mass += x + y;
    }
    return mass == 0.0 ? 1.0 : 2.0 * inter / mass; // empty agrees with empty
}

DscSummary summarize_dsc(std::vector<double> per_volume) {
    if (per_volume.empty()) throw ParameterError("summarize_dsc needs at least one value");
    DscSummary out;
    const double n = static_cast<double>(per_volume.size());
    double sum = 0.0;
    for (double v : per_volume) sum += v;
    out.mean = sum / n;
    double ss = 0.0;
    for (double v : per_volume) ss += (v - out.mean) * (v - out.mean);
    out.sd = per_volume.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0;
    const auto [lo, hi] = std::minmax_element(per_volume.begin(), per_volume.end());
    out.min = *lo;
    out.max = *hi;
    out.per_volume = std::move(per_volume);
    return out;
}

DscSummary evaluate_with(const SlicePredictor& predict, const std::vector<Sample>& test_set,
                         double threshold) {
    if (!(threshold > 0.0 && threshold < 1.0))
        throw ParameterError("threshold must lie in (0, 1)");
    if (test_set.empty()) throw ConfigError("empty evaluation set");
    std::vector<double> scores;
    scores.reserve(test_set.size());
    for (const Sample& s : test_set) {
        validate_sample(s);
        const int d = s.volume.d(), h = s.volume.h(), w = s.volume.w();
        // [D,H,W] -> [D,1,H,W] is a relabeling; the slabs are already the slices.
        Tensor batch({d, 1, h, w}, s.volume.intensities.data);
        Tensor prob = predict(batch);
        if (prob.shape != batch.shape)
            throw DimensionError("predictor returned " + shape_str(prob.shape) + " for " +
                                 shape_str(batch.shape));
        Tensor pred({d, h, w});
        for (int64_t i = 0; i < pred.numel(); ++i) pred[i] = prob[i] > threshold ? 1.0 : 0.0;
        scores.push_back(dsc(pred, s.mask));
    }
    return summarize_dsc(std::move(scores));
}

DscSummary evaluate(Segmentor& s, const std::vector<Sample>& test_set, double threshold) {
    return evaluate_with(
        [&s](const Tensor& batch) {
            Tape t;
            auto out = s.forward(t, t.constant(batch), false);
            return t.value(out.prob);
        },
        test_set, threshold);
}

} // namespace pan
