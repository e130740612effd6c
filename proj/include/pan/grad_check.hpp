#pragma once

#include <functional>
#include <vector>

#include "pan/rng.hpp"
#include "pan/tape.hpp"

namespace pan {

struct GradCheckReport {
    double max_rel_error = 0.0;
    bool pass = false;
    long checked = 0;
};

// Receives one gradient-tracking leaf per requested input, in order, and
// must return a scalar loss node.
using GraphBuilder = std::function<NodeId(Tape&, const std::vector<NodeId>&)>;

// Central finite differences against the tape's analytic gradient, probing a
// step ladder (1e-5 up to 3e-4, down to 3e-7) and keeping each element's best
// agreement: small steps move a probe off an activation kink it would
// otherwise straddle, the large step lifts near-zero gradients above the f64
// cancellation floor, and a wrong gradient disagrees at every step. Elements
// that still fail are re-checked at a nudged base value with a freshly
// derived analytic gradient. Relative error per element is
// |a-n| / max(|a|,|n|,1e-8); the report carries the worst one.
// max_checks_per_input samples that many elements per input through rng
// (0 checks every element) so whole networks stay affordable; primitives are
// checked exhaustively.
GradCheckReport grad_check_at(const GraphBuilder& build, std::vector<Tensor> inputs,
                              double tolerance, Rng& rng, int max_checks_per_input = 0);

// Same, with inputs drawn uniform from [-1,1).
GradCheckReport grad_check(const GraphBuilder& build, const std::vector<Shape>& input_shapes,
                           double tolerance, Rng& rng, int max_checks_per_input = 0);

} // namespace pan
