#include "pan/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "pan/errors.hpp"

namespace pan {
namespace {

// Step ladder, best agreement wins. The small rungs move a probe off a
// leaky_relu corner it would otherwise straddle; the large rung lifts the
// difference signal of a near-zero gradient above the f64 cancellation floor
// of the loss reductions. A wrong analytic gradient disagrees at every rung.
constexpr double kSteps[] = {1e-5, 3e-5, 1e-4, 3e-4, 1e-6, 3e-7};

// Retry offsets for elements kinked at every rung: re-derive the analytic
// gradient at a nearby base value and difference there instead. A wrong
// backward formula is wrong at the shifted base too.
constexpr double kNudges[] = {3e-5, -3e-5};

double loss_value(const GraphBuilder& build, const std::vector<Tensor>& inputs) {
    Tape t;
    std::vector<NodeId> leaves;
    leaves.reserve(inputs.size());
    for (const auto& x : inputs)
        leaves.push_back(t.constant(x));
    NodeId loss = build(t, leaves);
    if (t.value(loss).numel() != 1)
        throw ContractError("grad_check: builder must return a scalar loss");
    return t.value(loss)[0];
}

std::vector<Tensor> analytic_grads(const GraphBuilder& build, const std::vector<Tensor>& inputs) {
    Tape t;
    std::vector<NodeId> leaves;
    leaves.reserve(inputs.size());
    for (const auto& x : inputs)
        leaves.push_back(t.leaf(x, true));
    NodeId loss = build(t, leaves);
    if (t.value(loss).numel() != 1)
        throw ContractError("grad_check: builder must return a scalar loss");
    t.backward(loss);
    std::vector<Tensor> grads;
    grads.reserve(leaves.size());
    for (NodeId id : leaves)
        grads.push_back(t.grad(id));
    return grads;
}

// Best agreement across the step ladder between the analytic value and a
// central difference of element e of input i, taken around inputs as given.
double ladder_rel_error(const GraphBuilder& build, std::vector<Tensor>& inputs, std::size_t i,
                        int64_t e, double analytic, double tolerance) {
    const double saved = inputs[i][e];
    double rel = 0.0;
    for (double step : kSteps) {
        inputs[i][e] = saved + step;
        const double fp = loss_value(build, inputs);
        inputs[i][e] = saved - step;
        const double fm = loss_value(build, inputs);
        inputs[i][e] = saved;
        const double numeric = (fp - fm) / (2.0 * step);
        const double r = std::fabs(analytic - numeric) /
                         std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
        if (step == kSteps[0] || r < rel) rel = r;
        if (rel <= tolerance) break;
    }
    return rel;
}

} // namespace

GradCheckReport grad_check_at(const GraphBuilder& build, std::vector<Tensor> inputs,
                              double tolerance, Rng& rng, int max_checks_per_input) {
    if (!(tolerance > 0.0))
        throw ParameterError("grad_check: tolerance must be positive");

    const std::vector<Tensor> analytic = analytic_grads(build, inputs);

    GradCheckReport report;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const int64_t n = inputs[i].numel();
        std::vector<int64_t> idx;
        if (max_checks_per_input > 0 && max_checks_per_input < n) {
            for (int k = 0; k < max_checks_per_input; ++k)
                idx.push_back(static_cast<int64_t>(rng.uniform_int(static_cast<uint64_t>(n))));
        } else {
            idx.resize(static_cast<std::size_t>(n));
            for (int64_t k = 0; k < n; ++k) idx[static_cast<std::size_t>(k)] = k;
        }
        for (int64_t e : idx) {
            double rel = ladder_rel_error(build, inputs, i, e, analytic[i][e], tolerance);
            if (rel > tolerance) {
                const double saved = inputs[i][e];
                for (double nudge : kNudges) {
                    inputs[i][e] = saved + nudge;
                    const double a2 = analytic_grads(build, inputs)[i][e];
                    rel = std::min(rel,
                                   ladder_rel_error(build, inputs, i, e, a2, tolerance));
                    inputs[i][e] = saved;
                    if (rel <= tolerance) break;
                }
            }
            report.max_rel_error = std::max(report.max_rel_error, rel);
            ++report.checked;
        }
    }
    report.pass = report.max_rel_error <= tolerance;
    return report;
}

GradCheckReport grad_check(const GraphBuilder& build, const std::vector<Shape>& input_shapes,
                           double tolerance, Rng& rng, int max_checks_per_input) {
    std::vector<Tensor> inputs;
    inputs.reserve(input_shapes.size());
    for (const auto& s : input_shapes) {
        Tensor x(s);
        for (int64_t i = 0; i < x.numel(); ++i)
            x[i] = rng.uniform(-1.0, 1.0);
        inputs.push_back(std::move(x));
    }
    return grad_check_at(build, std::move(inputs), tolerance, rng, max_checks_per_input);
}

} // namespace pan
