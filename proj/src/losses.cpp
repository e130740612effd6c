#include "pan/losses.hpp"

#include <cmath>

#include "pan/errors.hpp"

namespace pan {

void LossWeights::validate() const {
    if (!(epsilon > 0.0 && epsilon <= 1e-3))
        throw ParameterError("loss epsilon must be in (0, 1e-3], got " + std::to_string(epsilon));
    if (!std::isfinite(lambda) || lambda < 0.0)
        throw ParameterError("lambda must be finite and non-negative");
    if (!std::isfinite(beta) || beta < 0.0)
        throw ParameterError("beta must be finite and non-negative");
    if (!std::isfinite(w_pos) || !(w_pos > 0.0))
        throw ParameterError("w_pos must be finite and positive");
}

NodeId bce_with_label(Tape& t, NodeId pred, double label, double epsilon) {
    if (label != 0.0 && label != 1.0)
        throw ParameterError("bce_with_label: label must be 0 or 1");
    return t.weighted_bce(pred, Tensor::full(t.value(pred).shape, label), 1.0, epsilon);
}

DiscLoss ds_loss(Tape& t, const SpatialDiscriminator& d, const std::vector<NodeId>& p,
                 NodeId image, NodeId gt_mask, NodeId pred_mask, NodeId bottleneck,
                 double epsilon) {
    NodeId real = d.forward_with(t, p, image, gt_mask, bottleneck);
    NodeId fake = d.forward_with(t, p, image, pred_mask, bottleneck);
    NodeId loss = t.add(bce_with_label(t, real, 1.0, epsilon),
                        bce_with_label(t, fake, 0.0, epsilon));
    return {loss, real, fake};
}

DiscLoss dp_loss(Tape& t, const ProjectiveDiscriminator& d, const std::vector<NodeId>& p,
                 NodeId proj_image, NodeId proj_gt, NodeId proj_pred, double epsilon) {
    NodeId real = d.forward_with(t, p, proj_image, proj_gt);
    NodeId fake = d.forward_with(t, p, proj_image, proj_pred);
    NodeId loss = t.add(bce_with_label(t, real, 1.0, epsilon),
                        bce_with_label(t, fake, 0.0, epsilon));
    return {loss, real, fake};
}

NodeId hybrid_loss(Tape& t, NodeId bce_term, NodeId l_ds, NodeId l_dp,
                   const LossWeights& weights) {
    weights.validate();
    NodeId out = bce_term;
    if (l_ds != kNoLoss && weights.lambda != 0.0)
        out = t.add(out, t.scale(l_ds, -weights.lambda));
    if (l_dp != kNoLoss && weights.beta != 0.0)
        out = t.add(out, t.scale(l_dp, -weights.beta));
    return out;
}

} // namespace pan
