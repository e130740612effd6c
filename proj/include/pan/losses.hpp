#pragma once

#include "pan/models.hpp"
#include "pan/tape.hpp"

namespace pan {

// Weights of the hybrid objective: l_hybrid = bce - lambda*l_ds - beta*l_dp,
// with w_pos the positive-class weight inside the pixel BCE and epsilon the
// clamp applied to every log argument.
struct LossWeights {
    double lambda = 0.1;
    double beta = 0.1;
    double w_pos = 1.0;
    double epsilon = 1e-7;

    void validate() const;
};

// BCE of a prediction against a constant label (0 or 1 for the
// discriminators; w fixed at 1 there). Mean over the first extent.
NodeId bce_with_label(Tape& t, NodeId pred, double label, double epsilon);

// Full discriminator losses: real term against label 1, fake term against
// label 0, summed. The same parameter nodes p feed both terms, so a
// backward pass accumulates the discriminator's gradient across them. The
// caller controls freezing: pass frozen leaves for p (or a constant
// pred_mask) depending on which side of the min-max is being updated.
struct DiscLoss {
    NodeId loss;
    NodeId real_score; // [N,1]
    NodeId fake_score; // [N,1]
};

DiscLoss ds_loss(Tape& t, const SpatialDiscriminator& d, const std::vector<NodeId>& p,
                 NodeId image, NodeId gt_mask, NodeId pred_mask, NodeId bottleneck,
                 double epsilon);

DiscLoss dp_loss(Tape& t, const ProjectiveDiscriminator& d, const std::vector<NodeId>& p,
                 NodeId proj_image, NodeId proj_gt, NodeId proj_pred, double epsilon);

// bce - lambda*l_ds - beta*l_dp. Either discriminator term may be absent
// (kNoLoss); a zero weight also drops its term, so lambda = beta = 0
// returns the BCE node itself, bitwise.
inline constexpr NodeId kNoLoss = -1;
NodeId hybrid_loss(Tape& t, NodeId bce_term, NodeId l_ds, NodeId l_dp,
                   const LossWeights& weights);

} // namespace pan
