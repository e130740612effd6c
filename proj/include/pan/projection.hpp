#pragma once

#include "pan/models.hpp"
#include "pan/tape.hpp"

namespace pan {

// Axial projection: P(i,j) = 1 - exp(-sum_k V(i,j,k)). Values land in
// [0,1) for finite non-negative volumes; a pixel is 0 iff its column sums
// to 0. The derivative along a column is the same for every k:
// dP(i,j)/dV(i,j,k) = 1 - P(i,j).
struct Projection {
    Tensor image; // [H,W]
    int src_h = 0, src_w = 0, src_d = 0;
};

// Plain forward evaluation over an [H,W,D] volume (no graph). Negative
// voxels are a domain error. Training-time projection with gradient goes
// through Tape::project.
Projection project_volume(const Tensor& hwd);

// Volumes are stored slice-major ([D,H,W]; one contiguous slab per axial
// slice). The projection consumes column-major-in-k [H,W,D]. These copies
// convert between the two.
Tensor hwd_from_dhw(const Tensor& dhw);
Tensor dhw_from_hwd(const Tensor& hwd);

// Runs the segmentor on every axial slice of a [D,H,W] intensity volume in
// one batch, stacks the D prediction maps into an [H,W,D] node and projects
// it. The projection stays connected to the graph, so with
// track_segmentor_grad the adversarial signal reaches S's parameters
// through all D slices and the projection's analytic gradient.
struct PredictionStack {
    NodeId slices;             // [D,1,H,W] per-slice probability maps
    NodeId volume;             // [H,W,D]
    NodeId projection;         // [H,W]
    std::vector<NodeId> param_nodes; // S's parameter leaves (empty graph role when frozen)
};
PredictionStack project_prediction_stack(Tape& t, Segmentor& s,
                                         const Tensor& volume_dhw,
                                         bool track_segmentor_grad);

// Same pipeline over an existing set of segmentor parameter leaves, for
// callers that combine the projection with other terms on one tape (the
// hybrid update builds its bce term from the same leaves).
PredictionStack project_prediction_stack_with(Tape& t, const Segmentor& s,
                                              const std::vector<NodeId>& p,
                                              const Tensor& volume_dhw);

} // namespace pan
