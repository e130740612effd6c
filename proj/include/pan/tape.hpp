#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "pan/tensor.hpp"

namespace pan {

// Reverse-mode autodiff over a flat tape. Node ids are indices into the
// tape in creation order, which is already a topological order, so backward
// is a single reverse sweep. A tape is built fresh for every training step
// and discarded; nothing here is thread-safe across tapes sharing a node.
//
// Gradients are accumulated (+=), never assigned, so diamond-shaped graphs
// work without bookkeeping. A node carries a grad buffer only when gradient
// can flow from it to some leaf that wants one.

using NodeId = std::int32_t;

class Tape {
public:
    // Leaves. Parameters and perturbable inputs want needs_grad = true;
    // frozen tensors enter via constant() and cost nothing in backward.
    NodeId leaf(Tensor value, bool needs_grad);
    NodeId constant(Tensor value) { return leaf(std::move(value), false); }

    // input [N,C,H,W], kernel [F,C,kh,kw], bias [F]. Cross-correlation,
    // zero padding. Output [N,F,H',W'] with H' = (H+2p-kh)/stride + 1.
    NodeId conv2d(NodeId input, NodeId kernel, NodeId bias, int stride, int padding);

    // [N,C,H,W] -> [N,C,H*f,W*f]; backward sums each f x f block.
    NodeId upsample_nearest(NodeId input, int factor);

    NodeId relu(NodeId input) { return leaky_relu(input, 0.0); }
    NodeId leaky_relu(NodeId input, double alpha);
    NodeId sigmoid(NodeId input);

    // [N,1,h,w]: softmax over the h*w positions per sample, max-stabilized.
    NodeId spatial_softmax(NodeId input);

    // add/mul take equal shapes, or b as [N,1,h,w] against a [N,c,h,w]
    // (the attention-gating broadcast; nothing more general exists).
    NodeId add(NodeId a, NodeId b);
    NodeId mul(NodeId a, NodeId b);
    NodeId concat_channels(NodeId a, NodeId b);

    NodeId reshape(NodeId input, Shape shape);

    // [N,C,H,W] -> [N,C], mean over the spatial plane.
    NodeId global_avg_pool(NodeId input);

    // [D,1,H,W] slice predictions -> [H,W,D] volume, out(i,j,k) = in(k,0,i,j).
    NodeId stack_hwd(NodeId slices);

    // [H,W,D] non-negative -> [H,W]: P(i,j) = 1 - exp(-sum_k V(i,j,k)).
    // dP(i,j)/dV(i,j,k) = 1 - P(i,j) for every k in the column.
    NodeId project(NodeId volume);

    // Weighted binary cross-entropy, the only loss primitive. Sum over all
    // non-batch elements, mean over the first extent (the sample dim).
    // pred is clamped to [eps, 1-eps]; gradient is zero where the clamp is
    // active (the true subgradient, so finite differences agree).
    NodeId weighted_bce(NodeId pred, const Tensor& target, double w_pos, double eps);

    NodeId scale(NodeId input, double factor);
    NodeId sum(NodeId input); // -> scalar [1]

    // Zeroes all grads, seeds d(loss)/d(loss) = 1, sweeps the tape in
    // reverse. loss must be scalar.
    void backward(NodeId loss);

    const Tensor& value(NodeId id) const { return nodes_[check(id)].value; }
    // Only valid for nodes that track gradient (leaf(needs_grad=true) or
    // anything downstream of one).
    const Tensor& grad(NodeId id) const;
    bool tracks_grad(NodeId id) const { return nodes_[check(id)].needs_grad; }
    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;   // allocated iff needs_grad
        bool needs_grad = false;
        std::function<void(Tape&)> back; // null for leaves
    };

    NodeId push(Tensor value, bool needs_grad, std::function<void(Tape&)> back);
    NodeId check(NodeId id) const;
    // Accumulation target for input id, nullptr when that input is frozen.
    double* gptr(NodeId id);
    const double* gsrc(NodeId id) const { return nodes_[id].grad.data.data(); }

    std::vector<Node> nodes_;
};

} // namespace pan
