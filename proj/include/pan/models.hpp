#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pan/rng.hpp"
#include "pan/tape.hpp"

namespace pan {

// A trainable tensor with its optimizer moments. Values and moments live on
// the f32 grid (quantized at init and after every optimizer step) so the
// f32 checkpoint blobs restore training bit-exactly.
struct Param {
    std::string name;
    Tensor value;
    Tensor m;
    Tensor v;
};

class ParamStore {
public:
    Param& add(std::string name, Tensor init);
    std::vector<Param*> ptrs(); // creation order, stable
    const std::vector<Param>& items() const { return items_; }
    int64_t scalar_count() const;

private:
    std::vector<Param> items_;
};

// Every network follows the same calling pattern: forward_with() builds the
// graph from externally supplied parameter nodes (one per Param, in
// params() order), which is what grad checking needs; forward() is the
// training-loop convenience that registers the stored values as leaves
// (gradient-tracking or frozen) and returns those node ids for the
// optimizer to read gradients from.

class AttentionModule {
public:
    AttentionModule() = default;
    // Two 1x1 convs: channels -> max(channels/2, 4) with a nonlinearity,
    // then -> 1, then spatial softmax. The weight map gates the features.
    // Parameters are registered into the owner's store (4 slots), so the
    // owning network serializes and optimizes them like its own.
    AttentionModule(ParamStore& store, const std::string& prefix, int channels, Rng& rng);

    struct Out {
        NodeId weights; // [N,1,h,w], sums to 1 per sample
        NodeId gated;   // feats * weights, broadcast over channels
    };
    // Consumes its 4 parameter nodes from p at cursor, advancing it.
    Out forward_with(Tape& t, const std::vector<NodeId>& p, std::size_t& cursor,
                     NodeId feats) const;

    int channels() const { return channels_; }
    static constexpr int kParamSlots = 4;

private:
    int channels_ = 0;
    int mid_ = 0;
};

class Segmentor {
public:
    // Encoder-decoder FCN: 10 encoder convs (stride 2 at layers 3, 6 and 9),
    // 4 bottleneck convs, 10 decoder convs with nearest-neighbor upsampling
    // before layers 2, 5 and 8, then a 1x1 sigmoid head. Channel plan at
    // width 1: (8,8,16,16,16,32,32,32,32,32), mirrored in the decoder;
    // widths scale linearly. Hidden activation is leaky_relu(0.2).
    Segmentor(int width, int in_h, int in_w, uint64_t seed);

    struct Out {
        NodeId prob;       // [N,1,H,W], strictly in (0,1)
        NodeId bottleneck; // [N,32*width,H/8,W/8], after the 4th bottleneck conv
    };
    Out forward_with(Tape& t, const std::vector<NodeId>& p, NodeId batch) const;

    struct Fwd {
        NodeId prob;
        NodeId bottleneck;
        std::vector<NodeId> param_nodes;
    };
    Fwd forward(Tape& t, NodeId batch, bool track_grad);

    std::vector<Param*> params() { return store_.ptrs(); }
    int64_t param_count() const { return store_.scalar_count(); }
    int width() const { return width_; }
    int in_h() const { return in_h_; }
    int in_w() const { return in_w_; }
    int bottleneck_channels() const { return 32 * width_; }

private:
    ParamStore store_;
    int width_, in_h_, in_w_;
};

enum class DsInput { Product, Pair };

class SpatialDiscriminator {
public:
    // Two branches fused late: the mask branch sees the segmented object
    // (image * mask by default, the raw 2-channel pair behind DsInput::Pair)
    // through 4 convs with three stride-2 stages, landing at the bottleneck
    // resolution; the attention branch gates the segmentor bottleneck
    // features and applies 4 stride-1 convs. Channel-concat, 3 shared
    // convs, global average pool, scalar sigmoid head. use_attention=false
    // drops the attention branch entirely (the S+Ds ablation row).
    SpatialDiscriminator(int width, int in_h, int in_w, bool use_attention,
                         DsInput input_form, uint64_t seed);

    NodeId forward_with(Tape& t, const std::vector<NodeId>& p, NodeId image,
                        NodeId mask, NodeId bottleneck) const;

    struct Fwd {
        NodeId score; // [N,1] strictly in (0,1)
        std::vector<NodeId> param_nodes;
    };
    // bottleneck is ignored when the attention branch is disabled.
    Fwd forward(Tape& t, NodeId image, NodeId mask, NodeId bottleneck, bool track_grad);

    std::vector<Param*> params();
    bool use_attention() const { return use_attention_; }
    AttentionModule& attention() { return attention_; }

private:
    ParamStore store_;
    AttentionModule attention_;
    int width_, in_h_, in_w_;
    bool use_attention_;
    DsInput input_form_;
};

enum class DpInput { Pair, MaskOnly };

class ProjectiveDiscriminator {
public:
    // Conv stack over the channel-stacked projections (projected image +
    // projected mask; mask-only variant keeps a single channel), three
    // stride-2 stages, global average pool, scalar sigmoid head.
    ProjectiveDiscriminator(int width, int in_h, int in_w, DpInput input_form,
                            uint64_t seed);

    // proj_image / proj_mask are [H,W] nodes with values in [0,1).
    NodeId forward_with(Tape& t, const std::vector<NodeId>& p, NodeId proj_image,
                        NodeId proj_mask) const;

    struct Fwd {
        NodeId score; // [1,1] strictly in (0,1)
        std::vector<NodeId> param_nodes;
    };
    Fwd forward(Tape& t, NodeId proj_image, NodeId proj_mask, bool track_grad);

    std::vector<Param*> params() { return store_.ptrs(); }

private:
    ParamStore store_;
    int width_, in_h_, in_w_;
    DpInput input_form_;
};

// He fan-in normal init for a conv kernel, on the f32 grid.
Tensor he_conv_init(Rng& rng, int out_ch, int in_ch, int kh, int kw);

// Registers every Param value as a leaf on the tape, in order.
std::vector<NodeId> add_param_leaves(Tape& t, const std::vector<Param*>& params,
                                     bool track_grad);

} // namespace pan
