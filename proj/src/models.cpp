#include "pan/models.hpp"

#include <cmath>
#include <utility>

#include "pan/errors.hpp"

namespace pan {

Param& ParamStore::add(std::string name, Tensor init) {
    items_.push_back(Param{std::move(name), std::move(init), Tensor(), Tensor()});
    Param& p = items_.back();
    p.m = Tensor::zeros(p.value.shape);
    p.v = Tensor::zeros(p.value.shape);
    return p;
}

std::vector<Param*> ParamStore::ptrs() {
    std::vector<Param*> out;
    out.reserve(items_.size());
    for (auto& p : items_) out.push_back(&p);
    return out;
}

int64_t ParamStore::scalar_count() const {
    int64_t n = 0;
    for (const auto& p : items_) n += p.value.numel();
    return n;
}

Tensor he_conv_init(Rng& rng, int out_ch, int in_ch, int kh, int kw) {
    Tensor w({out_ch, in_ch, kh, kw});
    const double stddev = std::sqrt(2.0 / (static_cast<double>(in_ch) * kh * kw));
    for (int64_t i = 0; i < w.numel(); ++i)
        w[i] = rng.normal() * stddev;
    w.quantize_to_f32();
    return w;
}

std::vector<NodeId> add_param_leaves(Tape& t, const std::vector<Param*>& params,
                                     bool track_grad) {
    std::vector<NodeId> ids;
    ids.reserve(params.size());
    for (Param* p : params)
        ids.push_back(t.leaf(p->value, track_grad));
    return ids;
}

namespace {

constexpr double kLeaky = 0.2;

void add_conv(ParamStore& store, const std::string& name, Rng& rng,
              int out_ch, int in_ch, int k) {
    store.add(name + ".w", he_conv_init(rng, out_ch, in_ch, k, k));
    store.add(name + ".b", Tensor::zeros({out_ch}));
}

// w,b consumed from p at cursor. 3x3 convs use padding 1 so stride-1 layers
// preserve the spatial size and stride-2 layers exactly halve it.
NodeId conv_leaky(Tape& t, const std::vector<NodeId>& p, std::size_t& cursor,
                  NodeId x, int stride, int pad) {
    NodeId w = p[cursor++];
    NodeId b = p[cursor++];
    return t.leaky_relu(t.conv2d(x, w, b, stride, pad), kLeaky);
}

// Global average pool + 1x1 conv head + sigmoid -> [N,1].
NodeId pooled_sigmoid_head(Tape& t, const std::vector<NodeId>& p, std::size_t& cursor,
                           NodeId feats) {
    const Tensor& fv = t.value(feats);
    const int N = fv.dim(0), C = fv.dim(1);
    NodeId pooled = t.reshape(t.global_avg_pool(feats), {N, C, 1, 1});
    NodeId w = p[cursor++];
    NodeId b = p[cursor++];
    NodeId logit = t.conv2d(pooled, w, b, 1, 0);
    return t.sigmoid(t.reshape(logit, {N, 1}));
}

void check_unit_range(const Tensor& x, const char* what, bool open_top) {
    for (int64_t i = 0; i < x.numel(); ++i) {
        const double v = x[i];
        const bool ok = v >= 0.0 && (open_top ? v < 1.0 : v <= 1.0);
        if (!ok)
            throw DomainError(std::string(what) + ": value " + std::to_string(v) +
                              (open_top ? " outside [0,1)" : " outside [0,1]"));
    }
}

} // namespace

// ---------------------------------------------------------------------------
// AttentionModule

AttentionModule::AttentionModule(ParamStore& store, const std::string& prefix,
                                 int channels, Rng& rng)
    : channels_(channels), mid_(std::max(channels / 2, 4)) {
    add_conv(store, prefix + ".c1", rng, mid_, channels_, 1);
    add_conv(store, prefix + ".c2", rng, 1, mid_, 1);
}

AttentionModule::Out AttentionModule::forward_with(Tape& t, const std::vector<NodeId>& p,
                                                   std::size_t& cursor, NodeId feats) const {
    NodeId h = conv_leaky(t, p, cursor, feats, 1, 0);
    NodeId w1 = p[cursor++];
    NodeId b1 = p[cursor++];
    NodeId logits = t.conv2d(h, w1, b1, 1, 0); // [N,1,h,w]
    NodeId weights = t.spatial_softmax(logits);
    NodeId gated = t.mul(feats, weights);
    return {weights, gated};
}

// ---------------------------------------------------------------------------
// Segmentor

namespace {
// Width-1 encoder plan; index of 1 marks a stride-2 layer.
constexpr int kEncChannels[10] = {8, 8, 16, 16, 16, 32, 32, 32, 32, 32};
constexpr bool kEncStride2[10] = {false, false, true, false, false, true, false, false, true, false};
constexpr int kDecChannels[10] = {32, 32, 32, 32, 32, 16, 16, 16, 8, 8};
constexpr bool kDecUpsample[10] = {false, true, false, false, true, false, false, true, false, false};
} // namespace

Segmentor::Segmentor(int width, int in_h, int in_w, uint64_t seed)
    : width_(width), in_h_(in_h), in_w_(in_w) {
    if (width < 1)
        throw ParameterError("segmentor: width must be >= 1");
    if (in_h % 8 != 0 || in_w % 8 != 0 || in_h < 8 || in_w < 8)
        throw ConfigError("segmentor: input " + std::to_string(in_h) + "x" +
                          std::to_string(in_w) + " must be divisible by the downsampling factor 8");
    Rng rng(seed);
    int ch = 1;
    for (int i = 0; i < 10; ++i) {
        const int out = kEncChannels[i] * width;
        add_conv(store_, "s.enc" + std::to_string(i), rng, out, ch, 3);
        ch = out;
    }
    for (int i = 0; i < 4; ++i)
        add_conv(store_, "s.bneck" + std::to_string(i), rng, ch, ch, 3);
    for (int i = 0; i < 10; ++i) {
        const int out = kDecChannels[i] * width;
        add_conv(store_, "s.dec" + std::to_string(i), rng, out, ch, 3);
        ch = out;
    }
    add_conv(store_, "s.head", rng, 1, ch, 1);
}

Segmentor::Out Segmentor::forward_with(Tape& t, const std::vector<NodeId>& p,
                                       NodeId batch) const {
    const Tensor& x = t.value(batch);
    if (x.rank() != 4 || x.dim(1) != 1 || x.dim(2) != in_h_ || x.dim(3) != in_w_)
        throw DimensionError("segmentor: batch must be [N,1," + std::to_string(in_h_) + "," +
                             std::to_string(in_w_) + "], got " + shape_str(x.shape));
    std::size_t cursor = 0;
    NodeId h = batch;
    for (int i = 0; i < 10; ++i)
        h = conv_leaky(t, p, cursor, h, kEncStride2[i] ? 2 : 1, 1);
    for (int i = 0; i < 4; ++i)
        h = conv_leaky(t, p, cursor, h, 1, 1);
    NodeId bottleneck = h;
    for (int i = 0; i < 10; ++i) {
        if (kDecUpsample[i]) h = t.upsample_nearest(h, 2);
        h = conv_leaky(t, p, cursor, h, 1, 1);
    }
    NodeId w = p[cursor++];
    NodeId b = p[cursor++];
    NodeId prob = t.sigmoid(t.conv2d(h, w, b, 1, 0));
    return {prob, bottleneck};
}

Segmentor::Fwd Segmentor::forward(Tape& t, NodeId batch, bool track_grad) {
    std::vector<NodeId> p = add_param_leaves(t, params(), track_grad);
    Out out = forward_with(t, p, batch);
    return {out.prob, out.bottleneck, std::move(p)};
}

// ---------------------------------------------------------------------------
// SpatialDiscriminator

SpatialDiscriminator::SpatialDiscriminator(int width, int in_h, int in_w,
                                           bool use_attention, DsInput input_form,
                                           uint64_t seed)
    : width_(width), in_h_(in_h), in_w_(in_w), use_attention_(use_attention),
      input_form_(input_form) {
    if (width < 1)
        throw ParameterError("ds: width must be >= 1");
    if (in_h % 8 != 0 || in_w % 8 != 0 || in_h < 8 || in_w < 8)
        throw ConfigError("ds: input must be divisible by 8");
    Rng rng(seed);
    const int w8 = 8 * width, w16 = 16 * width, w32 = 32 * width;
    const int in_ch = input_form == DsInput::Product ? 1 : 2;
    add_conv(store_, "ds.mask0", rng, w8, in_ch, 3);
    add_conv(store_, "ds.mask1", rng, w16, w8, 3);
    add_conv(store_, "ds.mask2", rng, w32, w16, 3);
    add_conv(store_, "ds.mask3", rng, w32, w32, 3);
    if (use_attention_) {
        attention_ = AttentionModule(store_, "ds.att", w32, rng);
        for (int i = 0; i < 4; ++i)
            add_conv(store_, "ds.attbr" + std::to_string(i), rng, w32, w32, 3);
    }
    const int fused = use_attention_ ? 2 * w32 : w32;
    add_conv(store_, "ds.shared0", rng, w32, fused, 3);
    add_conv(store_, "ds.shared1", rng, w16, w32, 3);
    add_conv(store_, "ds.shared2", rng, w16, w16, 3);
    add_conv(store_, "ds.head", rng, 1, w16, 1);
}

std::vector<Param*> SpatialDiscriminator::params() { return store_.ptrs(); }

NodeId SpatialDiscriminator::forward_with(Tape& t, const std::vector<NodeId>& p,
                                          NodeId image, NodeId mask,
                                          NodeId bottleneck) const {
    const Tensor& iv = t.value(image);
    const Tensor& mv = t.value(mask);
    if (iv.rank() != 4 || iv.dim(1) != 1 || iv.dim(2) != in_h_ || iv.dim(3) != in_w_)
        throw DimensionError("ds: image must be [N,1,H,W], got " + shape_str(iv.shape));
    if (!iv.same_shape(mv))
        throw DimensionError("ds: image " + shape_str(iv.shape) + " vs mask " + shape_str(mv.shape));
    check_unit_range(mv, "ds mask", false);

    std::size_t cursor = 0;
    NodeId object = input_form_ == DsInput::Product ? t.mul(image, mask)
                                                    : t.concat_channels(image, mask);
    NodeId h = object;
    h = conv_leaky(t, p, cursor, h, 2, 1);
    h = conv_leaky(t, p, cursor, h, 2, 1);
    h = conv_leaky(t, p, cursor, h, 2, 1);
    h = conv_leaky(t, p, cursor, h, 1, 1);

    NodeId fused = h;
    if (use_attention_) {
        const Tensor& bv = t.value(bottleneck);
        if (bv.rank() != 4 || bv.dim(1) != 32 * width_ || bv.dim(2) != in_h_ / 8 ||
            bv.dim(3) != in_w_ / 8)
            throw DimensionError("ds: bottleneck must be [N," + std::to_string(32 * width_) +
                                 "," + std::to_string(in_h_ / 8) + "," +
                                 std::to_string(in_w_ / 8) + "], got " + shape_str(bv.shape));
        AttentionModule::Out att = attention_.forward_with(t, p, cursor, bottleneck);
        NodeId a = att.gated;
        for (int i = 0; i < 4; ++i)
            a = conv_leaky(t, p, cursor, a, 1, 1);
        fused = t.concat_channels(h, a);
    }

    NodeId s = fused;
    s = conv_leaky(t, p, cursor, s, 1, 1);
    s = conv_leaky(t, p, cursor, s, 1, 1);
    s = conv_leaky(t, p, cursor, s, 1, 1);
    return pooled_sigmoid_head(t, p, cursor, s);
}

SpatialDiscriminator::Fwd SpatialDiscriminator::forward(Tape& t, NodeId image, NodeId mask,
                                                        NodeId bottleneck, bool track_grad) {
    std::vector<NodeId> p = add_param_leaves(t, params(), track_grad);
    NodeId score = forward_with(t, p, image, mask, bottleneck);
    return {score, std::move(p)};
}

// ---------------------------------------------------------------------------
// ProjectiveDiscriminator

ProjectiveDiscriminator::ProjectiveDiscriminator(int width, int in_h, int in_w,
                                                 DpInput input_form, uint64_t seed)
    : width_(width), in_h_(in_h), in_w_(in_w), input_form_(input_form) {
    if (width < 1)
        throw ParameterError("dp: width must be >= 1");
    if (in_h % 8 != 0 || in_w % 8 != 0 || in_h < 8 || in_w < 8)
        throw ConfigError("dp: input must be divisible by 8");
    Rng rng(seed);
    const int w8 = 8 * width, w16 = 16 * width, w32 = 32 * width;
    const int in_ch = input_form == DpInput::Pair ? 2 : 1;
    add_conv(store_, "dp.conv0", rng, w8, in_ch, 3);
    add_conv(store_, "dp.conv1", rng, w16, w8, 3);
    add_conv(store_, "dp.conv2", rng, w32, w16, 3);
    add_conv(store_, "dp.conv3", rng, w32, w32, 3);
    add_conv(store_, "dp.head", rng, 1, w32, 1);
}

NodeId ProjectiveDiscriminator::forward_with(Tape& t, const std::vector<NodeId>& p,
                                             NodeId proj_image, NodeId proj_mask) const {
    const Tensor& pi = t.value(proj_image);
    const Tensor& pm = t.value(proj_mask);
    if (pi.rank() != 2 || pi.dim(0) != in_h_ || pi.dim(1) != in_w_)
        throw DimensionError("dp: projection must be [" + std::to_string(in_h_) + "," +
                             std::to_string(in_w_) + "], got " + shape_str(pi.shape));
    if (!pi.same_shape(pm))
        throw DimensionError("dp: projections " + shape_str(pi.shape) + " vs " +
                             shape_str(pm.shape));
    check_unit_range(pi, "dp projected image", true);
    check_unit_range(pm, "dp projected mask", true);

    NodeId ci = t.reshape(proj_image, {1, 1, in_h_, in_w_});
    NodeId cm = t.reshape(proj_mask, {1, 1, in_h_, in_w_});
    NodeId x = input_form_ == DpInput::Pair ? t.concat_channels(ci, cm) : cm;

    std::size_t cursor = 0;
    NodeId h = x;
    h = conv_leaky(t, p, cursor, h, 2, 1);
    h = conv_leaky(t, p, cursor, h, 2, 1);
    h = conv_leaky(t, p, cursor, h, 2, 1);
    h = conv_leaky(t, p, cursor, h, 1, 1);
    return pooled_sigmoid_head(t, p, cursor, h);
}

ProjectiveDiscriminator::Fwd ProjectiveDiscriminator::forward(Tape& t, NodeId proj_image,
                                                              NodeId proj_mask,
                                                              bool track_grad) {
    std::vector<NodeId> p = add_param_leaves(t, params(), track_grad);
    NodeId score = forward_with(t, p, proj_image, proj_mask);
    return {score, std::move(p)};
}

} // namespace pan
