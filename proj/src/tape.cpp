#include "pan/tape.hpp"

#include <cmath>
#include <memory>
#include <utility>

#include "pan/errors.hpp"
#include "pan/kernels.hpp"

namespace pan {
namespace {

void require(bool ok, const char* op, const std::string& what) {
    if (!ok)
        throw DimensionError(std::string(op) + ": " + what);
}

} // namespace

NodeId Tape::push(Tensor value, bool needs_grad, std::function<void(Tape&)> back) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    if (needs_grad)
        n.grad = Tensor::zeros(n.value.shape);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
}

NodeId Tape::check(NodeId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size())
        throw ContractError("tape: node id " + std::to_string(id) + " out of range");
    return id;
}

double* Tape::gptr(NodeId id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    return n.needs_grad ? n.grad.data.data() : nullptr;
}

const Tensor& Tape::grad(NodeId id) const {
    const Node& n = nodes_[static_cast<std::size_t>(check(id))];
    if (!n.needs_grad)
        throw ContractError("tape: node does not track gradient");
    return n.grad;
}

NodeId Tape::leaf(Tensor value, bool needs_grad) {
    return push(std::move(value), needs_grad, nullptr);
}

NodeId Tape::conv2d(NodeId input, NodeId kernel, NodeId bias, int stride, int padding) {
    check(input); check(kernel); check(bias);
    const Tensor& x = value(input);
    const Tensor& w = value(kernel);
    const Tensor& b = value(bias);
    require(x.rank() == 4, "conv2d", "input must be [N,C,H,W], got " + shape_str(x.shape));
    require(w.rank() == 4, "conv2d", "kernel must be [F,C,kh,kw], got " + shape_str(w.shape));
    require(b.rank() == 1 && b.dim(0) == w.dim(0), "conv2d",
            "bias " + shape_str(b.shape) + " vs kernel " + shape_str(w.shape));
    require(x.dim(1) == w.dim(1), "conv2d",
            "input channels " + shape_str(x.shape) + " vs kernel " + shape_str(w.shape));
    if (stride < 1 || padding < 0)
        throw ParameterError("conv2d: stride must be >= 1 and padding >= 0");
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int F = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    const int Hp = H + 2 * padding, Wp = W + 2 * padding;
    require(kh <= Hp && kw <= Wp, "conv2d", "kernel exceeds padded input");
    const int Ho = (Hp - kh) / stride + 1;
    const int Wo = (Wp - kw) / stride + 1;

    // Padded copy kept alive for backward; trivial at these sizes.
    auto xpad = std::make_shared<Tensor>(Shape{N, C, Hp, Wp});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int h = 0; h < H; ++h) {
                const double* src = &x.at(n, c, h, 0);
                double* dst = &xpad->at(n, c, h + padding, padding);
                for (int col = 0; col < W; ++col) dst[col] = src[col];
            }

    const KernelTable& k = kernels();
    Tensor out(Shape{N, F, Ho, Wo});
    const int64_t plane = static_cast<int64_t>(Ho) * Wo;
    for (int n = 0; n < N; ++n)
        for (int f = 0; f < F; ++f) {
            double* op = &out.at(n, f, 0, 0);
            const double bv = b[f];
            for (int64_t i = 0; i < plane; ++i) op[i] = bv;
            for (int c = 0; c < C; ++c)
                for (int ki = 0; ki < kh; ++ki)
                    for (int kj = 0; kj < kw; ++kj)
                        k.axpy2d(Ho, Wo, w.at(f, c, ki, kj),
                                 &xpad->at(n, c, ki, kj), static_cast<std::ptrdiff_t>(stride) * Wp, stride,
                                 op, Wo, 1);
        }

    bool ng = tracks_grad(input) || tracks_grad(kernel) || tracks_grad(bias);
    NodeId out_id = push(std::move(out), ng, nullptr);
    if (!ng) return out_id;

    nodes_[out_id].back = [=](Tape& t) {
        const Tensor& g = t.nodes_[out_id].grad;
        const Tensor& wv = t.value(kernel);
        const KernelTable& kt = kernels();
        const int64_t gplane = static_cast<int64_t>(Ho) * Wo;
        if (double* gb = t.gptr(bias)) {
            for (int n = 0; n < N; ++n)
                for (int f = 0; f < F; ++f)
                    gb[f] += kt.vsum(static_cast<int>(gplane), &g.at(n, f, 0, 0));
        }
        if (double* gw = t.gptr(kernel)) {
            for (int f = 0; f < F; ++f)
                for (int c = 0; c < C; ++c)
                    for (int ki = 0; ki < kh; ++ki)
                        for (int kj = 0; kj < kw; ++kj) {
                            double acc = 0.0;
                            for (int n = 0; n < N; ++n)
                                acc += kt.dot2d(Ho, Wo,
                                                &g.at(n, f, 0, 0), Wo, 1,
                                                &xpad->at(n, c, ki, kj),
                                                static_cast<std::ptrdiff_t>(stride) * Wp, stride);
                            gw[((static_cast<int64_t>(f) * C + c) * kh + ki) * kw + kj] += acc;
                        }
        }
        if (t.gptr(input) != nullptr) {
            Tensor gxpad(Shape{N, C, Hp, Wp});
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c)
                    for (int f = 0; f < F; ++f)
                        for (int ki = 0; ki < kh; ++ki)
                            for (int kj = 0; kj < kw; ++kj)
                                kt.axpy2d(Ho, Wo, wv.at(f, c, ki, kj),
                                          &g.at(n, f, 0, 0), Wo, 1,
                                          &gxpad.at(n, c, ki, kj),
                                          static_cast<std::ptrdiff_t>(stride) * Wp, stride);
            Tensor& gx = t.nodes_[input].grad;
            for (int n = 0; n < N; ++n)
                for (int c = 0; c < C; ++c)
                    for (int h = 0; h < H; ++h) {
                        const double* src = &gxpad.at(n, c, h + padding, padding);
                        double* dst = &gx.at(n, c, h, 0);
                        for (int col = 0; col < W; ++col) dst[col] += src[col];
                    }
        }
    };
    return out_id;
}

NodeId Tape::upsample_nearest(NodeId input, int factor) {
    check(input);
    if (factor < 1)
        throw ParameterError("upsample_nearest: factor must be >= 1");
    const Tensor& x = value(input);
    require(x.rank() == 4, "upsample_nearest", "input must be [N,C,H,W], got " + shape_str(x.shape));
    const int N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    Tensor out(Shape{N, C, H * factor, W * factor});
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            for (int h = 0; h < H * factor; ++h)
                for (int w = 0; w < W * factor; ++w)
                    out.at(n, c, h, w) = x.at(n, c, h / factor, w / factor);
    bool ng = tracks_grad(input);
    NodeId out_id = push(std::move(out), ng, nullptr);
    if (!ng) return out_id;
    nodes_[out_id].back = [=](Tape& t) {
        const Tensor& g = t.nodes_[out_id].grad;
        Tensor& gx = t.nodes_[input].grad;
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c)
                for (int h = 0; h < H * factor; ++h)
                    for (int w = 0; w < W * factor; ++w)
                        gx.at(n, c, h / factor, w / factor) += g.at(n, c, h, w);
    };
    return out_id;
}

NodeId Tape::leaky_relu(NodeId input, double alpha) {
    check(input);
    if (!(alpha >= 0.0 && alpha < 1.0))
        throw ParameterError("leaky_relu: alpha must be in [0,1)");
    const Tensor& x = value(input);
    const int n = static_cast<int>(x.numel());
    Tensor out(x.shape);
    kernels().leaky_fwd(n, alpha, x.data.data(), out.data.data());
    bool ng = tracks_grad(input);
    NodeId out_id = push(std::move(out), ng, nullptr);
    if (!ng) return out_id;
    nodes_[out_id].back = [=](Tape& t) {
        if (double* gx = t.gptr(input))
            kernels().leaky_bwd(n, alpha, t.value(input).data.data(),
                                t.gsrc(out_id), gx);
    };
    return out_id;
}

NodeId Tape::sigmoid(NodeId input) {
    check(input);
    const Tensor& x = value(input);
    const int n = static_cast<int>(x.numel());
    Tensor out(x.shape);
    kernels().sigmoid_fwd(n, x.data.data(), out.data.data());
    bool ng = tracks_grad(input);
    NodeId out_id = push(std::move(out), ng, nullptr);
    if (!ng) return out_id;
    nodes_[out_id].back = [=](Tape& t) {
        if (double* gx = t.gptr(input))
            kernels().sigmoid_bwd(n, t.value(out_id).data.data(),
                                  t.gsrc(out_id), gx);
    };
    return out_id;
}

NodeId Tape::spatial_softmax(NodeId input) {
    check(input);
    const Tensor& x = value(input);
    require(x.rank() == 4 && x.dim(1) == 1, "spatial_softmax",
            "input must be [N,1,h,w], got " + shape_str(x.shape));
    const int N = x.dim(0);
    const int64_t plane = static_cast<int64_t>(x.dim(2)) * x.dim(3);
    Tensor out(x.shape);
    for (int n = 0; n < N; ++n) {
        const double* xp = x.data.data() + n * plane;
        double* op = out.data.data() + n * plane;
        double m = xp[0];
        for (int64_t i = 1; i < plane; ++i) m = std::max(m, xp[i]);
        double s = 0.0;
        for (int64_t i = 0; i < plane; ++i) { op[i] = std::exp(xp[i] - m); s += op[i]; }
        for (int64_t i = 0; i < plane; ++i) op[i] /= s;
    }
    bool ng = tracks_grad(input);
    NodeId out_id = push(std::move(out), ng, nullptr);
    if (!ng) return out_id;
    nodes_[out_id].back = [=](Tape& t) {
        double* gx = t.gptr(input);
        if (gx == nullptr) return;
        const Tensor& y = t.value(out_id);
        const Tensor& g = t.nodes_[out_id].grad;
        for (int n = 0; n < N; ++n) {
            const double* yp = y.data.data() + n * plane;
            const double* gp = g.data.data() + n * plane;
            double* gxp = gx + n * plane;
            double d = 0.0;
            for (int64_t i = 0; i < plane; ++i) d += gp[i] * yp[i];
            for (int64_t i = 0; i < plane; ++i) gxp[i] += yp[i] * (gp[i] - d);
        }
    };
    return out_id;
}

namespace {

// add/mul shape contract: equal shapes, or b = [N,1,h,w] against a = [N,c,h,w].
bool gate_broadcast(const Tensor& a, const Tensor& b) {
    return a.rank() == 4 && b.rank() == 4 && a.dim(0) == b.dim(0) && b.dim(1) == 1 &&
           a.dim(2) == b.dim(2) && a.dim(3) == b.dim(3) && a.dim(1) != 1;
}

} // namespace

NodeId Tape::add(NodeId a, NodeId b) {
    check(a); check(b);
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    const bool bc = !av.same_shape(bv);
    if (bc && !gate_broadcast(av, bv))
        throw DimensionError("add: shapes " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
    const KernelTable& k = kernels();
    Tensor out(av.shape);
    if (!bc) {
        k.vadd(static_cast<int>(av.numel()), av.data.data(), bv.data.data(), out.data.data());
    } else {
        const int N = av.dim(0), C = av.dim(1);
        const int64_t plane = static_cast<int64_t>(av.dim(2)) * av.dim(3);
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c)
                k.vadd(static_cast<int>(plane), &av.at(n, c, 0, 0), &bv.at(n, 0, 0, 0),
                       &out.at(n, c, 0, 0));
    }
    bool ng = tracks_grad(a) || tracks_grad(b);
    NodeId out_id = push(std::move(out), ng, nullptr);
    if (!ng) return out_id;
    nodes_[out_id].back = [=](Tape& t) {
        const Tensor& g = t.nodes_[out_id].grad;
        const KernelTable& kt = kernels();
        if (double* ga = t.gptr(a))
            kt.vaxpy(static_cast<int>(g.numel()), 1.0, g.data.data(), ga);
        if (double* gb = t.gptr(b)) {
            if (!bc) {
                kt.vaxpy(static_cast<int>(g.numel()), 1.0, g.data.data(), gb);
            } else {
                const Tensor& av2 = t.value(a);
                const int N = av2.dim(0), C = av2.dim(1);
                const int64_t plane = static_cast<int64_t>(av2.dim(2)) * av2.dim(3);
                for (int n = 0; n < N; ++n)
                    for (int c = 0; c < C; ++c)
                        kt.vaxpy(static_cast<int>(plane), 1.0, &g.at(n, c, 0, 0), gb + n * plane);
            }
        }
    };
    return out_id;
}

NodeId Tape::mul(NodeId a, NodeId b) {
    check(a); check(b);
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    const bool bc = !av.same_shape(bv);
    if (bc && !gate_broadcast(av, bv))
        throw DimensionError("mul: shapes " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
    const KernelTable& k = kernels();
    Tensor out(av.shape);
    if (!bc) {
        k.vmul(static_cast<int>(av.numel()), av.data.data(), bv.data.data(), out.data.data());
    } else {
        const int N = av.dim(0), C = av.dim(1);
        const int64_t plane = static_cast<int64_t>(av.dim(2)) * av.dim(3);
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c)
                k.vmul(static_cast<int>(plane), &av.at(n, c, 0, 0), &bv.at(n, 0, 0, 0),
                       &out.at(n, c, 0, 0));
    }
    bool ng = tracks_grad(a) || tracks_grad(b);
    NodeId out_id = push(std::move(out), ng, nullptr);
    if (!ng) return out_id;
    nodes_[out_id].back = [=](Tape& t) {
        const Tensor& g = t.nodes_[out_id].grad;
        const Tensor& av2 = t.value(a);
        const Tensor& bv2 = t.value(b);
        const KernelTable& kt = kernels();
        if (!bc) {
            if (double* ga = t.gptr(a))
                kt.vmul_acc(static_cast<int>(g.numel()), g.data.data(), bv2.data.data(), ga);
            if (double* gb = t.gptr(b))
                kt.vmul_acc(static_cast<int>(g.numel()), g.data.data(), av2.data.data(), gb);
        } else {
            const int N = av2.dim(0), C = av2.dim(1);
            const int64_t plane = static_cast<int64_t>(av2.dim(2)) * av2.dim(3);
            if (double* ga = t.gptr(a))
                for (int n = 0; n < N; ++n)
                    for (int c = 0; c < C; ++c)
                        kt.vmul_acc(static_cast<int>(plane), &g.at(n, c, 0, 0),
                                    &bv2.at(n, 0, 0, 0), ga + (static_cast<int64_t>(n) * C + c) * plane);
            if (double* gb = t.gptr(b))
                for (int n = 0; n < N; ++n)
                    for (int c = 0; c < C; ++c)
                        kt.vmul_acc(static_cast<int>(plane), &g.at(n, c, 0, 0),
                                    &av2.at(n, c, 0, 0), gb + n * plane);
        }
    };
    return out_id;
}

NodeId Tape::concat_channels(NodeId a, NodeId b) {
    check(a); check(b);
    const Tensor& av = value(a);
    const Tensor& bv = value(b);
    require(av.rank() == 4 && bv.rank() == 4 && av.dim(0) == bv.dim(0) &&
                av.dim(2) == bv.dim(2) && av.dim(3) == bv.dim(3),
            "concat_channels", "shapes " + shape_str(av.shape) + " vs " + shape_str(bv.shape));
    const int N = av.dim(0), Ca = av.dim(1), Cb = bv.dim(1);
    const int64_t plane = static_cast<int64_t>(av.dim(2)) * av.dim(3);
    Tensor out(Shape{N, Ca + Cb, av.dim(2), av.dim(3)});
    for (int n = 0; n < N; ++n) {
        double* dst = &out.at(n, 0, 0, 0);
        const double* sa = av.data.data() + static_cast<int64_t>(n) * Ca * plane;
        const double* sb = bv.data.data() + static_cast<int64_t>(n) * Cb * plane;
        for (int64_t i = 0; i < Ca * plane; ++i) dst[i] = sa[i];
        for (int64_t i = 0; i < Cb * plane; ++i) dst[Ca * plane + i] = sb[i];
    }
    bool ng = tracks_grad(a) || tracks_grad(b);
    NodeId out_id = push(std::move(out), ng, nullptr);
    if (!ng) return out_id;
    nodes_[out_id].back = [=](Tape& t) {
        const Tensor& g = t.nodes_[out_id].grad;
        for (int n = 0; n < N; ++n) {
            const double* src = g.data.data() + static_cast<int64_t>(n) * (Ca + Cb) * plane;
            if (double* ga = t.gptr(a))
                for (int64_t i = 0; i < Ca * plane; ++i)
                    ga[static_cast<int64_t>(n) * Ca * plane + i] += src[i];
            if (double* gb = t.gptr(b))
                for (int64_t i = 0; i < Cb * plane; ++i)
                    gb[static_cast<int64_t>(n) * Cb * plane + i] += src[Ca * plane + i];
        }
    };
    return out_id;
}

NodeId Tape::reshape(NodeId input, Shape shape) {
    check(input);
    const Tensor& x = value(input);
    if (shape_numel(shape) != x.numel())
        throw DimensionError("reshape: " + shape_str(x.shape) + " to " + shape_str(shape) +
                             " changes element count");
    Tensor out(std::move(shape), x.data);
    bool ng = tracks_grad(input);
    NodeId out_id = push(std::move(out), ng, nullptr);
    if (!ng) return out_id;
    nodes_[out_id].back = [=](Tape& t) {
        if (double* gx = t.gptr(input))
            kernels().vaxpy(static_cast<int>(t.value(out_id).numel()), 1.0,
                            t.gsrc(out_id), gx);
    };
    return out_id;
}

NodeId Tape::global_avg_pool(NodeId input) {
    check(input);
    const Tensor& x = value(input);
    require(x.rank() == 4, "global_avg_pool", "input must be [N,C,H,W], got " + shape_str(x.shape));
    const int N = x.dim(0), C = x.dim(1);
    const int64_t plane = static_cast<int64_t>(x.dim(2)) * x.dim(3);
    const double inv = 1.0 / static_cast<double>(plane);
    Tensor out(Shape{N, C});
    const KernelTable& k = kernels();
    for (int n = 0; n < N; ++n)
        for (int c = 0; c < C; ++c)
            out.at(n, c) = k.vsum(static_cast<int>(plane), &x.at(n, c, 0, 0)) * inv;
    bool ng = tracks_grad(input);
    NodeId out_id = push(std::move(out), ng, nullptr);
    if (!ng) return out_id;
    nodes_[out_id].back = [=](Tape& t) {
        double* gx = t.gptr(input);
        if (gx == nullptr) return;
        const Tensor& g = t.nodes_[out_id].grad;
        for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
                const double gv = g.at(n, c) * inv;
                double* p = gx + (static_cast<int64_t>(n) * C + c) * plane;
                for (int64_t i = 0; i < plane; ++i) p[i] += gv;
            }
    };
    return out_id;
}

NodeId Tape::stack_hwd(NodeId slices) {
    check(slices);
    const Tensor& x = value(slices);
    require(x.rank() == 4 && x.dim(1) == 1, "stack_hwd",
            "input must be [D,1,H,W], got " + shape_str(x.shape));
    const int D = x.dim(0), H = x.dim(2), W = x.dim(3);
    Tensor out(Shape{H, W, D});
    for (int k = 0; k < D; ++k)
        for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j)
                out.at(i, j, k) = x.at(k, 0, i, j);
    bool ng = tracks_grad(slices);
    NodeId out_id = push(std::move(out), ng, nullptr);
    if (!ng) return out_id;
    nodes_[out_id].back = [=](Tape& t) {
        double* gx = t.gptr(slices);
        if (gx == nullptr) return;
        const Tensor& g = t.nodes_[out_id].grad;
        for (int k = 0; k < D; ++k)
            for (int i = 0; i < H; ++i)
                for (int j = 0; j < W; ++j)
                    gx[(static_cast<int64_t>(k) * H + i) * W + j] += g.at(i, j, k);
    };
    return out_id;
}

NodeId Tape::project(NodeId volume) {
    check(volume);
    const Tensor& v = value(volume);
    require(v.rank() == 3, "project", "input must be [H,W,D], got " + shape_str(v.shape));
    for (int64_t i = 0; i < v.numel(); ++i)
        if (v[i] < 0.0)
            throw DomainError("project: negative voxel value " + std::to_string(v[i]));
    const int H = v.dim(0), W = v.dim(1), D = v.dim(2);
    const KernelTable& k = kernels();
    Tensor out(Shape{H, W});
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
            const double s = k.vsum(D, &v.at(i, j, 0));
            out.at(i, j) = -std::expm1(-s); // 1 - exp(-s), accurate near 0
        }
    bool ng = tracks_grad(volume);
    NodeId out_id = push(std::move(out), ng, nullptr);
    if (!ng) return out_id;
    nodes_[out_id].back = [=](Tape& t) {
        double* gv = t.gptr(volume);
        if (gv == nullptr) return;
        const Tensor& p = t.value(out_id);
        const Tensor& g = t.nodes_[out_id].grad;
        for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j) {
                const double gd = g.at(i, j) * (1.0 - p.at(i, j));
                double* col = gv + (static_cast<int64_t>(i) * W + j) * D;
                for (int kk = 0; kk < D; ++kk) col[kk] += gd;
            }
    };
    return out_id;
}

NodeId Tape::weighted_bce(NodeId pred, const Tensor& target, double w_pos, double eps) {
    check(pred);
    const Tensor& p = value(pred);
    if (!p.same_shape(target))
        throw DimensionError("weighted_bce: pred " + shape_str(p.shape) + " vs target " +
                             shape_str(target.shape));
    if (!(w_pos > 0.0))
        throw ParameterError("weighted_bce: w_pos must be positive");
    if (!(eps > 0.0 && eps <= 1e-3))
        throw ParameterError("weighted_bce: epsilon must be in (0, 1e-3]");
    for (int64_t i = 0; i < target.numel(); ++i)
        if (!(target[i] >= 0.0 && target[i] <= 1.0))
            throw DomainError("weighted_bce: target value " + std::to_string(target[i]) +
                              " outside [0,1]");
    const int64_t N = p.dim(0);
    const double lo = eps, hi = 1.0 - eps;
    double acc = 0.0;
    for (int64_t i = 0; i < p.numel(); ++i) {
        const double pc = std::min(std::max(p[i], lo), hi);
        const double y = target[i];
        acc -= w_pos * y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc);
    }
    Tensor out = Tensor::scalar(acc / static_cast<double>(N));

    bool ng = tracks_grad(pred);
    auto tgt = std::make_shared<Tensor>(target);
    NodeId out_id = push(std::move(out), ng, nullptr);
    if (!ng) return out_id;
    nodes_[out_id].back = [=](Tape& t) {
        double* gp = t.gptr(pred);
        if (gp == nullptr) return;
        const Tensor& pv = t.value(pred);
        const double gscale = t.nodes_[out_id].grad[0];
        const double invn = 1.0 / static_cast<double>(N);
        for (int64_t i = 0; i < pv.numel(); ++i) {
            const double x = pv[i];
            if (x <= lo || x >= hi) continue; // clamp active: flat region
            const double y = (*tgt)[i];
            gp[i] += gscale * invn * (-w_pos * y / x + (1.0 - y) / (1.0 - x));
        }
    };
    return out_id;
}

NodeId Tape::scale(NodeId input, double factor) {
    check(input);
    const Tensor& x = value(input);
    Tensor out(x.shape);
    for (int64_t i = 0; i < x.numel(); ++i) out[i] = factor * x[i];
    bool ng = tracks_grad(input);
    NodeId out_id = push(std::move(out), ng, nullptr);
    if (!ng) return out_id;
    nodes_[out_id].back = [=](Tape& t) {
        if (double* gx = t.gptr(input))
            kernels().vaxpy(static_cast<int>(t.value(input).numel()), factor,
                            t.gsrc(out_id), gx);
    };
    return out_id;
}

NodeId Tape::sum(NodeId input) {
    check(input);
    const Tensor& x = value(input);
    Tensor out = Tensor::scalar(kernels().vsum(static_cast<int>(x.numel()), x.data.data()));
    bool ng = tracks_grad(input);
    NodeId out_id = push(std::move(out), ng, nullptr);
    if (!ng) return out_id;
    nodes_[out_id].back = [=](Tape& t) {
        double* gx = t.gptr(input);
        if (gx == nullptr) return;
        const double g = t.nodes_[out_id].grad[0];
        const int64_t n = t.value(input).numel();
        for (int64_t i = 0; i < n; ++i) gx[i] += g;
    };
    return out_id;
}

void Tape::backward(NodeId loss) {
    check(loss);
    if (value(loss).numel() != 1)
        throw ContractError("backward: loss must be scalar, got " + shape_str(value(loss).shape));
    if (!nodes_[loss].needs_grad)
        throw ContractError("backward: loss does not depend on any gradient-tracking leaf");
    for (auto& n : nodes_)
        if (n.needs_grad) n.grad.fill(0.0);
    nodes_[loss].grad[0] = 1.0;
    for (NodeId id = loss; id >= 0; --id) {
        Node& n = nodes_[id];
        if (n.needs_grad && n.back)
            n.back(*this);
    }
}

} // namespace pan
