#include "pan/projection.hpp"

#include <cmath>

#include "pan/errors.hpp"

namespace pan {

Projection project_volume(const Tensor& hwd) {
    if (hwd.rank() != 3)
        throw DimensionError("project_volume: expected [H,W,D], got " + shape_str(hwd.shape));
    const int H = hwd.dim(0), W = hwd.dim(1), D = hwd.dim(2);
    Projection out;
    out.image = Tensor({H, W});
    out.src_h = H;
    out.src_w = W;
    out.src_d = D;
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j) {
            double s = 0.0;
            const double* col = &hwd.at(i, j, 0);
            for (int k = 0; k < D; ++k) {
                if (col[k] < 0.0)
                    throw DomainError("project_volume: negative voxel " + std::to_string(col[k]));
                s += col[k];
            }
            out.image.at(i, j) = -std::expm1(-s);
        }
    return out;
}

Tensor hwd_from_dhw(const Tensor& dhw) {
    if (dhw.rank() != 3)
        throw DimensionError("hwd_from_dhw: expected [D,H,W], got " + shape_str(dhw.shape));
    const int D = dhw.dim(0), H = dhw.dim(1), W = dhw.dim(2);
    Tensor out({H, W, D});
    for (int k = 0; k < D; ++k)
        for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j)
                out.at(i, j, k) = dhw.at(k, i, j);
    return out;
}

Tensor dhw_from_hwd(const Tensor& hwd) {
    if (hwd.rank() != 3)
        throw DimensionError("dhw_from_hwd: expected [H,W,D], got " + shape_str(hwd.shape));
    const int H = hwd.dim(0), W = hwd.dim(1), D = hwd.dim(2);
    Tensor out({D, H, W});
    for (int i = 0; i < H; ++i)
        for (int j = 0; j < W; ++j)
            for (int k = 0; k < D; ++k)
                out.at(k, i, j) = hwd.at(i, j, k);
    return out;
}

PredictionStack project_prediction_stack_with(Tape& t, const Segmentor& s,
                                              const std::vector<NodeId>& p,
                                              const Tensor& volume_dhw) {
    if (volume_dhw.rank() != 3)
        throw DimensionError("project_prediction_stack: expected [D,H,W], got " +
                             shape_str(volume_dhw.shape));
    const int D = volume_dhw.dim(0), H = volume_dhw.dim(1), W = volume_dhw.dim(2);
    if (H != s.in_h() || W != s.in_w())
        throw DimensionError("project_prediction_stack: slices " + std::to_string(H) + "x" +
                             std::to_string(W) + " vs segmentor input " +
                             std::to_string(s.in_h()) + "x" + std::to_string(s.in_w()));
    // The D slices form one batch; the slab layout makes this a reshape.
    Tensor batch({D, 1, H, W}, volume_dhw.data);
    NodeId input = t.constant(std::move(batch));
    Segmentor::Out out = s.forward_with(t, p, input);
    NodeId volume = t.stack_hwd(out.prob);
    NodeId projection = t.project(volume);
    return {out.prob, volume, projection, p};
}

PredictionStack project_prediction_stack(Tape& t, Segmentor& s,
                                         const Tensor& volume_dhw,
                                         bool track_segmentor_grad) {
    std::vector<NodeId> p = add_param_leaves(t, s.params(), track_segmentor_grad);
    return project_prediction_stack_with(t, s, p, volume_dhw);
}

} // namespace pan
