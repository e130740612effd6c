#pragma once

// Shared across the training-layer test binaries.

#include <cmath>
#include <cstring>
#include <numeric>
#include <vector>

#include "pan/data.hpp"
#include "pan/kernels.hpp"
#include "pan/models.hpp"
#include "pan/rng.hpp"
#include "pan/tape.hpp"
#include "pan/training.hpp"

// Bit-level equality (memcmp, so signed zeros and NaN payloads count).
inline bool params_bitwise_equal(std::vector<pan::Param*> a, std::vector<pan::Param*> b,
                                 bool with_moments = true) {
    if (a.size() != b.size()) return false;
    auto same = [](const pan::Tensor& x, const pan::Tensor& y) {
        return x.shape == y.shape &&
               std::memcmp(x.data.data(), y.data.data(), x.data.size() * sizeof(double)) == 0;
    };
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i]->name != b[i]->name) return false;
        if (!same(a[i]->value, b[i]->value)) return false;
        if (with_moments && (!same(a[i]->m, b[i]->m) || !same(a[i]->v, b[i]->v))) return false;
    }
    return true;
}

// Independent plain-supervised trainer: its own volume order, slice
// batching and bias-corrected moment updates, sharing only the fused adam
// kernel (whose vector backend may reassociate differently from any plain
// loop) and the model forward. Pins the production loop's degenerate
// configuration — both discriminators inert — bitwise.
inline pan::Segmentor reference_supervised(const pan::TrainingConfig& cfg,
                                           const std::vector<pan::Sample>& train_set,
                                           int epochs, double w_pos) {
    using namespace pan;
    Segmentor s(cfg.width, train_set.front().volume.h(), train_set.front().volume.w(),
                derive_seed(cfg.seed, "segmentor"));
    Rng order_rng(derive_seed(cfg.seed, "order"));
    auto params = s.params();
    int64_t step = 0;
    for (int e = 0; e < epochs; ++e) {
        std::vector<int> order(train_set.size());
        std::iota(order.begin(), order.end(), 0);
        order_rng.shuffle(order.begin(), order.end());
        for (int vi : order) {
            auto batches = slice_batches(
                train_set[static_cast<std::size_t>(vi)], cfg.batch_size,
                cfg.shuffle_slices ? SliceOrder::Shuffled : SliceOrder::Sequential,
                derive_seed(cfg.seed, "slices", static_cast<uint64_t>(e),
                            static_cast<uint64_t>(vi)));
            for (const SliceBatch& b : batches) {
                for (int k = 0; k < cfg.s_steps; ++k) {
                    Tape t;
                    auto leaves = add_param_leaves(t, params, true);
                    auto out = s.forward_with(t, leaves, t.constant(b.images));
                    const NodeId bce =
                        t.weighted_bce(out.prob, b.masks, w_pos, cfg.weights.epsilon);
                    t.backward(bce);
                    ++step;
                    const double bc1 =
                        1.0 / (1.0 - std::pow(cfg.adam_beta1, static_cast<double>(step)));
                    const double bc2 =
                        1.0 / (1.0 - std::pow(cfg.adam_beta2, static_cast<double>(step)));
                    for (std::size_t i = 0; i < params.size(); ++i) {
                        Param& p = *params[i];
                        const Tensor& g = t.grad(leaves[i]);
                        kernels().adam_step(static_cast<int>(p.value.numel()),
                                            p.value.data.data(), p.m.data.data(),
                                            p.v.data.data(), g.data.data(), cfg.lr_s,
                                            cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, bc1,
                                            bc2);
                    }
                }
            }
        }
    }
    return s;
}
