#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "pan/errors.hpp"
#include "pan/models.hpp"
#include "pan/rng.hpp"
#include "pan/tape.hpp"

using namespace pan;

namespace {

Tensor randt(Rng& rng, Shape s, double lo = 0.0, double hi = 1.0) {
    Tensor t(std::move(s));
    for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
    return t;
}

bool all_in_open_unit(const Tensor& t) {
    for (int64_t i = 0; i < t.numel(); ++i)
        if (!(t[i] > 0.0 && t[i] < 1.0)) return false;
    return true;
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) return false;
    for (int64_t i = 0; i < a.numel(); ++i)
        if (a[i] != b[i]) return false;
    return true;
}

// Parameter count from the channel plan alone, independent of how the
// networks assemble their stores.
int64_t conv_params(int out, int in, int k) { return int64_t(out) * in * k * k + out; }

int64_t segmentor_plan_count(int w) {
    const int enc[10] = {8, 8, 16, 16, 16, 32, 32, 32, 32, 32};
    const int dec[10] = {32, 32, 32, 32, 32, 16, 16, 16, 8, 8};
    int64_t total = 0;
    int in = 1;
    for (int c : enc) {
        total += conv_params(c * w, in, 3);
        in = c * w;
    }
    for (int i = 0; i < 4; ++i) total += conv_params(32 * w, 32 * w, 3);
    for (int c : dec) {
        total += conv_params(c * w, in, 3);
        in = c * w;
    }
    total += conv_params(1, in, 1);
    return total;
}

} // namespace

TEST_CASE("he_conv_init is seeded, f32-gridded, and fan-in scaled") {
    Rng a(42), b(42), c(43);
    Tensor w1 = he_conv_init(a, 16, 8, 3, 3);
    Tensor w2 = he_conv_init(b, 16, 8, 3, 3);
    Tensor w3 = he_conv_init(c, 16, 8, 3, 3);
    CHECK(bitwise_equal(w1, w2));
    CHECK_FALSE(bitwise_equal(w1, w3));
    Tensor q = w1;
    q.quantize_to_f32();
    CHECK(bitwise_equal(w1, q));
    // Sample std should sit near sqrt(2/fan_in); loose band, it is a draw.
    double fan_in = 8.0 * 3.0 * 3.0;
    double ss = 0.0;
    for (int64_t i = 0; i < w1.numel(); ++i) ss += w1[i] * w1[i];
    double sd = std::sqrt(ss / double(w1.numel()));
    CHECK(sd > 0.5 * std::sqrt(2.0 / fan_in));
    CHECK(sd < 1.5 * std::sqrt(2.0 / fan_in));
}

TEST_CASE("segmentor forward: shape and range contract at 32x32") {
    Segmentor s(1, 32, 32, 7);
    Rng rng(100);
    Tape t;
    NodeId batch = t.constant(randt(rng, {2, 1, 32, 32}));
    auto fwd = s.forward(t, batch, false);
    const Tensor& prob = t.value(fwd.prob);
    CHECK(prob.shape == Shape({2, 1, 32, 32}));
    CHECK(all_in_open_unit(prob));
    const Tensor& bn = t.value(fwd.bottleneck);
    CHECK(bn.shape == Shape({2, 32, 4, 4}));
    CHECK(bn.all_finite());
}

TEST_CASE("segmentor output shape equals input shape across widths and batch sizes") {
    for (int w : {1, 2}) {
        Segmentor s(w, 16, 16, 5);
        Rng rng(200 + w);
        for (int n = 1; n <= 8; ++n) {
            Tape t;
            auto fwd = s.forward(t, t.constant(randt(rng, {n, 1, 16, 16})), false);
            CHECK(t.value(fwd.prob).shape == Shape({n, 1, 16, 16}));
            CHECK(t.value(fwd.bottleneck).shape == Shape({n, 32 * w, 2, 2}));
            CHECK(all_in_open_unit(t.value(fwd.prob)));
        }
    }
}

TEST_CASE("segmentor initialization is deterministic in the seed") {
    Segmentor a(1, 16, 16, 77), b(1, 16, 16, 77), c(1, 16, 16, 78);
    auto pa = a.params(), pb = b.params(), pc = c.params();
    REQUIRE(pa.size() == pb.size());
    bool all_same = true, any_diff_seed = false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        all_same = all_same && bitwise_equal(pa[i]->value, pb[i]->value);
        CHECK(pa[i]->name == pb[i]->name);
        if (!bitwise_equal(pa[i]->value, pc[i]->value)) any_diff_seed = true;
    }
    CHECK(all_same);
    CHECK(any_diff_seed);
}

TEST_CASE("segmentor parameter count matches the layer-arithmetic plan") {
    Segmentor s1(1, 32, 32, 7);
    CHECK(s1.param_count() == segmentor_plan_count(1));
    // Frozen regression constant for the width-1 default.
    CHECK(s1.param_count() == 142353);
    Segmentor s2(2, 32, 32, 7);
    CHECK(s2.param_count() == segmentor_plan_count(2));
    CHECK(s2.param_count() == 568097);
}

TEST_CASE("segmentor forward: zero input gives finite output in (0,1)") {
    Segmentor s(1, 16, 16, 9);
    Tape t;
    auto fwd = s.forward(t, t.constant(Tensor::zeros({1, 1, 16, 16})), false);
    CHECK(all_in_open_unit(t.value(fwd.prob)));
}

TEST_CASE("segmentor forward: identical samples in a batch give identical outputs") {
    Segmentor s(1, 16, 16, 9);
    Rng rng(300);
    Tensor slice = randt(rng, {1, 1, 16, 16});
    Tensor batch({2, 1, 16, 16});
    for (int64_t i = 0; i < slice.numel(); ++i) {
        batch[i] = slice[i];
        batch[slice.numel() + i] = slice[i];
    }
    Tape t;
    auto fwd = s.forward(t, t.constant(batch), false);
    const Tensor& prob = t.value(fwd.prob);
    for (int64_t i = 0; i < slice.numel(); ++i) CHECK(prob[i] == prob[slice.numel() + i]);

    // And the batch forward agrees with the single-sample forward bitwise.
    Tape t1;
    auto one = s.forward(t1, t1.constant(slice), false);
    const Tensor& p1 = t1.value(one.prob);
    for (int64_t i = 0; i < slice.numel(); ++i) CHECK(prob[i] == p1[i]);
}

TEST_CASE("segmentor rejects bad construction and bad batches") {
    CHECK_THROWS_AS(Segmentor(0, 16, 16, 1), ParameterError);
    CHECK_THROWS_AS(Segmentor(1, 12, 16, 1), ConfigError); // not divisible by 8
    CHECK_THROWS_AS(Segmentor(1, 16, 20, 1), ConfigError);
    Segmentor s(1, 16, 16, 1);
    Tape t;
    CHECK_THROWS_AS(s.forward(t, t.constant(Tensor::zeros({1, 1, 16, 24})), false),
                    DimensionError);
    CHECK_THROWS_AS(s.forward(t, t.constant(Tensor::zeros({1, 2, 16, 16})), false),
                    DimensionError);
}

TEST_CASE("attention: constant features give uniform weights") {
    ParamStore store;
    Rng rng(11);
    AttentionModule att(store, "a", 8, rng);
    Tape t;
    auto leaves = add_param_leaves(t, store.ptrs(), false);
    std::size_t cursor = 0;
    NodeId feats = t.constant(Tensor::full({1, 8, 4, 4}, 0.7));
    auto out = att.forward_with(t, leaves, cursor, feats);
    CHECK(cursor == std::size_t(AttentionModule::kParamSlots));
    const Tensor& w = t.value(out.weights);
    CHECK(w.shape == Shape({1, 1, 4, 4}));
    for (int64_t i = 0; i < w.numel(); ++i) CHECK(w[i] == doctest::Approx(1.0 / 16.0).epsilon(1e-12));
}

TEST_CASE("attention: weights are a distribution and gate per position") {
    ParamStore store;
    Rng rng(12);
    AttentionModule att(store, "a", 6, rng);
    Tape t;
    auto leaves = add_param_leaves(t, store.ptrs(), false);
    std::size_t cursor = 0;
    Rng drng(13);
    Tensor f = randt(drng, {2, 6, 3, 5}, -1.0, 1.0);
    auto out = att.forward_with(t, leaves, cursor, t.constant(f));
    const Tensor& w = t.value(out.weights);
    const Tensor& g = t.value(out.gated);
    CHECK(g.shape == f.shape);
    for (int n = 0; n < 2; ++n) {
        double sum = 0.0;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 5; ++j) {
                double wv = w.at(n, 0, i, j);
                CHECK(wv >= 0.0);
                sum += wv;
            }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }
    // Gating oracle: gated(n,c,i,j) = feats(n,c,i,j) * weights(n,0,i,j).
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 6; ++c)
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 5; ++j)
                    CHECK(g.at(n, c, i, j) ==
                          doctest::Approx(f.at(n, c, i, j) * w.at(n, 0, i, j)).epsilon(1e-12));
}

TEST_CASE("attention: weights invariant to a constant shift of the logits") {
    // Adding a constant to the second conv's bias shifts every pre-softmax
    // logit by the same amount, which the softmax must ignore.
    ParamStore store;
    Rng rng(14);
    AttentionModule att(store, "a", 8, rng);
    Rng drng(15);
    Tensor f = randt(drng, {1, 8, 4, 4}, -1.0, 1.0);

    auto weights_with_bias_shift = [&](double shift) {
        Tape t;
        std::vector<NodeId> leaves;
        for (Param* p : store.ptrs()) {
            Tensor v = p->value;
            if (p->name == "a.c2.b")
                for (int64_t i = 0; i < v.numel(); ++i) v[i] += shift;
            leaves.push_back(t.constant(v));
        }
        std::size_t cursor = 0;
        auto out = att.forward_with(t, leaves, cursor, t.constant(f));
        return t.value(out.weights);
    };

    Tensor w0 = weights_with_bias_shift(0.0);
    Tensor w5 = weights_with_bias_shift(5.0);
    for (int64_t i = 0; i < w0.numel(); ++i)
        CHECK(w0[i] == doctest::Approx(w5[i]).epsilon(1e-12));
}

TEST_CASE("spatial discriminator: score shape, range, determinism") {
    SpatialDiscriminator d(1, 16, 16, true, DsInput::Product, 21);
    Rng rng(22);
    Tensor image = randt(rng, {3, 1, 16, 16});
    Tensor mask = randt(rng, {3, 1, 16, 16});
    Tensor bn = randt(rng, {3, 32, 2, 2}, -1.0, 1.0);
    Tape t;
    auto fwd = d.forward(t, t.constant(image), t.constant(mask), t.constant(bn), false);
    const Tensor& score = t.value(fwd.score);
    CHECK(score.shape == Shape({3, 1}));
    CHECK(all_in_open_unit(score));

    Tape t2;
    auto fwd2 = d.forward(t2, t2.constant(image), t2.constant(mask), t2.constant(bn), false);
    CHECK(bitwise_equal(score, t2.value(fwd2.score)));
}

TEST_CASE("spatial discriminator: swapping batch samples permutes the scores") {
    SpatialDiscriminator d(1, 16, 16, true, DsInput::Product, 23);
    Rng rng(24);
    Tensor image = randt(rng, {2, 1, 16, 16});
    Tensor mask = randt(rng, {2, 1, 16, 16});
    Tensor bn = randt(rng, {2, 32, 2, 2}, -1.0, 1.0);
    auto swap_samples = [](const Tensor& x) {
        Tensor y = x;
        int64_t half = x.numel() / 2;
        for (int64_t i = 0; i < half; ++i) {
            y[i] = x[half + i];
            y[half + i] = x[i];
        }
        return y;
    };
    Tape t;
    auto fwd = d.forward(t, t.constant(image), t.constant(mask), t.constant(bn), false);
    const Tensor& score = t.value(fwd.score);
    Tape ts;
    auto fwds = d.forward(ts, ts.constant(swap_samples(image)), ts.constant(swap_samples(mask)),
                          ts.constant(swap_samples(bn)), false);
    const Tensor& swapped = ts.value(fwds.score);
    CHECK(score[0] == swapped[1]);
    CHECK(score[1] == swapped[0]);
    CHECK(score[0] != score[1]);
}

TEST_CASE("spatial discriminator: attention-free and pair-input variants") {
    Rng rng(26);
    Tensor image = randt(rng, {1, 1, 16, 16});
    Tensor mask = randt(rng, {1, 1, 16, 16});
    Tensor bn = randt(rng, {1, 32, 2, 2}, -1.0, 1.0);

    SpatialDiscriminator plain(1, 16, 16, false, DsInput::Product, 27);
    CHECK_FALSE(plain.use_attention());
    Tape t;
    auto fwd = plain.forward(t, t.constant(image), t.constant(mask), t.constant(bn), false);
    CHECK(all_in_open_unit(t.value(fwd.score)));

    SpatialDiscriminator pair(1, 16, 16, true, DsInput::Pair, 27);
    Tape t2;
    auto fwd2 = pair.forward(t2, t2.constant(image), t2.constant(mask), t2.constant(bn), false);
    CHECK(all_in_open_unit(t2.value(fwd2.score)));
}

TEST_CASE("spatial discriminator input contracts") {
    SpatialDiscriminator d(1, 16, 16, true, DsInput::Product, 28);
    Rng rng(29);
    Tensor image = randt(rng, {1, 1, 16, 16});
    Tensor mask = randt(rng, {1, 1, 16, 16});
    Tensor bn = randt(rng, {1, 32, 2, 2}, -1.0, 1.0);

    Tape t;
    Tensor bad_mask = mask;
    bad_mask[3] = 1.5;
    CHECK_THROWS_AS(
        d.forward(t, t.constant(image), t.constant(bad_mask), t.constant(bn), false),
        DomainError);
    CHECK_THROWS_AS(d.forward(t, t.constant(Tensor::zeros({1, 1, 16, 24})), t.constant(mask),
                              t.constant(bn), false),
                    DimensionError);
    CHECK_THROWS_AS(d.forward(t, t.constant(image), t.constant(mask),
                              t.constant(Tensor::zeros({1, 32, 4, 4})), false),
                    DimensionError);
}

TEST_CASE("projective discriminator: score range, determinism, contracts") {
    ProjectiveDiscriminator d(1, 16, 16, DpInput::Pair, 31);
    Rng rng(32);
    Tensor pi = randt(rng, {16, 16}, 0.0, 0.99);
    Tensor pm = randt(rng, {16, 16}, 0.0, 0.99);
    Tape t;
    auto fwd = d.forward(t, t.constant(pi), t.constant(pm), false);
    CHECK(t.value(fwd.score).shape == Shape({1, 1}));
    CHECK(all_in_open_unit(t.value(fwd.score)));

    Tape t2;
    auto fwd2 = d.forward(t2, t2.constant(pi), t2.constant(pm), false);
    CHECK(t.value(fwd.score)[0] == t2.value(fwd2.score)[0]);

    ProjectiveDiscriminator dm(1, 16, 16, DpInput::MaskOnly, 31);
    Tape t3;
    auto fwd3 = dm.forward(t3, t3.constant(pi), t3.constant(pm), false);
    CHECK(all_in_open_unit(t3.value(fwd3.score)));

    Tape t4;
    CHECK_THROWS_AS(d.forward(t4, t4.constant(Tensor::zeros({16, 24})), t4.constant(pm), false),
                    DimensionError);
    Tensor bad = pm;
    bad[0] = 1.0; // open top: exactly 1 is out of range for a projection
    CHECK_THROWS_AS(d.forward(t4, t4.constant(pi), t4.constant(bad), false), DomainError);
}

TEST_CASE("no dead branches: every parameter gets gradient on a random batch") {
    Rng rng(41);

    Segmentor s(1, 16, 16, 42);
    {
        Tape t;
        auto fwd = s.forward(t, t.constant(randt(rng, {2, 1, 16, 16})), true);
        t.backward(t.sum(fwd.prob));
        REQUIRE(fwd.param_nodes.size() == s.params().size());
        for (std::size_t i = 0; i < fwd.param_nodes.size(); ++i) {
            const Tensor& g = t.grad(fwd.param_nodes[i]);
            CHECK_MESSAGE((g.max() > 0.0 || g.min() < 0.0),
                          "zero gradient at " << s.params()[i]->name);
        }
    }

    SpatialDiscriminator d(1, 16, 16, true, DsInput::Product, 43);
    {
        Tape t;
        auto fwd = d.forward(t, t.constant(randt(rng, {2, 1, 16, 16})),
                             t.constant(randt(rng, {2, 1, 16, 16})),
                             t.constant(randt(rng, {2, 32, 2, 2}, -1.0, 1.0)), true);
        t.backward(t.sum(fwd.score));
        for (std::size_t i = 0; i < fwd.param_nodes.size(); ++i) {
            const Tensor& g = t.grad(fwd.param_nodes[i]);
            CHECK_MESSAGE((g.max() > 0.0 || g.min() < 0.0),
                          "zero gradient at " << d.params()[i]->name);
        }
    }

    ProjectiveDiscriminator dp(1, 16, 16, DpInput::Pair, 44);
    {
        Tape t;
        auto fwd = dp.forward(t, t.constant(randt(rng, {16, 16}, 0.0, 0.99)),
                              t.constant(randt(rng, {16, 16}, 0.0, 0.99)), true);
        t.backward(t.sum(fwd.score));
        for (std::size_t i = 0; i < fwd.param_nodes.size(); ++i) {
            const Tensor& g = t.grad(fwd.param_nodes[i]);
            CHECK_MESSAGE((g.max() > 0.0 || g.min() < 0.0),
                          "zero gradient at " << dp.params()[i]->name);
        }
    }
}

TEST_CASE("projective discriminator learns to separate structure from noise") {
    // Plain gradient descent is enough to check the network is trainable:
    // real pairs are axial projections of a ball, fakes replace the mask
    // projection with a noise-volume projection.
    const int H = 16, W = 16, D = 8;
    auto ball_volume = [&](double cx, double cy, double cz, double r) {
        Tensor v({H, W, D});
        for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j)
                for (int k = 0; k < D; ++k) {
                    double di = (i - cx) / r, dj = (j - cy) / r, dk = (k - cz) / (r * 0.5);
                    v.at(i, j, k) = (di * di + dj * dj + dk * dk <= 1.0) ? 1.0 : 0.0;
                }
        return v;
    };
    Rng rng(51);
    auto noise_volume = [&]() {
        Tensor v({H, W, D});
        for (int64_t i = 0; i < v.numel(); ++i) v[i] = rng.uniform();
        return v;
    };
    auto project = [](const Tensor& v) {
        Tensor p({v.dim(0), v.dim(1)});
        for (int i = 0; i < v.dim(0); ++i)
            for (int j = 0; j < v.dim(1); ++j) {
                double s = 0.0;
                for (int k = 0; k < v.dim(2); ++k) s += v.at(i, j, k);
                p.at(i, j) = -std::expm1(-s);
            }
        return p;
    };

    std::vector<Tensor> real_m, fake_m, imgs;
    for (int i = 0; i < 10; ++i) {
        double cx = 6.0 + rng.uniform(0.0, 4.0), cy = 6.0 + rng.uniform(0.0, 4.0);
        double cz = 3.0 + rng.uniform(0.0, 2.0), r = 3.0 + rng.uniform(0.0, 2.0);
        Tensor ball = ball_volume(cx, cy, cz, r);
        Tensor intens({H, W, D});
        for (int64_t n = 0; n < intens.numel(); ++n)
            intens[n] = 0.25 + 0.3 * ball[n] + rng.uniform(0.0, 0.05);
        imgs.push_back(project(intens));
        real_m.push_back(project(ball));
        fake_m.push_back(project(noise_volume()));
    }

    ProjectiveDiscriminator d(1, H, W, DpInput::Pair, 52);
    const double lr = 0.05;
    for (int step = 0; step < 120; ++step) {
        int i = step % 8; // train on the first 8, hold out the last 2
        Tape t;
        auto leaves = add_param_leaves(t, d.params(), true);
        NodeId real = d.forward_with(t, leaves, t.constant(imgs[i]), t.constant(real_m[i]));
        NodeId fake = d.forward_with(t, leaves, t.constant(imgs[i]), t.constant(fake_m[i]));
        NodeId loss = t.add(t.weighted_bce(real, Tensor::full({1, 1}, 1.0), 1.0, 1e-7),
                            t.weighted_bce(fake, Tensor::full({1, 1}, 0.0), 1.0, 1e-7));
        t.backward(loss);
        auto ps = d.params();
        for (std::size_t pi = 0; pi < ps.size(); ++pi) {
            const Tensor& g = t.grad(leaves[pi]);
            for (int64_t n = 0; n < g.numel(); ++n) ps[pi]->value[n] -= lr * g[n];
        }
    }

    double real_mean = 0.0, fake_mean = 0.0;
    for (int i = 8; i < 10; ++i) {
        Tape t;
        real_mean += t.value(d.forward(t, t.constant(imgs[i]), t.constant(real_m[i]), false).score)[0];
        fake_mean += t.value(d.forward(t, t.constant(imgs[i]), t.constant(fake_m[i]), false).score)[0];
    }
    CHECK(real_mean / 2.0 > fake_mean / 2.0);
}
