#include "pan/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numeric>
#include <string>
#include <utility>

#include "pan/errors.hpp"
#include "pan/eval.hpp"
#include "pan/kernels.hpp"
#include "pan/projection.hpp"
#include "pan/report.hpp"

namespace pan {

namespace fs = std::filesystem;

AdamOpt::AdamOpt(double lr, double beta1, double beta2, double eps)
    : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

void AdamOpt::step(const Tape& t, const std::vector<NodeId>& leaves,
                   const std::vector<Param*>& params) {
    if (leaves.size() != params.size())
        throw ContractError("optimizer got " + std::to_string(leaves.size()) + " leaves for " +
                            std::to_string(params.size()) + " params");
    ++t_;
    const double bc1 = 1.0 / (1.0 - std::pow(b1_, static_cast<double>(t_)));
    const double bc2 = 1.0 / (1.0 - std::pow(b2_, static_cast<double>(t_)));
    for (std::size_t i = 0; i < params.size(); ++i) {
        Param& p = *params[i];
        const Tensor& g = t.grad(leaves[i]);
        if (!g.same_shape(p.value))
            throw ContractError("gradient shape mismatch for " + p.name);
        if (!g.all_finite()) throw NumericalAbort("non-finite gradient in " + p.name);
        kernels().adam_step(static_cast<int>(p.value.numel()), p.value.data.data(),
                            p.m.data.data(), p.v.data.data(), g.data.data(), lr_, b1_, b2_,
                            eps_, bc1, bc2);
    }
}

void TrainingConfig::validate() const {
    LossWeights w = weights;
    if (w.w_pos == 0.0) w.w_pos = 1.0; // 0 is the derive-from-data sentinel
    w.validate();
    auto positive = [](double v, const char* name) {
        if (!std::isfinite(v) || v <= 0.0)
            throw ConfigError(std::string(name) + " must be finite and positive");
    };
    positive(lr_s, "lr_s");
    positive(lr_ds, "lr_ds");
    positive(lr_dp, "lr_dp");
    positive(adam_eps, "adam_eps");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
        throw ConfigError("adam betas must lie in [0, 1)");
    if (width < 1) throw ConfigError("width must be >= 1");
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (ds_steps < 1) throw ConfigError("ds_steps must be >= 1");
    if (s_steps < 1) throw ConfigError("s_steps must be >= 1");
    if (dp_every < 1) throw ConfigError("dp_every must be >= 1");
    if (early_stop_patience < 0) throw ConfigError("early_stop_patience must be >= 0");
    if (!(eval_threshold > 0.0 && eval_threshold < 1.0))
        throw ConfigError("eval_threshold must lie in (0, 1)");
    if (use_attention && !use_ds)
        throw ConfigError("attention is part of the spatial discriminator; enable use_ds");
}

uint64_t config_fingerprint(const TrainingConfig& cfg) {
    // Everything that shapes the parameter trajectory goes in. Stopping
    // criteria (epochs, patience) and the eval threshold deliberately stay
    // out: resuming with a larger epoch budget means "train longer", not a
    // different run.
    std::string s;
    char buf[40];
    auto num = [&](const char* key, double v) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        s += key;
        s += '=';
        s += buf;
        s += '\n';
    };
    auto integer = [&](const char* key, unsigned long long v) {
        s += key;
        s += '=';
        s += std::to_string(v);
        s += '\n';
    };
    num("lambda", cfg.weights.lambda);
    num("beta", cfg.weights.beta);
    num("w_pos", cfg.weights.w_pos);
    num("epsilon", cfg.weights.epsilon);
    integer("width", static_cast<unsigned long long>(cfg.width));
    num("lr_s", cfg.lr_s);
    num("lr_ds", cfg.lr_ds);
    num("lr_dp", cfg.lr_dp);
    num("adam_beta1", cfg.adam_beta1);
    num("adam_beta2", cfg.adam_beta2);
    num("adam_eps", cfg.adam_eps);
    integer("batch_size", static_cast<unsigned long long>(cfg.batch_size));
    integer("ds_steps", static_cast<unsigned long long>(cfg.ds_steps));
    integer("s_steps", static_cast<unsigned long long>(cfg.s_steps));
    integer("dp_every", static_cast<unsigned long long>(cfg.dp_every));
    integer("seed", cfg.seed);
    integer("use_ds", cfg.use_ds);
    integer("use_attention", cfg.use_attention);
    integer("use_dp", cfg.use_dp);
    integer("attention_tap_open", cfg.attention_tap_open);
    integer("nonsaturating", cfg.nonsaturating);
    integer("ds_input", cfg.ds_input == DsInput::Pair);
    integer("dp_input", cfg.dp_input == DpInput::MaskOnly);
    integer("shuffle_slices", cfg.shuffle_slices);
    uint64_t h = 0xcbf29ce484222325ull;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ull;
    }
    return h;
}

double derive_w_pos(const std::vector<Sample>& train_set) {
    if (train_set.empty()) throw ConfigError("cannot derive w_pos from an empty training set");
    double pos = 0.0, total = 0.0;
    for (const Sample& s : train_set) {
        pos += s.mask.sum();
        total += static_cast<double>(s.mask.numel());
    }
    // validate_sample guarantees at least one positive voxel per mask.
    return std::clamp((total - pos) / pos, 1.0, 20.0);
}

namespace {

const TrainingConfig& checked(const TrainingConfig& cfg) {
    cfg.validate();
    return cfg;
}

} // namespace

Trainer::Trainer(const TrainingConfig& cfg, int in_h, int in_w)
    : cfg_(checked(cfg)),
      // Every variant constructs all three networks from the same derived
      // seeds, so the ablation rows share the segmentor initialization and
      // disabled discriminators never perturb the enabled ones.
      s_(cfg.width, in_h, in_w, derive_seed(cfg.seed, "segmentor")),
      ds_(cfg.width, in_h, in_w, cfg.use_attention, cfg.ds_input, derive_seed(cfg.seed, "ds")),
      dp_(cfg.width, in_h, in_w, cfg.dp_input, derive_seed(cfg.seed, "dp")),
      opt_s_(cfg.lr_s, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps),
      opt_ds_(cfg.lr_ds, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps),
      opt_dp_(cfg.lr_dp, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps),
      order_rng_(derive_seed(cfg.seed, "order")),
      w_pos_(cfg.weights.w_pos) {}

void Trainer::set_effective_w_pos(double w) {
    if (!std::isfinite(w) || w <= 0.0)
        throw ParameterError("effective w_pos must be finite and positive");
    w_pos_ = w;
}

namespace {

// A non-finite value at any hand-off point means the trajectory is lost;
// abort instead of letting it surface as a downstream domain error.
void gate_finite(const Tensor& v, const char* what) {
    for (int64_t i = 0; i < v.numel(); ++i)
        if (!std::isfinite(v[i]))
            throw NumericalAbort(std::string(what) + " became non-finite");
}

} // namespace

void Trainer::ds_update(const SliceBatch& batch, EpochMetrics& m, int& n_ds) {
    // The fake mask is S's frozen prediction, computed once per batch; every
    // ds step sees the same fake (only the discriminator moves in between).
    Tensor prob, bneck;
    {
        Tape t;
        auto out = s_.forward(t, t.constant(batch.images), false);
        prob = t.value(out.prob);
        bneck = t.value(out.bottleneck);
    }
    gate_finite(prob, "segmentor prediction");
    gate_finite(bneck, "segmentor bottleneck");
    const double eps = cfg_.weights.epsilon;
    for (int k = 0; k < cfg_.ds_steps; ++k) {
        Tape t;
        auto dl = add_param_leaves(t, ds_.params(), true);
        DiscLoss dsl = ds_loss(t, ds_, dl, t.constant(batch.images), t.constant(batch.masks),
                               t.constant(prob), t.constant(bneck), eps);
        t.backward(dsl.loss);
        opt_ds_.step(t, dl, ds_.params());
        m.l_ds += t.value(dsl.loss)[0];
        const Tensor& rs = t.value(dsl.real_score);
        const Tensor& fk = t.value(dsl.fake_score);
        m.ds_real_score += rs.sum() / static_cast<double>(rs.numel());
        m.ds_fake_score += fk.sum() / static_cast<double>(fk.numel());
        ++n_ds;
    }
}

void Trainer::dp_update(const Sample& sample, const Tensor& proj_image, const Tensor& proj_gt,
                        EpochMetrics& m, int& n_dp) {
    Tape t;
    auto stack = project_prediction_stack(t, s_, sample.volume.intensities, false);
    gate_finite(t.value(stack.projection), "prediction projection");
    auto dl = add_param_leaves(t, dp_.params(), true);
    DiscLoss dpl = dp_loss(t, dp_, dl, t.constant(proj_image), t.constant(proj_gt),
                           stack.projection, cfg_.weights.epsilon);
    t.backward(dpl.loss);
    opt_dp_.step(t, dl, dp_.params());
    m.l_dp += t.value(dpl.loss)[0];
    m.dp_real_score += t.value(dpl.real_score)[0];
    m.dp_fake_score += t.value(dpl.fake_score)[0];
    ++n_dp;
}

void Trainer::s_update(const SliceBatch& batch, const Sample& sample, bool include_dp,
                       const Tensor& proj_image, const Tensor& proj_gt, EpochMetrics& m,
                       int& n_s) {
    const double eps = cfg_.weights.epsilon;
    // cfg_ keeps the w_pos sentinel (it is part of the fingerprint); the
    // loss sees the resolved weight.
    LossWeights weights = cfg_.weights;
    weights.w_pos = w_pos_;
    Tape t;
    auto leaves = add_param_leaves(t, s_.params(), true);
    const NodeId image = t.constant(batch.images);
    auto out = s_.forward_with(t, leaves, image);
    const NodeId bce = t.weighted_bce(out.prob, batch.masks, w_pos_, eps);

    // The discriminators enter frozen. The bottleneck tap is cut unless the
    // config opens it: by default the adversarial pressure lands on the
    // prediction, not on S's internal features. The projection term shares
    // this tape's parameter leaves, so one backward pass accumulates the
    // batch and volume signals together.
    NodeId loss;
    if (!cfg_.nonsaturating) {
        NodeId l_ds = kNoLoss, l_dp = kNoLoss;
        if (cfg_.use_ds && cfg_.weights.lambda != 0.0) {
            const NodeId bneck =
                cfg_.attention_tap_open ? out.bottleneck : t.constant(t.value(out.bottleneck));
            auto dl = add_param_leaves(t, ds_.params(), false);
            l_ds = ds_loss(t, ds_, dl, image, t.constant(batch.masks), out.prob, bneck, eps).loss;
        }
        if (include_dp && cfg_.weights.beta != 0.0) {
            auto stack = project_prediction_stack_with(t, s_, leaves, sample.volume.intensities);
            auto dl = add_param_leaves(t, dp_.params(), false);
            l_dp = dp_loss(t, dp_, dl, t.constant(proj_image), t.constant(proj_gt),
                           stack.projection, eps)
                       .loss;
        }
        loss = hybrid_loss(t, bce, l_ds, l_dp, weights);
    } else {
        // Non-saturating form: S minimizes bce + lambda*bce(D(fake),1)
        // + beta*bce(Dp(fake),1) instead of maximizing the discriminator
        // losses.
        loss = bce;
        if (cfg_.use_ds && cfg_.weights.lambda != 0.0) {
            const NodeId bneck =
                cfg_.attention_tap_open ? out.bottleneck : t.constant(t.value(out.bottleneck));
            auto dl = add_param_leaves(t, ds_.params(), false);
            const NodeId score = ds_.forward_with(t, dl, image, out.prob, bneck);
            loss = t.add(loss, t.scale(bce_with_label(t, score, 1.0, eps), cfg_.weights.lambda));
        }
        if (include_dp && cfg_.weights.beta != 0.0) {
            auto stack = project_prediction_stack_with(t, s_, leaves, sample.volume.intensities);
            auto dl = add_param_leaves(t, dp_.params(), false);
            const NodeId score = dp_.forward_with(t, dl, t.constant(proj_image), stack.projection);
            loss = t.add(loss, t.scale(bce_with_label(t, score, 1.0, eps), cfg_.weights.beta));
        }
    }
    gate_finite(t.value(loss), "segmentor loss");
    t.backward(loss);
    opt_s_.step(t, leaves, s_.params());
    m.bce += t.value(bce)[0];
    m.hybrid += t.value(loss)[0]; // the objective S actually descended
    ++n_s;
}

EpochMetrics Trainer::train_epoch(const std::vector<Sample>& train_set, int epoch) {
    if (train_set.empty()) throw ConfigError("empty training set");
    if (!(w_pos_ > 0.0))
        throw ContractError("effective w_pos unresolved; call set_effective_w_pos (train() derives it)");
    EpochMetrics m;
    m.epoch = epoch + 1;
    std::vector<int> order(train_set.size());
    std::iota(order.begin(), order.end(), 0);
    order_rng_.shuffle(order.begin(), order.end());
    int n_s = 0, n_ds = 0, n_dp = 0;
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
        const int vi = order[pos];
        const Sample& sample = train_set[static_cast<std::size_t>(vi)];
        const bool fire_dp = cfg_.use_dp && pos % static_cast<std::size_t>(cfg_.dp_every) == 0;
        try {
            Tensor proj_image, proj_gt;
            if (fire_dp) {
                proj_image = project_volume(hwd_from_dhw(sample.volume.intensities)).image;
                proj_gt = project_volume(hwd_from_dhw(sample.mask)).image;
            }
            auto batches = slice_batches(
                sample, cfg_.batch_size,
                cfg_.shuffle_slices ? SliceOrder::Shuffled : SliceOrder::Sequential,
                derive_seed(cfg_.seed, "slices", static_cast<uint64_t>(epoch),
                            static_cast<uint64_t>(vi)));
            for (std::size_t bi = 0; bi < batches.size(); ++bi) {
                const bool last_batch = bi + 1 == batches.size();
                if (cfg_.use_ds) ds_update(batches[bi], m, n_ds);
                // The projective discriminator trains once per firing volume,
                // after the last batch's ds steps and before the segmentor
                // steps that push against it.
                if (fire_dp && last_batch) dp_update(sample, proj_image, proj_gt, m, n_dp);
                for (int k = 0; k < cfg_.s_steps; ++k) {
                    const bool include_dp = fire_dp && last_batch && k + 1 == cfg_.s_steps;
                    s_update(batches[bi], sample, include_dp, proj_image, proj_gt, m, n_s);
                }
            }
        } catch (const NumericalAbort& e) {
            throw NumericalAbort(std::string(e.what()) + " (epoch " + std::to_string(epoch + 1) +
                                 ", volume " + sample.id + ")");
        }
    }
    if (n_s > 0) {
        m.bce /= n_s;
        m.hybrid /= n_s;
    }
    if (n_ds > 0) {
        m.l_ds /= n_ds;
        m.ds_real_score /= n_ds;
        m.ds_fake_score /= n_ds;
    }
    if (n_dp > 0) {
        m.l_dp /= n_dp;
        m.dp_real_score /= n_dp;
        m.dp_fake_score /= n_dp;
    }
    return m;
}

namespace {

constexpr char kCkptMagic[8] = {'P', 'A', 'N', 'C', 'K', 'P', 'T', '1'};

void put_u16(std::string& out, uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>(v >> 8 & 0xff));
}

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>(v >> 8 * i & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>(v >> 8 * i & 0xff));
}

void put_f32(std::string& out, double v) {
    const float f = static_cast<float>(v);
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(out, bits);
}

struct CkptReader {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n, const char* what) const {
        if (buf.size() - pos < n)
            throw ParseError(std::string("truncated checkpoint (") + what + ")",
                             static_cast<long long>(buf.size()), false);
    }
    uint16_t u16(const char* what) {
        need(2, what);
        uint16_t v = 0;
        for (int i = 0; i < 2; ++i)
            v = static_cast<uint16_t>(v | static_cast<uint16_t>(static_cast<unsigned char>(buf[pos + static_cast<std::size_t>(i)])) << 8 * i);
        pos += 2;
        return v;
    }
    uint32_t u32(const char* what) {
        need(4, what);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[pos + static_cast<std::size_t>(i)])) << 8 * i;
        pos += 4;
        return v;
    }
    uint64_t u64(const char* what) {
        need(8, what);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= static_cast<uint64_t>(static_cast<unsigned char>(buf[pos + static_cast<std::size_t>(i)])) << 8 * i;
        pos += 8;
        return v;
    }
    std::string bytes(std::size_t n, const char* what) {
        need(n, what);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

} // namespace

void Trainer::save_checkpoint(const std::string& path, int epochs_done) {
    std::string out;
    out.append(kCkptMagic, 8);
    put_u32(out, 1); // version
    put_u64(out, config_fingerprint(cfg_));
    put_u32(out, static_cast<uint32_t>(epochs_done));
    put_u64(out, static_cast<uint64_t>(opt_s_.steps()));
    put_u64(out, static_cast<uint64_t>(opt_ds_.steps()));
    put_u64(out, static_cast<uint64_t>(opt_dp_.steps()));
    for (uint64_t word : order_rng_.state()) put_u64(out, word);
    uint64_t wbits;
    std::memcpy(&wbits, &w_pos_, 8);
    put_u64(out, wbits);

    std::vector<Param*> all = s_.params();
    for (Param* p : ds_.params()) all.push_back(p);
    for (Param* p : dp_.params()) all.push_back(p);
    put_u32(out, static_cast<uint32_t>(3 * all.size()));
    auto blob = [&out](const std::string& name, const Tensor& v) {
        put_u16(out, static_cast<uint16_t>(name.size()));
        out += name;
        put_u32(out, static_cast<uint32_t>(v.numel()));
        for (double d : v.data) put_f32(out, d);
    };
    for (Param* p : all) {
        blob(p->name, p->value);
        blob(p->name + ".m", p->m);
        blob(p->name + ".v", p->v);
    }

    // Write-then-rename keeps the previous checkpoint intact if this write
    // dies halfway.
    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot open " + tmp + " for writing");
        f.write(out.data(), static_cast<std::streamsize>(out.size()));
        if (!f) throw IoError("short write to " + tmp);
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) throw IoError("cannot move " + tmp + " to " + path + ": " + ec.message());
}

int Trainer::load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    const std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    CkptReader r{buf};
    r.need(8, "magic");
    if (std::memcmp(buf.data(), kCkptMagic, 8) != 0)
        throw ParseError("not a checkpoint file (bad magic)", 0, false);
    r.pos = 8;
    const uint32_t version = r.u32("version");
    if (version != 1)
        throw ParseError("unsupported checkpoint version " + std::to_string(version), 8, false);
    if (r.u64("config hash") != config_fingerprint(cfg_))
        throw ConfigError("checkpoint " + path + " was trained under a different configuration");
    const int epochs_done = static_cast<int>(r.u32("epoch counter"));
    const auto t_s = static_cast<int64_t>(r.u64("segmentor step count"));
    const auto t_ds = static_cast<int64_t>(r.u64("ds step count"));
    const auto t_dp = static_cast<int64_t>(r.u64("dp step count"));
    std::array<uint64_t, 4> state{};
    for (auto& word : state) word = r.u64("rng state");
    uint64_t wbits = r.u64("w_pos");
    double wp;
    std::memcpy(&wp, &wbits, 8);
    if (!std::isfinite(wp) || wp < 0.0)
        throw ParseError("checkpoint carries an invalid w_pos", 80, false);

    std::vector<Param*> all = s_.params();
    for (Param* p : ds_.params()) all.push_back(p);
    for (Param* p : dp_.params()) all.push_back(p);
    const uint32_t blob_count = r.u32("blob count");
    if (blob_count != 3 * all.size())
        throw ConfigError("checkpoint holds " + std::to_string(blob_count) +
                          " blobs; this configuration expects " + std::to_string(3 * all.size()));
    auto read_blob = [&r](const std::string& name, Tensor& dst) {
        const std::string got = r.bytes(r.u16("blob name length"), "blob name");
        if (got != name)
            throw ConfigError("checkpoint blob order mismatch: expected " + name + ", found " + got);
        const uint32_t numel = r.u32("blob extent");
        if (static_cast<int64_t>(numel) != dst.numel())
            throw ConfigError("blob " + name + " holds " + std::to_string(numel) +
                              " values, expected " + std::to_string(dst.numel()));
        for (int64_t i = 0; i < dst.numel(); ++i) {
            const uint32_t bits = r.u32("blob data");
            float fv;
            std::memcpy(&fv, &bits, 4);
            dst[i] = static_cast<double>(fv);
        }
    };
    for (Param* p : all) {
        read_blob(p->name, p->value);
        read_blob(p->name + ".m", p->m);
        read_blob(p->name + ".v", p->v);
    }
    if (r.pos != buf.size())
        throw ParseError("trailing bytes after checkpoint payload",
                         static_cast<long long>(r.pos), false);
    opt_s_.set_steps(t_s);
    opt_ds_.set_steps(t_ds);
    opt_dp_.set_steps(t_dp);
    order_rng_.set_state(state);
    if (wp > 0.0) w_pos_ = wp; // 0 stays the unresolved sentinel
    return epochs_done;
}

std::vector<Sample> load_split(const std::string& dir, const std::string& split) {
    const DatasetManifest man = read_manifest(dir + "/manifest.tsv");
    std::vector<Sample> out;
    for (const std::string& id : man.ids(split))
        out.push_back(read_volume_file(dir + "/" + id + ".panvol"));
    return out;
}

TrainResult train(const TrainingConfig& cfg, const std::string& data_dir,
                  const std::string& out_dir) {
    cfg.validate();
    std::vector<Sample> train_set = load_split(data_dir, "train");
    std::vector<Sample> test_set = load_split(data_dir, "test");
    if (train_set.empty()) throw ConfigError("manifest in " + data_dir + " lists no train volumes");
    if (test_set.empty()) throw ConfigError("manifest in " + data_dir + " lists no test volumes");
    const int h = train_set.front().volume.h();
    const int w = train_set.front().volume.w();
    auto check_extents = [&](const std::vector<Sample>& set) {
        // Depth may vary per volume; the slice plane may not.
        for (const Sample& s : set)
            if (s.volume.h() != h || s.volume.w() != w)
                throw ConfigError("volume " + s.id + " is " + std::to_string(s.volume.h()) + "x" +
                                  std::to_string(s.volume.w()) + ", dataset opened at " +
                                  std::to_string(h) + "x" + std::to_string(w));
    };
    check_extents(train_set);
    check_extents(test_set);

    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir + ": " + ec.message());

    Trainer tr(cfg, h, w);
    TrainResult res;
    res.checkpoint_path = out_dir + "/checkpoint.bin";
    const std::string csv_path = out_dir + "/metrics.csv";
    const std::string svg_path = out_dir + "/curves.svg";

    int start_epoch = 0;
    std::vector<EpochMetrics> history;
    if (fs::exists(res.checkpoint_path)) {
        start_epoch = tr.load_checkpoint(res.checkpoint_path);
        if (fs::exists(csv_path)) {
            // Keep only rows the checkpoint vouches for; a crash can leave
            // one appended row beyond the last saved state.
            for (const EpochMetrics& row : read_metrics_csv(csv_path))
                if (row.epoch <= start_epoch) history.push_back(row);
        }
    }
    write_metrics_csv(csv_path, history);
    if (tr.effective_w_pos() == 0.0) tr.set_effective_w_pos(derive_w_pos(train_set));

    double best = -1.0;
    int since_best = 0;
    for (const EpochMetrics& row : history) {
        if (row.test_dsc_mean > best) {
            best = row.test_dsc_mean;
            since_best = 0;
        } else {
            ++since_best;
        }
    }

    res.epochs_done = start_epoch;
    bool evaluated = false;
    DscSummary ev;
    const bool stopped_before_resume =
        cfg.early_stop_patience > 0 && since_best >= cfg.early_stop_patience;
    for (int e = start_epoch; e < cfg.epochs && !stopped_before_resume; ++e) {
        EpochMetrics m;
        try {
            m = tr.train_epoch(train_set, e);
        } catch (const NumericalAbort& err) {
            throw NumericalAbort(std::string(err.what()) + "; last good checkpoint: " +
                                 (res.epochs_done > 0 ? res.checkpoint_path : "none"));
        }
        ev = evaluate(tr.segmentor(), test_set, cfg.eval_threshold);
        evaluated = true;
        m.test_dsc_mean = ev.mean;
        append_metrics_row(csv_path, m);
        tr.save_checkpoint(res.checkpoint_path, e + 1);
        history.push_back(m);
        res.history.push_back(m);
        res.epochs_done = e + 1;
        write_curves_svg(svg_path, history);
        if (cfg.early_stop_patience > 0) {
            if (ev.mean > best) {
                best = ev.mean;
                since_best = 0;
            } else if (++since_best >= cfg.early_stop_patience) {
                break;
            }
        }
    }
    if (!evaluated) ev = evaluate(tr.segmentor(), test_set, cfg.eval_threshold);
    res.final_test_dsc_mean = ev.mean;
    res.final_per_volume_dsc = ev.per_volume;
    return res;
}

} // namespace pan
