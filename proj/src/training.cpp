#include "polymotion/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

namespace polymotion {

using ad::Segments;
using ad::Var;

std::string to_string(Stage s) {
    switch (s) {
        case Stage::one: return "1";
        case Stage::two: return "2";
        case Stage::spatial: return "spatial";
    }
    return "?";
}

Stage parse_stage(const std::string& s) {
    if (s == "1") return Stage::one;
    if (s == "2") return Stage::two;
    if (s == "spatial") return Stage::spatial;
    throw InvalidArgument("unknown stage '" + s + "' (expected 1, 2 or spatial)");
}

std::vector<TrainItem> to_train_items(const std::vector<SampleRecord>& records) {
    std::vector<TrainItem> items;
    items.reserve(records.size());
    for (const auto& r : records) {
        if (static_cast<int>(r.texts_single.size()) != r.n_persons())
            throw InvalidDataset("record " + r.id + " lacks per-person texts");
        TrainItem it;
        for (const auto& m : r.motions) it.motions.push_back(m.data);
        it.texts_single = r.texts_single;
        it.text_interactive = r.text_interactive;
        items.push_back(std::move(it));
    }
    return items;
}

TrainConfig TrainConfig::defaults(Stage s) {
    TrainConfig c;
    c.stage = s;
    if (s == Stage::one) {
        c.epochs = 2500;
        c.batch_size = 80;
        c.learning_rate = 1e-4;
    } else {
        c.epochs = 1000;
        c.batch_size = 30;
        c.learning_rate = s == Stage::two ? 1e-4 : 1e-5;
    }
    return c;
}

void TrainConfig::validate() const {
    if (epochs < 1) throw InvalidArgument("epochs: must be >= 1");
    if (max_steps < 0) throw InvalidArgument("max_steps: must be >= 0");
    if (batch_size < 1) throw InvalidArgument("batch_size: must be >= 1");
    if (!(learning_rate >= 0)) throw InvalidArgument("learning_rate: must be >= 0");
    if (!(weight_decay >= 0)) throw InvalidArgument("weight_decay: must be >= 0");
    if (diffusion_steps < 2) throw InvalidArgument("diffusion_steps: must be >= 2");
    if (!(text_dropout >= 0 && text_dropout <= 1)) throw InvalidArgument("text_dropout: must be in [0, 1]");
    if (!(condition_keep >= 0 && condition_keep <= 1)) throw InvalidArgument("condition_keep: must be in [0, 1]");
    if (!(spatial_frame_keep >= 0 && spatial_frame_keep <= 1))
        throw InvalidArgument("spatial_frame_keep: must be in [0, 1]");
    if (log_every < 1) throw InvalidArgument("log_every: must be >= 1");
    weights.validate();
    dims.validate();
}

SpatialSignal random_spatial_signal(const Mat& positions, int joints, double frame_keep, Rng& rng) {
    const int F = static_cast<int>(positions.rows());
    std::bernoulli_distribution keep(frame_keep);
    std::vector<int> order(static_cast<std::size_t>(joints));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const int count = std::uniform_int_distribution<int>(1, joints)(rng);
    std::vector<bool> chosen(static_cast<std::size_t>(joints), false);
    for (int i = 0; i < count; ++i) chosen[static_cast<std::size_t>(order[i])] = true;
    SpatialSignal s;
    s.targets = positions.leftCols(3 * joints);
    s.observed = Mat::Zero(F, joints);
    for (int f = 0; f < F; ++f) {
        if (!keep(rng)) continue;
        for (int j = 0; j < joints; ++j)
            if (chosen[static_cast<std::size_t>(j)]) s.observed(f, j) = 1.0;
    }
    return s;
}

template <typename T>
LossParts step_loss(const ParamSet<T>& gen, const ParamSet<T>* inter, const NetDims& dims,
                    const SkeletonDef* skeleton, const FeatureStats& stats, const LossWeights& weights,
                    const NoiseSchedule& schedule, const std::vector<StepSample<T>>& batch, ParamSet<T>* gen_grads,
                    ParamSet<T>* inter_grads) {
    if (batch.empty()) throw InvalidArgument("step_loss: empty batch");
    const int B = static_cast<int>(batch.size());
    Segments segs;
    std::vector<int> ts;
    for (const auto& s : batch) {
        segs.push(static_cast<int>(s.x0.rows()));
        ts.push_back(s.t);
    }
    const int rows = segs.total_rows();
    MatT<T> xt(rows, dims.pose_dim), text(B, dims.text_dim);
    for (int b = 0; b < B; ++b) {
        xt.middleRows(segs.start[b], segs.length[b]) = q_sample<T>(batch[b].x0, batch[b].t, batch[b].noise, schedule);
        text.row(b) = batch[b].text;
    }

    ad::Tape<T> tape;
    Binder<T> gb(tape, gen, gen_grads);
    const Var x = tape.constant(std::move(xt));
    const Var cond = gm_condition(gb, dims, ts, text);
    std::vector<Var> residuals;
    std::optional<Binder<T>> ib;
    if (inter) {
        ib.emplace(tape, *inter, inter_grads);
        InterBatch ibatch;
        ibatch.target = x;
        ibatch.segs = segs;
        int cond_rows = 0;
        for (const auto& s : batch) cond_rows += static_cast<int>(s.conditions.size() * s.x0.rows());
        if (cond_rows > 0) {
            MatT<T> stacked(cond_rows, dims.pose_dim);
            int at = 0;
            for (int b = 0; b < B; ++b) {
                for (const auto& c : batch[b].conditions) {
                    stacked.middleRows(at, c.rows()) = c;
                    at += static_cast<int>(c.rows());
                    ibatch.owner.push_back(b);
                }
            }
            ibatch.conditions = tape.constant(std::move(stacked));
        }
        const bool any_spatial = std::any_of(batch.begin(), batch.end(), [](const auto& s) { return s.spatial.has_value(); });
        if (any_spatial) {
            MatT<T> sp = MatT<T>::Zero(rows, dims.spatial_dim());
            for (int b = 0; b < B; ++b)
                if (batch[b].spatial) sp.middleRows(segs.start[b], segs.length[b]) = *batch[b].spatial;
            ibatch.spatial = tape.constant(std::move(sp));
        }
        Var im_cond = cond;
        if (std::any_of(batch.begin(), batch.end(), [](const auto& s) { return s.inter_text.has_value(); })) {
            MatT<T> itext(B, dims.text_dim);
            for (int b = 0; b < B; ++b) itext.row(b) = batch[b].inter_text ? *batch[b].inter_text : batch[b].text;
            im_cond = gm_condition(gb, dims, ts, itext);
        }
        residuals = im_forward(*ib, dims, ibatch, im_cond).residuals;
    }
    const GenOutput out = gm_forward(gb, dims, x, cond, segs, residuals);
    const MatT<T> pred = tape.value(out.x0_hat);

    const bool want_grad = gen_grads || inter_grads;
    MatT<T> seed;
    if (want_grad) seed = MatT<T>::Zero(pred.rows(), pred.cols());
    LossParts total;
    for (int b = 0; b < B; ++b) {
        const MatT<T> hat = pred.middleRows(segs.start[b], segs.length[b]);
        std::vector<MatT<T>> raw_conds;
        for (const auto& c : batch[b].conditions) raw_conds.push_back(stats.denormalize(c));
        std::vector<const MatT<T>*> cptr;
        for (const auto& c : raw_conds) cptr.push_back(&c);
        MatT<T> g;
        if (want_grad) g = MatT<T>::Zero(hat.rows(), hat.cols());
        total += motion_loss(batch[b].x0, hat, skeleton, weights, cptr, want_grad ? &g : nullptr, 1.0 / B, &stats);
        if (want_grad) seed.middleRows(segs.start[b], segs.length[b]) = g;
    }
    total *= 1.0 / B;
    if (want_grad) tape.backward(out.x0_hat, seed);
    return total;
}

namespace {

struct Prepared {
    std::vector<MatT<float>> norm;  // per person
    std::vector<Mat> raw;
    std::vector<Mat> single_emb;
    Mat inter_emb;
    int persons() const { return static_cast<int>(norm.size()); }
};

std::vector<Prepared> prepare(const std::vector<TrainItem>& items, const FeatureStats& stats, const TextEmbedder& te) {
    std::vector<Prepared> out;
    out.reserve(items.size());
    for (const auto& it : items) {
        if (it.motions.empty()) throw InvalidDataset("training item without motions");
        if (it.texts_single.size() != it.motions.size()) throw InvalidDataset("training item lacks per-person texts");
        Prepared p;
        for (std::size_t i = 0; i < it.motions.size(); ++i) {
            if (it.motions[i].cols() != stats.dim()) throw InvalidDataset("training item feature width mismatch");
            p.raw.push_back(it.motions[i]);
            p.norm.push_back(stats.normalize<float>(it.motions[i].cast<float>()));
            p.single_emb.push_back(te.embed(it.texts_single[i]));
        }
        p.inter_emb = te.embed(it.text_interactive);
        out.push_back(std::move(p));
    }
    return out;
}

/// Shared epoch/batch loop. `make_sample` fills one StepSample from an item;
/// `update` runs one optimisation step on a prepared batch at the given
/// learning-rate multiplier.
struct Loop {
    const TrainConfig& cfg;
    const LogFn& on_log;
    std::vector<LogRow> log;

    template <typename MakeSample, typename Update>
    long run(std::size_t n_items, Rng& rng, MakeSample&& make_sample, Update&& update) {
        long step = 0;
        const long per_epoch = static_cast<long>((n_items + cfg.batch_size - 1) / cfg.batch_size);
        long total = per_epoch * cfg.epochs;
        if (cfg.max_steps > 0) total = std::min(total, cfg.max_steps);
        LossParts acc;
        int acc_n = 0;
        std::vector<std::size_t> order(n_items);
        for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
            std::iota(order.begin(), order.end(), std::size_t{0});
            std::shuffle(order.begin(), order.end(), rng);
            for (std::size_t i = 0; i < n_items; i += static_cast<std::size_t>(cfg.batch_size)) {
                std::vector<StepSample<float>> batch;
                for (std::size_t j = i; j < std::min(n_items, i + static_cast<std::size_t>(cfg.batch_size)); ++j)
                    batch.push_back(make_sample(order[j], rng));
                const double lr_factor =
                    cfg.lr_cosine_decay ? 0.5 * (1.0 + std::cos(M_PI * static_cast<double>(step) / total)) : 1.0;
                const LossParts l = update(batch, lr_factor);
                ++step;
                if (!std::isfinite(l.total))
                    throw NumericalError("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                         std::to_string(step));
                acc += l;
                ++acc_n;
                const bool last = cfg.max_steps > 0 && step >= cfg.max_steps;
                if (step % cfg.log_every == 0 || last) {
                    acc *= 1.0 / acc_n;
                    log.push_back({epoch, step, acc});
                    if (on_log) on_log(log.back());
                    acc = {};
                    acc_n = 0;
                }
                if (last) return step;
            }
        }
        if (acc_n > 0) {
            acc *= 1.0 / acc_n;
            log.push_back({cfg.epochs, step, acc});
            if (on_log) on_log(log.back());
        }
        return step;
    }
};

MatT<float> noise_like(const MatT<float>& x, Rng& rng) { return gaussian_noise<float>(x.rows(), x.cols(), rng); }

int draw_t(int T, Rng& rng) { return std::uniform_int_distribution<int>(1, T)(rng); }

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

TrainResult train_interaction(const std::vector<TrainItem>& items, const Model& base, const TrainConfig& cfg,
                              const LogFn& on_log, bool spatial) {
    cfg.validate();
    if (items.empty()) throw InvalidDataset("empty training set");
    const auto t0 = std::chrono::steady_clock::now();
    Model model = base;
    model.text_mode = cfg.text_mode;
    if (!spatial) {
        model.inter = init_interaction(model.gen, model.dims, mix_seed(cfg.seed, 0x1417));
    } else if (!model.inter) {
        throw InvalidArgument("spatial training needs a checkpoint with an interaction network");
    }
    if (spatial && (!model.skeleton || model.dims.joints == 0))
        throw InvalidArgument("spatial training needs motion data with a skeleton");
    const std::string frozen = params_sha256(model.gen);
    const TextEmbedder te = model.make_embedder();
    const NoiseSchedule schedule = model.make_noise_schedule();
    const std::vector<Prepared> data = prepare(items, model.stats, te);
    const SkeletonDef* skel = model.skeleton ? &*model.skeleton : nullptr;

    Rng rng(mix_seed(cfg.seed, spatial ? 3 : 2));
    AdamW<float> opt(cfg.learning_rate, cfg.weight_decay);
    ParamSet<float> grads = model.inter->zeros_like();
    std::bernoulli_distribution drop_text(cfg.text_dropout), keep_cond(cfg.condition_keep);

    auto make_sample = [&](std::size_t idx, Rng& r) {
        const Prepared& p = data[idx];
        std::vector<int> perm(static_cast<std::size_t>(p.persons()));
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), r);
        const int target = perm[0];
        StepSample<float> s;
        s.x0 = p.norm[target];
        s.t = draw_t(schedule.steps(), r);
        s.noise = noise_like(s.x0, r);
        // the frozen generation network keeps the per-person text it was trained on
        const Mat& emb = p.single_emb[target];
        const bool drop = drop_text(r);
        s.text = drop ? MatT<float>::Zero(1, emb.cols()) : MatT<float>(emb.cast<float>());
        if (cfg.text_mode == TextMode::interactive)
            s.inter_text = drop ? MatT<float>::Zero(1, emb.cols()) : MatT<float>(p.inter_emb.cast<float>());
        for (std::size_t i = 1; i < perm.size(); ++i)
            if (keep_cond(r)) s.conditions.push_back(p.norm[perm[i]]);
        if (spatial) {
            const SpatialSignal sig = random_spatial_signal(p.raw[target], model.dims.joints, cfg.spatial_frame_keep, r);
            s.spatial = spatial_features(sig).cast<float>();
        }
        return s;
    };
    auto update = [&](const std::vector<StepSample<float>>& batch, double lr_factor) {
        opt.lr = cfg.learning_rate * lr_factor;
        for (auto& [name, g] : grads.arrays()) g.setZero();
        const LossParts l = step_loss<float>(model.gen, &*model.inter, model.dims, skel, model.stats, cfg.weights,
                                             schedule, batch, nullptr, &grads);
        opt.step(*model.inter, grads);
        return l;
    };
    Loop loop{cfg, on_log, {}};
    TrainResult res;
    res.steps = loop.run(data.size(), rng, make_sample, update);
    model.interaction_steps += res.steps;
    if (params_sha256(model.gen) != frozen) throw std::logic_error("generation parameters changed while frozen");
    if (!model.inter->all_finite()) throw NumericalError("interaction parameters became non-finite");
    res.log = std::move(loop.log);
    res.rng_state = rng_to_string(rng);
    res.model = std::move(model);
    res.seconds = seconds_since(t0);
    return res;
}

}  // namespace

TrainResult train_stage1(const std::vector<TrainItem>& items, const std::optional<SkeletonDef>& skeleton,
                         const TrainConfig& cfg, const LogFn& on_log) {
    cfg.validate();
    if (items.empty()) throw InvalidDataset("empty training set");
    const auto t0 = std::chrono::steady_clock::now();
    Model model;
    model.dims = cfg.dims;
    model.skeleton = skeleton;
    model.diffusion_steps = cfg.diffusion_steps;
    model.schedule = cfg.schedule;
    model.text_mode = cfg.text_mode;
    if (skeleton && pose_dim(skeleton->joint_count) != cfg.dims.pose_dim)
        throw InvalidArgument("stage 1: pose_dim does not match the skeleton");
    std::vector<const Mat*> all;
    for (const auto& it : items)
        for (const auto& m : it.motions) all.push_back(&m);
    model.stats = FeatureStats::fit(all);
    model.gen = init_generation<float>(model.dims, mix_seed(cfg.seed, 0x9e11));

    const TextEmbedder te = model.make_embedder();
    const NoiseSchedule schedule = model.make_noise_schedule();
    const std::vector<Prepared> data = prepare(items, model.stats, te);
    const SkeletonDef* skel = model.skeleton ? &*model.skeleton : nullptr;

    Rng rng(mix_seed(cfg.seed, 1));
    AdamW<float> opt(cfg.learning_rate, cfg.weight_decay);
    ParamSet<float> grads = model.gen.zeros_like();
    std::bernoulli_distribution drop_text(cfg.text_dropout);

    auto make_sample = [&](std::size_t idx, Rng& r) {
        const Prepared& p = data[idx];
        const int person = std::uniform_int_distribution<int>(0, p.persons() - 1)(r);
        StepSample<float> s;
        s.x0 = p.norm[person];
        s.t = draw_t(schedule.steps(), r);
        s.noise = noise_like(s.x0, r);
        const Mat& emb = p.single_emb[person];
        s.text = drop_text(r) ? MatT<float>::Zero(1, emb.cols()) : MatT<float>(emb.cast<float>());
        return s;
    };
    auto update = [&](const std::vector<StepSample<float>>& batch, double lr_factor) {
        opt.lr = cfg.learning_rate * lr_factor;
        for (auto& [name, g] : grads.arrays()) g.setZero();
        const LossParts l = step_loss<float>(model.gen, nullptr, model.dims, skel, model.stats, cfg.weights, schedule,
                                             batch, &grads, nullptr);
        opt.step(model.gen, grads);
        return l;
    };
    Loop loop{cfg, on_log, {}};
    TrainResult res;
    res.steps = loop.run(data.size(), rng, make_sample, update);
    if (!model.gen.all_finite()) throw NumericalError("generation parameters became non-finite");
    res.log = std::move(loop.log);
    res.rng_state = rng_to_string(rng);
    res.model = std::move(model);
    res.seconds = seconds_since(t0);
    return res;
}

TrainResult train_stage2(const std::vector<TrainItem>& items, const Model& base, const TrainConfig& cfg,
                         const LogFn& on_log) {
    return train_interaction(items, base, cfg, on_log, false);
}

TrainResult train_spatial(const std::vector<TrainItem>& items, const Model& base, const TrainConfig& cfg,
                          const LogFn& on_log) {
    return train_interaction(items, base, cfg, on_log, true);
}

#define POLYMOTION_INSTANTIATE(T)                                                                                \
    template LossParts step_loss<T>(const ParamSet<T>&, const ParamSet<T>*, const NetDims&, const SkeletonDef*,  \
                                    const FeatureStats&, const LossWeights&, const NoiseSchedule&,               \
                                    const std::vector<StepSample<T>>&, ParamSet<T>*, ParamSet<T>*);

POLYMOTION_INSTANTIATE(float)
POLYMOTION_INSTANTIATE(double)

#undef POLYMOTION_INSTANTIATE

}  // namespace polymotion
