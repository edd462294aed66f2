#include "polymotion/evaluation.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace polymotion {

using ad::Segments;
using ad::Var;

// ---------------------------------------------------------------- metrics

namespace {

void check_finite(const Mat& m, const char* what) {
    if (!m.allFinite()) throw InvalidArgument(std::string(what) + ": features must be finite");
}

Eigen::MatrixXd covariance(const Mat& x, const Eigen::RowVectorXd& mean) {
    const Eigen::MatrixXd c = x.rowwise() - mean;
    return (c.transpose() * c) / static_cast<double>(x.rows() - 1);
}

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
    const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
    const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double fid(const Mat& a, const Mat& b, double* raw) {
    check_finite(a, "fid");
    check_finite(b, "fid");
    if (a.cols() != b.cols()) throw InvalidArgument("fid: feature widths differ");
    if (a.rows() <= a.cols() || b.rows() <= b.cols()) throw InvalidArgument("fid: need more samples than dimensions");
    const Eigen::RowVectorXd ma = a.colwise().mean(), mb = b.colwise().mean();
    const Eigen::MatrixXd ca = covariance(a, ma), cb = covariance(b, mb);
    const Eigen::MatrixXd sa = psd_sqrt(ca);
    const Eigen::MatrixXd inner = sa * cb * sa;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
    const double tr_root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
    const double value = (ma - mb).squaredNorm() + ca.trace() + cb.trace() - 2.0 * tr_root;
    if (raw) *raw = value;
    return std::max(value, 0.0);
}

std::vector<double> r_precision(const Mat& motion_emb, const Mat& text_emb, int pool_size, int k_max, Rng& rng) {
    if (pool_size < 2) throw InvalidArgument("r_precision: pool size must be >= 2");
    if (k_max < 1) throw InvalidArgument("r_precision: k must be >= 1");
    const int n = static_cast<int>(motion_emb.rows());
    if (text_emb.rows() != n || text_emb.cols() != motion_emb.cols())
        throw InvalidArgument("r_precision: embeddings must be matched row by row");
    if (n < pool_size) throw InvalidArgument("r_precision: need at least pool_size pairs");
    std::vector<double> hits(static_cast<std::size_t>(k_max), 0.0);
    std::vector<int> others(static_cast<std::size_t>(n - 1));
    std::uniform_real_distribution<double> jitter(0.0, 1.0);
    for (int i = 0; i < n; ++i) {
        std::iota(others.begin(), others.end(), 0);
        for (int& o : others)
            if (o >= i) ++o;
        // partial Fisher-Yates: first pool_size - 1 entries become the distractors
        for (int s = 0; s < pool_size - 1; ++s) {
            const int pick = std::uniform_int_distribution<int>(s, n - 2)(rng);
            std::swap(others[s], others[pick]);
        }
        const double own = (motion_emb.row(i) - text_emb.row(i)).norm();
        const double own_key = jitter(rng);
        int rank = 0;
        for (int s = 0; s < pool_size - 1; ++s) {
            const double dist = (motion_emb.row(i) - text_emb.row(others[s])).norm();
            const double key = jitter(rng);
            if (dist < own || (dist == own && key < own_key)) ++rank;
        }
        for (int k = 1; k <= k_max; ++k)
            if (rank < k) hits[static_cast<std::size_t>(k - 1)] += 1.0;
    }
    for (double& h : hits) h /= n;
    return hits;
}

double diversity(const Mat& feats, int n_pairs, Rng& rng) {
    if (feats.rows() < 2) throw InvalidArgument("diversity: need at least 2 samples");
    if (n_pairs < 1) throw InvalidArgument("diversity: need at least one pair");
    std::uniform_int_distribution<Eigen::Index> pick(0, feats.rows() - 1);
    double total = 0;
    for (int p = 0; p < n_pairs; ++p) total += (feats.row(pick(rng)) - feats.row(pick(rng))).norm();
    return total / n_pairs;
}

double mm_dist(const Mat& motion_emb, const Mat& text_emb) {
    if (motion_emb.rows() != text_emb.rows() || motion_emb.cols() != text_emb.cols())
        throw InvalidArgument("mm_dist: embeddings must be matched row by row");
    if (motion_emb.rows() == 0) throw InvalidArgument("mm_dist: no samples");
    return (motion_emb - text_emb).rowwise().norm().mean();
}

double mmodality(const std::vector<Mat>& groups) {
    if (groups.empty()) throw InvalidArgument("mmodality: no groups");
    double total = 0;
    for (const Mat& g : groups) {
        if (g.rows() < 2) throw InvalidArgument("mmodality: each group needs at least 2 samples");
        double sum = 0;
        int pairs = 0;
        for (Eigen::Index i = 0; i < g.rows(); ++i)
            for (Eigen::Index j = i + 1; j < g.rows(); ++j, ++pairs) sum += (g.row(i) - g.row(j)).norm();
        total += sum / pairs;
    }
    return total / static_cast<double>(groups.size());
}

MetricStat summarize(const std::vector<double>& values) {
    if (values.empty()) return {};
    const double n = static_cast<double>(values.size());
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
    if (values.size() < 2) return {mean, 0.0};
    double var = 0;
    for (double v : values) var += (v - mean) * (v - mean);
    var /= n - 1;
    return {mean, 1.96 * std::sqrt(var / n)};
}

// -------------------------------------------------------------- evaluator

void EvaluatorConfig::validate() const {
    if (embed_dim < 1 || hidden < 1 || text_hidden < 1) throw InvalidArgument("evaluator: widths must be >= 1");
    if (epochs < 1) throw InvalidArgument("evaluator: epochs must be >= 1");
    if (batch_size < 2) throw InvalidArgument("evaluator: batch_size must be >= 2");
    if (!(learning_rate >= 0)) throw InvalidArgument("evaluator: learning_rate must be >= 0");
    if (!(temperature > 0)) throw InvalidArgument("evaluator: temperature must be > 0");
}

namespace {

MatT<float> uniform_matrix(Rng& rng, int rows, int cols) {
    std::uniform_real_distribution<double> u(-1.0 / std::sqrt(rows), 1.0 / std::sqrt(rows));
    MatT<float> m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(u(rng));
    return m;
}

void add_layer(ParamSet<float>& p, Rng& rng, const std::string& name, int in, int out) {
    p.add(name + ".w", uniform_matrix(rng, in, out));
    p.add(name + ".b", MatT<float>::Zero(1, out));
}

}  // namespace

Evaluator::Evaluator(int motion_width, const TextEmbedder& te, const EvaluatorConfig& cfg)
    : motion_width_(motion_width), text_dim_(te.dim()), text_vocab_(te.vocab()), text_seed_(te.seed()), cfg_(cfg) {
    cfg.validate();
    Rng rng(mix_seed(cfg.seed, 0xe7a1));
    add_layer(params_, rng, "motion1", motion_width, cfg.hidden);
    add_layer(params_, rng, "motion2", cfg.hidden, cfg.hidden);
    add_layer(params_, rng, "motion3", cfg.hidden, cfg.embed_dim);
    add_layer(params_, rng, "text1", text_dim_, cfg.text_hidden);
    add_layer(params_, rng, "text2", cfg.text_hidden, cfg.embed_dim);
    stats_ = FeatureStats::identity(motion_width);
}

template <typename T>
Var Evaluator::motion_branch(Binder<T>& p, Var x, const Segments& segs) const {
    auto& tape = p.tape();
    Var h = tape.silu(tape.linear(x, p("motion1.w"), p("motion1.b")));
    h = tape.silu(tape.linear(h, p("motion2.w"), p("motion2.b")));
    h = tape.linear(tape.segment_mean(h, segs), p("motion3.w"), p("motion3.b"));
    return tape.l2_normalize_rows(h);
}

template <typename T>
Var Evaluator::text_branch(Binder<T>& p, Var text) const {
    auto& tape = p.tape();
    const Var h = tape.silu(tape.linear(text, p("text1.w"), p("text1.b")));
    return tape.l2_normalize_rows(tape.linear(h, p("text2.w"), p("text2.b")));
}

template Var Evaluator::motion_branch<float>(Binder<float>&, Var, const Segments&) const;
template Var Evaluator::text_branch<float>(Binder<float>&, Var) const;

Mat Evaluator::embed_motions(const std::vector<Mat>& motions) const {
    if (motions.empty()) return Mat(0, cfg_.embed_dim);
    Segments segs;
    for (const Mat& m : motions) {
        if (m.cols() != motion_width_) throw InvalidArgument("evaluator: motion width mismatch");
        segs.push(static_cast<int>(m.rows()));
    }
    MatT<float> x(segs.total_rows(), motion_width_);
    for (std::size_t i = 0; i < motions.size(); ++i)
        x.middleRows(segs.start[i], segs.length[i]) = stats_.normalize<float>(motions[i].cast<float>());
    ad::Tape<float> tape;
    Binder<float> b(tape, params_);
    return tape.value(motion_branch(b, tape.constant(std::move(x)), segs)).cast<double>();
}

Mat Evaluator::embed_texts(const std::vector<std::string>& texts) const {
    const TextEmbedder te = text_embedder();
    ad::Tape<float> tape;
    Binder<float> b(tape, params_);
    return tape.value(text_branch(b, tape.constant(te.embed_all(texts).cast<float>()))).cast<double>();
}

Checkpoint Evaluator::to_checkpoint() const {
    Checkpoint c;
    c.stage = "evaluator";
    c.arrays = params_;
    c.meta["motion_width"] = motion_width_;
    c.meta["text_dim"] = text_dim_;
    c.meta["text_vocab"] = text_vocab_;
    c.meta["text_seed"] = text_seed_;
    c.meta["embed_dim"] = cfg_.embed_dim;
    c.meta["hidden"] = cfg_.hidden;
    c.meta["text_hidden"] = cfg_.text_hidden;
    c.meta["epochs"] = cfg_.epochs;
    c.meta["temperature"] = cfg_.temperature;
    c.meta["seed"] = cfg_.seed;
    c.meta["stats_mean"] = std::vector<double>(stats_.mean.data(), stats_.mean.data() + stats_.mean.size());
    c.meta["stats_std"] = std::vector<double>(stats_.std.data(), stats_.std.data() + stats_.std.size());
    return c;
}

Evaluator Evaluator::from_checkpoint(const Checkpoint& c) {
    if (c.stage != "evaluator") throw IoError("checkpoint is not an evaluator (stage '" + c.stage + "')");
    Evaluator e;
    try {
        e.motion_width_ = c.meta.at("motion_width");
        e.text_dim_ = c.meta.at("text_dim");
        e.text_vocab_ = c.meta.at("text_vocab");
        e.text_seed_ = c.meta.at("text_seed");
        e.cfg_.embed_dim = c.meta.at("embed_dim");
        e.cfg_.hidden = c.meta.at("hidden");
        e.cfg_.text_hidden = c.meta.at("text_hidden");
        e.cfg_.epochs = c.meta.at("epochs");
        e.cfg_.temperature = c.meta.at("temperature");
        e.cfg_.seed = c.meta.at("seed");
        const auto mean = c.meta.at("stats_mean").get<std::vector<double>>();
        const auto sd = c.meta.at("stats_std").get<std::vector<double>>();
        e.stats_.mean = Eigen::Map<const Mat>(mean.data(), 1, static_cast<Eigen::Index>(mean.size()));
        e.stats_.std = Eigen::Map<const Mat>(sd.data(), 1, static_cast<Eigen::Index>(sd.size()));
    } catch (const nlohmann::json::exception& ex) {
        throw IoError(std::string("evaluator checkpoint is missing metadata: ") + ex.what());
    }
    e.params_ = c.arrays;
    return e;
}

Mat pair_features(const std::vector<Mat>& motions) {
    if (motions.empty()) throw InvalidArgument("pair_features: no motions");
    const auto F = motions.front().rows(), D = motions.front().cols();
    Mat out(F, D * static_cast<Eigen::Index>(motions.size()));
    for (std::size_t i = 0; i < motions.size(); ++i) {
        if (motions[i].rows() != F || motions[i].cols() != D) throw InvalidArgument("pair_features: shape mismatch");
        out.middleCols(D * static_cast<Eigen::Index>(i), D) = motions[i];
    }
    return out;
}

Evaluator train_evaluator(const std::vector<Mat>& motions, const std::vector<std::string>& texts,
                          const TextEmbedder& te, const EvaluatorConfig& cfg, const LogFn& on_log) {
    cfg.validate();
    if (motions.size() != texts.size() || motions.size() < 2)
        throw InvalidArgument("train_evaluator: need at least two matched (motion, text) pairs");
    Evaluator ev(static_cast<int>(motions.front().cols()), te, cfg);
    std::vector<const Mat*> ptrs;
    for (const Mat& m : motions) ptrs.push_back(&m);
    ev.stats() = FeatureStats::fit(ptrs);
    std::vector<MatT<float>> norm;
    for (const Mat& m : motions) norm.push_back(ev.stats().normalize<float>(m.cast<float>()));
    const MatT<float> text_emb = te.embed_all(texts).cast<float>();
    // Text identity classes for the soft targets.
    std::map<std::string, int> ids;
    std::vector<int> text_id;
    for (const auto& t : texts) text_id.push_back(ids.emplace(t, static_cast<int>(ids.size())).first->second);

    Rng rng(mix_seed(cfg.seed, 0xe7a2));
    AdamW<float> opt(cfg.learning_rate, 0.0);
    ParamSet<float> grads = ev.params().zeros_like();
    const std::size_t n = motions.size();
    std::vector<std::size_t> order(n);
    long step = 0;
    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_loss = 0;
        int batches = 0;
        for (std::size_t i = 0; i + 1 < n; i += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t end = std::min(n, i + static_cast<std::size_t>(cfg.batch_size));
            const int B = static_cast<int>(end - i);
            if (B < 2) break;
            Segments segs;
            for (std::size_t j = i; j < end; ++j) segs.push(static_cast<int>(norm[order[j]].rows()));
            MatT<float> x(segs.total_rows(), ev.motion_width()), t(B, te.dim());
            MatT<float> target = MatT<float>::Zero(B, B);
            for (int a = 0; a < B; ++a) {
                x.middleRows(segs.start[a], segs.length[a]) = norm[order[i + a]];
                t.row(a) = text_emb.row(static_cast<Eigen::Index>(order[i + a]));
                for (int b = 0; b < B; ++b)
                    if (text_id[order[i + a]] == text_id[order[i + b]]) target(a, b) = 1.0f;
            }
            for (int a = 0; a < B; ++a) target.row(a) /= target.row(a).sum();

            for (auto& [name, g] : grads.arrays()) g.setZero();
            ad::Tape<float> tape;
            Binder<float> bind(tape, ev.params(), &grads);
            const Var m = ev.motion_branch(bind, tape.constant(std::move(x)), segs);
            const Var te_v = ev.text_branch(bind, tape.constant(std::move(t)));
            const float inv_temp = static_cast<float>(1.0 / cfg.temperature);
            const Var logits = tape.scale(tape.matmul_nt(m, te_v), inv_temp);
            const Var logits_t = tape.scale(tape.matmul_nt(te_v, m), inv_temp);
            const Var loss = tape.scale(
                tape.add(tape.soft_cross_entropy(logits, target), tape.soft_cross_entropy(logits_t, target)), 0.5f);
            tape.backward(loss);
            opt.step(ev.params(), grads);
            epoch_loss += tape.value(loss)(0, 0);
            ++batches;
            ++step;
        }
        if (!std::isfinite(epoch_loss)) throw NumericalError("evaluator loss became non-finite");
        if (on_log && batches > 0) {
            LogRow row;
            row.epoch = epoch;
            row.step = step;
            row.loss.total = row.loss.rec = epoch_loss / batches;
            on_log(row);
        }
    }
    return ev;
}

// ----------------------------------------------------- generation metrics

void EvalConfig::validate() const {
    if (n_records < 0) throw InvalidArgument("eval: n_records must be >= 0");
    if (pool_size < 2) throw InvalidArgument("eval: pool_size must be >= 2");
    if (top_k < 1 || top_k > pool_size) throw InvalidArgument("eval: top_k must lie in [1, pool_size]");
    if (repetitions < 1) throw InvalidArgument("eval: repetitions must be >= 1");
    if (diversity_pairs < 1) throw InvalidArgument("eval: diversity_pairs must be >= 1");
    if (mmodality_texts < 0 || mmodality_repeats < 2)
        throw InvalidArgument("eval: mmodality needs texts >= 0 and repeats >= 2");
    if (batch_size < 1) throw InvalidArgument("eval: batch_size must be >= 1");
    if (!(guidance_scale >= 0)) throw InvalidArgument("eval: guidance_scale must be >= 0");
}

std::vector<std::vector<Mat>> generate_for_records(const Model& model, const std::vector<SampleRecord>& records,
                                                   const EvalConfig& cfg, std::uint64_t seed) {
    std::vector<std::vector<Mat>> out;
    for (std::size_t start = 0; start < records.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
        std::vector<GenerationRequest> reqs;
        for (std::size_t i = start; i < std::min(records.size(), start + static_cast<std::size_t>(cfg.batch_size)); ++i) {
            const SampleRecord& r = records[i];
            GenerationRequest q;
            q.texts = r.texts_single;
            if (cfg.interaction_text.value_or(model.text_mode) == TextMode::interactive && r.n_persons() > 1)
                q.interaction_texts.assign(static_cast<std::size_t>(r.n_persons()), r.text_interactive);
            q.frames = r.motions.front().frames();
            q.seed = mix_seed(seed, i);
            q.guidance_scale = cfg.guidance_scale;
            q.inference_steps = cfg.inference_steps;
            reqs.push_back(std::move(q));
        }
        // requests in one call must share person and frame counts
        std::size_t a = 0;
        while (a < reqs.size()) {
            std::size_t b = a + 1;
            while (b < reqs.size() && reqs[b].persons() == reqs[a].persons() && reqs[b].frames == reqs[a].frames) ++b;
            auto part = sample_features(model, std::vector<GenerationRequest>(reqs.begin() + a, reqs.begin() + b));
            for (auto& p : part) out.push_back(std::move(p));
            a = b;
        }
    }
    return out;
}

MetricReport evaluate_generation(const Model& model, const Evaluator& evaluator,
                                 const std::vector<SampleRecord>& test_all, const EvalConfig& cfg) {
    cfg.validate();
    std::vector<SampleRecord> test(test_all.begin(),
                                   cfg.n_records > 0 && cfg.n_records < static_cast<int>(test_all.size())
                                       ? test_all.begin() + cfg.n_records
                                       : test_all.end());
    if (static_cast<int>(test.size()) < cfg.pool_size) throw InvalidArgument("eval: fewer records than pool_size");
    const auto generated = generate_for_records(model, test, cfg, mix_seed(cfg.seed, 0x6e));
    std::vector<Mat> gen_pairs, gt_pairs;
    std::vector<std::string> texts;
    for (std::size_t i = 0; i < test.size(); ++i) {
        gen_pairs.push_back(pair_features(generated[i]));
        std::vector<Mat> gt;
        for (const auto& m : test[i].motions) gt.push_back(m.data);
        gt_pairs.push_back(pair_features(gt));
        texts.push_back(test[i].text_interactive);
    }
    const Mat gen_emb = evaluator.embed_motions(gen_pairs);
    const Mat gt_emb = evaluator.embed_motions(gt_pairs);
    const Mat text_emb = evaluator.embed_texts(texts);

    MetricReport rep;
    std::vector<std::vector<double>> rp(static_cast<std::size_t>(cfg.top_k)), gt_rp(static_cast<std::size_t>(cfg.top_k));
    std::vector<double> div, gt_div;
    for (int r = 0; r < cfg.repetitions; ++r) {
        Rng rng(mix_seed(cfg.seed, 0x1000 + static_cast<std::uint64_t>(r)));
        const auto a = r_precision(gen_emb, text_emb, cfg.pool_size, cfg.top_k, rng);
        const auto b = r_precision(gt_emb, text_emb, cfg.pool_size, cfg.top_k, rng);
        for (int k = 0; k < cfg.top_k; ++k) {
            rp[k].push_back(a[k]);
            gt_rp[k].push_back(b[k]);
        }
        div.push_back(diversity(gen_emb, cfg.diversity_pairs, rng));
        gt_div.push_back(diversity(gt_emb, cfg.diversity_pairs, rng));
    }
    for (int k = 0; k < cfg.top_k; ++k) {
        rep["r_precision_top" + std::to_string(k + 1)] = summarize(rp[k]);
        rep["gt_r_precision_top" + std::to_string(k + 1)] = summarize(gt_rp[k]);
    }
    rep["diversity"] = summarize(div);
    rep["gt_diversity"] = summarize(gt_div);
    rep["fid"] = {fid(gen_emb, gt_emb), 0.0};
    rep["mm_dist"] = {mm_dist(gen_emb, text_emb), 0.0};
    rep["gt_mm_dist"] = {mm_dist(gt_emb, text_emb), 0.0};

    const int n_mm = std::min<int>(cfg.mmodality_texts, static_cast<int>(test.size()));
    if (n_mm > 0) {
        std::vector<SampleRecord> repeated;
        for (int i = 0; i < n_mm; ++i)
            for (int r = 0; r < cfg.mmodality_repeats; ++r) repeated.push_back(test[static_cast<std::size_t>(i)]);
        const auto mm_gen = generate_for_records(model, repeated, cfg, mix_seed(cfg.seed, 0x33));
        std::vector<Mat> pairs;
        for (const auto& g : mm_gen) pairs.push_back(pair_features(g));
        const Mat emb = evaluator.embed_motions(pairs);
        std::vector<Mat> groups;
        for (int i = 0; i < n_mm; ++i) groups.push_back(emb.middleRows(i * cfg.mmodality_repeats, cfg.mmodality_repeats));
        rep["mmodality"] = {mmodality(groups), 0.0};
    }
    return rep;
}

nlohmann::json report_to_json(const MetricReport& r) {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [name, s] : r) j[name] = {{"mean", s.mean}, {"ci95", s.ci95}};
    return j;
}

// --------------------------------------------------------- Gaussian oracle

GaussianTask GaussianTask::correlated(double rho, int d) {
    GaussianTask t = independent(d);
    t.cov.topRightCorner(d, d).diagonal().setConstant(rho);
    t.cov.bottomLeftCorner(d, d).diagonal().setConstant(rho);
    return t;
}

void GaussianTask::validate() const {
    if (d < 1) throw InvalidArgument("gaussian task: d must be >= 1");
    if (mean.size() != 2 * d || cov.rows() != 2 * d || cov.cols() != 2 * d)
        throw InvalidArgument("gaussian task: mean/cov must have 2d entries");
    if (!cov.isApprox(cov.transpose(), 1e-12)) throw InvalidArgument("gaussian task: cov must be symmetric");
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success) throw InvalidArgument("gaussian task: cov must be positive-definite");
}

Mat GaussianTask::sample(int n, Rng& rng) const {
    validate();
    const Eigen::MatrixXd L = Eigen::LLT<Eigen::MatrixXd>(cov).matrixL();
    std::normal_distribution<double> normal(0.0, 1.0);
    Mat out(n, 2 * d);
    Eigen::VectorXd z(2 * d);
    for (int i = 0; i < n; ++i) {
        for (int k = 0; k < 2 * d; ++k) z(k) = normal(rng);
        out.row(i) = (mean + L * z).transpose();
    }
    return out;
}

GaussianTask GaussianTask::independent(int d) {
    GaussianTask t;
    t.d = d;
    t.mean = Eigen::VectorXd::Zero(2 * d);
    t.cov = Eigen::MatrixXd::Identity(2 * d, 2 * d);
    return t;
}

namespace {

Eigen::MatrixXd regression_block(const Eigen::MatrixXd& cov, int d) {
    // B = S21 S11^-1, solved as S11 B^T = S12
    return cov.topLeftCorner(d, d).ldlt().solve(cov.topRightCorner(d, d)).transpose();
}

}  // namespace

Eigen::MatrixXd GaussianTask::conditional_regression() const {
    validate();
    return regression_block(cov, d);
}

std::vector<TrainItem> oracle_items(const GaussianTask& task, int n, std::uint64_t seed) {
    Rng rng(seed);
    const Mat draws = task.sample(n, rng);
    std::vector<TrainItem> items(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        TrainItem& it = items[static_cast<std::size_t>(i)];
        it.motions.push_back(draws.block(i, 0, 1, task.d));
        it.motions.push_back(draws.block(i, task.d, 1, task.d));
        it.texts_single = {"person one", "person two"};
        it.text_interactive = "two people";
    }
    return items;
}

void OracleRecipe::validate() const {
    if (n_train < 2) throw InvalidArgument("oracle: n_train must be >= 2");
    if (stage1_steps < 1 || stage2_steps < 0) throw InvalidArgument("oracle: need stage1_steps >= 1, stage2_steps >= 0");
    dims.validate();
}

Model train_oracle(const GaussianTask& task, const OracleRecipe& recipe, const LogFn& on_log) {
    task.validate();
    recipe.validate();
    if (recipe.dims.pose_dim != task.d) throw InvalidArgument("oracle: dims.pose_dim must equal the task dimension");
    const auto items = oracle_items(task, recipe.n_train, mix_seed(recipe.seed, 0x0a));
    TrainConfig c1 = TrainConfig::defaults(Stage::one);
    c1.dims = recipe.dims;
    c1.epochs = 1000000;
    c1.max_steps = recipe.stage1_steps;
    c1.batch_size = recipe.batch_size;
    c1.learning_rate = recipe.learning_rate;
    c1.lr_cosine_decay = recipe.lr_cosine_decay;
    c1.diffusion_steps = recipe.diffusion_steps;
    c1.weights = LossWeights::reconstruction_only();
    c1.seed = recipe.seed;
    c1.log_every = 100;
    const TrainResult s1 = train_stage1(items, std::nullopt, c1, on_log);
    if (recipe.stage2_steps == 0) {
        Model m = s1.model;
        m.inter = init_interaction<float>(m.gen, m.dims, mix_seed(recipe.seed, 0x1417));
        m.text_mode = TextMode::single;
        return m;
    }
    TrainConfig c2 = c1;
    c2.stage = Stage::two;
    c2.max_steps = recipe.stage2_steps;
    c2.text_mode = TextMode::single;
    return train_stage2(items, s1.model, c2, on_log).model;
}

nlohmann::json OracleReport::to_json() const {
    auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
    auto mat = [](const Eigen::MatrixXd& m) {
        nlohmann::json rows = nlohmann::json::array();
        for (Eigen::Index r = 0; r < m.rows(); ++r) {
            std::vector<double> row;
            for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
            rows.push_back(row);
        }
        return rows;
    };
    return {{"n_samples", n_samples},
            {"mean_empirical", vec(mean_emp)},
            {"mean_analytic", vec(mean_true)},
            {"cov_empirical", mat(cov_emp)},
            {"cov_analytic", mat(cov_true)},
            {"regression_empirical", mat(regression_emp)},
            {"regression_analytic", mat(regression_true)},
            {"mean_error", mean_err},
            {"cov_frobenius_error", cov_err},
            {"slope_error", slope_err},
            {"pass", pass}};
}

OracleReport verify_factorization(const GaussianTask& task, const Model& model, int n_samples,
                                  const OracleTolerances& tol, std::uint64_t seed, bool allow_untrained,
                                  double guidance_scale, int inference_steps) {
    task.validate();
    if (model.dims.pose_dim != task.d) throw InvalidArgument("verify_factorization: model width != task dimension");
    if (!model.has_interaction() || (model.interaction_steps == 0 && !allow_untrained))
        throw InvalidArgument("verify_factorization: pipeline has no trained interaction network");
    if (n_samples < 3) throw InvalidArgument("verify_factorization: n_samples must be >= 3");
    std::vector<GenerationRequest> reqs(static_cast<std::size_t>(n_samples));
    for (int i = 0; i < n_samples; ++i) {
        GenerationRequest& q = reqs[static_cast<std::size_t>(i)];
        q.texts = {"person one", "person two"};
        q.frames = 1;
        q.seed = mix_seed(seed, static_cast<std::uint64_t>(i));
        q.guidance_scale = guidance_scale;
        q.inference_steps = inference_steps;
    }
    const auto out = sample_features(model, reqs);
    const int d = task.d;
    Mat x(n_samples, 2 * d);
    for (int i = 0; i < n_samples; ++i) {
        x.block(i, 0, 1, d) = out[static_cast<std::size_t>(i)][0].row(0);
        x.block(i, d, 1, d) = out[static_cast<std::size_t>(i)][1].row(0);
    }
    OracleReport rep;
    rep.n_samples = n_samples;
    rep.mean_true = task.mean;
    rep.cov_true = task.cov;
    rep.mean_emp = x.colwise().mean().transpose();
    rep.cov_emp = covariance(x, rep.mean_emp.transpose());
    rep.regression_true = task.conditional_regression();
    rep.regression_emp = regression_block(rep.cov_emp, d);
    rep.mean_err = (rep.mean_emp - rep.mean_true).cwiseAbs().maxCoeff();
    rep.cov_err = (rep.cov_emp - rep.cov_true).norm();
    rep.slope_err = (rep.regression_emp - rep.regression_true).cwiseAbs().maxCoeff();
    rep.pass = rep.regression_emp.allFinite() && rep.mean_err <= tol.mean && rep.cov_err < tol.cov_frobenius &&
               rep.slope_err <= tol.slope;
    return rep;
}

}  // namespace polymotion
