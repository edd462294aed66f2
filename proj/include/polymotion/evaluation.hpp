#pragma once

#include "polymotion/sampler.hpp"
#include "polymotion/training.hpp"

#include <Eigen/Core>

#include <optional>

namespace polymotion {

// ---------------------------------------------------------------- metrics

/// Frechet distance between Gaussians fitted to the rows of `a` and `b`.
/// Returns max(raw, 0); `raw` receives the unclamped value.
double fid(const Mat& a, const Mat& b, double* raw = nullptr);

/// Fraction of anchors whose true text ranks within the top k (k = 1..k_max)
/// among itself and P - 1 random distractors, by Euclidean distance between
/// embeddings. Ties are broken at random. Row i of both inputs is a matched pair.
std::vector<double> r_precision(const Mat& motion_emb, const Mat& text_emb, int pool_size, int k_max, Rng& rng);

/// Mean distance over `n_pairs` random row pairs.
double diversity(const Mat& feats, int n_pairs, Rng& rng);

/// Mean distance between matched rows.
double mm_dist(const Mat& motion_emb, const Mat& text_emb);

/// Mean pairwise distance within each group, averaged over groups.
double mmodality(const std::vector<Mat>& groups);

struct MetricStat {
    double mean = 0.0;
    double ci95 = 0.0;
};

MetricStat summarize(const std::vector<double>& values);

// -------------------------------------------------------------- evaluator

struct EvaluatorConfig {
    int embed_dim = 32;
    int hidden = 128;
    int text_hidden = 64;
    int epochs = 200;
    int batch_size = 64;
    double learning_rate = 1e-3;
    double temperature = 0.1;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Contrastive text/motion encoder pair. Motions enter as F x W features
/// (W = persons x D); both encoders output unit vectors.
class Evaluator {
public:
    Evaluator() = default;
    Evaluator(int motion_width, const TextEmbedder& te, const EvaluatorConfig& cfg);

    Mat embed_motions(const std::vector<Mat>& motions) const;
    /// Uses the text encoder the evaluator was trained with.
    Mat embed_texts(const std::vector<std::string>& texts) const;
    TextEmbedder text_embedder() const { return TextEmbedder(text_vocab_, text_dim_, text_seed_); }

    int motion_width() const { return motion_width_; }
    ParamSet<float>& params() { return params_; }
    const ParamSet<float>& params() const { return params_; }
    FeatureStats& stats() { return stats_; }
    const FeatureStats& stats() const { return stats_; }
    const EvaluatorConfig& config() const { return cfg_; }

    template <typename T>
    ad::Var motion_branch(Binder<T>& p, ad::Var x, const ad::Segments& segs) const;
    template <typename T>
    ad::Var text_branch(Binder<T>& p, ad::Var text) const;

    Checkpoint to_checkpoint() const;
    static Evaluator from_checkpoint(const Checkpoint& c);

private:
    int motion_width_ = 0;
    int text_dim_ = 0;
    int text_vocab_ = 0;
    std::uint64_t text_seed_ = 0;
    EvaluatorConfig cfg_;
    ParamSet<float> params_;
    FeatureStats stats_;
};

/// Channel-concatenated F x (N*D) view of a multi-person sample.
Mat pair_features(const std::vector<Mat>& motions);

/// Trains on (motion, text) pairs with a symmetric contrastive loss; pairs
/// sharing a text are all treated as positives.
Evaluator train_evaluator(const std::vector<Mat>& motions, const std::vector<std::string>& texts,
                          const TextEmbedder& te, const EvaluatorConfig& cfg, const LogFn& on_log = {});

// ----------------------------------------------------- generation metrics

struct EvalConfig {
    int n_records = 0;  // 0: every test record
    int pool_size = 8;
    int top_k = 3;
    int repetitions = 10;
    int diversity_pairs = 100;
    int mmodality_texts = 10;
    int mmodality_repeats = 8;
    int batch_size = 50;
    std::uint64_t seed = 0;
    /// Text of the interaction network: per-person or interactive. Unset
    /// follows the mode the model was trained with. The generation network
    /// always gets the per-person texts.
    std::optional<TextMode> interaction_text;
    double guidance_scale = 2.0;
    int inference_steps = 50;

    void validate() const;
};

/// Metric name -> {mean, ci95}.
using MetricReport = std::map<std::string, MetricStat>;

/// Generates every selected test record with `model`, then scores the
/// generations against the ground truth with `evaluator`. Keys: fid,
/// r_precision_top1..k, diversity, mm_dist, mmodality, plus gt_* values of
/// the ground truth itself.
MetricReport evaluate_generation(const Model& model, const Evaluator& evaluator,
                                 const std::vector<SampleRecord>& test, const EvalConfig& cfg);

nlohmann::json report_to_json(const MetricReport& r);

/// Generates pairs for `records` with the texts `cfg` selects.
std::vector<std::vector<Mat>> generate_for_records(const Model& model, const std::vector<SampleRecord>& records,
                                                   const EvalConfig& cfg, std::uint64_t seed);

// --------------------------------------------------------- Gaussian oracle

struct GaussianTask {
    int d = 1;  // dimension per person
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;

    /// Zero mean, unit variances, corr(x1_i, x2_i) = rho for each coordinate i.
    static GaussianTask correlated(double rho, int d = 1);
    static GaussianTask independent(int d);      // zero mean, identity covariance
    void validate() const;
    /// n x 2d draws.
    Mat sample(int n, Rng& rng) const;
    /// d x d matrix B with E[x2 | x1] = mu2 + B (x1 - mu1); the slope when d = 1.
    Eigen::MatrixXd conditional_regression() const;
};

/// Training items with person 1 = first d coordinates and person 2 = the rest.
std::vector<TrainItem> oracle_items(const GaussianTask& task, int n, std::uint64_t seed);

struct OracleRecipe {
    int n_train = 20000;
    NetDims dims{1, 0, 32, 4, 2, 1, 64};
    long stage1_steps = 10000;
    long stage2_steps = 10000;
    int batch_size = 128;
    double learning_rate = 3e-3;
    bool lr_cosine_decay = true;
    int diffusion_steps = 1000;
    std::uint64_t seed = 0;

    void validate() const;
};

/// Stage 1 + stage 2 on the Gaussian task with reconstruction loss only.
/// stage2_steps = 0 attaches a freshly initialised interaction network.
Model train_oracle(const GaussianTask& task, const OracleRecipe& recipe, const LogFn& on_log = {});

struct OracleTolerances {
    double mean = 0.05;
    double cov_frobenius = 0.15;
    double slope = 0.1;
};

struct OracleReport {
    Eigen::VectorXd mean_emp, mean_true;
    Eigen::MatrixXd cov_emp, cov_true;
    Eigen::MatrixXd regression_emp, regression_true;  // d x d; max abs difference is slope_err
    double mean_err = 0.0, cov_err = 0.0, slope_err = 0.0;
    int n_samples = 0;
    bool pass = false;

    nlohmann::json to_json() const;
};

/// Draws n_samples two-person samples recursively and compares moments with
/// the analytic ones. mean_err is the largest absolute mean deviation. Models whose interaction network has never been trained
/// are rejected unless `allow_untrained` is set.
OracleReport verify_factorization(const GaussianTask& task, const Model& model, int n_samples,
                                  const OracleTolerances& tol, std::uint64_t seed, bool allow_untrained = false,
                                  double guidance_scale = 1.0, int inference_steps = 250);

}  // namespace polymotion
