#include "doctest.h"
#include "polymotion/evaluation.hpp"
#include "test_util.hpp"

#include <Eigen/QR>

using namespace polymotion;
using testutil::randn;

namespace {

Mat unit_rows(Mat m) {
    m.rowwise().normalize();
    return m;
}

}  // namespace

TEST_CASE("fid") {
    const Mat a = randn(500, 4, 1);
    double raw = 1;
    CHECK(fid(a, a, &raw) < 1e-8);
    CHECK(std::abs(raw) < 1e-8);

    Mat b = randn(100000, 4, 2);
    const Mat c0 = randn(100000, 4, 3);
    Mat c = c0;
    c.col(0).array() += 1.0;
    CHECK(fid(b, c) == doctest::Approx(1.0).epsilon(0.05));

    // invariant under a common rotation, symmetric in its arguments
    const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(randn(4, 4, 4)).householderQ();
    const Mat b_small = randn(2000, 4, 5), c_small = randn(2000, 4, 6, 1.5);
    const double f = fid(b_small, c_small);
    CHECK(fid(b_small * q, c_small * q) == doctest::Approx(f).epsilon(1e-9));
    CHECK(fid(c_small, b_small) == doctest::Approx(f).epsilon(1e-9));

    Mat bad = a;
    bad(3, 1) = std::nan("");
    CHECK_THROWS_AS(fid(bad, a), InvalidArgument);
    CHECK_THROWS_AS(fid(randn(3, 4, 7), a), InvalidArgument);
}

TEST_CASE("r precision") {
    Rng rng(1);
    SUBCASE("perfect evaluator") {
        const Mat e = Mat::Identity(40, 40);
        const auto r = r_precision(e, e, 32, 3, rng);
        CHECK(r[0] == 1.0);
    }
    SUBCASE("random embeddings sit at chance") {
        const Mat m = unit_rows(randn(10000, 16, 2)), t = unit_rows(randn(10000, 16, 3));
        const auto r = r_precision(m, t, 32, 32, rng);
        CHECK(r[0] == doctest::Approx(1.0 / 32).epsilon(0.02 * 32));
        CHECK(std::abs(r[0] - 1.0 / 32) < 0.02);
        CHECK(r[31] == 1.0);
        for (std::size_t k = 1; k < r.size(); ++k) CHECK(r[k] >= r[k - 1]);
    }
    SUBCASE("ties are broken at random") {
        const Mat z = Mat::Zero(2000, 4);
        const auto r = r_precision(z, z, 8, 1, rng);
        CHECK(std::abs(r[0] - 1.0 / 8) < 0.03);
    }
    CHECK_THROWS_AS(r_precision(Mat::Zero(10, 2), Mat::Zero(10, 2), 1, 1, rng), InvalidArgument);
    CHECK_THROWS_AS(r_precision(Mat::Zero(10, 2), Mat::Zero(9, 2), 4, 1, rng), InvalidArgument);
}

TEST_CASE("distance metrics") {
    Rng rng(2);
    const Mat same = Mat::Constant(30, 5, 0.7);
    CHECK(diversity(same, 50, rng) == 0.0);
    const Mat e = randn(30, 5, 3);
    CHECK(mm_dist(e, e) == 0.0);
    CHECK(mm_dist(e, Mat::Zero(30, 5)) == doctest::Approx(e.rowwise().norm().mean()));
    CHECK(diversity(e, 200, rng) > 0.0);
    CHECK(mmodality({same, same}) == 0.0);
    Mat two(2, 1);
    two << 0, 3;
    CHECK(mmodality({two}) == doctest::Approx(3.0));

    const MetricStat s = summarize({1, 2, 3, 4});
    CHECK(s.mean == 2.5);
    CHECK(s.ci95 == doctest::Approx(1.96 * std::sqrt(5.0 / 3.0) / 2.0));
}

TEST_CASE("evaluator") {
    GeneratorConfig g;
    g.n_samples = 120;
    g.frames = 8;
    g.force_split = Split::train;
    const auto recs = generate_dataset(g);
    std::vector<Mat> motions;
    std::vector<std::string> texts;
    for (const auto& r : recs) {
        motions.push_back(pair_features({r.motions[0].data, r.motions[1].data}));
        texts.push_back(r.text_interactive);
    }
    const TextEmbedder te;
    EvaluatorConfig cfg;
    cfg.epochs = 30;
    cfg.batch_size = 32;
    std::vector<double> losses;
    const Evaluator ev = train_evaluator(motions, texts, te, cfg, [&](const LogRow& r) { losses.push_back(r.loss.total); });
    REQUIRE(losses.size() == 30);
    CHECK(losses.back() < losses.front());

    const Mat me = ev.embed_motions(motions), tx = ev.embed_texts(texts);
    CHECK(me.cols() == 32);
    CHECK((me.rowwise().norm().array() - 1.0).abs().maxCoeff() < 1e-5);
    CHECK((tx.rowwise().norm().array() - 1.0).abs().maxCoeff() < 1e-5);
    Rng rng(4);
    CHECK(r_precision(me, tx, 8, 1, rng)[0] > 0.3);

    const Evaluator back = Evaluator::from_checkpoint(ev.to_checkpoint());
    CHECK(back.embed_motions(motions) == me);
    const Evaluator again = train_evaluator(motions, texts, te, cfg);
    CHECK(again.embed_motions(motions) == me);
}

TEST_CASE("Gaussian task") {
    const GaussianTask t = GaussianTask::correlated(0.8);
    CHECK(t.conditional_regression()(0, 0) == doctest::Approx(0.8));
    const GaussianTask t2 = GaussianTask::correlated(0.5, 3);
    const Eigen::MatrixXd b = t2.conditional_regression();
    CHECK((b - 0.5 * Eigen::MatrixXd::Identity(3, 3)).norm() < 1e-12);
    CHECK(GaussianTask::independent(2).conditional_regression().norm() == 0.0);

    Rng rng(5);
    const Mat x = t.sample(200000, rng);
    const Eigen::RowVectorXd mu = x.colwise().mean();
    const Mat c = x.rowwise() - mu;
    const Eigen::MatrixXd cov = c.transpose() * c / (x.rows() - 1.0);
    CHECK((cov - t.cov).cwiseAbs().maxCoeff() < 0.02);
    // analytic conditional variance 1 - rho^2
    const Eigen::VectorXd resid = x.col(1) - 0.8 * x.col(0);
    CHECK(resid.squaredNorm() / x.rows() == doctest::Approx(0.36).epsilon(0.03));

    CHECK_THROWS_AS(GaussianTask::correlated(1.2).validate(), InvalidArgument);
    const auto items = oracle_items(t, 10, 1);
    REQUIRE(items.size() == 10);
    CHECK(items[0].motions[0].rows() == 1);
    CHECK(items[0].motions[0].cols() == 1);
}

TEST_CASE("factorization oracle on independent persons") {
    const GaussianTask task = GaussianTask::independent(2);
    OracleRecipe recipe;
    recipe.n_train = 4000;
    recipe.dims.pose_dim = 2;
    recipe.dims.hidden = 16;
    recipe.stage1_steps = 800;
    recipe.stage2_steps = 200;
    recipe.batch_size = 64;
    const Model model = train_oracle(task, recipe);
    CHECK(model.interaction_steps == 200);
    const OracleReport rep = verify_factorization(task, model, 10000, OracleTolerances{}, 9);
    const Eigen::MatrixXd cross = rep.cov_emp.block(0, 2, 2, 2);
    CHECK(cross.cwiseAbs().maxCoeff() < 0.05);
    CHECK(rep.to_json().contains("cov_frobenius_error"));

    OracleRecipe fresh = recipe;
    fresh.stage2_steps = 0;
    const Model untrained = train_oracle(task, fresh);
    CHECK_THROWS_AS(verify_factorization(task, untrained, 100, OracleTolerances{}, 1), InvalidArgument);
    CHECK_NOTHROW(verify_factorization(task, untrained, 100, OracleTolerances{}, 1, true));
}
