#include "doctest.h"
#include "polymotion/losses.hpp"
#include "polymotion/synth_data.hpp"
#include "test_util.hpp"

using namespace polymotion;
using testutil::randn;

namespace {

// Features with joint positions set and everything else zero.
Mat with_positions(const Mat& pos, int joints) {
    Mat x = Mat::Zero(pos.rows(), pose_dim(joints));
    x.leftCols(3 * joints) = pos;
    return x;
}

// Central-difference check of a loss whose gradient is accumulated into `grad`.
template <typename Fn>
double loss_grad_err(const Mat& x_hat, Fn&& fn) {
    Mat g = Mat::Zero(x_hat.rows(), x_hat.cols());
    fn(x_hat, &g);
    double worst = 0;
    Mat x = x_hat;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double orig = x.data()[i], h = 1e-6;
        x.data()[i] = orig + h;
        const double up = fn(x, nullptr);
        x.data()[i] = orig - h;
        const double down = fn(x, nullptr);
        x.data()[i] = orig;
        const double num = (up - down) / (2 * h);
        worst = std::max(worst, std::abs(num - g.data()[i]) / std::max({std::abs(num), std::abs(g.data()[i]), 1e-6}));
    }
    return worst;
}

}  // namespace

TEST_CASE("perfect prediction on generator output") {
    const auto s = generate_interaction("high_five", 2, 16, 3);
    const Mat& x0 = s.motions[0].data;
    const Mat& other = s.motions[1].data;
    const SkeletonDef& skel = s.motions[0].skeleton;
    const LossParts p = motion_loss<double>(x0, x0, &skel, LossWeights{}, {&other});
    CHECK(p.rec == 0.0);
    CHECK(p.vel == 0.0);
    CHECK(p.foot >= 0.0);
    CHECK(p.dm == 0.0);
    CHECK(p.bone < 1e-12);
    // foot term uses the ground truth's own displacement: near zero for planted feet
    CHECK(p.foot < 1e-3);
}

TEST_CASE("loss arithmetic") {
    SUBCASE("bone length residual") {
        const SkeletonDef skel = SkeletonDef::chain(2, 1.0);
        Mat pos(2, 6);
        pos << 0, 0, 0, 0, 1.1, 0, 0, 0, 0, 0, 1.1, 0;
        CHECK(bone_loss<double>(with_positions(pos, 2), skel) == doctest::Approx(0.01).epsilon(1e-9));
    }
    SUBCASE("distance map single pair") {
        Mat t(1, 3), c(1, 3), h(1, 3);
        t << 0, 0, 0;
        c << 0.5, 0, 0;
        h << -0.2, 0, 0;
        const Mat x0 = with_positions(t, 1), cond = with_positions(c, 1), hat = with_positions(h, 1);
        CHECK(distance_map_loss<double>(x0, hat, {&cond}, 1, 1.0) == doctest::Approx(0.04).epsilon(1e-9));
        CHECK(distance_map_loss<double>(x0, x0, {&cond}, 1, 1.0) == 0.0);
        // mask empty when nothing lies within the threshold
        CHECK(distance_map_loss<double>(x0, hat, {&cond}, 1, 0.4) == 0.0);
        CHECK(distance_map_loss<double>(x0, hat, {}, 1, 1.0) == 0.0);
    }
    SUBCASE("foot term needs contacts") {
        const SkeletonDef skel = SkeletonDef::default7();
        Mat x0 = randn(6, 88, 1), hat = randn(6, 88, 2);
        x0.rightCols(4).setZero();
        CHECK(foot_loss<double>(x0, hat, skel) == 0.0);
        x0.rightCols(4).setOnes();
        CHECK(foot_loss<double>(x0, hat, skel) > 0.0);
    }
    SUBCASE("velocity term") {
        Mat a = Mat::Zero(3, 16), b = Mat::Zero(3, 16);
        b(2, 0) = 1.0;  // one joint moves by 1 between frames 1 and 2
        // mean over 2 frame pairs x 1 joint of |dp|^2 = (0 + 1) / 2
        CHECK(velocity_loss<double>(a, b, 1) == doctest::Approx(0.5));
    }
}

TEST_CASE("weight identities and non-negativity") {
    const auto s = generate_interaction("approach", 2, 16, 5);
    const SkeletonDef& skel = s.motions[0].skeleton;
    const Mat& x0 = s.motions[0].data;
    const Mat hat = x0 + randn(16, 88, 6, 0.05);
    const Mat& cond = s.motions[1].data;
    LossWeights no_dm;
    no_dm.distance_map = 0.0;
    const LossParts with_cond = motion_loss<double>(x0, hat, &skel, no_dm, {&cond});
    const LossParts without = motion_loss<double>(x0, hat, &skel, no_dm);
    CHECK(with_cond.total == without.total);
    const LossParts full = motion_loss<double>(x0, hat, &skel, LossWeights{}, {&cond});
    for (double v : {full.rec, full.foot, full.vel, full.bone, full.dm}) CHECK(v >= 0.0);
    CHECK(full.total == doctest::Approx(full.rec + full.foot + full.vel + full.bone + full.dm));
    CHECK_THROWS_AS(motion_loss<double>(x0, hat, nullptr, LossWeights{}), InvalidArgument);
    CHECK_NOTHROW(motion_loss<double>(x0, hat, nullptr, LossWeights::reconstruction_only()));
    LossWeights neg;
    neg.bone = -1;
    CHECK_THROWS_AS(neg.validate(), InvalidArgument);
    CHECK_THROWS_AS(reconstruction_loss<double>(x0, Mat::Zero(3, 3)), InvalidArgument);
}

TEST_CASE("loss gradients match finite differences") {
    const SkeletonDef skel = SkeletonDef::chain(2, 0.5);
    const int J = 2, F = 4, D = pose_dim(J);
    Mat x0 = randn(F, D, 11, 0.3), cond = randn(F, D, 12, 0.3);
    x0.rightCols(4) << 1, 0, 1, 1, 0, 1, 1, 0, 1, 1, 1, 1, 0, 0, 1, 1;
    const Mat hat = x0 + randn(F, D, 13, 0.2);
    const std::vector<const Mat*> conds{&cond};
    CHECK(loss_grad_err(hat, [&](const Mat& h, Mat* g) { return reconstruction_loss<double>(x0, h, g); }) < 1e-6);
    CHECK(loss_grad_err(hat, [&](const Mat& h, Mat* g) { return velocity_loss<double>(x0, h, J, g); }) < 1e-6);
    CHECK(loss_grad_err(hat, [&](const Mat& h, Mat* g) { return foot_loss<double>(x0, h, skel, g); }) < 1e-6);
    CHECK(loss_grad_err(hat, [&](const Mat& h, Mat* g) { return bone_loss<double>(h, skel, g); }) < 1e-6);
    CHECK(loss_grad_err(hat, [&](const Mat& h, Mat* g) {
              return distance_map_loss<double>(x0, h, conds, J, 2.0, g);
          }) < 1e-6);

    SUBCASE("through feature normalisation") {
        FeatureStats st;
        st.mean = randn(1, D, 14, 0.5);
        st.std = (randn(1, D, 15, 0.3).array().abs() + 0.2).matrix();
        const Mat nx0 = st.normalize<double>(x0), nhat = st.normalize<double>(hat);
        CHECK(loss_grad_err(nhat, [&](const Mat& h, Mat* g) {
                  return motion_loss<double>(nx0, h, &skel, LossWeights{}, conds, g, 1.0, &st).total;
              }) < 1e-6);
    }
}

TEST_CASE("FeatureStats") {
    const Mat a = randn(50, 5, 21, 2.0), b = randn(30, 5, 22, 2.0);
    Mat c = a;
    c.col(3).setConstant(4.0);
    const FeatureStats st = FeatureStats::fit({&b, &c});
    CHECK(st.dim() == 5);
    CHECK(st.mean(0, 0) == doctest::Approx((a.col(0).sum() + b.col(0).sum()) / 80.0));
    CHECK(FeatureStats::fit({&c}).std(0, 3) == 1e-2);
    CHECK((st.denormalize<double>(st.normalize<double>(a)) - a).cwiseAbs().maxCoeff() < 1e-12);
    const FeatureStats id = FeatureStats::identity(5);
    CHECK(id.normalize<double>(a) == a);
}
