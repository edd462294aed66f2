#include "doctest.h"
#include "polymotion/motion_repr.hpp"

#include <Eigen/LU>

#include <cmath>

using namespace polymotion;

namespace {

Mat random_mat(int r, int c, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    Mat m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
}

// Straight walk of the default skeleton in rest pose.
MotionSeq rest_walk(int frames) {
    const SkeletonDef skel = SkeletonDef::default7();
    Mat root(frames, 3);
    for (int f = 0; f < frames; ++f) root.row(f) << 0.02 * f, 1.0, 0.0;
    std::vector<Mat3> local(static_cast<std::size_t>(frames * skel.joint_count), Mat3::Identity());
    const Mat pos = forward_kinematics(skel, root, local);
    return assemble_motion(pos, pack_rotations(local, frames, skel.joint_count), skel);
}

}  // namespace

TEST_CASE("pose_dim follows the channel layout") {
    CHECK(pose_dim(22) == 268);
    CHECK(pose_dim(7) == 88);
    CHECK(pose_dim(1) == 16);
    CHECK_THROWS_AS(pose_dim(0), InvalidArgument);
}

TEST_CASE("rot6d_to_matrix") {
    CHECK(rot6d_to_matrix({1, 0, 0, 0, 1, 0}).isApprox(Mat3::Identity(), 1e-15));
    CHECK(rot6d_to_matrix({2, 0, 0, 1, 1, 0}).isApprox(Mat3::Identity(), 1e-15));
    CHECK_THROWS_AS(rot6d_to_matrix({0, 0, 0, 0, 1, 0}), DegenerateRotation);
    CHECK_THROWS_AS(rot6d_to_matrix({1, 0, 0, 2, 0, 0}), DegenerateRotation);

    SUBCASE("orthonormal and right-handed for random input") {
        Rng rng(7);
        std::normal_distribution<double> n(0.0, 1.0);
        for (int i = 0; i < 200; ++i) {
            std::array<double, 6> r{};
            for (double& v : r) v = n(rng);
            const Mat3 m = rot6d_to_matrix(r);
            CHECK((m.transpose() * m - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-6);
            CHECK(std::abs(m.determinant() - 1.0) < 1e-6);
            // the 6D encoding of a rotation decodes to itself
            CHECK(rot6d_to_matrix(matrix_to_rot6d(m)).isApprox(m, 1e-12));
        }
    }
}

TEST_CASE("compute_velocities") {
    const double fps = 20.0;
    Mat still = Mat::Constant(5, 6, 0.3);
    CHECK(compute_velocities(still, fps).cwiseAbs().maxCoeff() == 0.0);

    Mat lin = Mat::Zero(6, 6);
    for (int f = 0; f < 6; ++f) lin(f, 0) = lin(f, 3) = f / fps;
    const Mat v = compute_velocities(lin, fps);
    CHECK(v.col(0).isApprox(Mat::Ones(6, 1), 1e-12));
    CHECK(v.col(3).isApprox(Mat::Ones(6, 1), 1e-12));
    CHECK(v.col(1).cwiseAbs().maxCoeff() == 0.0);

    SUBCASE("matches an independent backward difference") {
        const Mat p = random_mat(3, 6, 11);
        const Mat got = compute_velocities(p, fps);
        for (int c = 0; c < 6; ++c) {
            const double d1 = (p(1, c) - p(0, c)) * fps;
            const double d2 = (p(2, c) - p(1, c)) * fps;
            CHECK(got(0, c) == d1);
            CHECK(got(1, c) == d1);
            CHECK(got(2, c) == d2);
        }
    }
    SUBCASE("linear in the positions") {
        const Mat p = random_mat(7, 9, 12);
        CHECK((compute_velocities(2.5 * p, fps) - 2.5 * compute_velocities(p, fps)).cwiseAbs().maxCoeff() < 1e-12);
    }
    CHECK_THROWS_AS(compute_velocities(Mat::Zero(1, 3), fps), InvalidArgument);
}

TEST_CASE("detect_foot_contacts") {
    const SkeletonDef skel = SkeletonDef::default7();
    const int F = 6, J = skel.joint_count;
    Mat pos = Mat::Constant(F, 3 * J, 1.0);
    for (int f = 0; f < F; ++f)
        for (int j : {joint7::kLeftFoot, joint7::kRightFoot}) pos(f, 3 * j + 1) = 0.0;
    CHECK(detect_foot_contacts(pos, skel).minCoeff() == 1.0);

    Mat air = pos;
    for (int f = 0; f < F; ++f)
        for (int j : {joint7::kLeftFoot, joint7::kRightFoot}) air(f, 3 * j + 1) = 10 * 0.05;
    CHECK(detect_foot_contacts(air, skel).maxCoeff() == 0.0);

    Mat slide = pos;
    for (int f = 0; f < F; ++f)
        for (int j : {joint7::kLeftFoot, joint7::kRightFoot}) slide(f, 3 * j) = f * 10 * 0.2 / skel.fps;
    CHECK(detect_foot_contacts(slide, skel).maxCoeff() == 0.0);

    CHECK_THROWS_AS(detect_foot_contacts(pos, skel, 0.0, 0.2), InvalidArgument);
    CHECK_THROWS_AS(detect_foot_contacts(Mat::Zero(F, 6), skel), InvalidArgument);
}

TEST_CASE("assemble_motion round trip") {
    const MotionSeq m = rest_walk(12);
    const int J = m.joints();
    REQUIRE(m.data.cols() == pose_dim(J));
    const Mat pos = get_positions(m);
    const MotionSeq again = assemble_motion(pos, get_rotations(m), m.skeleton);
    CHECK(get_positions(again) == pos);
    CHECK(get_rotations(again) == get_rotations(m));
    CHECK(get_velocities(m) == compute_velocities(pos, m.skeleton.fps));
    CHECK(get_contacts(m) == detect_foot_contacts(pos, m.skeleton));
    // identity rotations tile (1,0,0,0,1,0)
    for (int j = 0; j < J; ++j) {
        const Eigen::RowVectorXd r = get_rotations(m).block(0, 6 * j, 1, 6);
        CHECK(r.isApprox((Eigen::RowVectorXd(6) << 1, 0, 0, 0, 1, 0).finished()));
    }
    // layout slices
    CHECK(m.data.middleCols(channels::positions(J), 3 * J) == pos);
    CHECK(m.data.middleCols(channels::contacts(J), 4) == get_contacts(m));
    CHECK_THROWS_AS(assemble_motion(pos, Mat::Zero(12, 5), m.skeleton), InvalidArgument);
}

TEST_CASE("validate") {
    MotionSeq m = rest_walk(10);
    CHECK(is_valid(m));
    MotionSeq bad_vel = m;
    bad_vel.data(4, channels::velocities(m.joints()) + 1) += 2e-3;
    CHECK_FALSE(is_valid(bad_vel));
    CHECK(is_valid(bad_vel, Validation::structural));
    MotionSeq nan = m;
    nan.data(0, 0) = std::nan("");
    CHECK_FALSE(is_valid(nan, Validation::structural));
    MotionSeq soft = m;
    soft.data(0, channels::contacts(m.joints())) = 0.5;
    CHECK(is_valid(soft, Validation::structural));
    CHECK_FALSE(is_valid(soft));
}

TEST_CASE("skeleton invariants") {
    CHECK_NOTHROW(SkeletonDef::default7().validate());
    CHECK_NOTHROW(SkeletonDef::chain(2).validate());
    SkeletonDef two_roots = SkeletonDef::default7();
    two_roots.parent[2] = -1;
    CHECK_THROWS_AS(two_roots.validate(), InvalidArgument);
    SkeletonDef cyc = SkeletonDef::default7();
    cyc.parent[1] = 2;
    CHECK_THROWS_AS(cyc.validate(), InvalidArgument);
    SkeletonDef zero = SkeletonDef::default7();
    zero.bone_length[3] = 0.0;
    zero.rest_offset[3].setZero();
    CHECK_THROWS_AS(zero.validate(), InvalidArgument);
    SkeletonDef feet = SkeletonDef::default7();
    feet.foot_joints[0] = 9;
    CHECK_THROWS_AS(feet.validate(), InvalidArgument);
}

TEST_CASE("forward kinematics keeps bone lengths") {
    const SkeletonDef skel = SkeletonDef::default7();
    Rng rng(3);
    std::normal_distribution<double> n(0.0, 1.0);
    const int F = 4;
    std::vector<Mat3> local;
    for (int i = 0; i < F * skel.joint_count; ++i)
        local.push_back(rot6d_to_matrix({n(rng), n(rng), n(rng), n(rng), n(rng), n(rng)}));
    const Mat pos = forward_kinematics(skel, random_mat(F, 3, 4), local);
    for (int f = 0; f < F; ++f)
        for (int j = 0; j < skel.joint_count; ++j) {
            if (skel.parent[j] < 0) continue;
            const double len = (pos.block(f, 3 * j, 1, 3) - pos.block(f, 3 * skel.parent[j], 1, 3)).norm();
            CHECK(len == doctest::Approx(skel.bone_length[j]).epsilon(1e-12));
        }
}
