#include "polymotion/motion_repr.hpp"

#include <Eigen/Geometry>

#include <cmath>
#include <string>

namespace polymotion {

namespace {

constexpr double kDegenerate = 1e-8;
constexpr double kVelocityTolerance = 1e-5;

}  // namespace

void SkeletonDef::validate() const {
    if (joint_count < 1) throw InvalidArgument("skeleton: joint_count must be >= 1");
    const auto n = static_cast<std::size_t>(joint_count);
    if (parent.size() != n || bone_length.size() != n || rest_offset.size() != n)
        throw InvalidArgument("skeleton: per-joint arrays must have joint_count entries");
    if (!(fps > 0)) throw InvalidArgument("skeleton: fps must be > 0");
    int roots = 0;
    for (int j = 0; j < joint_count; ++j) {
        const int p = parent[j];
        if (p == -1) {
            ++roots;
            continue;
        }
        if (p < 0 || p >= joint_count) throw InvalidArgument("skeleton: parent index out of range");
        if (!(bone_length[j] > 0)) throw InvalidArgument("skeleton: bone lengths must be > 0");
        if (std::abs(rest_offset[j].norm() - bone_length[j]) > 1e-9)
            throw InvalidArgument("skeleton: rest offset length disagrees with bone length");
        // walk to the root; a cycle would exceed joint_count hops
        int hops = 0;
        for (int a = j; a != -1; a = parent[a]) {
            if (++hops > joint_count) throw InvalidArgument("skeleton: parent array has a cycle");
        }
    }
    if (roots != 1) throw InvalidArgument("skeleton: exactly one root required");
    for (int f : foot_joints) {
        if (f < 0 || f >= joint_count) throw InvalidArgument("skeleton: foot joint index out of range");
    }
}

int SkeletonDef::root() const {
    for (int j = 0; j < joint_count; ++j) {
        if (parent[j] == -1) return j;
    }
    return -1;
}

SkeletonDef SkeletonDef::default7() {
    using namespace joint7;
    SkeletonDef s;
    s.joint_count = 7;
    s.parent = {-1, kRoot, kChest, kChest, kChest, kRoot, kRoot};
    s.bone_length = {0.0, 0.5, 0.3, 0.6, 0.6, 0.9, 0.9};
    // +x is the body's left, +y up, +z forward.
    const double arm_splay = 30.0 * M_PI / 180.0;
    const double hip = 0.15;
    const double leg_drop = std::sqrt(0.9 * 0.9 - hip * hip);
    s.rest_offset = {
        Vec3::Zero(),
        Vec3(0, 0.5, 0),
        Vec3(0, 0.3, 0),
        Vec3(0.6 * std::sin(arm_splay), -0.6 * std::cos(arm_splay), 0),
        Vec3(-0.6 * std::sin(arm_splay), -0.6 * std::cos(arm_splay), 0),
        Vec3(hip, -leg_drop, 0),
        Vec3(-hip, -leg_drop, 0),
    };
    s.foot_joints = {kLeftFoot, kLeftFoot, kRightFoot, kRightFoot};
    s.fps = 20.0;
    return s;
}

SkeletonDef SkeletonDef::chain(int joints, double bone) {
    if (joints < 1) throw InvalidArgument("chain skeleton needs >= 1 joint");
    SkeletonDef s;
    s.joint_count = joints;
    for (int j = 0; j < joints; ++j) {
        s.parent.push_back(j - 1);
        s.bone_length.push_back(j == 0 ? 0.0 : bone);
        s.rest_offset.push_back(j == 0 ? Vec3::Zero() : Vec3(0, -bone, 0));
    }
    s.foot_joints.fill(joints - 1);
    return s;
}

void SpatialSignal::validate(int frames, int joints) const {
    if (observed.rows() != frames || observed.cols() != joints)
        throw InvalidArgument("spatial signal: observed mask must be F x J");
    if (targets.rows() != frames || targets.cols() != 3 * joints)
        throw InvalidArgument("spatial signal: targets must be F x J x 3");
    for (int f = 0; f < frames; ++f) {
        for (int j = 0; j < joints; ++j) {
            const double o = observed(f, j);
            if (o != 0.0 && o != 1.0) throw InvalidArgument("spatial signal: observed mask must be 0/1");
            if (o == 1.0 && !targets.block<1, 3>(f, 3 * j).allFinite())
                throw InvalidArgument("spatial signal: observed target is not finite");
        }
    }
}

int pose_dim(int joints) {
    if (joints < 1) throw InvalidArgument("pose_dim: joint count must be >= 1");
    return 12 * joints + 4;
}

Mat3 rot6d_to_matrix(const std::array<double, 6>& r) {
    const Vec3 a1(r[0], r[1], r[2]);
    const Vec3 a2(r[3], r[4], r[5]);
    const double n1 = a1.norm();
    if (!(n1 > kDegenerate)) throw DegenerateRotation("rot6d: first column is near zero");
    const Vec3 b1 = a1 / n1;
    const Vec3 resid = a2 - b1.dot(a2) * b1;
    const double n2 = resid.norm();
    if (!(n2 > kDegenerate)) throw DegenerateRotation("rot6d: columns are near parallel");
    const Vec3 b2 = resid / n2;
    Mat3 m;
    m.col(0) = b1;
    m.col(1) = b2;
    m.col(2) = b1.cross(b2);
    return m;
}

std::array<double, 6> matrix_to_rot6d(const Mat3& m) {
    return {m(0, 0), m(1, 0), m(2, 0), m(0, 1), m(1, 1), m(2, 1)};
}

Mat3 rotation_between(const Vec3& from, const Vec3& to) {
    const Vec3 a = from.normalized();
    const Vec3 b = to.normalized();
    return Eigen::Quaterniond::FromTwoVectors(a, b).toRotationMatrix();
}

Mat3 rotation_y(double angle) {
    return Eigen::AngleAxisd(angle, Vec3::UnitY()).toRotationMatrix();
}

Mat compute_velocities(const Mat& positions, double fps) {
    if (positions.rows() < 2) throw InvalidArgument("compute_velocities: need at least 2 frames");
    const auto frames = positions.rows();
    Mat v(frames, positions.cols());
    for (Eigen::Index i = 1; i < frames; ++i) v.row(i) = (positions.row(i) - positions.row(i - 1)) * fps;
    v.row(0) = v.row(1);
    return v;
}

Mat detect_foot_contacts(const Mat& positions, const SkeletonDef& skeleton, double height_thresh,
                         double speed_thresh) {
    if (!(height_thresh > 0) || !(speed_thresh > 0))
        throw InvalidArgument("detect_foot_contacts: thresholds must be > 0");
    if (positions.cols() != 3 * skeleton.joint_count)
        throw InvalidArgument("detect_foot_contacts: positions must be F x 3J");
    const Mat vel = compute_velocities(positions, skeleton.fps);
    Mat contacts(positions.rows(), 4);
    for (Eigen::Index f = 0; f < positions.rows(); ++f) {
        for (int c = 0; c < 4; ++c) {
            const int j = skeleton.foot_joints[c];
            const double height = positions(f, 3 * j + 1);
            const double speed = vel.block<1, 3>(f, 3 * j).norm();
            contacts(f, c) = (height < height_thresh && speed < speed_thresh) ? 1.0 : 0.0;
        }
    }
    return contacts;
}

Mat forward_kinematics(const SkeletonDef& skeleton, const Mat& root_translation, const std::vector<Mat3>& local) {
    const int J = skeleton.joint_count;
    const auto frames = root_translation.rows();
    if (root_translation.cols() != 3 || static_cast<Eigen::Index>(local.size()) != frames * J)
        throw InvalidArgument("forward_kinematics: shape mismatch");
    Mat pos(frames, 3 * J);
    std::vector<Mat3> global(J);
    std::vector<char> done(J);
    for (Eigen::Index f = 0; f < frames; ++f) {
        std::fill(done.begin(), done.end(), 0);
        // parents are not necessarily ordered before children; resolve lazily
        auto solve = [&](auto&& self, int j) -> void {
            if (done[j]) return;
            const int p = skeleton.parent[j];
            const Mat3& L = local[f * J + j];
            if (p < 0) {
                global[j] = L;
                pos.block<1, 3>(f, 3 * j) = root_translation.row(f);
            } else {
                self(self, p);
                global[j] = global[p] * L;
                pos.block<1, 3>(f, 3 * j) =
                    pos.block<1, 3>(f, 3 * p) + (global[j] * skeleton.rest_offset[j]).transpose();
            }
            done[j] = 1;
        };
        for (int j = 0; j < J; ++j) solve(solve, j);
    }
    return pos;
}

Mat pack_rotations(const std::vector<Mat3>& local, int frames, int joints) {
    if (static_cast<int>(local.size()) != frames * joints) throw InvalidArgument("pack_rotations: shape mismatch");
    Mat r(frames, 6 * joints);
    for (int f = 0; f < frames; ++f) {
        for (int j = 0; j < joints; ++j) {
            const auto six = matrix_to_rot6d(local[f * joints + j]);
            for (int k = 0; k < 6; ++k) r(f, 6 * j + k) = six[k];
        }
    }
    return r;
}

MotionSeq assemble_motion(const Mat& positions, const Mat& rotations, const SkeletonDef& skeleton) {
    const int J = skeleton.joint_count;
    if (positions.cols() != 3 * J) throw InvalidArgument("assemble_motion: positions must be F x 3J");
    if (rotations.cols() != 6 * J || rotations.rows() != positions.rows())
        throw InvalidArgument("assemble_motion: rotations must be F x 6J");
    const auto frames = positions.rows();
    MotionSeq m;
    m.skeleton = skeleton;
    m.data.resize(frames, pose_dim(J));
    m.data.middleCols(channels::positions(J), 3 * J) = positions;
    m.data.middleCols(channels::velocities(J), 3 * J) = compute_velocities(positions, skeleton.fps);
    m.data.middleCols(channels::rotations(J), 6 * J) = rotations;
    m.data.middleCols(channels::contacts(J), 4) = detect_foot_contacts(positions, skeleton);
    return m;
}

Mat get_positions(const MotionSeq& m) { return m.data.middleCols(channels::positions(m.joints()), 3 * m.joints()); }
Mat get_velocities(const MotionSeq& m) {
    return m.data.middleCols(channels::velocities(m.joints()), 3 * m.joints());
}
Mat get_rotations(const MotionSeq& m) { return m.data.middleCols(channels::rotations(m.joints()), 6 * m.joints()); }
Mat get_contacts(const MotionSeq& m) { return m.data.middleCols(channels::contacts(m.joints()), 4); }

void validate(const MotionSeq& m, Validation level) {
    m.skeleton.validate();
    const int J = m.joints();
    if (m.data.cols() != pose_dim(J))
        throw InvalidArgument("motion: expected " + std::to_string(pose_dim(J)) + " channels, got " +
                              std::to_string(m.data.cols()));
    if (m.data.rows() < 2) throw InvalidArgument("motion: need at least 2 frames");
    if (!m.data.allFinite()) throw InvalidArgument("motion: non-finite values");
    const Mat contacts = get_contacts(m);
    if ((contacts.array() < 0.0).any() || (contacts.array() > 1.0).any())
        throw InvalidArgument("motion: contact channels outside [0, 1]");
    if (level == Validation::structural) return;
    if (((contacts.array() != 0.0) && (contacts.array() != 1.0)).any())
        throw InvalidArgument("motion: contact channels must be binary");
    const Mat expected = compute_velocities(get_positions(m), m.skeleton.fps);
    const double err = (expected - get_velocities(m)).cwiseAbs().maxCoeff();
    if (err > kVelocityTolerance)
        throw InvalidArgument("motion: velocity channels disagree with positions (max error " + std::to_string(err) +
                              ")");
}

bool is_valid(const MotionSeq& m, Validation level) {
    try {
        validate(m, level);
        return true;
    } catch (const std::exception&) {
        return false;
    }
}

}  // namespace polymotion
