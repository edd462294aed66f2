#pragma once

#include "polymotion/common.hpp"

#include <array>
#include <vector>

namespace polymotion {

/// Kinematic tree plus the geometry the losses need.
///
/// `bone_length[j]` is the length of the bone ending at joint j (unused for
/// the root). `rest_offset[j]` is that bone in the parent frame at rest; its
/// norm equals `bone_length[j]`. `foot_joints` is (L-heel, L-toe, R-heel,
/// R-toe) and may repeat joints on skeletons with one joint per foot.
struct SkeletonDef {
    int joint_count = 0;
    std::vector<int> parent;
    std::vector<double> bone_length;
    std::vector<Vec3> rest_offset;
    std::array<int, 4> foot_joints{};
    double fps = 20.0;

    /// Throws InvalidArgument on any broken invariant.
    void validate() const;

    int root() const;

    /// root, chest, head, L-hand, R-hand, L-foot, R-foot.
    static SkeletonDef default7();

    /// Straight vertical chain of `joints` joints with unit-ish bones; the
    /// last joint doubles as every foot joint. Used by tiny test configs.
    static SkeletonDef chain(int joints, double bone = 0.5);
};

namespace joint7 {
inline constexpr int kRoot = 0;
inline constexpr int kChest = 1;
inline constexpr int kHead = 2;
inline constexpr int kLeftHand = 3;
inline constexpr int kRightHand = 4;
inline constexpr int kLeftFoot = 5;
inline constexpr int kRightFoot = 6;
}  // namespace joint7

/// F x (12J + 4) feature sequence for one person:
/// [positions 3J | velocities 3J | local 6D rotations 6J | contacts 4].
struct MotionSeq {
    Mat data;
    SkeletonDef skeleton;

    int frames() const { return static_cast<int>(data.rows()); }
    int joints() const { return skeleton.joint_count; }
};

/// F x J x 3 targets stored as F x 3J, plus an F x J observation mask.
struct SpatialSignal {
    Mat targets;
    Mat observed;

    int frames() const { return static_cast<int>(observed.rows()); }
    int joints() const { return static_cast<int>(observed.cols()); }
    bool any_observed() const { return (observed.array() > 0.5).any(); }
    /// Throws InvalidArgument when dimensions disagree or an observed target is not finite.
    void validate(int frames, int joints) const;
};

enum class Validation {
    structural,  // layout, finiteness, contacts within [0, 1]
    full,        // structural + binary contacts + velocity/position consistency
};

int pose_dim(int joints);

namespace channels {
inline int positions(int) { return 0; }
inline int velocities(int joints) { return 3 * joints; }
inline int rotations(int joints) { return 6 * joints; }
inline int contacts(int joints) { return 12 * joints; }
}  // namespace channels

Mat3 rot6d_to_matrix(const std::array<double, 6>& r);
std::array<double, 6> matrix_to_rot6d(const Mat3& m);

/// Smallest rotation taking direction `from` onto direction `to`.
Mat3 rotation_between(const Vec3& from, const Vec3& to);

Mat3 rotation_y(double angle);

/// Backward differences scaled by fps; frame 0 copies frame 1.
Mat compute_velocities(const Mat& positions, double fps);

Mat detect_foot_contacts(const Mat& positions, const SkeletonDef& skeleton, double height_thresh = 0.05,
                         double speed_thresh = 0.2);

/// Global joint positions (F x 3J) from root translations (F x 3) and
/// per-frame local rotations (frame-major, J per frame). Joint j sits at
/// parent position + G_j * rest_offset[j] with G_j = G_parent * L_j.
Mat forward_kinematics(const SkeletonDef& skeleton, const Mat& root_translation, const std::vector<Mat3>& local);

/// Packs local rotations into F x 6J.
Mat pack_rotations(const std::vector<Mat3>& local, int frames, int joints);

MotionSeq assemble_motion(const Mat& positions, const Mat& rotations, const SkeletonDef& skeleton);

Mat get_positions(const MotionSeq& m);
Mat get_velocities(const MotionSeq& m);
Mat get_rotations(const MotionSeq& m);
Mat get_contacts(const MotionSeq& m);

/// Throws InvalidArgument describing the first violated invariant.
void validate(const MotionSeq& m, Validation level = Validation::full);
bool is_valid(const MotionSeq& m, Validation level = Validation::full);

}  // namespace polymotion
