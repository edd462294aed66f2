#include "polymotion/synth_data.hpp"

#include "json.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>

namespace polymotion {

namespace {

using namespace joint7;

constexpr double kHip = 0.15;
constexpr double kLeg = 0.9;
constexpr double kTorso = 0.5;
constexpr double kArm = 0.6;
constexpr double kNoiseSigma = 0.01;
constexpr double kStepPeriod = 0.5;

const double kStandHeight = std::sqrt(kLeg * kLeg - kHip * kHip);

/// One frame of a performer: root placement plus world-space bone directions.
struct PoseFrame {
    Vec3 root = Vec3::Zero();
    double yaw = 0.0;
    std::array<Vec3, 7> dir{};
};

using Track = std::vector<PoseFrame>;

Vec3 forward(double yaw) { return {std::sin(yaw), 0.0, std::cos(yaw)}; }
Vec3 left(double yaw) { return {std::cos(yaw), 0.0, -std::sin(yaw)}; }
Vec3 to_world(double yaw, const Vec3& local) { return rotation_y(yaw) * local; }

Mat3 rotation_x(double a) { return Eigen::AngleAxisd(a, Vec3::UnitX()).toRotationMatrix(); }

double yaw_of(const Vec3& direction) { return std::atan2(direction.x(), direction.z()); }

const SkeletonDef& skeleton7() {
    static const SkeletonDef s = SkeletonDef::default7();
    return s;
}

Vec3 rest_dir(int joint) { return skeleton7().rest_offset[joint].normalized(); }

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
int uniform_int(Rng& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }
double normal(Rng& rng, double sigma) { return std::normal_distribution<double>(0.0, sigma)(rng); }

double smoothstep(double e0, double e1, double x) {
    const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
    return t * t * (3 - 2 * t);
}

/// Standing pose with feet flat under the hips, feet centre at `ground`.
PoseFrame standing(const Vec3& ground, double yaw) {
    PoseFrame p;
    p.yaw = yaw;
    p.root = ground + Vec3(0, kStandHeight, 0);
    for (int j = 1; j < 7; ++j) p.dir[j] = to_world(yaw, rest_dir(j));
    return p;
}

double duration(int frames, double fps) { return (frames - 1) / fps; }

/// Per-clip perturbation: constant horizontal offset and arm angle jitter.
struct ClipNoise {
    Vec3 offset = Vec3::Zero();
    double left_arm = 0.0;
    double right_arm = 0.0;

    static ClipNoise draw(Rng& rng) {
        ClipNoise n;
        n.offset = Vec3(normal(rng, kNoiseSigma), 0.0, normal(rng, kNoiseSigma));
        n.left_arm = normal(rng, kNoiseSigma);
        n.right_arm = normal(rng, kNoiseSigma);
        return n;
    }

    void apply(Track& track) const {
        for (auto& p : track) {
            p.root += offset;
            const Vec3 lat = left(p.yaw);
            p.dir[kLeftHand] = Eigen::AngleAxisd(left_arm, lat) * p.dir[kLeftHand];
            p.dir[kRightHand] = Eigen::AngleAxisd(right_arm, lat) * p.dir[kRightHand];
        }
    }
};

using PathFn = std::function<std::pair<Vec3, double>(double t)>;  // ground position, yaw

PathFn straight_path(const Vec3& start, double yaw, double speed) {
    return [=](double t) { return std::make_pair(Vec3(start + forward(yaw) * speed * t), yaw); };
}

/// Constant-curvature path; turn > 0 bends left.
PathFn arc_path(const Vec3& start, double yaw0, double speed, double radius, double turn) {
    const double omega = turn * speed / radius;
    return [=](double t) {
        const double yaw = yaw0 + omega * t;
        const Vec3 p = start + (speed / omega) * Vec3(-std::cos(yaw) + std::cos(yaw0), 0.0,
                                                      std::sin(yaw) - std::sin(yaw0));
        return std::make_pair(p, yaw);
    };
}

PathFn circle_path(const Vec3& centre, double radius, double angle0, double speed, double direction) {
    const double omega = direction * speed / radius;
    return [=](double t) {
        const double a = angle0 + omega * t;
        const Vec3 p = centre + radius * Vec3(std::cos(a), 0.0, std::sin(a));
        const Vec3 vel = Vec3(-std::sin(a), 0.0, std::cos(a)) * omega;
        return std::make_pair(p, yaw_of(vel));
    };
}

/// Alternating-stance gait along `path`. The stance foot stays planted while
/// the root passes over it; root height keeps the stance leg at full length.
Track walk(const PathFn& path, double speed, int frames, double fps, double phase) {
    Track track(frames);
    const double stride = speed * kStepPeriod;
    auto plant = [&](long k) {
        const double tau = phase + k * kStepPeriod;
        const auto [pos, yaw] = path(tau);
        const double side = (((k % 2) + 2) % 2 == 0) ? 1.0 : -1.0;
        return Vec3(pos + forward(yaw) * (stride / 2) + side * kHip * left(yaw));
    };
    for (int f = 0; f < frames; ++f) {
        const double t = f / fps;
        const long k = static_cast<long>(std::floor((t - phase) / kStepPeriod));
        const double phi = (t - (phase + k * kStepPeriod)) / kStepPeriod;
        const bool left_stance = ((k % 2) + 2) % 2 == 0;
        const auto [pos, yaw] = path(t);

        PoseFrame p = standing(pos, yaw);
        const Vec3 stance = plant(k);
        const Vec3 horiz = Vec3(stance.x() - pos.x(), 0.0, stance.z() - pos.z());
        const double h = std::sqrt(std::max(kLeg * kLeg - horiz.squaredNorm(), 0.3));
        p.root = Vec3(pos.x(), h, pos.z());

        const Vec3 from = plant(k - 1);
        const Vec3 to = plant(k + 1);
        const Vec3 swing = from + (to - from) * phi + Vec3(0, 0.12 * std::sin(M_PI * phi), 0);

        const int stance_joint = left_stance ? kLeftFoot : kRightFoot;
        const int swing_joint = left_stance ? kRightFoot : kLeftFoot;
        p.dir[stance_joint] = (stance - p.root).normalized();
        p.dir[swing_joint] = (swing - p.root).normalized();

        // arms swing opposite to the legs
        const double arm = 0.35 * std::sin(M_PI * (t - phase) / kStepPeriod);
        p.dir[kLeftHand] = to_world(yaw, rotation_x(arm) * rest_dir(kLeftHand));
        p.dir[kRightHand] = to_world(yaw, rotation_x(-arm) * rest_dir(kRightHand));
        track[f] = p;
    }
    return track;
}

Track stand(const Vec3& ground, double yaw, int frames) { return Track(frames, standing(ground, yaw)); }

/// Right arm raised and oscillating sideways.
Track wave(const Vec3& ground, double yaw, int frames, double fps, Rng& rng) {
    Track track = stand(ground, yaw, frames);
    const double freq = uniform(rng, 1.3, 1.7);
    const double ph = uniform(rng, 0.0, 2 * M_PI);
    for (int f = 0; f < frames; ++f) {
        const double a = (140.0 + 25.0 * std::sin(2 * M_PI * freq * f / fps + ph)) * M_PI / 180.0;
        track[f].dir[kRightHand] = to_world(yaw, Vec3(-std::sin(a), -std::cos(a), 0.0));
    }
    return track;
}

/// Feet stay planted; the root sinks and moves back while the torso leans forward.
Track squat(const Vec3& ground, double yaw, int frames, double fps, Rng& rng) {
    Track track(frames);
    const double depth = uniform(rng, 0.38, 0.48);
    const double dur = duration(frames, fps);
    for (int f = 0; f < frames; ++f) {
        const double s = std::sin(M_PI * (f / fps) / dur);
        const double back = depth * s * s;
        PoseFrame p = standing(ground, yaw);
        const double h = std::sqrt(kLeg * kLeg - kHip * kHip - back * back);
        p.root = ground + to_world(yaw, Vec3(0, h, -back));
        const Vec3 lfoot = ground + to_world(yaw, Vec3(kHip, 0, 0));
        const Vec3 rfoot = ground + to_world(yaw, Vec3(-kHip, 0, 0));
        p.dir[kLeftFoot] = (lfoot - p.root).normalized();
        p.dir[kRightFoot] = (rfoot - p.root).normalized();
        p.dir[kChest] = to_world(yaw, Vec3(0, 1, 0.9 * back).normalized());
        p.dir[kHead] = p.dir[kChest];
        const Vec3 reach = to_world(yaw, Vec3(0, -0.2, 1).normalized());
        p.dir[kLeftHand] = ((1 - s * s) * p.dir[kLeftHand] + s * s * reach).normalized();
        p.dir[kRightHand] = ((1 - s * s) * p.dir[kRightHand] + s * s * reach).normalized();
        track[f] = p;
    }
    return track;
}

/// Right leg swings forward and up once.
Track kick(const Vec3& ground, double yaw, int frames, double fps, Rng& rng) {
    Track track = stand(ground, yaw, frames);
    const double peak = uniform(rng, 1.0, 1.3);
    const double dur = duration(frames, fps);
    for (int f = 0; f < frames; ++f) {
        const double s = std::sin(M_PI * (f / fps) / dur);
        const double angle = peak * s * s;
        track[f].dir[kRightFoot] = to_world(yaw, rotation_x(-angle) * rest_dir(kRightFoot));
        track[f].dir[kLeftHand] = to_world(yaw, rotation_x(-0.6 * s * s) * rest_dir(kLeftHand));
    }
    return track;
}

/// Sub-actions that a stationary partner can perform.
Track stationary_action(const std::string& action, const Vec3& ground, double yaw, int frames, double fps,
                        Rng& rng) {
    if (action == "stand") return stand(ground, yaw, frames);
    if (action == "wave") return wave(ground, yaw, frames, fps, rng);
    if (action == "squat") return squat(ground, yaw, frames, fps, rng);
    if (action == "kick") return kick(ground, yaw, frames, fps, rng);
    throw InvalidArgument("unknown stationary action '" + action + "'");
}

MotionSeq to_motion(const Track& track, double fps) {
    SkeletonDef skel = skeleton7();
    skel.fps = fps;
    const int frames = static_cast<int>(track.size());
    const int J = skel.joint_count;
    std::vector<Mat3> local(static_cast<std::size_t>(frames * J));
    Mat root(frames, 3);
    for (int f = 0; f < frames; ++f) {
        const PoseFrame& p = track[f];
        std::array<Mat3, 7> global;
        global[kRoot] = rotation_y(p.yaw);
        local[f * J + kRoot] = global[kRoot];
        root.row(f) = p.root.transpose();
        for (int j = 1; j < J; ++j) {
            const int parent = skel.parent[j];  // parents precede children in the preset
            const Vec3 in_parent = global[parent].transpose() * p.dir[j];
            const Mat3 L = rotation_between(rest_dir(j), in_parent);
            local[f * J + j] = L;
            global[j] = global[parent] * L;
        }
    }
    const Mat positions = forward_kinematics(skel, root, local);
    return assemble_motion(positions, pack_rotations(local, frames, J), skel);
}

/// Mirror across the vertical plane through the origin at angle `phi`
/// (phi = 0 is the plane x = 0), swapping left and right.
Track mirror_track(const Track& src, double phi) {
    const Mat3 R = rotation_y(phi);
    const Mat3 S = R * Vec3(-1, 1, 1).asDiagonal() * R.transpose();
    static constexpr std::array<int, 7> swap{kRoot, kChest, kHead, kRightHand, kLeftHand, kRightFoot, kLeftFoot};
    Track out(src.size());
    for (std::size_t f = 0; f < src.size(); ++f) {
        out[f].root = S * src[f].root;
        out[f].yaw = 2 * phi - src[f].yaw;
        for (int j = 1; j < 7; ++j) out[f].dir[j] = S * src[f].dir[swap[j]];
    }
    return out;
}

template <std::size_t N>
const std::string& pick(Rng& rng, const std::array<std::string, N>& options) {
    return options[static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(N) - 1))];
}

std::string fill(std::string tmpl, const std::string& value) {
    const auto at = tmpl.find("{}");
    if (at != std::string::npos) tmpl.replace(at, 2, value);
    return tmpl;
}

// ------------------------------------------------------------------ texts

std::string primitive_text(const std::string& kind, Rng& rng) {
    static const std::map<std::string, std::array<std::string, 3>> templates{
        {"stand", {"a person stands still", "someone is standing in place", "a person stays standing without moving"}},
        {"walk_forward", {"a person walks forward", "someone walks straight ahead", "a person takes several steps forward"}},
        {"walk_circle",
         {"a person walks in a circle", "someone walks around in a circular path", "a person circles around while walking"}},
        {"wave", {"a person waves a hand", "someone raises an arm and waves", "a person is waving hello"}},
        {"squat", {"a person squats down and stands up", "someone does a squat", "a person bends the knees into a squat"}},
        {"kick", {"a person kicks with one leg", "someone performs a kick", "a person swings a leg forward in a kick"}},
    };
    return pick(rng, templates.at(kind));
}

struct PatternTexts {
    std::array<std::string, 3> first;        // role of person 1
    std::array<std::string, 3> others;       // role of persons 2..N
    std::array<std::string, 3> interactive;  // joint description
    std::array<std::string, 3> first_slot;   // value substituted into `first`
    std::array<std::string, 3> others_slot;
    std::array<std::string, 3> joint_slot;
};

const PatternTexts& pattern_texts(const std::string& pattern) {
    static const std::map<std::string, PatternTexts> table{
        {"approach",
         {{"a person walks up to someone who {}", "someone walks over toward another person who {}",
           "a person approaches someone who {}"},
          {"{} while someone walks toward them", "{} as another person approaches",
           "{} and waits for someone to arrive"},
          {"one person walks toward another who {}", "a person approaches someone who {}",
           "two people meet as one walks over to the other who {}"},
          {"stands still", "is waving", "is squatting"},
          {"a person stands still", "a person waves a hand", "a person squats down"},
          {"stands still", "is waving", "is squatting"}}},
        {"follow",
         {{"a person walks {} leading the way", "someone leads by walking {}", "a person walks {} ahead of someone"},
          {"a person follows behind someone walking {}", "someone walks {} behind another person",
           "a person trails someone while walking {}"},
          {"one person follows another walking {}", "two people walk {} one behind the other",
           "a person leads and another follows, walking {}"},
          {"straight ahead", "in a curve to the left", "in a curve to the right"},
          {"straight ahead", "in a curve to the left", "in a curve to the right"},
          {"straight ahead", "in a curve to the left", "in a curve to the right"}}},
        {"circle_around",
         {{"{} while someone circles around them", "{} as another person walks around them",
           "{} in the middle of someone's circle"},
          {"a person walks in a circle around someone who {}", "someone circles around a person who {}",
           "a person walks around another person who {}"},
          {"one person circles around another who {}", "a person walks a loop around someone who {}",
           "two people, one in the centre who {} and one circling"},
          {"a person stands still", "a person waves a hand", "a person squats down"},
          {"stands still", "is waving", "is squatting"},
          {"stands still", "is waving", "is squatting"}}},
        {"mirror",
         {{"a person {} facing someone", "someone {} in front of another person", "a person {} while being mirrored"},
          {"a person mirrors someone who {}", "someone copies another person who {}",
           "a person imitates someone who {}"},
          {"two people face each other and {} in mirror image", "one person mirrors the other as they both {}",
           "a pair {} symmetrically facing each other"},
          {"waves", "squats", "kicks"},
          {"waves", "squats", "kicks"},
          {"wave", "squat", "kick"}}},
        {"high_five",
         {{"a person raises the {} to high five someone", "someone gives a high five with the {}",
           "a person reaches out the {} to slap hands"},
          {"a person returns a high five with the {}", "someone answers a high five using the {}",
           "a person meets another's hand with the {}"},
          {"two people give each other a high five with the {}", "a pair slaps hands together using the {}",
           "two people meet face to face and high five with the {}"},
          {"right hand", "left hand", "both hands"},
          {"right hand", "left hand", "both hands"},
          {"right hand", "left hand", "both hands"}}},
    };
    const auto it = table.find(pattern);
    if (it == table.end()) throw InvalidArgument("unknown interaction pattern '" + pattern + "'");
    return it->second;
}

// --------------------------------------------------------------- patterns

struct Scene {
    std::vector<Track> tracks;
    int variant = 0;
};

Scene approach(int persons, int frames, double fps, Rng& rng, int variant) {
    static const std::array<std::string, 3> actions{"stand", "wave", "squat"};
    Scene sc;
    sc.variant = variant;
    const Vec3 target(uniform(rng, -1, 1), 0, uniform(rng, -1, 1));
    const double base_angle = uniform(rng, -M_PI, M_PI);
    const double dur = duration(frames, fps);
    std::vector<Track> walkers;
    for (int w = 0; w < persons - 1; ++w) {
        const double angle = base_angle + 2 * M_PI * w / (persons - 1);
        const double d0 = uniform(rng, 2.4, 3.2);
        const double d1 = uniform(rng, 0.3, 0.42);
        const Vec3 start = target + d0 * Vec3(std::cos(angle), 0, std::sin(angle));
        const double yaw = yaw_of(target - start);
        const double speed = (d0 - d1) / dur;
        walkers.push_back(walk(straight_path(start, yaw, speed), speed, frames, fps, uniform(rng, 0, kStepPeriod)));
    }
    const double partner_yaw = yaw_of(Vec3(std::cos(base_angle), 0, std::sin(base_angle)));
    sc.tracks.push_back(walkers[0]);
    sc.tracks.push_back(stationary_action(actions[variant], target, partner_yaw, frames, fps, rng));
    for (std::size_t w = 1; w < walkers.size(); ++w) sc.tracks.push_back(walkers[w]);
    return sc;
}

Scene follow(int persons, int frames, double fps, Rng& rng, int variant) {
    Scene sc;
    sc.variant = variant;
    const double speed = uniform(rng, 0.9, 1.2);
    const double yaw = uniform(rng, -M_PI, M_PI);
    const Vec3 start(uniform(rng, -1, 1), 0, uniform(rng, -1, 1));
    PathFn lead = variant == 0 ? straight_path(start, yaw, speed)
                               : arc_path(start, yaw, speed, uniform(rng, 2.0, 3.0), variant == 1 ? 1.0 : -1.0);
    const double gap = uniform(rng, 1.0, 1.3);
    for (int i = 0; i < persons; ++i) {
        const double lag = i * gap / speed;
        PathFn p = [lead, lag](double t) { return lead(t - lag); };
        sc.tracks.push_back(walk(p, speed, frames, fps, uniform(rng, 0, kStepPeriod)));
    }
    return sc;
}

Scene circle_around(int persons, int frames, double fps, Rng& rng, int variant) {
    static const std::array<std::string, 3> actions{"stand", "wave", "squat"};
    Scene sc;
    sc.variant = variant;
    const Vec3 centre(uniform(rng, -1, 1), 0, uniform(rng, -1, 1));
    const double radius = uniform(rng, 1.0, 1.4);
    const double speed = uniform(rng, 0.9, 1.2);
    const double direction = uniform_int(rng, 0, 1) ? 1.0 : -1.0;
    const double angle0 = uniform(rng, -M_PI, M_PI);
    sc.tracks.push_back(stationary_action(actions[variant], centre, angle0, frames, fps, rng));
    for (int i = 1; i < persons; ++i) {
        const double a = angle0 + 2 * M_PI * (i - 1) / (persons - 1);
        sc.tracks.push_back(
            walk(circle_path(centre, radius, a, speed, direction), speed, frames, fps, uniform(rng, 0, kStepPeriod)));
    }
    return sc;
}

Scene mirror(int persons, int frames, double fps, Rng& rng, int variant) {
    static const std::array<std::string, 3> actions{"wave", "squat", "kick"};
    Scene sc;
    sc.variant = variant;
    const Vec3 ground(uniform(rng, 0.6, 1.0), 0, uniform(rng, -1, 1));
    const double yaw = -M_PI / 2 + uniform(rng, -0.3, 0.3);
    Track actor = stationary_action(actions[variant], ground, yaw, frames, fps, rng);
    ClipNoise::draw(rng).apply(actor);
    sc.tracks.push_back(actor);
    for (int i = 1; i < persons; ++i) sc.tracks.push_back(mirror_track(actor, M_PI * (i - 1) / persons));
    return sc;
}

Scene high_five(int persons, int frames, double fps, Rng& rng, int variant) {
    Scene sc;
    sc.variant = variant;
    const Vec3 centre(uniform(rng, -1, 1), 0, uniform(rng, -1, 1));
    const double radius = uniform(rng, 0.4, 0.5);
    const double angle0 = uniform(rng, -M_PI, M_PI);
    const double dur = duration(frames, fps);
    const bool both = variant == 2;
    const double spread = both ? 0.15 : 0.0;
    const double lift = std::sqrt(kArm * kArm - radius * radius - spread * spread);
    for (int i = 0; i < persons; ++i) {
        const double a = angle0 + 2 * M_PI * i / persons;
        const Vec3 ground = centre + radius * Vec3(std::cos(a), 0, std::sin(a));
        const double yaw = yaw_of(centre - ground);
        Track track = stand(ground, yaw, frames);
        const Vec3 chest = ground + Vec3(0, kStandHeight + kTorso, 0);
        const Vec3 meet = centre + Vec3(0, kStandHeight + kTorso + lift, 0);
        const Vec3 lat = left(yaw);
        for (int f = 0; f < frames; ++f) {
            const double x = (f / fps) / dur;
            const double w = smoothstep(0.1, 0.4, x) * (1.0 - smoothstep(0.6, 0.9, x));
            auto reach = [&](int joint, const Vec3& point) {
                const Vec3 rest = track[f].dir[joint];
                track[f].dir[joint] = ((1 - w) * rest + w * (point - chest).normalized()).normalized();
            };
            if (both) {
                reach(kLeftHand, meet + spread * lat);
                reach(kRightHand, meet - spread * lat);
            } else {
                reach(variant == 0 ? kRightHand : kLeftHand, meet);
            }
        }
        sc.tracks.push_back(std::move(track));
    }
    return sc;
}

}  // namespace

std::string to_string(Split s) { return s == Split::train ? "train" : "test"; }

Split parse_split(const std::string& s) {
    if (s == "train") return Split::train;
    if (s == "test") return Split::test;
    throw InvalidArgument("unknown split '" + s + "'");
}

void GeneratorConfig::validate() const {
    if (n_samples < 1) throw InvalidArgument("n_samples: must be >= 1");
    if (frames < 8) throw InvalidArgument("frames: must be >= 8");
    if (n_persons < 2) throw InvalidArgument("n_persons: must be >= 2");
    if (!force_split && !(train_fraction > 0.0 && train_fraction < 1.0))
        throw InvalidArgument("train_fraction: must lie strictly between 0 and 1");
    double total = 0.0;
    for (const auto& p : interaction_patterns()) {
        const auto it = pattern_weights.find(p);
        const double w = it == pattern_weights.end() ? 1.0 : it->second;
        if (!(w >= 0.0)) throw InvalidArgument("pattern_weights: weights must be non-negative");
        total += w;
    }
    for (const auto& [name, w] : pattern_weights) {
        (void)w;
        if (std::find(interaction_patterns().begin(), interaction_patterns().end(), name) ==
            interaction_patterns().end())
            throw InvalidArgument("pattern_weights: unknown pattern '" + name + "'");
    }
    if (!(total > 0.0)) throw InvalidArgument("pattern_weights: weights must not all be zero");
    skeleton_preset(skeleton);
}

SkeletonDef skeleton_preset(const std::string& name) {
    if (name == "default7") return SkeletonDef::default7();
    throw InvalidArgument("unknown skeleton preset '" + name + "'");
}

SkeletonDef skeleton_for_joints(int joints) {
    if (joints == 7) return SkeletonDef::default7();
    return SkeletonDef::chain(joints);
}

PrimitiveSample generate_primitive(const std::string& kind, int frames, std::uint64_t seed) {
    if (std::find(primitive_kinds().begin(), primitive_kinds().end(), kind) == primitive_kinds().end())
        throw InvalidArgument("unknown primitive kind '" + kind + "'");
    if (frames < 8) throw InvalidArgument("generate_primitive: frames must be >= 8");
    Rng rng(seed);
    const double fps = skeleton7().fps;
    const Vec3 ground(uniform(rng, -1.5, 1.5), 0, uniform(rng, -1.5, 1.5));
    const double yaw = uniform(rng, -M_PI, M_PI);
    Track track;
    if (kind == "walk_forward") {
        // fast enough to cover at least 0.6 units even on short clips
        const double speed = std::max(uniform(rng, 0.8, 1.2), 0.6 / duration(frames, fps));
        track = walk(straight_path(ground, yaw, speed), speed, frames, fps, uniform(rng, 0, kStepPeriod));
    } else if (kind == "walk_circle") {
        const double speed = uniform(rng, 0.8, 1.1);
        const double dir = uniform_int(rng, 0, 1) ? 1.0 : -1.0;
        track = walk(circle_path(ground, uniform(rng, 1.0, 1.5), yaw, speed, dir), speed, frames, fps,
                     uniform(rng, 0, kStepPeriod));
    } else {
        track = stationary_action(kind, ground, yaw, frames, fps, rng);
    }
    ClipNoise::draw(rng).apply(track);
    return {to_motion(track, fps), primitive_text(kind, rng)};
}

InteractionSample generate_interaction(const std::string& pattern, int persons, int frames, std::uint64_t seed) {
    const PatternTexts& texts = pattern_texts(pattern);
    if (persons < 2) throw InvalidArgument("generate_interaction: persons must be >= 2");
    if (frames < 8) throw InvalidArgument("generate_interaction: frames must be >= 8");
    Rng rng(seed);
    const double fps = skeleton7().fps;
    const int variant = uniform_int(rng, 0, 2);
    Scene sc;
    if (pattern == "approach") sc = approach(persons, frames, fps, rng, variant);
    else if (pattern == "follow") sc = follow(persons, frames, fps, rng, variant);
    else if (pattern == "circle_around") sc = circle_around(persons, frames, fps, rng, variant);
    else if (pattern == "mirror") sc = mirror(persons, frames, fps, rng, variant);
    else sc = high_five(persons, frames, fps, rng, variant);

    InteractionSample out;
    out.variant = texts.joint_slot[variant];
    // mirror noise is applied before reflecting so the reflection stays exact
    const ClipNoise shared = ClipNoise::draw(rng);
    for (std::size_t i = 0; i < sc.tracks.size(); ++i) {
        Track& tr = sc.tracks[i];
        if (pattern != "mirror") {
            ClipNoise n = ClipNoise::draw(rng);
            if (pattern == "high_five") n.offset = shared.offset;  // keeps the meeting point intact
            n.apply(tr);
        }
        out.motions.push_back(to_motion(tr, fps));
        if (i == 0)
            out.texts_single.push_back(fill(pick(rng, texts.first), texts.first_slot[variant]));
        else
            out.texts_single.push_back(fill(pick(rng, texts.others), texts.others_slot[variant]));
    }
    out.text_interactive = fill(pick(rng, texts.interactive), texts.joint_slot[variant]);
    return out;
}

std::pair<int, int> split_counts(int n, double train_fraction) {
    const double exact_train = n * train_fraction;
    const double exact_test = n * (1.0 - train_fraction);
    int train = static_cast<int>(std::floor(exact_train));
    int test = static_cast<int>(std::floor(exact_test));
    int left_over = n - train - test;
    const double r_train = exact_train - train;
    const double r_test = exact_test - test;
    while (left_over > 0) {
        if (r_train >= r_test) ++train;
        else ++test;
        --left_over;
        if (left_over > 0) {
            if (r_train >= r_test) ++test;
            else ++train;
            --left_over;
        }
    }
    return {train, test};
}

std::vector<SampleRecord> generate_dataset(const GeneratorConfig& config) {
    config.validate();
    std::vector<double> weights;
    for (const auto& p : interaction_patterns()) {
        const auto it = config.pattern_weights.find(p);
        weights.push_back(it == config.pattern_weights.end() ? 1.0 : it->second);
    }
    std::vector<SampleRecord> records(static_cast<std::size_t>(config.n_samples));
    const int width = std::max(6, static_cast<int>(std::to_string(config.n_samples).size()));
    for (int i = 0; i < config.n_samples; ++i) {
        Rng rng(mix_seed(config.seed, static_cast<std::uint64_t>(i)));
        std::discrete_distribution<int> choose(weights.begin(), weights.end());
        const std::string& pattern = interaction_patterns()[static_cast<std::size_t>(choose(rng))];
        InteractionSample s = generate_interaction(pattern, config.n_persons, config.frames, rng());
        std::string num = std::to_string(i);
        SampleRecord& r = records[static_cast<std::size_t>(i)];
        r.id = config.id_prefix + std::string(static_cast<std::size_t>(width) - num.size(), '0') + num;
        r.motions = std::move(s.motions);
        r.texts_single = std::move(s.texts_single);
        r.text_interactive = std::move(s.text_interactive);
    }
    if (config.force_split) {
        for (auto& r : records) r.split = *config.force_split;
        return records;
    }
    // rank ids by a seeded hash; the lowest n_train become training records
    const auto [n_train, n_test] = split_counts(config.n_samples, config.train_fraction);
    (void)n_test;
    std::vector<std::pair<std::uint64_t, std::size_t>> keys;
    for (std::size_t i = 0; i < records.size(); ++i)
        keys.emplace_back(mix_seed(config.seed ^ fnv1a(records[i].id), 0x5EED), i);
    std::sort(keys.begin(), keys.end());
    for (std::size_t k = 0; k < keys.size(); ++k)
        records[keys[k].second].split = static_cast<int>(k) < n_train ? Split::train : Split::test;
    return records;
}

namespace {

void append_number(std::string& out, double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    out += buf;
}

}  // namespace

std::string record_to_json(const SampleRecord& r) {
    if (r.motions.empty()) throw InvalidArgument("record has no motions");
    const MotionSeq& first = r.motions.front();
    std::string out;
    out.reserve(static_cast<std::size_t>(r.n_persons() * first.data.size() * 12 + 512));
    out += "{\"id\":" + nlohmann::json(r.id).dump();
    out += ",\"n_persons\":" + std::to_string(r.n_persons());
    out += ",\"F\":" + std::to_string(first.frames());
    out += ",\"J\":" + std::to_string(first.joints());
    out += ",\"fps\":";
    append_number(out, first.skeleton.fps);
    out += ",\"motions\":[";
    for (int p = 0; p < r.n_persons(); ++p) {
        const Mat& d = r.motions[static_cast<std::size_t>(p)].data;
        if (p) out += ',';
        out += '[';
        for (Eigen::Index f = 0; f < d.rows(); ++f) {
            if (f) out += ',';
            out += '[';
            for (Eigen::Index c = 0; c < d.cols(); ++c) {
                if (c) out += ',';
                append_number(out, d(f, c));
            }
            out += ']';
        }
        out += ']';
    }
    out += "],\"texts_single\":" + nlohmann::json(r.texts_single).dump();
    out += ",\"text_interactive\":" + nlohmann::json(r.text_interactive).dump();
    out += ",\"split\":" + nlohmann::json(to_string(r.split)).dump();
    out += '}';
    return out;
}

SampleRecord record_from_json(const std::string& line) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw InvalidDataset(std::string("malformed record: ") + e.what());
    }
    try {
        SampleRecord r;
        r.id = j.at("id").get<std::string>();
        const int n = j.at("n_persons").get<int>();
        const int frames = j.at("F").get<int>();
        const int joints = j.at("J").get<int>();
        SkeletonDef skel = skeleton_for_joints(joints);
        skel.fps = j.at("fps").get<double>();
        const int dim = pose_dim(joints);
        const auto& motions = j.at("motions");
        if (static_cast<int>(motions.size()) != n) throw InvalidDataset("record " + r.id + ": motion count != n_persons");
        for (const auto& m : motions) {
            if (static_cast<int>(m.size()) != frames) throw InvalidDataset("record " + r.id + ": frame count != F");
            MotionSeq seq;
            seq.skeleton = skel;
            seq.data.resize(frames, dim);
            for (int f = 0; f < frames; ++f) {
                const auto& row = m[static_cast<std::size_t>(f)];
                if (static_cast<int>(row.size()) != dim)
                    throw InvalidDataset("record " + r.id + ": channel count != 12J+4");
                for (int c = 0; c < dim; ++c) seq.data(f, c) = row[static_cast<std::size_t>(c)].get<double>();
            }
            r.motions.push_back(std::move(seq));
        }
        if (j.contains("texts_single")) r.texts_single = j.at("texts_single").get<std::vector<std::string>>();
        r.text_interactive = j.value("text_interactive", std::string());
        r.split = parse_split(j.value("split", std::string("train")));
        return r;
    } catch (const nlohmann::json::exception& e) {
        throw InvalidDataset(std::string("malformed record: ") + e.what());
    } catch (const InvalidArgument& e) {
        throw InvalidDataset(std::string("malformed record: ") + e.what());
    }
}

void write_dataset(const std::filesystem::path& path, const std::vector<SampleRecord>& records) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    for (const auto& r : records) {
        out << record_to_json(r) << '\n';
    }
    out.flush();
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

std::vector<SampleRecord> read_dataset(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open dataset '" + path.string() + "'");
    std::vector<SampleRecord> records;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        records.push_back(record_from_json(line));
    }
    return records;
}

int apply_text_overrides(std::vector<SampleRecord>& records, const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open text overrides '" + path.string() + "'");
    std::map<std::string, std::size_t> by_id;
    for (std::size_t i = 0; i < records.size(); ++i) by_id[records[i].id] = i;
    int updated = 0;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw InvalidDataset(std::string("malformed text override: ") + e.what());
        }
        const auto it = by_id.find(j.value("id", std::string()));
        if (it == by_id.end()) continue;
        SampleRecord& r = records[it->second];
        if (j.contains("texts_single")) {
            auto texts = j.at("texts_single").get<std::vector<std::string>>();
            if (static_cast<int>(texts.size()) != r.n_persons())
                throw InvalidDataset("text override for " + r.id + ": expected one text per person");
            r.texts_single = std::move(texts);
        }
        if (j.contains("text_interactive")) r.text_interactive = j.at("text_interactive").get<std::string>();
        ++updated;
    }
    return updated;
}

std::vector<SampleRecord> filter_split(const std::vector<SampleRecord>& records, Split split) {
    std::vector<SampleRecord> out;
    for (const auto& r : records) {
        if (r.split == split) out.push_back(r);
    }
    return out;
}

}  // namespace polymotion
