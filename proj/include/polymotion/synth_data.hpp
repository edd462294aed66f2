#pragma once

#include "polymotion/motion_repr.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace polymotion {

enum class Split { train, test };

std::string to_string(Split s);
Split parse_split(const std::string& s);

struct SampleRecord {
    std::string id;
    std::vector<MotionSeq> motions;
    std::vector<std::string> texts_single;
    std::string text_interactive;
    Split split = Split::train;

    int n_persons() const { return static_cast<int>(motions.size()); }
};

inline const std::vector<std::string>& primitive_kinds() {
    static const std::vector<std::string> kinds{"stand", "walk_forward", "walk_circle", "wave", "squat", "kick"};
    return kinds;
}

inline const std::vector<std::string>& interaction_patterns() {
    static const std::vector<std::string> patterns{"approach", "follow", "circle_around", "mirror", "high_five"};
    return patterns;
}

struct GeneratorConfig {
    std::uint64_t seed = 0;
    int n_samples = 2200;
    int frames = 32;
    int n_persons = 2;
    std::string skeleton = "default7";
    /// Relative weight per interaction pattern; missing patterns weigh 1.
    std::map<std::string, double> pattern_weights;
    double train_fraction = 10.0 / 11.0;
    /// When set, every record gets this split and train_fraction is ignored.
    std::optional<Split> force_split;
    std::string id_prefix = "s";

    void validate() const;
};

SkeletonDef skeleton_preset(const std::string& name);
/// Skeleton implied by a joint count read from a file.
SkeletonDef skeleton_for_joints(int joints);

struct PrimitiveSample {
    MotionSeq motion;
    std::string text;
};

/// Generators drive the default 7-joint skeleton.
PrimitiveSample generate_primitive(const std::string& kind, int frames, std::uint64_t seed);

struct InteractionSample {
    std::vector<MotionSeq> motions;
    std::vector<std::string> texts_single;
    std::string text_interactive;
    std::string variant;  // pattern-specific sub-action
};

InteractionSample generate_interaction(const std::string& pattern, int persons, int frames, std::uint64_t seed);

/// Exact per-split counts by largest-remainder rounding of n * fraction.
std::pair<int, int> split_counts(int n, double train_fraction);

std::vector<SampleRecord> generate_dataset(const GeneratorConfig& config);

/// One JSON object per line. Floats carry 9 significant digits.
std::string record_to_json(const SampleRecord& r);
SampleRecord record_from_json(const std::string& line);

void write_dataset(const std::filesystem::path& path, const std::vector<SampleRecord>& records);
std::vector<SampleRecord> read_dataset(const std::filesystem::path& path);

/// Replaces texts of matching ids with externally produced ones. The
/// override file uses the dataset line format; only id, texts_single and
/// text_interactive are read. Returns the number of records updated.
int apply_text_overrides(std::vector<SampleRecord>& records, const std::filesystem::path& path);

/// Records of one split.
std::vector<SampleRecord> filter_split(const std::vector<SampleRecord>& records, Split split);

}  // namespace polymotion
