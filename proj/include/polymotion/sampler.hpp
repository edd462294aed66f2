#pragma once

#include "polymotion/model.hpp"
#include "polymotion/synth_data.hpp"

#include <filesystem>
#include <optional>

namespace polymotion {

struct GenerationRequest {
    std::vector<std::string> texts;  // one per person
    /// Text of the interaction network per person; empty means `texts`.
    std::vector<std::string> interaction_texts;
    int frames = 32;
    std::uint64_t seed = 0;
    double guidance_scale = 2.0;
    int inference_steps = 50;
    double eta = 0.0;
    /// Per person; empty or shorter than texts means "no signal" for the rest.
    std::vector<std::optional<SpatialSignal>> spatial;
    double explicit_step = 0.1;  // explicit guidance step size, world units
    int explicit_repeats = 1;
    bool explicit_guidance = true;
    bool implicit_guidance = true;
    /// Person 1 is sampled with the interaction network attached (zero conditions).
    bool interaction_for_first = true;

    int persons() const { return static_cast<int>(texts.size()); }
    const SpatialSignal* spatial_for(int person) const;
    void validate(const Model& model) const;
};

/// Moves every observed joint of `x` (F x D features) a step of `step` world
/// units straight toward its target, `repeats` times. With `stats`, `x` is in
/// normalised feature space and the step is taken in world units.
template <typename T>
void explicit_guidance(MatT<T>& x, const SpatialSignal& s, double step, int repeats = 1,
                       const FeatureStats* stats = nullptr);

/// Sum over observed entries of the Euclidean distance to the target (world units).
double spatial_distance(const Mat& positions, const SpatialSignal& s);

/// Generates every request person by person; person i is conditioned on the
/// clean outputs of persons 1..i-1 of the same request. All requests must
/// share person count and frame count. Returns raw features per request.
std::vector<std::vector<Mat>> sample_features(const Model& model, const std::vector<GenerationRequest>& requests);

/// Single-request convenience: features turned into motions with contacts
/// clamped to [0, 1]. Needs a skeleton.
std::vector<MotionSeq> sample_multi(const Model& model, const GenerationRequest& request);
MotionSeq sample_single(const Model& model, const GenerationRequest& request);

/// Batched denoiser used by the sampler: predicts normalised x0 for each
/// sample, guided with `guidance_scale`. `conditions[b]` are the normalised
/// clean condition motions of sample b; `spatial[b]` its spatial features
/// (or nullptr). The interaction network is skipped when `use_interaction`
/// is false or the model has none. `inter_text` (B x E) replaces `text` as
/// the interaction network's text when given.
MatT<float> guided_prediction(const Model& model, const MatT<float>& x_t, const ad::Segments& segs, int t,
                              const MatT<float>& text, const std::vector<std::vector<MatT<float>>>& conditions,
                              const std::vector<const MatT<float>*>& spatial, double guidance_scale,
                              bool use_interaction, const MatT<float>* inter_text = nullptr);

/// Trajectory CSV: frame,person,joint,x,y,z.
void write_trajectory_csv(const std::filesystem::path& path, const std::vector<MotionSeq>& motions);

/// SpatialSignal JSON: {frames, joints, targets: F x J x 3, observed: F x J}.
SpatialSignal read_spatial_json(const std::filesystem::path& path);
void write_spatial_json(const std::filesystem::path& path, const SpatialSignal& s);

}  // namespace polymotion
