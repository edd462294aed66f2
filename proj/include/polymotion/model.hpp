#pragma once

#include "polymotion/checkpoint.hpp"
#include "polymotion/diffusion.hpp"
#include "polymotion/losses.hpp"
#include "polymotion/networks.hpp"
#include "polymotion/text_embed.hpp"

#include <optional>

namespace polymotion {

enum class TextMode { interactive, single };

std::string to_string(TextMode m);
TextMode parse_text_mode(const std::string& s);

/// Everything needed to run the denoiser: networks, feature statistics,
/// skeleton (absent for non-motion data), schedule and text encoder settings.
struct Model {
    NetDims dims;
    std::optional<SkeletonDef> skeleton;
    FeatureStats stats;
    int diffusion_steps = 1000;
    ScheduleKind schedule = ScheduleKind::cosine;
    int text_vocab = 1024;
    std::uint64_t text_seed = TextEmbedder::kDefaultSeed;
    TextMode text_mode = TextMode::interactive;  // text the interaction network was trained with
    long interaction_steps = 0;                   // optimisation steps the interaction network has seen
    ParamSet<float> gen;
    std::optional<ParamSet<float>> inter;

    NoiseSchedule make_noise_schedule() const { return make_schedule(diffusion_steps, schedule); }
    TextEmbedder make_embedder() const { return TextEmbedder(text_vocab, dims.text_dim, text_seed); }
    bool has_interaction() const { return inter.has_value(); }
};

/// Arrays are stored as "gen.<name>" and "inter.<name>".
Checkpoint to_checkpoint(const Model& m, const std::string& stage);
Model model_from_checkpoint(const Checkpoint& c);

nlohmann::json skeleton_to_json(const SkeletonDef& s);
SkeletonDef skeleton_from_json(const nlohmann::json& j);

}  // namespace polymotion
