#pragma once

#include "polymotion/model.hpp"
#include "polymotion/synth_data.hpp"

#include <functional>
#include <optional>

namespace polymotion {

enum class Stage { one, two, spatial };

std::string to_string(Stage s);
/// Accepts "1", "2", "spatial".
Stage parse_stage(const std::string& s);

/// One training example: N raw feature sequences plus their texts.
struct TrainItem {
    std::vector<Mat> motions;
    std::vector<std::string> texts_single;
    std::string text_interactive;
};

/// Throws InvalidDataset when a record lacks per-person texts.
std::vector<TrainItem> to_train_items(const std::vector<SampleRecord>& records);

struct TrainConfig {
    Stage stage = Stage::one;
    int epochs = 2500;
    long max_steps = 0;  // 0: run all epochs
    int batch_size = 80;
    double learning_rate = 1e-4;
    double weight_decay = 2e-5;
    bool lr_cosine_decay = false;  // anneal the learning rate to 0 over the run
    int diffusion_steps = 1000;
    ScheduleKind schedule = ScheduleKind::cosine;
    std::uint64_t seed = 0;
    LossWeights weights;
    double text_dropout = 0.1;
    double condition_keep = 0.7;
    TextMode text_mode = TextMode::interactive;
    double spatial_frame_keep = 0.25;
    int log_every = 10;
    NetDims dims;  // stage 1 only; later stages inherit the checkpoint's

    /// Per-stage defaults: epochs 2500/1000/1000, batch 80/30/30, lr 1e-4/1e-4/1e-5.
    static TrainConfig defaults(Stage s);
    void validate() const;
};

struct LogRow {
    int epoch = 0;
    long step = 0;
    LossParts loss;  // mean over the steps since the previous row
};

using LogFn = std::function<void(const LogRow&)>;

struct TrainResult {
    Model model;
    std::vector<LogRow> log;
    long steps = 0;
    std::string rng_state;
    double seconds = 0.0;
};

/// Trains the generation network from scratch. `skeleton` is required when
/// any geometric loss weight is non-zero.
TrainResult train_stage1(const std::vector<TrainItem>& items, const std::optional<SkeletonDef>& skeleton,
                         const TrainConfig& cfg, const LogFn& on_log = {});

/// Freezes the generation network of `base` and trains a fresh interaction
/// network initialised from it.
TrainResult train_stage2(const std::vector<TrainItem>& items, const Model& base, const TrainConfig& cfg,
                         const LogFn& on_log = {});

/// Continues the interaction network of `base` with random spatial signals.
TrainResult train_spatial(const std::vector<TrainItem>& items, const Model& base, const TrainConfig& cfg,
                          const LogFn& on_log = {});

/// One prepared training sample in normalised feature space.
template <typename T>
struct StepSample {
    MatT<T> x0;
    MatT<T> noise;
    int t = 1;
    MatT<T> text;                     // 1 x E
    std::optional<MatT<T>> inter_text;  // 1 x E text of the interaction network; `text` when absent
    std::vector<MatT<T>> conditions;  // kept conditions, normalised
    std::optional<MatT<T>> spatial;   // F x 4J
};

/// Loss averaged over the batch. Gradients (when sinks are given) are
/// accumulated into `gen_grads` / `inter_grads`; the interaction network is
/// used iff `inter` is non-null.
template <typename T>
LossParts step_loss(const ParamSet<T>& gen, const ParamSet<T>* inter, const NetDims& dims,
                    const SkeletonDef* skeleton, const FeatureStats& stats, const LossWeights& weights,
                    const NoiseSchedule& schedule, const std::vector<StepSample<T>>& batch, ParamSet<T>* gen_grads,
                    ParamSet<T>* inter_grads);

/// Random spatial signal over `positions` (F x 3J): frames kept with
/// probability `frame_keep`, a random non-empty joint subset observed.
SpatialSignal random_spatial_signal(const Mat& positions, int joints, double frame_keep, Rng& rng);

}  // namespace polymotion
