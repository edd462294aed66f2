#pragma once

// Denoiser networks. The generation network maps a noised motion, a timestep
// and a text embedding to a predicted clean motion. The interaction network
// reads the same noised motion plus clean condition motions (and optionally a
// spatial signal) and returns one residual per generation block.
//
// Both networks run batched on an autodiff tape: sequences are stacked along
// rows and `ad::Segments` marks where each sample starts.

#include "polymotion/motion_repr.hpp"
#include "polymotion/params.hpp"

#include <optional>
#include <string>
#include <vector>

namespace polymotion {

struct NetDims {
    int pose_dim = 88;  // D
    int joints = 7;     // spatial input is 4 * joints wide; 0 disables it
    int hidden = 64;    // H
    int heads = 4;
    int blocks = 4;  // K, shared by both networks
    int max_frames = 64;
    int text_dim = 64;  // E

    int spatial_dim() const { return 4 * joints; }
    void validate() const;
};

bool operator==(const NetDims& a, const NetDims& b);

/// Closed-form scalar count of the generation parameters.
std::size_t generation_param_count(const NetDims& d);

template <typename T>
ParamSet<T> init_generation(const NetDims& dims, std::uint64_t seed);

/// Copies input projection, positions, attention and modulation maps from the
/// generation parameters; output and spatial projections start at zero.
template <typename T>
ParamSet<T> init_interaction(const ParamSet<T>& gen, const NetDims& dims, std::uint64_t seed);

/// B x width sinusoidal features of integer timesteps.
template <typename T>
MatT<T> timestep_features(const std::vector<int>& t, int width);

/// B x H conditioning vectors: time MLP plus projected text. `text` is B x E;
/// a zero row is the unconditional (null) text.
template <typename T>
ad::Var gm_condition(Binder<T>& gm, const NetDims& dims, const std::vector<int>& t, const MatT<T>& text);

struct GenOutput {
    ad::Var x0_hat;
    std::vector<ad::Var> hidden;  // block outputs after residual injection
};

/// `residuals`, when non-empty, holds one (rows x H) array per block and is
/// added to that block's output.
template <typename T>
GenOutput gm_forward(Binder<T>& gm, const NetDims& dims, ad::Var x_t, ad::Var cond, const ad::Segments& segs,
                     const std::vector<ad::Var>& residuals = {});

/// One batch of interaction inputs. Conditions are stacked in `conditions`;
/// `owner[c]` names the sample condition c belongs to, and condition c spans
/// as many rows as its owner's target.
struct InterBatch {
    ad::Var target;
    ad::Segments segs;
    ad::Var conditions;  // invalid when there are none
    std::vector<int> owner;
    ad::Var spatial;  // rows x 4J, invalid when absent
};

struct InterOutput {
    std::vector<ad::Var> residuals;
    ad::Var target_state;
    ad::Var condition_state;  // invalid when there are no conditions
};

template <typename T>
InterOutput im_forward(Binder<T>& im, const NetDims& dims, const InterBatch& batch, ad::Var cond);

/// Interaction features of a spatial signal: [targets * observed | observed], F x 4J.
Mat spatial_features(const SpatialSignal& s);

/// Single-sample convenience wrapper without gradients. Conditions with a
/// false keep flag are dropped; an empty `keep` keeps everything.
template <typename T>
std::vector<MatT<T>> im_residuals(const ParamSet<T>& gen, const ParamSet<T>& inter, const NetDims& dims,
                                  const MatT<T>& x_t, const std::vector<MatT<T>>& conditions,
                                  const SpatialSignal* spatial, int t, const MatT<T>& text,
                                  const std::vector<bool>& keep = {});

/// Single-sample prediction without gradients; residuals optional.
template <typename T>
MatT<T> gm_predict(const ParamSet<T>& gen, const NetDims& dims, const MatT<T>& x_t, int t, const MatT<T>& text,
                   const std::vector<MatT<T>>& residuals = {});

}  // namespace polymotion
