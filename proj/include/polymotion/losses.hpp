#pragma once

#include "polymotion/motion_repr.hpp"

#include <vector>

namespace polymotion {

struct LossWeights {
    double foot = 1.0;
    double velocity = 1.0;
    double bone = 1.0;
    double distance_map = 1.0;
    double dm_threshold = 1.0;  // distance-map mask radius, world units

    void validate() const;
    /// All geometric terms off: reconstruction only.
    static LossWeights reconstruction_only() { return {0.0, 0.0, 0.0, 0.0, 1.0}; }
};

struct LossParts {
    double rec = 0.0;
    double foot = 0.0;
    double vel = 0.0;
    double bone = 0.0;
    double dm = 0.0;
    double total = 0.0;

    LossParts& operator+=(const LossParts& o);
    LossParts& operator*=(double s);
};

/// Mean squared error over all channels.
template <typename T>
double reconstruction_loss(const MatT<T>& x0, const MatT<T>& x0_hat, MatT<T>* grad = nullptr, double scale = 1.0);

/// Mean over frames >= 1 and joints of |dp_hat - dp|^2 where dp is the
/// frame-to-frame position difference.
template <typename T>
double velocity_loss(const MatT<T>& x0, const MatT<T>& x0_hat, int joints, MatT<T>* grad = nullptr,
                     double scale = 1.0);

/// Mean over (frame >= 1, foot channel) pairs whose ground-truth contact is
/// set of the predicted foot displacement squared; 0 without contacts.
template <typename T>
double foot_loss(const MatT<T>& x0, const MatT<T>& x0_hat, const SkeletonDef& skeleton, MatT<T>* grad = nullptr,
                 double scale = 1.0);

/// Mean over frames and non-root joints of (|p_j - p_parent| - length_j)^2.
template <typename T>
double bone_loss(const MatT<T>& x0_hat, const SkeletonDef& skeleton, MatT<T>* grad = nullptr, double scale = 1.0);

/// Masked joint distance map against each condition, averaged over
/// conditions; 0 without conditions.
template <typename T>
double distance_map_loss(const MatT<T>& x0, const MatT<T>& x0_hat, const std::vector<const MatT<T>*>& conditions,
                         int joints, double threshold, MatT<T>* grad = nullptr, double scale = 1.0);

/// Per-channel affine normalisation applied to motion features before diffusion.
struct FeatureStats {
    Mat mean;  // 1 x D
    Mat std;   // 1 x D

    static FeatureStats identity(int dim);
    /// Rows of all motions; std floored at `min_std`.
    static FeatureStats fit(const std::vector<const Mat*>& motions, double min_std = 1e-2);

    int dim() const { return static_cast<int>(mean.cols()); }
    template <typename T>
    MatT<T> normalize(const MatT<T>& x) const;
    template <typename T>
    MatT<T> denormalize(const MatT<T>& x) const;
};

/// Weighted sum of the parts above. Inputs are in world units; gradients are
/// accumulated into `grad` (same shape as x0_hat) multiplied by `scale`.
/// Geometric terms with zero weight are skipped entirely.
///
/// With `stats`, x0 and x0_hat are normalised features: the reconstruction
/// term is taken in normalised space, the geometric terms after
/// denormalisation, and `grad` is with respect to the normalised x0_hat.
/// Conditions are always in world units.
template <typename T>
LossParts motion_loss(const MatT<T>& x0, const MatT<T>& x0_hat, const SkeletonDef* skeleton, const LossWeights& w,
                      const std::vector<const MatT<T>*>& conditions = {}, MatT<T>* grad = nullptr,
                      double scale = 1.0, const FeatureStats* stats = nullptr);

}  // namespace polymotion
