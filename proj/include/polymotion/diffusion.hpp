#pragma once

#include "polymotion/common.hpp"

#include <functional>
#include <string>
#include <vector>

namespace polymotion {

enum class ScheduleKind { cosine, linear };

ScheduleKind parse_schedule_kind(const std::string& name);

/// beta_t and alpha_bar_t for t = 1..T, with alpha_bar(0) == 1.
class NoiseSchedule {
public:
    NoiseSchedule() = default;
    NoiseSchedule(std::vector<double> betas);

    int steps() const { return static_cast<int>(beta_.size()); }
    double beta(int t) const;
    double alpha_bar(int t) const;

private:
    std::vector<double> beta_;
    std::vector<double> alpha_bar_;
};

NoiseSchedule make_schedule(int T, ScheduleKind kind = ScheduleKind::cosine);

/// Applied to x_t (in place) after every sampler step; `t` is the timestep x now sits at.
template <typename T>
using GuidanceHook = std::function<void(MatT<T>& x, int t)>;

struct SamplerConfig {
    int num_inference_steps = 50;
    double guidance_scale = 2.0;
    double eta = 0.0;
};

/// Validates against the schedule; throws InvalidArgument.
void validate(const SamplerConfig& cfg, const NoiseSchedule& schedule);

/// Evenly spaced timesteps from T down to 0 (inclusive), length steps + 1.
std::vector<int> inference_timesteps(int T, int steps);

template <typename T>
MatT<T> q_sample(const MatT<T>& x0, int t, const MatT<T>& eps, const NoiseSchedule& schedule);

template <typename T>
MatT<T> cfg_combine(const MatT<T>& pred_uncond, const MatT<T>& pred_cond, double w);

/// x0-parameterised DDIM update. `noise` is only read when eta > 0.
template <typename T>
MatT<T> ddim_step(const MatT<T>& x_t, const MatT<T>& x0_hat, int t, int t_prev, const NoiseSchedule& schedule,
                  double eta = 0.0, const MatT<T>* noise = nullptr);

/// Maps (x_t, t) to a predicted x0 of the same shape.
template <typename T>
using DenoiseFn = std::function<MatT<T>(const MatT<T>& x_t, int t)>;

/// Runs DDIM from the given x_T. Hooks run after every step, in order.
template <typename T>
MatT<T> sample_loop_from(MatT<T> x, const DenoiseFn<T>& denoise, const SamplerConfig& cfg,
                         const NoiseSchedule& schedule, Rng& rng, const std::vector<GuidanceHook<T>>& hooks = {});

/// Draws x_T ~ N(0, I) from `seed` and runs the loop.
template <typename T>
MatT<T> sample_loop(const DenoiseFn<T>& denoise, Eigen::Index rows, Eigen::Index cols, const SamplerConfig& cfg,
                    const NoiseSchedule& schedule, std::uint64_t seed, const std::vector<GuidanceHook<T>>& hooks = {});

template <typename T>
MatT<T> gaussian_noise(Eigen::Index rows, Eigen::Index cols, Rng& rng);

}  // namespace polymotion
