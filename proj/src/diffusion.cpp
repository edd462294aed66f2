#include "polymotion/diffusion.hpp"

#include <algorithm>
#include <cmath>

namespace polymotion {

ScheduleKind parse_schedule_kind(const std::string& name) {
    if (name == "cosine") return ScheduleKind::cosine;
    if (name == "linear") return ScheduleKind::linear;
    throw InvalidArgument("unknown schedule kind '" + name + "'");
}

NoiseSchedule::NoiseSchedule(std::vector<double> betas) : beta_(std::move(betas)) {
    alpha_bar_.resize(beta_.size());
    double prod = 1.0;
    for (std::size_t i = 0; i < beta_.size(); ++i) {
        if (!(beta_[i] > 0.0 && beta_[i] < 1.0)) throw InvalidArgument("noise schedule: beta must lie in (0, 1)");
        prod *= 1.0 - beta_[i];
        alpha_bar_[i] = prod;
    }
}

double NoiseSchedule::beta(int t) const {
    if (t < 1 || t > steps()) throw InvalidArgument("noise schedule: timestep out of range");
    return beta_[t - 1];
}

double NoiseSchedule::alpha_bar(int t) const {
    if (t == 0) return 1.0;
    if (t < 0 || t > steps()) throw InvalidArgument("noise schedule: timestep out of range");
    return alpha_bar_[t - 1];
}

NoiseSchedule make_schedule(int T, ScheduleKind kind) {
    if (T < 2) throw InvalidArgument("make_schedule: T must be >= 2");
    std::vector<double> betas(T);
    if (kind == ScheduleKind::linear) {
        const double lo = 1e-4, hi = 0.02;
        for (int i = 0; i < T; ++i) betas[i] = lo + (hi - lo) * i / (T - 1);
    } else {
        constexpr double s = 0.008;
        auto f = [&](double t) {
            const double c = std::cos((t / T + s) / (1 + s) * M_PI / 2);
            return c * c;
        };
        for (int i = 0; i < T; ++i) betas[i] = std::clamp(1.0 - f(i + 1) / f(i), 1e-8, 0.999);
    }
    return NoiseSchedule(std::move(betas));
}

void validate(const SamplerConfig& cfg, const NoiseSchedule& schedule) {
    if (cfg.num_inference_steps < 1 || cfg.num_inference_steps > schedule.steps())
        throw InvalidArgument("sampler: num_inference_steps must be in [1, T]");
    if (!(cfg.guidance_scale >= 0)) throw InvalidArgument("sampler: guidance_scale must be >= 0");
    if (!(cfg.eta >= 0 && cfg.eta <= 1)) throw InvalidArgument("sampler: eta must be in [0, 1]");
}

std::vector<int> inference_timesteps(int T, int steps) {
    if (steps < 1 || steps > T) throw InvalidArgument("inference_timesteps: steps must be in [1, T]");
    std::vector<int> ts(steps + 1);
    for (int i = 0; i <= steps; ++i) {
        ts[i] = static_cast<int>(std::lround(static_cast<double>(T) * (steps - i) / steps));
    }
    return ts;
}

template <typename T>
MatT<T> q_sample(const MatT<T>& x0, int t, const MatT<T>& eps, const NoiseSchedule& schedule) {
    if (x0.rows() != eps.rows() || x0.cols() != eps.cols()) throw InvalidArgument("q_sample: shape mismatch");
    if (t < 1 || t > schedule.steps()) throw InvalidArgument("q_sample: t out of range");
    const double ab = schedule.alpha_bar(t);
    return (static_cast<T>(std::sqrt(ab)) * x0 + static_cast<T>(std::sqrt(1.0 - ab)) * eps).eval();
}

template <typename T>
MatT<T> cfg_combine(const MatT<T>& pred_uncond, const MatT<T>& pred_cond, double w) {
    if (pred_uncond.rows() != pred_cond.rows() || pred_uncond.cols() != pred_cond.cols())
        throw InvalidArgument("cfg_combine: shape mismatch");
    if (w == 0.0) return pred_uncond;
    if (w == 1.0) return pred_cond;
    return (pred_uncond + static_cast<T>(w) * (pred_cond - pred_uncond)).eval();
}

template <typename T>
MatT<T> ddim_step(const MatT<T>& x_t, const MatT<T>& x0_hat, int t, int t_prev, const NoiseSchedule& schedule,
                  double eta, const MatT<T>* noise) {
    if (t <= t_prev || t_prev < 0) throw InvalidArgument("ddim_step: need t > t_prev >= 0");
    if (x_t.rows() != x0_hat.rows() || x_t.cols() != x0_hat.cols()) throw InvalidArgument("ddim_step: shape mismatch");
    const double ab = schedule.alpha_bar(t);
    const double ab_prev = schedule.alpha_bar(t_prev);
    const MatT<T> eps_hat = (x_t - static_cast<T>(std::sqrt(ab)) * x0_hat) / static_cast<T>(std::sqrt(1.0 - ab));
    double sigma = 0.0;
    if (eta > 0.0) {
        sigma = eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab)) * std::sqrt(1.0 - ab / ab_prev);
    }
    const double dir = std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma));
    MatT<T> out = static_cast<T>(std::sqrt(ab_prev)) * x0_hat + static_cast<T>(dir) * eps_hat;
    if (sigma > 0.0) {
        if (noise == nullptr) throw InvalidArgument("ddim_step: eta > 0 requires noise");
        out += static_cast<T>(sigma) * *noise;
    }
    return out;
}

template <typename T>
MatT<T> gaussian_noise(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
    std::normal_distribution<double> normal(0.0, 1.0);
    MatT<T> m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(normal(rng));
    return m;
}

template <typename T>
MatT<T> sample_loop_from(MatT<T> x, const DenoiseFn<T>& denoise, const SamplerConfig& cfg,
                         const NoiseSchedule& schedule, Rng& rng, const std::vector<GuidanceHook<T>>& hooks) {
    validate(cfg, schedule);
    const auto ts = inference_timesteps(schedule.steps(), cfg.num_inference_steps);
    for (std::size_t i = 0; i + 1 < ts.size(); ++i) {
        const int t = ts[i];
        const int t_prev = ts[i + 1];
        const MatT<T> x0_hat = denoise(x, t);
        if (cfg.eta > 0.0) {
            const MatT<T> z = gaussian_noise<T>(x.rows(), x.cols(), rng);
            x = ddim_step<T>(x, x0_hat, t, t_prev, schedule, cfg.eta, &z);
        } else {
            x = ddim_step<T>(x, x0_hat, t, t_prev, schedule);
        }
        for (const auto& hook : hooks) hook(x, t_prev);
    }
    return x;
}

template <typename T>
MatT<T> sample_loop(const DenoiseFn<T>& denoise, Eigen::Index rows, Eigen::Index cols, const SamplerConfig& cfg,
                    const NoiseSchedule& schedule, std::uint64_t seed, const std::vector<GuidanceHook<T>>& hooks) {
    Rng rng(seed);
    MatT<T> x = gaussian_noise<T>(rows, cols, rng);
    return sample_loop_from<T>(std::move(x), denoise, cfg, schedule, rng, hooks);
}

#define POLYMOTION_INSTANTIATE(T)                                                                                   \
    template MatT<T> q_sample<T>(const MatT<T>&, int, const MatT<T>&, const NoiseSchedule&);                        \
    template MatT<T> cfg_combine<T>(const MatT<T>&, const MatT<T>&, double);                                        \
    template MatT<T> ddim_step<T>(const MatT<T>&, const MatT<T>&, int, int, const NoiseSchedule&, double,           \
                                  const MatT<T>*);                                                                  \
    template MatT<T> gaussian_noise<T>(Eigen::Index, Eigen::Index, Rng&);                                           \
    template MatT<T> sample_loop_from<T>(MatT<T>, const DenoiseFn<T>&, const SamplerConfig&, const NoiseSchedule&, \
                                         Rng&, const std::vector<GuidanceHook<T>>&);                                \
    template MatT<T> sample_loop<T>(const DenoiseFn<T>&, Eigen::Index, Eigen::Index, const SamplerConfig&,         \
                                    const NoiseSchedule&, std::uint64_t, const std::vector<GuidanceHook<T>>&);

POLYMOTION_INSTANTIATE(float)
POLYMOTION_INSTANTIATE(double)

#undef POLYMOTION_INSTANTIATE

}  // namespace polymotion
