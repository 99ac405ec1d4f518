#pragma once

#include <functional>
#include <vector>

#include "refcolor/nn/tensor.hpp"
#include "refcolor/rng.hpp"

namespace refcolor {

// Discrete DDPM-style schedule: T steps, strictly increasing betas in (0,1),
// strictly decreasing alphas_cumprod. Step indices are 1-based; index t
// reads alphas_cumprod[t-1], and alpha_bar(0) == 1 by convention.
struct NoiseSchedule {
    int T = 1000;
    std::vector<double> betas;
    std::vector<double> alphas_cumprod;

    static NoiseSchedule linear(int T = 1000, double beta_start = 8.5e-4,
                                double beta_end = 1.2e-2);

    double alpha_bar(int t) const;  // t in [0, T]
};

// Strength of the training-time emphasis on high timesteps; 0 = identity.
struct ShiftParams {
    double mu = 1.5;
};

// Continuous monotone remap of (0,T] onto itself:
//   t' = e^mu / (e^mu + (T/t - 1)) * T
double shift_timestep(double t, const ShiftParams& params, int T);

// Nearest-integer step in [1, T] for discrete schedules.
int shift_timestep_discrete(int t, const ShiftParams& params, int T);

// Draw t uniform over {1..T}, then apply the shift.
int sample_training_timestep(Rng& rng, const ShiftParams& params, int T);

// z_t = sqrt(alpha_bar_t) z0 + sqrt(1 - alpha_bar_t) eps. eps is supplied
// by the caller so the draw stays controllable.
nn::Tensor forward_diffuse(const nn::Tensor& z0, int t, const nn::Tensor& eps,
                           const NoiseSchedule& sched);

// Denoiser callback: predicted noise for (z_t, t).
using DenoiseFn = std::function<nn::Tensor(const nn::Tensor& z_t, int t)>;

// Deterministic DDIM (eta = 0) with uniform step spacing from T down.
// steps = 1 degenerates to one denoise plus the closed-form z0 estimate.
nn::Tensor sample_loop(const DenoiseFn& denoise, const std::vector<int>& latent_shape, int steps,
                       const NoiseSchedule& sched, Rng& rng);

}  // namespace refcolor
