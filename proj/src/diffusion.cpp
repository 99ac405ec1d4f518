#include "refcolor/diffusion.hpp"

#include <algorithm>
#include <cmath>

#include "refcolor/errors.hpp"

namespace refcolor {

NoiseSchedule NoiseSchedule::linear(int T, double beta_start, double beta_end) {
    if (T < 1) throw InvalidArgument("NoiseSchedule: T must be positive");
    NoiseSchedule s;
    s.T = T;
    s.betas.resize(T);
    s.alphas_cumprod.resize(T);
    double prod = 1.0;
    for (int i = 0; i < T; ++i) {
        double beta = T == 1 ? beta_start
                             : beta_start + (beta_end - beta_start) * i / static_cast<double>(T - 1);
        s.betas[i] = beta;
        prod *= 1.0 - beta;
        s.alphas_cumprod[i] = prod;
    }
    return s;
}

double NoiseSchedule::alpha_bar(int t) const {
    if (t < 0 || t > T) throw InvalidArgument("alpha_bar: step out of range");
    return t == 0 ? 1.0 : alphas_cumprod[t - 1];
}

double shift_timestep(double t, const ShiftParams& params, int T) {
    if (!(t > 0.0) || t > static_cast<double>(T))
        throw InvalidArgument("shift_timestep: t must be in (0, T]");
    const double emu = std::exp(params.mu);
    return emu / (emu + (static_cast<double>(T) / t - 1.0)) * static_cast<double>(T);
}

int shift_timestep_discrete(int t, const ShiftParams& params, int T) {
    const double shifted = shift_timestep(static_cast<double>(t), params, T);
    return std::clamp(static_cast<int>(std::lround(shifted)), 1, T);
}

int sample_training_timestep(Rng& rng, const ShiftParams& params, int T) {
    const int t = static_cast<int>(rng.randint(1, T));
    return shift_timestep_discrete(t, params, T);
}

nn::Tensor forward_diffuse(const nn::Tensor& z0, int t, const nn::Tensor& eps,
                           const NoiseSchedule& sched) {
    if (t < 1 || t > sched.T) throw InvalidArgument("forward_diffuse: step out of range");
    if (!z0.same_shape(eps)) throw InvalidArgument("forward_diffuse: shape mismatch");
    const double ab = sched.alpha_bar(t);
    const double c0 = std::sqrt(ab);
    const double ce = std::sqrt(1.0 - ab);
    nn::Tensor out = z0;
    for (size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = c0 * z0.data[i] + ce * eps.data[i];
    return out;
}

nn::Tensor sample_loop(const DenoiseFn& denoise, const std::vector<int>& latent_shape, int steps,
                       const NoiseSchedule& sched, Rng& rng) {
    if (steps < 1) throw InvalidArgument("sample_loop: steps must be >= 1");

    nn::Tensor z(latent_shape);
    for (double& v : z.data) v = rng.normal();

    // Uniformly spaced timesteps T, ..., down to ~T/steps; the step after
    // the last one is 0 (alpha_bar = 1).
    std::vector<int> timesteps(steps);
    for (int i = 0; i < steps; ++i) {
        int t = static_cast<int>(std::lround(static_cast<double>(steps - i) * sched.T /
                                             static_cast<double>(steps)));
        timesteps[i] = std::clamp(t, 1, sched.T);
    }

    for (int i = 0; i < steps; ++i) {
        const int t = timesteps[i];
        const int t_prev = i + 1 < steps ? timesteps[i + 1] : 0;
        const double ab = sched.alpha_bar(t);
        const double ab_prev = sched.alpha_bar(t_prev);

        nn::Tensor eps_hat = denoise(z, t);
        if (!eps_hat.same_shape(z)) throw NumericError("sample_loop: denoiser shape mismatch");

        const double inv_sqrt_ab = 1.0 / std::sqrt(ab);
        const double sq_1mab = std::sqrt(1.0 - ab);
        const double sq_ab_prev = std::sqrt(ab_prev);
        const double sq_1mab_prev = std::sqrt(1.0 - ab_prev);
        for (size_t j = 0; j < z.data.size(); ++j) {
            const double z0_est = (z.data[j] - sq_1mab * eps_hat.data[j]) * inv_sqrt_ab;
            z.data[j] = sq_ab_prev * z0_est + sq_1mab_prev * eps_hat.data[j];
        }
    }
    return z;
}

}  // namespace refcolor
