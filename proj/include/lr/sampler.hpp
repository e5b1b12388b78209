#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "lr/backend.hpp"
#include "lr/errors.hpp"
#include "lr/rng.hpp"
#include "lr/tensor.hpp"
#include "lr/text.hpp"

namespace lr {

// Cumulative signal levels for a linear-beta schedule. alpha_bar[0] = 1 and
// the sequence is strictly decreasing in (0, 1]. Stored in double so the
// 1/sqrt(alpha_bar) coefficients stay accurate at large T.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> alpha_bar;  // size T + 1
};

inline NoiseSchedule make_schedule(int T, float beta_start, float beta_end) {
    if (T < 1) throw validation_error("schedule: T must be >= 1");
    if (!(beta_start > 0.0f) || !(beta_end < 1.0f) || beta_start > beta_end)
        throw validation_error("schedule: need 0 < beta_start <= beta_end < 1");
    NoiseSchedule s;
    s.T = T;
    s.alpha_bar.resize(static_cast<std::size_t>(T) + 1);
    s.alpha_bar[0] = 1.0;
    for (int k = 1; k <= T; ++k) {
        const double frac = (T == 1) ? 0.0 : double(k - 1) / double(T - 1);
        const double beta = double(beta_start) +
                            (double(beta_end) - double(beta_start)) * frac;
        s.alpha_bar[static_cast<std::size_t>(k)] =
            s.alpha_bar[static_cast<std::size_t>(k) - 1] * (1.0 - beta);
        if (!(s.alpha_bar[static_cast<std::size_t>(k)] > 0.0) ||
            s.alpha_bar[static_cast<std::size_t>(k)] >=
                s.alpha_bar[static_cast<std::size_t>(k) - 1])
            throw validation_error("schedule: alpha_bar must stay positive and "
                                   "strictly decreasing");
    }
    return s;
}

// Deterministic (eta = 0) update from timestep i to i - 1.
inline LatentTensor ddim_step(const LatentTensor& z, const Tensor& eps,
                              const NoiseSchedule& s, int i) {
    if (i < 1 || i > s.T)
        throw step_error("ddim_step: timestep " + std::to_string(i) +
                         " outside 1.." + std::to_string(s.T));
    if (z.timestep != i)
        throw step_error("ddim_step: latent is at timestep " +
                         std::to_string(z.timestep) + ", expected " +
                         std::to_string(i));
    if (!z.data.same_shape(eps))
        throw shape_error("ddim_step: eps shape does not match latent");
    if (!eps.all_finite())
        throw validation_error("ddim_step: eps has non-finite values");

    const double ab_i = s.alpha_bar[static_cast<std::size_t>(i)];
    const double ab_prev = s.alpha_bar[static_cast<std::size_t>(i) - 1];
    const double sq_i = std::sqrt(ab_i), sq_prev = std::sqrt(ab_prev);
    const double sg_i = std::sqrt(1.0 - ab_i), sg_prev = std::sqrt(1.0 - ab_prev);

    LatentTensor out;
    out.timestep = i - 1;
    out.data = Tensor(z.data.shape());
    for (std::size_t n = 0; n < z.data.numel(); ++n) {
        const double x0 = (double(z.data[n]) - sg_i * double(eps[n])) / sq_i;
        out.data[n] = static_cast<float>(sq_prev * x0 + sg_prev * double(eps[n]));
    }
    return out;
}

// First-order inversion update from timestep i - 1 to i, using the noise
// prediction evaluated at the current (less noisy) latent.
inline LatentTensor ddim_invert_step(const LatentTensor& z, const Tensor& eps,
                                     const NoiseSchedule& s, int i) {
    if (i < 1 || i > s.T)
        throw step_error("ddim_invert_step: timestep " + std::to_string(i) +
                         " outside 1.." + std::to_string(s.T));
    if (z.timestep != i - 1)
        throw step_error("ddim_invert_step: latent is at timestep " +
                         std::to_string(z.timestep) + ", expected " +
                         std::to_string(i - 1));
    if (!z.data.same_shape(eps))
        throw shape_error("ddim_invert_step: eps shape does not match latent");
    if (!eps.all_finite())
        throw validation_error("ddim_invert_step: eps has non-finite values");

    const double ab_i = s.alpha_bar[static_cast<std::size_t>(i)];
    const double ab_prev = s.alpha_bar[static_cast<std::size_t>(i) - 1];
    const double sq_i = std::sqrt(ab_i), sq_prev = std::sqrt(ab_prev);
    const double sg_i = std::sqrt(1.0 - ab_i), sg_prev = std::sqrt(1.0 - ab_prev);

    LatentTensor out;
    out.timestep = i;
    out.data = Tensor(z.data.shape());
    for (std::size_t n = 0; n < z.data.numel(); ++n) {
        const double x0 = (double(z.data[n]) - sg_prev * double(eps[n])) / sq_prev;
        out.data[n] = static_cast<float>(sq_i * x0 + sg_i * double(eps[n]));
    }
    return out;
}

// Runs the full inversion chain z_0 -> z_T under the empty condition at
// guidance 1, the regime the retouch stage requires.
inline LatentTensor ddim_invert(const DenoiserBackend& backend,
                                const LatentTensor& z0, const NoiseSchedule& s,
                                const TextCondition& cond) {
    if (z0.timestep != 0)
        throw step_error("ddim_invert: latent must start at timestep 0");
    if (cond.variant != CondVariant::empty)
        throw validation_error("ddim_invert: condition must be the empty "
                               "prompt");
    LatentTensor z = z0;
    for (int i = 1; i <= s.T; ++i) {
        Tensor eps = backend.denoise(z, cond, i);
        z = ddim_invert_step(z, eps, s, i);
    }
    return z;
}

// Plain sampling loop i = T..1 without swaps, for round trips and demos.
inline LatentTensor ddim_sample(const DenoiserBackend& backend,
                                const LatentTensor& zT, const NoiseSchedule& s,
                                const TextCondition& cond, float guidance,
                                const TextCondition& uncond) {
    if (zT.timestep != s.T)
        throw step_error("ddim_sample: latent must start at timestep T");
    LatentTensor z = zT;
    for (int i = s.T; i >= 1; --i) {
        Tensor eps = denoise_guided(backend, z, cond, uncond, i, guidance);
        z = ddim_step(z, eps, s, i);
    }
    return z;
}

// Seeded standard-normal latent at timestep T, filled in element order.
inline LatentTensor initial_latent(const std::array<std::size_t, 3>& shape,
                                   std::uint64_t seed, int T) {
    SplitMix64 g(seed);
    LatentTensor z;
    z.timestep = T;
    z.data = Tensor({shape[0], shape[1], shape[2]});
    for (std::size_t n = 0; n < z.data.numel(); ++n)
        z.data[n] = g.next_normal_f();
    return z;
}

}  // namespace lr
