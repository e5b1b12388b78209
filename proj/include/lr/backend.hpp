#pragma once

#include <array>
#include <memory>
#include <vector>

#include "lr/attention.hpp"
#include "lr/errors.hpp"
#include "lr/tensor.hpp"
#include "lr/text.hpp"

namespace lr {

enum class BackendRole { vanilla, personalized, external };

inline const char* to_string(BackendRole r) {
    switch (r) {
        case BackendRole::vanilla: return "vanilla";
        case BackendRole::personalized: return "personalized";
        case BackendRole::external: return "external";
    }
    return "?";
}

// A noise predictor over latents. Implementations expose their attention
// layer catalog so swap policies and mask extraction can address layers by
// index, and accept per-layer overrides plus an optional tap sink that
// records effective attention variables.
class DenoiserBackend {
public:
    virtual ~DenoiserBackend() = default;

    virtual BackendRole role() const = 0;
    virtual const std::vector<AttentionLayerInfo>& attention_layers() const = 0;
    virtual std::array<std::size_t, 3> latent_shape() const = 0;
    virtual std::size_t text_dim() const = 0;

    // Predicted noise for latent z conditioned on cond at timestep i
    // (1..T). Overrides replace attention variables in the listed layers
    // verbatim; taps record the effective values actually used.
    virtual Tensor denoise(const LatentTensor& z, const TextCondition& cond,
                           int i, const OverrideBundle* overrides = nullptr,
                           TapSink taps = {}) const = 0;
};

// Classifier-free guidance: w = 1 is a single conditional pass; otherwise
// eps = eps_uncond + w * (eps_cond - eps_uncond). Overrides and taps apply
// to the conditional pass only.
inline Tensor denoise_guided(const DenoiserBackend& backend, const LatentTensor& z,
                             const TextCondition& cond, const TextCondition& uncond,
                             int i, float w,
                             const OverrideBundle* overrides = nullptr,
                             TapSink taps = {}) {
    Tensor eps_cond = backend.denoise(z, cond, i, overrides, taps);
    if (w == 1.0f) return eps_cond;
    Tensor eps_uncond = backend.denoise(z, uncond, i);
    Tensor out(eps_cond.shape());
    for (std::size_t k = 0; k < out.numel(); ++k)
        out[k] = eps_uncond[k] + w * (eps_cond[k] - eps_uncond[k]);
    return out;
}

}  // namespace lr
