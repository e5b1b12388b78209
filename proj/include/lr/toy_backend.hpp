#pragma once

#include <array>
#include <cmath>
#include <cstring>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "lr/attention.hpp"
#include "lr/backend.hpp"
#include "lr/config.hpp"
#include "lr/errors.hpp"
#include "lr/maskops.hpp"
#include "lr/rng.hpp"
#include "lr/tensor.hpp"
#include "lr/text.hpp"

namespace lr {

namespace detail {

inline Tensor seeded_matrix(std::uint64_t master, const std::string& name,
                            std::size_t rows, std::size_t cols) {
    SplitMix64 g(sub_seed(master, name));
    const float bound = std::sqrt(3.0f / static_cast<float>(rows));
    Tensor m({rows, cols});
    for (std::size_t i = 0; i < m.numel(); ++i)
        m[i] = g.next_symmetric(bound);
    return m;
}

inline void hash_tensor_bytes(std::uint64_t& h, const Tensor& t) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(t.data());
    const std::size_t n = t.numel() * sizeof(float);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= bytes[i];
        h *= 0x100000001b3ull;
    }
}

}  // namespace detail

// A small seeded transformer over latent patches: per block, one
// self-attention and one cross-attention sublayer with residual adds,
// wrapped by linear in/out projections and an additive timestep embedding.
// All randomness flows from the spec seed, all reductions run in a fixed
// order, so outputs are bit-identical across runs and platforms.
class ToyBackend final : public DenoiserBackend {
public:
    ToyBackend(const ToyBackendSpec& spec, BackendRole role)
        : spec_(spec), role_(role) {
        if (role == BackendRole::external)
            throw validation_error("ToyBackend: role must be vanilla or "
                                   "personalized");
        spec_.validate();
        const std::size_t C = spec_.latent_shape[0];
        const std::size_t d = spec_.d_model;
        const std::size_t dt = spec_.d_text;

        w_in_ = detail::seeded_matrix(spec_.seed, "w-in", C, d);
        w_out_ = detail::seeded_matrix(spec_.seed, "w-out", d, C);
        for (std::size_t n = 0; n < w_out_.numel(); ++n)
            w_out_[n] *= spec_.trunk_scale;
        temb_base_ = sub_seed(spec_.seed, "temb");

        blocks_.resize(spec_.n_blocks);
        for (int b = 0; b < spec_.n_blocks; ++b) {
            const std::string p = "block" + std::to_string(b) + "-";
            Block& blk = blocks_[static_cast<std::size_t>(b)];
            blk.wq_s = detail::seeded_matrix(spec_.seed, p + "wq-self", d, d);
            blk.wk_s = detail::seeded_matrix(spec_.seed, p + "wk-self", d, d);
            blk.wv_s = detail::seeded_matrix(spec_.seed, p + "wv-self", d, d);
            blk.wo_s = detail::seeded_matrix(spec_.seed, p + "wo-self", d, d);
            blk.wq_c = detail::seeded_matrix(spec_.seed, p + "wq-cross", d, d);
            blk.wk_c = detail::seeded_matrix(spec_.seed, p + "wk-cross", dt, d);
            blk.wv_c = detail::seeded_matrix(spec_.seed, p + "wv-cross", dt, d);
            blk.wo_c = detail::seeded_matrix(spec_.seed, p + "wo-cross", d, d);

            if (role == BackendRole::personalized && spec_.delta_scale != 0.0f) {
                SplitMix64 gk(sub_seed(spec_.seed, p + "delta-k"));
                SplitMix64 gv(sub_seed(spec_.seed, p + "delta-v"));
                const float bound = std::sqrt(3.0f / static_cast<float>(dt));
                for (std::size_t j = 0; j < d; ++j) {
                    blk.wk_c.at(0, j) +=
                        spec_.delta_scale * gk.next_symmetric(bound);
                    blk.wv_c.at(0, j) +=
                        spec_.delta_scale * gv.next_symmetric(bound);
                }
            }

            const int res = static_cast<int>(spec_.latent_shape[1]);
            catalog_.push_back({2 * b, AttnKind::self_attn, res});
            catalog_.push_back({2 * b + 1, AttnKind::cross_attn, res});
        }
    }

    BackendRole role() const override { return role_; }

    const std::vector<AttentionLayerInfo>& attention_layers() const override {
        return catalog_;
    }

    std::array<std::size_t, 3> latent_shape() const override {
        return spec_.latent_shape;
    }

    std::size_t text_dim() const override { return spec_.d_text; }

    std::uint64_t weight_fingerprint() const {
        std::uint64_t h = 0xcbf29ce484222325ull;
        detail::hash_tensor_bytes(h, w_in_);
        detail::hash_tensor_bytes(h, w_out_);
        for (const Block& blk : blocks_) {
            detail::hash_tensor_bytes(h, blk.wq_s);
            detail::hash_tensor_bytes(h, blk.wk_s);
            detail::hash_tensor_bytes(h, blk.wv_s);
            detail::hash_tensor_bytes(h, blk.wo_s);
            detail::hash_tensor_bytes(h, blk.wq_c);
            detail::hash_tensor_bytes(h, blk.wk_c);
            detail::hash_tensor_bytes(h, blk.wv_c);
            detail::hash_tensor_bytes(h, blk.wo_c);
        }
        return h;
    }

    Tensor denoise(const LatentTensor& z, const TextCondition& cond, int i,
                   const OverrideBundle* overrides = nullptr,
                   TapSink taps = {}) const override {
        check_inputs(z, cond, i, overrides);

        const std::size_t C = spec_.latent_shape[0];
        const std::size_t H = spec_.latent_shape[1];
        const std::size_t W = spec_.latent_shape[2];
        const std::size_t N = H * W;
        const std::size_t d = spec_.d_model;

        Tensor tokens({N, C});
        for (std::size_t p = 0; p < N; ++p)
            for (std::size_t c = 0; c < C; ++c)
                tokens.at(p, c) = z.data[c * N + p];

        Tensor x = matmul(tokens, w_in_);
        const std::vector<float> temb = timestep_embedding(i);
        for (std::size_t p = 0; p < N; ++p)
            for (std::size_t j = 0; j < d; ++j) x.at(p, j) += temb[j];

        for (std::size_t b = 0; b < blocks_.size(); ++b) {
            const Block& blk = blocks_[b];
            run_self_layer(x, blk, static_cast<int>(2 * b), overrides, taps);
            run_cross_layer(x, blk, static_cast<int>(2 * b + 1), cond,
                            overrides, taps);
        }

        Tensor out_tokens = matmul(x, w_out_);
        Tensor eps({C, H, W});
        for (std::size_t p = 0; p < N; ++p)
            for (std::size_t c = 0; c < C; ++c)
                eps[c * N + p] = spec_.eps_identity * z.data[c * N + p] +
                                 out_tokens.at(p, c);
        return eps;
    }

private:
    struct Block {
        Tensor wq_s, wk_s, wv_s, wo_s;
        Tensor wq_c, wk_c, wv_c, wo_c;
    };

    std::vector<float> timestep_embedding(int i) const {
        SplitMix64 g(temb_base_ + static_cast<std::uint64_t>(i));
        std::vector<float> e(spec_.d_model);
        for (float& v : e) v = g.next_symmetric(0.5f);
        return e;
    }

    void check_inputs(const LatentTensor& z, const TextCondition& cond, int i,
                      const OverrideBundle* overrides) const {
        const auto& s = spec_.latent_shape;
        if (z.data.rank() != 3 || z.data.dim(0) != s[0] ||
            z.data.dim(1) != s[1] || z.data.dim(2) != s[2])
            throw shape_error("denoise: latent shape does not match backend (" +
                              std::to_string(s[0]) + "," + std::to_string(s[1]) +
                              "," + std::to_string(s[2]) + ")");
        if (!z.data.all_finite())
            throw validation_error("denoise: latent has non-finite values");
        if (i < 1) throw step_error("denoise: timestep must be >= 1");
        if (cond.embedding.rank() != 2 ||
            cond.embedding.dim(1) != static_cast<std::size_t>(spec_.d_text))
            throw validation_error("denoise: condition embedding width must be " +
                                   std::to_string(spec_.d_text));
        if (cond.embedding.dim(0) != cond.tokens.size())
            throw validation_error("denoise: condition token/embedding row "
                                   "count mismatch");
        if (overrides) {
            for (const auto& [layer, ov] : overrides->by_layer) {
                (void)ov;
                if (layer < 0 ||
                    layer >= static_cast<int>(catalog_.size()))
                    throw validation_error("denoise: override targets unknown "
                                           "layer " + std::to_string(layer));
            }
        }
    }

    static void apply_qkv_overrides(Tensor& q, Tensor& k, Tensor& v,
                                    const LayerOverride* ov, int layer) {
        if (!ov) return;
        const std::string where = "layer " + std::to_string(layer);
        if (ov->q) {
            if (!ov->q->same_shape(q))
                throw shape_error("override Q shape mismatch at " + where);
            q = *ov->q;
        }
        if (ov->k) {
            if (ov->k->rank() != 2 || ov->k->dim(1) != k.dim(1))
                throw shape_error("override K width mismatch at " + where);
            k = *ov->k;
        }
        if (ov->v) {
            if (ov->v->rank() != 2 || ov->v->dim(1) != v.dim(1))
                throw shape_error("override V width mismatch at " + where);
            v = *ov->v;
        }
        if (k.dim(0) != v.dim(0))
            throw shape_error("override K/V row mismatch at " + where);
    }

    void run_self_layer(Tensor& x, const Block& blk, int layer,
                        const OverrideBundle* overrides, TapSink taps) const {
        Tensor q = matmul(x, blk.wq_s);
        Tensor k = matmul(x, blk.wk_s);
        Tensor v = matmul(x, blk.wv_s);
        const LayerOverride* ov = overrides ? overrides->find(layer) : nullptr;
        apply_qkv_overrides(q, k, v, ov, layer);

        Tensor attn = attention_weights(q, k);
        Tensor phi = matmul(attn, v);
        if (ov && ov->phi) {
            if (!ov->phi->same_shape(phi))
                throw shape_error("override phi shape mismatch at layer " +
                                  std::to_string(layer));
            phi = *ov->phi;
        } else if (ov && ov->phi_blend) {
            phi = blend_latents(phi, ov->phi_blend->phi_other,
                                ov->phi_blend->mask);
        }

        if (taps.trace)
            taps.trace->put(taps.step, layer, AttnKind::self_attn,
                            {q, k, v, attn, phi});

        Tensor delta = matmul(phi, blk.wo_s);
        for (std::size_t n = 0; n < x.numel(); ++n) x[n] += delta[n];
    }

    void run_cross_layer(Tensor& x, const Block& blk, int layer,
                         const TextCondition& cond,
                         const OverrideBundle* overrides, TapSink taps) const {
        Tensor q = matmul(x, blk.wq_c);
        Tensor k = matmul(cond.embedding, blk.wk_c);
        Tensor v = matmul(cond.embedding, blk.wv_c);
        const LayerOverride* ov = overrides ? overrides->find(layer) : nullptr;
        if (ov && (ov->phi || ov->phi_blend))
            throw validation_error("phi overrides apply to self-attention "
                                   "layers only (layer " +
                                   std::to_string(layer) + ")");
        apply_qkv_overrides(q, k, v, ov, layer);

        Tensor attn = attention_weights(q, k);
        Tensor out = matmul(attn, v);

        if (taps.trace)
            taps.trace->put(taps.step, layer, AttnKind::cross_attn,
                            {q, k, v, attn, out});

        Tensor delta = matmul(out, blk.wo_c);
        for (std::size_t n = 0; n < x.numel(); ++n) x[n] += delta[n];
    }

    ToyBackendSpec spec_;
    BackendRole role_;
    Tensor w_in_, w_out_;
    std::uint64_t temb_base_ = 0;
    std::vector<Block> blocks_;
    std::vector<AttentionLayerInfo> catalog_;
};

inline std::unique_ptr<ToyBackend> make_toy_backend(const ToyBackendSpec& spec,
                                                    BackendRole role) {
    return std::make_unique<ToyBackend>(spec, role);
}

struct BackendPair {
    std::unique_ptr<ToyBackend> vanilla;
    std::unique_ptr<ToyBackend> personalized;
};

inline BackendPair make_toy_backend_pair(const ToyBackendSpec& spec) {
    return {make_toy_backend(spec, BackendRole::vanilla),
            make_toy_backend(spec, BackendRole::personalized)};
}

}  // namespace lr
