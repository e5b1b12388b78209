#pragma once

#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "lr/errors.hpp"
#include "lr/numeric.hpp"
#include "lr/tensor.hpp"

namespace lr {

enum class AttnKind { self_attn, cross_attn };

inline const char* to_string(AttnKind k) {
    return k == AttnKind::self_attn ? "self" : "cross";
}

enum class PathId { reference, layout, target };

inline const char* to_string(PathId p) {
    switch (p) {
        case PathId::reference: return "reference";
        case PathId::layout: return "layout";
        case PathId::target: return "target";
    }
    return "?";
}

// One entry of a backend's attention-layer catalog.
struct AttentionLayerInfo {
    int index = 0;
    AttnKind kind = AttnKind::self_attn;
    int resolution = 0;  // spatial side length of the query tokens
};

// Effective attention variables of one layer at one step: Q, K, V, the
// softmax probability matrix, and (self-attention only) the layer output phi.
struct TraceEntry {
    Tensor q, k, v;
    Tensor attn;
    Tensor phi;
};

// Per-path record of attention variables, keyed by (step, layer, kind).
// Single writer during its own forward passes, read-only afterwards.
class AttentionTrace {
public:
    explicit AttentionTrace(PathId path = PathId::target) : path_(path) {}

    PathId path() const { return path_; }

    void put(int step, int layer, AttnKind kind, TraceEntry entry) {
        auto key = std::make_tuple(step, layer, static_cast<int>(kind));
        if (entries_.count(key))
            throw trace_error("duplicate trace entry (step=" +
                              std::to_string(step) + ", layer=" +
                              std::to_string(layer) + ")");
        entries_.emplace(key, std::move(entry));
    }

    bool has(int step, int layer, AttnKind kind) const {
        return entries_.count(
                   std::make_tuple(step, layer, static_cast<int>(kind))) > 0;
    }

    const TraceEntry& get(int step, int layer, AttnKind kind) const {
        auto it = entries_.find(
            std::make_tuple(step, layer, static_cast<int>(kind)));
        if (it == entries_.end())
            throw trace_error("missing trace entry (step=" +
                              std::to_string(step) + ", layer=" +
                              std::to_string(layer) + ", kind=" +
                              to_string(kind) + ")");
        return it->second;
    }

    std::size_t size() const { return entries_.size(); }

    // Ordered iteration for aggregations (cross-attention masks, row sums).
    template <typename F>
    void for_each(F&& f) const {
        for (const auto& [key, entry] : entries_)
            f(std::get<0>(key), std::get<1>(key),
              static_cast<AttnKind>(std::get<2>(key)), entry);
    }

private:
    PathId path_;
    std::map<std::tuple<int, int, int>, TraceEntry> entries_;
};

// Mask-weighted combination applied to a self-attention output inside the
// forward pass: phi* = m (*) phi + (1 - m) (*) phi_other, the mask broadcast
// over feature channels.
struct PhiBlend {
    Tensor phi_other;  // (tokens, d)
    Tensor mask;       // (tokens) or (h, w) with h*w == tokens
};

// Replacements for one layer. Present fields are used verbatim in place of
// the layer's own computation; phi fields apply to self-attention only.
struct LayerOverride {
    std::optional<Tensor> q, k, v;
    std::optional<Tensor> phi;
    std::optional<PhiBlend> phi_blend;

    bool empty() const {
        return !q && !k && !v && !phi && !phi_blend;
    }
};

struct OverrideBundle {
    std::map<int, LayerOverride> by_layer;

    bool empty() const { return by_layer.empty(); }
    const LayerOverride* find(int layer) const {
        auto it = by_layer.find(layer);
        return it == by_layer.end() ? nullptr : &it->second;
    }
};

// Capture request: record effective attention variables into `trace` under
// sampling iteration `step`.
struct TapSink {
    AttentionTrace* trace = nullptr;
    int step = 1;
};

// Which source feeds the target path at each sampling iteration, and when
// mask blending runs.
struct SwapPolicy {
    int T = 50;
    int lambda2 = 10;
    int blend_start = 31;
    std::vector<AttentionLayerInfo> layers;  // subset of the backend catalog
    bool early_self_q_swap = true;

    // Early branch: sampling iterations s = 1 .. T - lambda2 (timestep
    // i = T - s + 1 > lambda2) take the layout path's variables.
    bool layout_branch(int s) const { return s <= T - lambda2; }
};

enum class SwapBranch { layout_source, reference_kv };

inline const char* to_string(SwapBranch b) {
    return b == SwapBranch::layout_source ? "layout_source" : "reference_kv";
}

inline SwapBranch branch_for(const SwapPolicy& policy, int s) {
    return policy.layout_branch(s) ? SwapBranch::layout_source
                                   : SwapBranch::reference_kv;
}

// Mask blending gate, independent of the swap branch.
inline bool blend_gate(const SwapPolicy& policy, int s) {
    if (s < 1 || s > policy.T)
        throw validation_error("blend_gate: iteration out of range");
    return s >= policy.blend_start;
}

// Builds the target path's override bundle for sampling iteration s.
//
// Early branch (timestep > lambda2): cross- and self-attention Q, K, V all
// come from the layout path. Late branch: the target keeps its own
// cross-attention variables and self-attention Q; self-attention K and V
// come from the reference path.
inline OverrideBundle plan_overrides(const SwapPolicy& policy, int s,
                                     const AttentionTrace& layout_trace,
                                     const AttentionTrace& reference_trace) {
    if (s < 1 || s > policy.T)
        throw validation_error("plan_overrides: iteration out of range");
    OverrideBundle bundle;
    const bool early = policy.layout_branch(s);
    for (const auto& layer : policy.layers) {
        if (early) {
            const TraceEntry& e =
                layout_trace.get(s, layer.index, layer.kind);
            LayerOverride ov;
            ov.q = e.q;
            ov.k = e.k;
            ov.v = e.v;
            if (layer.kind == AttnKind::self_attn && !policy.early_self_q_swap)
                ov.q.reset();
            bundle.by_layer[layer.index] = std::move(ov);
        } else if (layer.kind == AttnKind::self_attn) {
            const TraceEntry& e =
                reference_trace.get(s, layer.index, AttnKind::self_attn);
            LayerOverride ov;
            ov.k = e.k;
            ov.v = e.v;
            bundle.by_layer[layer.index] = std::move(ov);
        }
    }
    return bundle;
}

// Softmax(Q K^T / sqrt(d)) over rows. d is the shared Q/K feature width.
// Exponentials and row sums run in double with a fixed order, so the result
// is identical across platforms.
inline Tensor attention_weights(const Tensor& q, const Tensor& k) {
    if (q.rank() != 2 || k.rank() != 2 || q.dim(1) != k.dim(1))
        throw shape_error("attention_weights: Q and K must be 2-D with equal "
                          "feature width");
    Tensor scores = matmul_nt(q, k);
    const float scale =
        1.0f / std::sqrt(static_cast<float>(q.dim(1)));
    const std::size_t rows = scores.dim(0), cols = scores.dim(1);
    Tensor out({rows, cols});
    std::vector<double> exps(cols);
    for (std::size_t r = 0; r < rows; ++r) {
        float hi = -std::numeric_limits<float>::infinity();
        for (std::size_t c = 0; c < cols; ++c) {
            scores.at(r, c) *= scale;
            hi = std::max(hi, scores.at(r, c));
        }
        double sum = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            exps[c] = det_exp(double(scores.at(r, c)) - double(hi));
            sum += exps[c];
        }
        for (std::size_t c = 0; c < cols; ++c)
            out.at(r, c) = static_cast<float>(exps[c] / sum);
    }
    return out;
}

}  // namespace lr
