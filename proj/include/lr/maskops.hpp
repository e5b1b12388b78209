#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <vector>

#include "lr/attention.hpp"
#include "lr/errors.hpp"
#include "lr/log.hpp"
#include "lr/tensor.hpp"

namespace lr {

enum class MaskProvenance { cross_attn, segmenter, composite, binary_intermediate };

inline const char* to_string(MaskProvenance p) {
    switch (p) {
        case MaskProvenance::cross_attn: return "cross_attn";
        case MaskProvenance::segmenter: return "segmenter";
        case MaskProvenance::composite: return "composite";
        case MaskProvenance::binary_intermediate: return "binary_intermediate";
    }
    return "?";
}

// A 2-D map in [0,1] tagged with where it came from.
struct BlendMask {
    Tensor data;  // (H, W)
    MaskProvenance provenance = MaskProvenance::binary_intermediate;
};

inline bool is_binary(const Tensor& m) {
    for (float v : m.values())
        if (v != 0.0f && v != 1.0f) return false;
    return true;
}

inline void require_binary(const Tensor& m, const char* who) {
    if (m.rank() != 2) throw shape_error(std::string(who) + ": mask must be 2-D");
    if (!is_binary(m))
        throw validation_error(std::string(who) + ": mask must be binary {0,1}");
}

// ---------------------------------------------------------------------------
// Binary mask algebra
// ---------------------------------------------------------------------------

// Nearest-neighbor upsampling; target must not shrink either axis.
inline Tensor resize_binary(const Tensor& m, std::size_t out_h, std::size_t out_w) {
    require_binary(m, "resize_binary");
    if (out_h == 0 || out_w == 0)
        throw validation_error("resize_binary: zero-sized target");
    const std::size_t h = m.dim(0), w = m.dim(1);
    if (out_h < h || out_w < w)
        throw validation_error("resize_binary: target must be >= source dims");
    Tensor out({out_h, out_w});
    for (std::size_t y = 0; y < out_h; ++y) {
        const std::size_t sy = y * h / out_h;
        for (std::size_t x = 0; x < out_w; ++x)
            out.at(y, x) = m.at(sy, x * w / out_w);
    }
    return out;
}

inline Tensor or_masks(const Tensor& a, const Tensor& b) {
    require_binary(a, "or_masks");
    require_binary(b, "or_masks");
    if (!a.same_shape(b)) throw shape_error("or_masks: shape mismatch");
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.numel(); ++i)
        out[i] = (a[i] != 0.0f || b[i] != 0.0f) ? 1.0f : 0.0f;
    return out;
}

// ---------------------------------------------------------------------------
// Exact Euclidean distance transform
// ---------------------------------------------------------------------------

namespace detail {

// Felzenszwalb-Huttenlocher 1-D squared-distance transform.
inline void dt1d(const std::vector<double>& f, std::vector<double>& d,
                 std::vector<int>& v, std::vector<double>& z) {
    const int n = static_cast<int>(f.size());
    int k = 0;
    v[0] = 0;
    z[0] = -std::numeric_limits<double>::infinity();
    z[1] = std::numeric_limits<double>::infinity();
    for (int q = 1; q < n; ++q) {
        double s = ((f[q] + double(q) * q) - (f[v[k]] + double(v[k]) * v[k])) /
                   (2.0 * q - 2.0 * v[k]);
        while (s <= z[k]) {
            --k;
            s = ((f[q] + double(q) * q) - (f[v[k]] + double(v[k]) * v[k])) /
                (2.0 * q - 2.0 * v[k]);
        }
        ++k;
        v[k] = q;
        z[k] = s;
        z[k + 1] = std::numeric_limits<double>::infinity();
    }
    k = 0;
    for (int q = 0; q < n; ++q) {
        while (z[k + 1] < q) ++k;
        double dq = double(q) - v[k];
        d[q] = dq * dq + f[v[k]];
    }
}

}  // namespace detail

// Per-pixel Euclidean distance to the nearest zero pixel; zero on the
// background itself. Exact (squared distances are integers), not a chamfer
// approximation. A mask with no background pixel gets the constant
// sqrt(H^2 + W^2), which exceeds any realizable in-image distance.
inline Tensor distance_transform(const Tensor& m) {
    require_binary(m, "distance_transform");
    const std::size_t h = m.dim(0), w = m.dim(1);
    Tensor out({h, w});

    bool any_zero = false;
    for (float v : m.values())
        if (v == 0.0f) { any_zero = true; break; }
    if (!any_zero) {
        const float far = static_cast<float>(
            std::sqrt(double(h) * h + double(w) * w));
        for (std::size_t i = 0; i < h * w; ++i) out[i] = far;
        return out;
    }

    const double inf = 1e18;
    std::vector<double> grid(h * w);
    for (std::size_t i = 0; i < h * w; ++i)
        grid[i] = (m[i] == 0.0f) ? 0.0 : inf;

    std::vector<double> f(std::max(h, w)), d(std::max(h, w));
    std::vector<int> v(std::max(h, w));
    std::vector<double> z(std::max(h, w) + 1);

    // Columns, then rows.
    for (std::size_t x = 0; x < w; ++x) {
        f.resize(h);
        d.resize(h);
        for (std::size_t y = 0; y < h; ++y) f[y] = grid[y * w + x];
        detail::dt1d(f, d, v, z);
        for (std::size_t y = 0; y < h; ++y) grid[y * w + x] = d[y];
    }
    for (std::size_t y = 0; y < h; ++y) {
        f.resize(w);
        d.resize(w);
        for (std::size_t x = 0; x < w; ++x) f[x] = grid[y * w + x];
        detail::dt1d(f, d, v, z);
        for (std::size_t x = 0; x < w; ++x)
            out.at(y, x) = static_cast<float>(std::sqrt(d[x]));
    }
    return out;
}

// Affine rescale sending min -> 0.5 and max -> 1.0. A constant map collapses
// to 0.5 when the constant is zero and to 1.0 otherwise.
inline Tensor normalize_half_to_one(const Tensor& d) {
    if (d.rank() != 2) throw shape_error("normalize_half_to_one: map must be 2-D");
    float lo = std::numeric_limits<float>::infinity();
    float hi = -std::numeric_limits<float>::infinity();
    for (float v : d.values()) {
        if (!std::isfinite(v))
            throw validation_error("normalize_half_to_one: non-finite input");
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    Tensor out(d.shape());
    if (lo == hi) {
        const float c = (lo == 0.0f) ? 0.5f : 1.0f;
        for (std::size_t i = 0; i < out.numel(); ++i) out[i] = c;
        return out;
    }
    const float span = hi - lo;
    for (std::size_t i = 0; i < out.numel(); ++i)
        out[i] = 0.5f + 0.5f * (d[i] - lo) / span;
    return out;
}

// ---------------------------------------------------------------------------
// Connected components
// ---------------------------------------------------------------------------

struct ComponentLabeling {
    std::vector<int> labels;  // (H * W), 0 = background
    std::size_t height = 0, width = 0;
    std::map<int, std::size_t> volumes;  // label -> pixel count
};

// 8-connected labeling, labels assigned contiguously from 1 in scan order.
inline ComponentLabeling label_components(const Tensor& m) {
    require_binary(m, "label_components");
    const std::size_t h = m.dim(0), w = m.dim(1);
    ComponentLabeling cl;
    cl.height = h;
    cl.width = w;
    cl.labels.assign(h * w, 0);

    int next = 1;
    std::vector<std::size_t> stack;
    for (std::size_t start = 0; start < h * w; ++start) {
        if (m[start] == 0.0f || cl.labels[start] != 0) continue;
        const int label = next++;
        std::size_t volume = 0;
        stack.push_back(start);
        cl.labels[start] = label;
        while (!stack.empty()) {
            const std::size_t p = stack.back();
            stack.pop_back();
            ++volume;
            const long y = static_cast<long>(p / w), x = static_cast<long>(p % w);
            for (long dy = -1; dy <= 1; ++dy)
                for (long dx = -1; dx <= 1; ++dx) {
                    if (dy == 0 && dx == 0) continue;
                    const long ny = y + dy, nx = x + dx;
                    if (ny < 0 || nx < 0 || ny >= static_cast<long>(h) ||
                        nx >= static_cast<long>(w))
                        continue;
                    const std::size_t q = static_cast<std::size_t>(ny) * w +
                                          static_cast<std::size_t>(nx);
                    if (m[q] != 0.0f && cl.labels[q] == 0) {
                        cl.labels[q] = label;
                        stack.push_back(q);
                    }
                }
        }
        cl.volumes[label] = volume;
    }
    return cl;
}

// Zeroes 8-connected components smaller than volume_threshold pixels.
inline Tensor remove_small_components(const Tensor& m, int volume_threshold) {
    require_binary(m, "remove_small_components");
    if (volume_threshold < 0)
        throw validation_error("remove_small_components: threshold must be >= 0");
    ComponentLabeling cl = label_components(m);
    Tensor out(m.shape());
    for (std::size_t i = 0; i < m.numel(); ++i) {
        const int label = cl.labels[i];
        out[i] = (label != 0 &&
                  cl.volumes[label] >= static_cast<std::size_t>(volume_threshold))
                     ? 1.0f
                     : 0.0f;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Cross-attention mask extraction
// ---------------------------------------------------------------------------

// Averages the selected tokens' cross-attention over the given layers and
// every step present in the trace, min-max normalizes, and binarizes at tau.
// Output lives at the latent spatial resolution (h, w).
inline BlendMask cross_attention_mask(const AttentionTrace& trace,
                                      const std::vector<std::size_t>& token_indices,
                                      float tau,
                                      const std::vector<int>& layer_indices,
                                      std::size_t h, std::size_t w) {
    if (layer_indices.empty())
        throw validation_error("cross_attention_mask: empty layer set");
    if (token_indices.empty())
        throw validation_error("cross_attention_mask: no token indices");

    std::vector<double> acc(h * w, 0.0);
    std::size_t n_maps = 0;
    trace.for_each([&](int /*step*/, int layer, AttnKind kind,
                       const TraceEntry& e) {
        if (kind != AttnKind::cross_attn) return;
        if (std::find(layer_indices.begin(), layer_indices.end(), layer) ==
            layer_indices.end())
            return;
        if (e.attn.rank() != 2 || e.attn.dim(0) != h * w)
            throw shape_error("cross_attention_mask: attention map shape "
                              "does not match latent dims");
        for (std::size_t tok : token_indices) {
            if (tok >= e.attn.dim(1))
                throw validation_error(
                    "cross_attention_mask: token index " + std::to_string(tok) +
                    " out of range for layer " + std::to_string(layer));
            for (std::size_t p = 0; p < h * w; ++p)
                acc[p] += e.attn.at(p, tok);
            ++n_maps;
        }
    });
    if (n_maps == 0)
        throw trace_error("cross_attention_mask: trace holds no cross-attention "
                          "entries for the configured layers");

    double lo = acc[0] / n_maps, hi = lo;
    Tensor avg({h, w});
    for (std::size_t p = 0; p < h * w; ++p) {
        const double v = acc[p] / n_maps;
        avg[p] = static_cast<float>(v);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }

    BlendMask out;
    out.provenance = MaskProvenance::cross_attn;
    out.data = Tensor({h, w});
    if (hi - lo < 1e-12) {
        LR_LOG_WARN("cross_attention_mask: attention map is constant, "
                    "returning an empty mask");
        return out;
    }
    for (std::size_t p = 0; p < h * w; ++p) {
        const float norm = static_cast<float>((avg[p] - lo) / (hi - lo));
        out.data[p] = (norm >= tau) ? 1.0f : 0.0f;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Composite mask and latent blending
// ---------------------------------------------------------------------------

struct ComposeResult {
    BlendMask mask;      // M, composite, image resolution
    Tensor mk;           // OR of the resized cross-attn mask and the segmenter mask
    Tensor mc_resized;   // cross-attn mask at image resolution
    Tensor mc_cleaned;   // after small-component removal
};

// M = clamp(Normalize(D_l2(M^k)) + C(Resize(M^c)), 0, 1) with
// M^k = OR(Resize(M^c), M^SAM).
inline ComposeResult compose_adaptive_mask(const Tensor& mc,
                                           const Tensor& msam,
                                           int volume_threshold) {
    require_binary(mc, "compose_adaptive_mask(Mc)");
    require_binary(msam, "compose_adaptive_mask(Msam)");
    const std::size_t H = msam.dim(0), W = msam.dim(1);

    ComposeResult r;
    r.mc_resized = resize_binary(mc, H, W);
    r.mk = or_masks(r.mc_resized, msam);
    Tensor norm = normalize_half_to_one(distance_transform(r.mk));
    r.mc_cleaned = remove_small_components(r.mc_resized, volume_threshold);

    r.mask.provenance = MaskProvenance::composite;
    r.mask.data = Tensor({H, W});
    for (std::size_t i = 0; i < H * W; ++i)
        r.mask.data[i] = std::clamp(norm[i] + r.mc_cleaned[i], 0.0f, 1.0f);
    return r;
}

// Bilinear resampling at pixel centers, for real-valued maps.
inline Tensor resize_bilinear(const Tensor& m, std::size_t out_h, std::size_t out_w) {
    if (m.rank() != 2) throw shape_error("resize_bilinear: map must be 2-D");
    if (out_h == 0 || out_w == 0)
        throw validation_error("resize_bilinear: zero-sized target");
    const std::size_t h = m.dim(0), w = m.dim(1);
    Tensor out({out_h, out_w});
    for (std::size_t y = 0; y < out_h; ++y) {
        const double sy = (double(y) + 0.5) * double(h) / double(out_h) - 0.5;
        const double cy = std::clamp(sy, 0.0, double(h - 1));
        const std::size_t y0 = static_cast<std::size_t>(cy);
        const std::size_t y1 = std::min(y0 + 1, h - 1);
        const double fy = cy - double(y0);
        for (std::size_t x = 0; x < out_w; ++x) {
            const double sx = (double(x) + 0.5) * double(w) / double(out_w) - 0.5;
            const double cx = std::clamp(sx, 0.0, double(w - 1));
            const std::size_t x0 = static_cast<std::size_t>(cx);
            const std::size_t x1 = std::min(x0 + 1, w - 1);
            const double fx = cx - double(x0);
            const double top = (1.0 - fx) * m.at(y0, x0) + fx * m.at(y0, x1);
            const double bot = (1.0 - fx) * m.at(y1, x0) + fx * m.at(y1, x1);
            out.at(y, x) = static_cast<float>((1.0 - fy) * top + fy * bot);
        }
    }
    return out;
}

// phi* = m (*) phi_t + (1 - m) (*) phi_o, the mask broadcast over feature
// channels. Accepts (tokens, d) rows with a mask of `tokens` entries, or
// (C, H, W) features with an (H, W) mask.
inline Tensor blend_latents(const Tensor& phi_t, const Tensor& phi_o,
                            const Tensor& mask) {
    if (!phi_t.same_shape(phi_o))
        throw shape_error("blend_latents: phi shapes differ");
    Tensor out(phi_t.shape());
    if (phi_t.rank() == 2) {
        if (mask.numel() != phi_t.dim(0))
            throw shape_error("blend_latents: mask size does not match rows");
        for (std::size_t t = 0; t < phi_t.dim(0); ++t) {
            const float m = mask[t];
            for (std::size_t d = 0; d < phi_t.dim(1); ++d)
                out.at(t, d) = m * phi_t.at(t, d) + (1.0f - m) * phi_o.at(t, d);
        }
        return out;
    }
    if (phi_t.rank() == 3) {
        if (mask.numel() != phi_t.dim(1) * phi_t.dim(2))
            throw shape_error("blend_latents: mask size does not match spatial dims");
        for (std::size_t c = 0; c < phi_t.dim(0); ++c)
            for (std::size_t p = 0; p < mask.numel(); ++p) {
                const std::size_t i = c * mask.numel() + p;
                out[i] = mask[p] * phi_t[i] + (1.0f - mask[p]) * phi_o[i];
            }
        return out;
    }
    throw shape_error("blend_latents: expected rank-2 or rank-3 features");
}

}  // namespace lr
