#pragma once

#include <chrono>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lr/attention.hpp"
#include "lr/backend.hpp"
#include "lr/codec.hpp"
#include "lr/config.hpp"
#include "lr/errors.hpp"
#include "lr/image.hpp"
#include "lr/log.hpp"
#include "lr/maskops.hpp"
#include "lr/plugins.hpp"
#include "lr/sampler.hpp"
#include "lr/tensor.hpp"
#include "lr/text.hpp"
#include "lr/toy_backend.hpp"

namespace lr {

// ---------------------------------------------------------------------------
// Run artifacts
// ---------------------------------------------------------------------------

// Writes artifacts under <root>/{latents,masks,images} and hands back paths
// relative to the run root.
class RunWriter {
public:
    explicit RunWriter(std::filesystem::path root) : root_(std::move(root)) {
        std::error_code ec;
        std::filesystem::create_directories(root_ / "latents", ec);
        std::filesystem::create_directories(root_ / "masks", ec);
        std::filesystem::create_directories(root_ / "images", ec);
        if (ec) throw io_error("cannot create run directory: " + root_.string());
    }

    const std::filesystem::path& root() const { return root_; }

    std::string save_latent(const std::string& name, const Tensor& t) const {
        const std::string rel = "latents/" + name + ".ltr";
        save_tensor(t, (root_ / rel).string());
        return rel;
    }

    std::string save_mask(const std::string& name, const Tensor& m) const {
        const std::string rel = "masks/" + name + ".pgm";
        save_pgm(m, (root_ / rel).string());
        return rel;
    }

    std::string save_image(const std::string& name, const Image& img) const {
        const std::string rel = "images/" + name + ".ppm";
        save_ppm(img, (root_ / rel).string());
        return rel;
    }

private:
    std::filesystem::path root_;
};

// Structured log of one run: config snapshot, per-step schedule, artifact
// paths with fingerprints, and wall-clock per stage. Serializes to JSON.
struct RunRecord {
    nlohmann::json doc;

    RunRecord() {
        doc["config"] = nlohmann::json::object();
        doc["stages"] = nlohmann::json::array();
        doc["layout_steps"] = nlohmann::json::array();
        doc["retouch_steps"] = nlohmann::json::array();
        doc["latents"] = nlohmann::json::object();
        doc["masks"] = nlohmann::json::object();
        doc["images"] = nlohmann::json::object();
    }

    void set_config(const PipelineConfig& cfg) { doc["config"] = config_to_json(cfg); }

    void add_stage(const std::string& name, double seconds) {
        doc["stages"].push_back({{"name", name}, {"seconds", seconds}});
    }

    void add_layout_step(int s, int timestep, BackendRole role,
                         CondVariant variant) {
        doc["layout_steps"].push_back({{"s", s},
                                       {"timestep", timestep},
                                       {"backend", to_string(role)},
                                       {"condition", to_string(variant)}});
    }

    void add_retouch_step(int s, int timestep, SwapBranch branch, bool blend) {
        doc["retouch_steps"].push_back({{"s", s},
                                        {"timestep", timestep},
                                        {"branch", to_string(branch)},
                                        {"blend", blend}});
    }

    void add_latent(const std::string& name, const std::string& rel_path,
                    std::uint64_t fingerprint) {
        char hex[17];
        std::snprintf(hex, sizeof hex, "%016llx",
                      static_cast<unsigned long long>(fingerprint));
        doc["latents"][name] = {{"path", rel_path}, {"fingerprint", hex}};
    }

    void add_mask(const std::string& name, const std::string& rel_path) {
        doc["masks"][name] = rel_path;
    }

    void add_image(const std::string& name, const std::string& rel_path) {
        doc["images"][name] = rel_path;
    }

    // Every referenced file must exist; then the record itself is written
    // as <root>/record.json.
    void finalize(const std::filesystem::path& root) {
        auto must_exist = [&](const std::string& rel) {
            if (!std::filesystem::exists(root / rel))
                throw io_error("run record references a missing file: " + rel);
        };
        for (const auto& [name, entry] : doc["latents"].items()) {
            (void)name;
            must_exist(entry["path"].get<std::string>());
        }
        for (const auto& [name, rel] : doc["masks"].items()) {
            (void)name;
            must_exist(rel.get<std::string>());
        }
        for (const auto& [name, rel] : doc["images"].items()) {
            (void)name;
            must_exist(rel.get<std::string>());
        }
        std::ofstream f(root / "record.json", std::ios::trunc);
        if (!f) throw io_error("cannot write record.json");
        f << doc.dump(2) << "\n";
        if (!f) throw io_error("cannot write record.json");
    }
};

namespace detail {

class StageTimer {
public:
    StageTimer() : start_(std::chrono::steady_clock::now()) {}
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                             start_)
            .count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

}  // namespace detail

// ---------------------------------------------------------------------------
// Toy rig: everything a run needs, derived from one config.
// ---------------------------------------------------------------------------

struct ToyRig {
    PipelineConfig cfg;
    BackendPair backends;
    ToyTextEncoder encoder;
    ToyCodec codec;
    PluginHub hub;

    explicit ToyRig(const PipelineConfig& config)
        : cfg(config),
          backends(make_toy_backend_pair(config.toy_spec())),
          encoder(sub_seed(config.weights_seed(), "text-embed"),
                  config.toy.d_text, config.special_token),
          codec(config.weights_seed(), config.latent_shape, config.image_size),
          hub(PluginHub::from_env(config.stub_seed())) {
        cfg.validate();
    }

    const DenoiserBackend& vanilla() const { return *backends.vanilla; }
    const DenoiserBackend& personalized() const { return *backends.personalized; }
    TextCondition uncond() const { return encoder.empty_condition(); }
};

// The swap-layer subset: the config list when present, the whole catalog
// otherwise.
inline std::vector<AttentionLayerInfo> resolve_swap_layers(
    const DenoiserBackend& backend, const std::vector<int>& requested) {
    const auto& catalog = backend.attention_layers();
    if (requested.empty()) return catalog;
    std::vector<AttentionLayerInfo> out;
    for (int idx : requested) {
        bool found = false;
        for (const auto& info : catalog)
            if (info.index == idx) {
                out.push_back(info);
                found = true;
                break;
            }
        if (!found)
            throw validation_error("swap_layers: layer " + std::to_string(idx) +
                                   " is not in the backend catalog");
    }
    return out;
}

// Cross-attention layers feeding the mask: the config list when present,
// every cross layer otherwise.
inline std::vector<int> resolve_ca_layers(const DenoiserBackend& backend,
                                          const std::vector<int>& requested) {
    const auto& catalog = backend.attention_layers();
    std::vector<int> out;
    if (requested.empty()) {
        for (const auto& info : catalog)
            if (info.kind == AttnKind::cross_attn) out.push_back(info.index);
        return out;
    }
    for (int idx : requested) {
        bool ok = false;
        for (const auto& info : catalog)
            if (info.index == idx && info.kind == AttnKind::cross_attn) ok = true;
        if (!ok)
            throw validation_error("ca_layers: layer " + std::to_string(idx) +
                                   " is not a cross-attention layer");
    }
    return requested;
}

inline SwapPolicy make_swap_policy(const PipelineConfig& cfg,
                                   const DenoiserBackend& backend) {
    SwapPolicy policy;
    policy.T = cfg.T;
    policy.lambda2 = cfg.lambda2;
    policy.blend_start = cfg.blend_start;
    policy.layers = resolve_swap_layers(backend, cfg.swap_layers);
    policy.early_self_q_swap = cfg.early_self_q_swap;
    return policy;
}

// ---------------------------------------------------------------------------
// Stage 1: step-blended layout generation
// ---------------------------------------------------------------------------

struct LayoutResult {
    Image image;      // I_o
    LatentTensor z0;  // layout latent at timestep 0
    LatentTensor zT;  // the seeded start noise
};

// Runs the first lambda1 sampling iterations on the vanilla backend with
// y_p_minus and the rest on the personalized backend with y_p.
inline LayoutResult generate_layout(const DenoiserBackend& vanilla,
                                    const DenoiserBackend& personalized,
                                    const ConditionSet& conds,
                                    const TextCondition& uncond,
                                    const PipelineConfig& cfg,
                                    const ToyCodec& codec,
                                    RunRecord* rec = nullptr,
                                    const RunWriter* writer = nullptr) {
    if (vanilla.latent_shape() != personalized.latent_shape() ||
        vanilla.text_dim() != personalized.text_dim())
        throw validation_error("layout: vanilla and personalized backends "
                               "disagree on latent shape or text width");
    detail::StageTimer timer;
    const NoiseSchedule schedule =
        make_schedule(cfg.T, cfg.beta_start, cfg.beta_end);
    LatentTensor z = initial_latent(cfg.latent_shape, cfg.noise_seed(), cfg.T);
    const LatentTensor zT = z;

    for (int s = 1; s <= cfg.T; ++s) {
        const int i = cfg.T - s + 1;
        const bool use_vanilla = s <= cfg.lambda1;
        const DenoiserBackend& backend = use_vanilla ? vanilla : personalized;
        const TextCondition& cond = use_vanilla ? conds.y_p_minus : conds.y_p;
        Tensor eps = denoise_guided(backend, z, cond, uncond, i,
                                    cfg.guidance_scale);
        z = ddim_step(z, eps, schedule, i);
        if (rec)
            rec->add_layout_step(s, i, backend.role(), cond.variant);
    }

    LayoutResult out{codec.decode(z.data), z, zT};
    if (rec) {
        rec->add_stage("layout", timer.seconds());
        if (writer) {
            rec->add_latent("layout_zT", writer->save_latent("layout_zT", zT.data),
                            tensor_fingerprint(zT.data));
            rec->add_latent("layout_z0", writer->save_latent("layout_z0", z.data),
                            tensor_fingerprint(z.data));
            rec->add_image("layout", writer->save_image("layout", out.image));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Stage 2: retouch with multi-source attention swapping
// ---------------------------------------------------------------------------

struct RetouchOptions {
    // Sources every override from the target path's own capture of the same
    // step instead of the layout/reference paths. Exercises the override
    // plumbing; with blending off the run must reproduce plain sampling.
    bool self_echo = false;
};

struct RetouchResult {
    Image image;        // I_t
    LatentTensor z0_t;
    BlendMask m_c;      // averaged cross-attention mask, latent resolution
    BlendMask m_sam;    // segmenter mask, image resolution
    Tensor m_k;         // OR composition, image resolution
    BlendMask m;        // composite blend weights, image resolution
};

// Algorithm: invert both images under the empty condition, start the target
// from the layout noise, then per iteration run the reference, layout, and
// target paths, the target with swapped attention variables and, inside the
// blend window, mask-blended self-attention outputs.
inline RetouchResult retouch(const Image& layout_img, const Image& reference_img,
                             const DenoiserBackend& personalized,
                             const ConditionSet& conds,
                             const TextCondition& uncond,
                             const BlendMask& m_sam, const PipelineConfig& cfg,
                             const ToyCodec& codec, RunRecord* rec = nullptr,
                             const RunWriter* writer = nullptr,
                             const RetouchOptions& opt = {}) {
    detail::StageTimer timer;
    if (m_sam.data.rank() != 2 || m_sam.data.dim(0) != cfg.image_size[0] ||
        m_sam.data.dim(1) != cfg.image_size[1])
        throw validation_error("retouch: segmenter mask dims do not match the "
                               "configured image size");

    const NoiseSchedule schedule =
        make_schedule(cfg.T, cfg.beta_start, cfg.beta_end);

    LatentTensor z_r0{codec.encode(reference_img), 0};
    LatentTensor z_o0{codec.encode(layout_img), 0};
    LatentTensor z_r = ddim_invert(personalized, z_r0, schedule, uncond);
    LatentTensor z_o = ddim_invert(personalized, z_o0, schedule, uncond);
    LatentTensor z_t = z_o;
    const LatentTensor z_rT = z_r, z_oT = z_o;

    const SwapPolicy policy = make_swap_policy(cfg, personalized);
    const std::vector<int> ca_layers =
        resolve_ca_layers(personalized, cfg.ca_layers);
    const std::size_t tok = special_token_index(conds.y_p, cfg.special_token);
    const std::size_t h = cfg.latent_shape[1], w = cfg.latent_shape[2];

    AttentionTrace ref_trace, layout_trace, target_trace;

    for (int s = 1; s <= cfg.T; ++s) {
        const int i = cfg.T - s + 1;

        Tensor eps_r = denoise_guided(personalized, z_r, conds.y_r, uncond, i,
                                      cfg.guidance_scale, nullptr,
                                      TapSink{&ref_trace, s});
        Tensor eps_o = denoise_guided(personalized, z_o, conds.y_p, uncond, i,
                                      cfg.guidance_scale, nullptr,
                                      TapSink{&layout_trace, s});

        OverrideBundle bundle;
        AttentionTrace echo_trace;
        if (opt.self_echo) {
            (void)personalized.denoise(z_t, conds.y_r, i, nullptr,
                                       TapSink{&echo_trace, s});
            bundle = plan_overrides(policy, s, echo_trace, echo_trace);
        } else {
            bundle = plan_overrides(policy, s, layout_trace, ref_trace);
        }

        const bool blend_active = cfg.blend_enabled && blend_gate(policy, s);
        if (blend_active) {
            BlendMask m_c = cross_attention_mask(layout_trace, {tok},
                                                 cfg.ca_threshold, ca_layers,
                                                 h, w);
            ComposeResult comp = compose_adaptive_mask(
                m_c.data, m_sam.data, cfg.volume_threshold);
            Tensor m_latent =
                resize_bilinear(comp.mask.data, h, w).reshaped({h * w});
            for (const auto& info : policy.layers) {
                if (info.kind != AttnKind::self_attn) continue;
                const AttentionTrace& src =
                    opt.self_echo ? echo_trace : layout_trace;
                const TraceEntry& e = src.get(s, info.index,
                                              AttnKind::self_attn);
                LayerOverride& ov = bundle.by_layer[info.index];
                if (!ov.phi)
                    ov.phi_blend = PhiBlend{e.phi, m_latent};
            }
        }

        Tensor eps_t = denoise_guided(personalized, z_t, conds.y_r, uncond, i,
                                      cfg.guidance_scale, &bundle,
                                      TapSink{&target_trace, s});

        z_r = ddim_step(z_r, eps_r, schedule, i);
        z_o = ddim_step(z_o, eps_o, schedule, i);
        z_t = ddim_step(z_t, eps_t, schedule, i);

        if (rec)
            rec->add_retouch_step(s, i, branch_for(policy, s), blend_active);
    }

    RetouchResult out;
    out.z0_t = z_t;
    out.image = codec.decode(z_t.data);
    out.m_sam = m_sam;
    out.m_c = cross_attention_mask(layout_trace, {tok}, cfg.ca_threshold,
                                   ca_layers, h, w);
    ComposeResult comp =
        compose_adaptive_mask(out.m_c.data, m_sam.data, cfg.volume_threshold);
    out.m_k = comp.mk;
    out.m = comp.mask;

    if (rec) {
        rec->add_stage("retouch", timer.seconds());
        if (writer) {
            rec->add_latent("reference_zT",
                            writer->save_latent("reference_zT", z_rT.data),
                            tensor_fingerprint(z_rT.data));
            rec->add_latent("layout_zT_inverted",
                            writer->save_latent("layout_zT_inverted", z_oT.data),
                            tensor_fingerprint(z_oT.data));
            rec->add_latent("target_z0",
                            writer->save_latent("target_z0", z_t.data),
                            tensor_fingerprint(z_t.data));
            rec->add_mask("m_c", writer->save_mask("m_c", out.m_c.data));
            rec->add_mask("m_sam", writer->save_mask("m_sam", out.m_sam.data));
            rec->add_mask("m_k", writer->save_mask("m_k", out.m_k));
            rec->add_mask("m", writer->save_mask("m", out.m.data));
            rec->add_image("target", writer->save_image("target", out.image));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Full chain
// ---------------------------------------------------------------------------

struct GenerateResult {
    LayoutResult layout;
    RetouchResult retouch;
};

inline GenerateResult generate(const std::string& prompt,
                               const Image& reference_img, const ToyRig& rig,
                               RunRecord* rec = nullptr,
                               const RunWriter* writer = nullptr) {
    const ConditionSet conds =
        derive_conditions(rig.encoder, prompt, rig.cfg.class_word);
    const TextCondition uncond = rig.uncond();

    GenerateResult out;
    out.layout = generate_layout(rig.vanilla(), rig.personalized(), conds,
                                 uncond, rig.cfg, rig.codec, rec, writer);

    detail::StageTimer seg_timer;
    BlendMask m_sam = rig.hub.segment(out.layout.image);
    if (rec) rec->add_stage("segment", seg_timer.seconds());

    out.retouch = retouch(out.layout.image, reference_img, rig.personalized(),
                          conds, uncond, m_sam, rig.cfg, rig.codec, rec,
                          writer);
    return out;
}

// ---------------------------------------------------------------------------
// Mask diagnostics
// ---------------------------------------------------------------------------

struct MaskDebugResult {
    Tensor m_c;    // latent resolution, binary
    Tensor m_sam;  // image resolution, binary
    Tensor m_k;    // image resolution, binary
    Tensor m;      // image resolution, real-valued composite
};

// Reruns the layout path (inversion + personalized forward passes with taps)
// on a given layout image and emits every mask stage.
inline MaskDebugResult mask_debug(const Image& layout_img,
                                  const DenoiserBackend& personalized,
                                  const ConditionSet& conds,
                                  const TextCondition& uncond,
                                  const PluginHub& hub,
                                  const PipelineConfig& cfg,
                                  const ToyCodec& codec) {
    const NoiseSchedule schedule =
        make_schedule(cfg.T, cfg.beta_start, cfg.beta_end);
    LatentTensor z{codec.encode(layout_img), 0};
    z = ddim_invert(personalized, z, schedule, uncond);

    AttentionTrace trace;
    for (int s = 1; s <= cfg.T; ++s) {
        const int i = cfg.T - s + 1;
        Tensor eps = denoise_guided(personalized, z, conds.y_p, uncond, i,
                                    cfg.guidance_scale, nullptr,
                                    TapSink{&trace, s});
        z = ddim_step(z, eps, schedule, i);
    }

    const std::vector<int> ca_layers =
        resolve_ca_layers(personalized, cfg.ca_layers);
    const std::size_t tok = special_token_index(conds.y_p, cfg.special_token);
    const std::size_t h = cfg.latent_shape[1], w = cfg.latent_shape[2];

    MaskDebugResult out;
    BlendMask m_c =
        cross_attention_mask(trace, {tok}, cfg.ca_threshold, ca_layers, h, w);
    BlendMask m_sam = hub.segment(layout_img);
    ComposeResult comp =
        compose_adaptive_mask(m_c.data, m_sam.data, cfg.volume_threshold);
    out.m_c = m_c.data;
    out.m_sam = m_sam.data;
    out.m_k = comp.mk;
    out.m = comp.mask.data;
    return out;
}

}  // namespace lr
