#pragma once

#include <array>
#include <atomic>
#include <cstddef>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "lr/attention.hpp"
#include "lr/backend.hpp"
#include "lr/errors.hpp"
#include "lr/plugins.hpp"
#include "lr/tensor.hpp"
#include "lr/text.hpp"

namespace lr {

namespace detail {

inline std::filesystem::path external_scratch_dir() {
    static std::atomic<std::uint64_t> counter{0};
    const auto dir = std::filesystem::temp_directory_path() /
                     ("lr-ext-" + std::to_string(::getpid()) + "-" +
                      std::to_string(counter.fetch_add(1)));
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw io_error("cannot create scratch dir: " + dir.string());
    return dir;
}

struct ScratchDir {
    std::filesystem::path path;
    explicit ScratchDir() : path(external_scratch_dir()) {}
    ~ScratchDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
    ScratchDir(const ScratchDir&) = delete;
    ScratchDir& operator=(const ScratchDir&) = delete;
};

}  // namespace detail

// Subprocess adapter for out-of-process denoisers. Exchanges one JSON
// request file per call (the command receives the request path as its sole
// argument and prints the response file path on stdout); tensors travel as
// LTR1 files referenced by absolute path.
//
// Ops:
//   {"op":"catalog"} ->
//     {"latent_shape":[C,H,W], "d_text":D,
//      "layers":[{"index":N,"kind":"self"|"cross","resolution":R}, ...]}
//   {"op":"denoise","dir":...,"latent":...,"timestep":i,
//    "tokens":[...],"variant":...,"embedding":...,"want_taps":bool,
//    "overrides":[{"layer":N,"q":path,...,"phi_blend_other":path,
//                  "phi_blend_mask":path}, ...]} ->
//     {"eps":path,
//      "taps":[{"layer":N,"kind":...,"q":path,"k":path,"v":path,
//               "attn":path,"phi":path}, ...]}
class ExternalBackend final : public DenoiserBackend {
public:
    explicit ExternalBackend(std::string command, double timeout_s = 30.0)
        : command_(std::move(command)), timeout_s_(timeout_s) {
        if (command_.empty())
            throw validation_error("external denoiser: empty command");
        const nlohmann::json resp = exchange({{"op", "catalog"}});
        try {
            const auto& shape = resp.at("latent_shape");
            if (shape.size() != 3)
                throw plugin_error("external denoiser: latent_shape must "
                                   "have three entries");
            for (int k = 0; k < 3; ++k)
                shape_[k] = shape.at(k).get<std::size_t>();
            d_text_ = resp.at("d_text").get<std::size_t>();
            for (const auto& l : resp.at("layers")) {
                AttentionLayerInfo info;
                info.index = l.at("index").get<int>();
                const std::string kind = l.at("kind").get<std::string>();
                if (kind == "self")
                    info.kind = AttnKind::self_attn;
                else if (kind == "cross")
                    info.kind = AttnKind::cross_attn;
                else
                    throw plugin_error(
                        "external denoiser: unknown layer kind '" + kind + "'");
                info.resolution = l.at("resolution").get<std::size_t>();
                catalog_.push_back(info);
            }
        } catch (const nlohmann::json::exception& e) {
            throw plugin_error(std::string("external denoiser: malformed "
                                           "catalog response: ") +
                               e.what());
        }
        if (catalog_.empty())
            throw plugin_error("external denoiser: empty layer catalog");
    }

    BackendRole role() const override { return BackendRole::external; }
    const std::vector<AttentionLayerInfo>& attention_layers() const override {
        return catalog_;
    }
    std::array<std::size_t, 3> latent_shape() const override { return shape_; }
    std::size_t text_dim() const override { return d_text_; }

    Tensor denoise(const LatentTensor& z, const TextCondition& cond, int i,
                   const OverrideBundle* overrides = nullptr,
                   TapSink taps = {}) const override {
        detail::ScratchDir scratch;
        auto put = [&](const std::string& name, const Tensor& t) {
            const std::string p = (scratch.path / (name + ".ltr")).string();
            save_tensor(t, p);
            return p;
        };

        nlohmann::json req;
        req["op"] = "denoise";
        req["dir"] = scratch.path.string();
        req["latent"] = put("latent", z.data);
        req["latent_timestep"] = z.timestep;
        req["timestep"] = i;
        req["tokens"] = cond.tokens;
        req["variant"] = to_string(cond.variant);
        req["embedding"] = put("embedding", cond.embedding);
        req["want_taps"] = taps.trace != nullptr;
        req["overrides"] = nlohmann::json::array();
        if (overrides) {
            for (const auto& [layer, ov] : overrides->by_layer) {
                nlohmann::json o{{"layer", layer}};
                const std::string base = "ov" + std::to_string(layer) + "_";
                if (ov.q) o["q"] = put(base + "q", *ov.q);
                if (ov.k) o["k"] = put(base + "k", *ov.k);
                if (ov.v) o["v"] = put(base + "v", *ov.v);
                if (ov.phi) o["phi"] = put(base + "phi", *ov.phi);
                if (ov.phi_blend) {
                    o["phi_blend_other"] =
                        put(base + "blend_other", ov.phi_blend->phi_other);
                    o["phi_blend_mask"] =
                        put(base + "blend_mask", ov.phi_blend->mask);
                }
                req["overrides"].push_back(std::move(o));
            }
        }

        const nlohmann::json resp = exchange(req);
        Tensor eps;
        try {
            eps = load_tensor(resp.at("eps").get<std::string>());
            if (taps.trace) {
                for (const auto& t : resp.at("taps")) {
                    const int layer = t.at("layer").get<int>();
                    const std::string kind = t.at("kind").get<std::string>();
                    TraceEntry e;
                    e.q = load_tensor(t.at("q").get<std::string>());
                    e.k = load_tensor(t.at("k").get<std::string>());
                    e.v = load_tensor(t.at("v").get<std::string>());
                    e.attn = load_tensor(t.at("attn").get<std::string>());
                    e.phi = load_tensor(t.at("phi").get<std::string>());
                    taps.trace->put(taps.step, layer,
                                    kind == "cross" ? AttnKind::cross_attn
                                                    : AttnKind::self_attn,
                                    std::move(e));
                }
            }
        } catch (const nlohmann::json::exception& e) {
            throw plugin_error(std::string("external denoiser: malformed "
                                           "denoise response: ") +
                               e.what());
        }
        if (eps.rank() != 3 || eps.dim(0) != shape_[0] ||
            eps.dim(1) != shape_[1] || eps.dim(2) != shape_[2])
            throw plugin_error("external denoiser: eps shape does not match "
                               "the advertised latent shape");
        return eps;
    }

private:
    nlohmann::json exchange(const nlohmann::json& req) const {
        const std::string out = detail::run_subprocess_exchange(
            "external denoiser", command_, timeout_s_, req.dump(), ".json");
        try {
            return nlohmann::json::parse(out);
        } catch (const nlohmann::json::exception& e) {
            throw plugin_error(std::string("external denoiser: response is "
                                           "not valid JSON: ") +
                               e.what());
        }
    }

    std::string command_;
    double timeout_s_;
    std::array<std::size_t, 3> shape_{};
    std::size_t d_text_ = 0;
    std::vector<AttentionLayerInfo> catalog_;
};

}  // namespace lr
