// Out-of-process denoiser speaking the external adapter protocol: argv[1]
// names a JSON request file, the response file path goes to stdout. Wraps
// the built-in toy backend so adapter round-trips can be checked against
// the in-process result. Configured via LR_TOY_SEED, LR_TOY_ROLE and
// LR_TOY_DELTA.
#include <cstdio>
#include <cstdlib>
#include <string>

#include <json.hpp>

#include "lr/config.hpp"
#include "lr/image.hpp"
#include "lr/tensor.hpp"
#include "lr/text.hpp"
#include "lr/toy_backend.hpp"

using nlohmann::json;

static lr::ToyBackendSpec spec_from_env() {
    lr::ToyBackendSpec spec;
    if (const char* s = std::getenv("LR_TOY_SEED"))
        spec.seed = std::strtoull(s, nullptr, 10);
    if (const char* s = std::getenv("LR_TOY_DELTA"))
        spec.delta_scale = std::strtof(s, nullptr);
    return spec;
}

static lr::BackendRole role_from_env() {
    const char* s = std::getenv("LR_TOY_ROLE");
    if (!s || std::string(s) == "personalized")
        return lr::BackendRole::personalized;
    if (std::string(s) == "vanilla") return lr::BackendRole::vanilla;
    std::fprintf(stderr, "unknown LR_TOY_ROLE '%s'\n", s);
    std::exit(2);
}

static lr::CondVariant parse_variant(const std::string& v) {
    if (v == "personalized") return lr::CondVariant::personalized;
    if (v == "token_removed") return lr::CondVariant::token_removed;
    if (v == "neutral") return lr::CondVariant::neutral;
    return lr::CondVariant::empty;
}

int main(int argc, char** argv) {
    if (argc != 2) {
        std::fprintf(stderr, "usage: %s <request.json>\n", argv[0]);
        return 2;
    }
    try {
        const json req = json::parse(lr::detail::read_file_bytes(argv[1]));
        const lr::ToyBackend backend(spec_from_env(), role_from_env());
        const std::string out_path = std::string(argv[1]) + ".resp.json";
        json resp;

        const std::string op = req.at("op").get<std::string>();
        if (op == "catalog") {
            const auto shape = backend.latent_shape();
            resp["latent_shape"] = {shape[0], shape[1], shape[2]};
            resp["d_text"] = backend.text_dim();
            resp["layers"] = json::array();
            for (const auto& info : backend.attention_layers())
                resp["layers"].push_back(
                    {{"index", info.index},
                     {"kind", info.kind == lr::AttnKind::self_attn ? "self"
                                                                   : "cross"},
                     {"resolution", info.resolution}});
        } else if (op == "denoise") {
            const std::string dir = req.at("dir").get<std::string>();
            lr::LatentTensor z{
                lr::load_tensor(req.at("latent").get<std::string>()),
                req.at("latent_timestep").get<int>()};
            lr::TextCondition cond;
            cond.tokens = req.at("tokens").get<std::vector<std::string>>();
            cond.embedding =
                lr::load_tensor(req.at("embedding").get<std::string>());
            cond.variant = parse_variant(req.at("variant").get<std::string>());

            lr::OverrideBundle bundle;
            for (const auto& o : req.at("overrides")) {
                lr::LayerOverride ov;
                if (o.contains("q"))
                    ov.q = lr::load_tensor(o.at("q").get<std::string>());
                if (o.contains("k"))
                    ov.k = lr::load_tensor(o.at("k").get<std::string>());
                if (o.contains("v"))
                    ov.v = lr::load_tensor(o.at("v").get<std::string>());
                if (o.contains("phi"))
                    ov.phi = lr::load_tensor(o.at("phi").get<std::string>());
                if (o.contains("phi_blend_other"))
                    ov.phi_blend = lr::PhiBlend{
                        lr::load_tensor(
                            o.at("phi_blend_other").get<std::string>()),
                        lr::load_tensor(
                            o.at("phi_blend_mask").get<std::string>())};
                bundle.by_layer[o.at("layer").get<int>()] = std::move(ov);
            }

            lr::AttentionTrace trace;
            const bool want_taps = req.at("want_taps").get<bool>();
            lr::Tensor eps = backend.denoise(
                z, cond, req.at("timestep").get<int>(),
                bundle.by_layer.empty() ? nullptr : &bundle,
                want_taps ? lr::TapSink{&trace, 0} : lr::TapSink{});

            auto put = [&](const std::string& name, const lr::Tensor& t) {
                const std::string p = dir + "/" + name + ".ltr";
                lr::save_tensor(t, p);
                return p;
            };
            resp["eps"] = put("eps", eps);
            resp["taps"] = json::array();
            if (want_taps) {
                trace.for_each([&](int /*s*/, int layer, lr::AttnKind kind,
                                   const lr::TraceEntry& e) {
                    const std::string base = "tap" + std::to_string(layer) +
                                             (kind == lr::AttnKind::self_attn
                                                  ? "s_"
                                                  : "c_");
                    resp["taps"].push_back(
                        {{"layer", layer},
                         {"kind",
                          kind == lr::AttnKind::self_attn ? "self" : "cross"},
                         {"q", put(base + "q", e.q)},
                         {"k", put(base + "k", e.k)},
                         {"v", put(base + "v", e.v)},
                         {"attn", put(base + "attn", e.attn)},
                         {"phi", put(base + "phi", e.phi)}});
                });
            }
        } else {
            std::fprintf(stderr, "unknown op '%s'\n", op.c_str());
            return 2;
        }

        lr::detail::write_file_bytes(out_path, resp.dump());
        std::printf("%s\n", out_path.c_str());
        return 0;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "toy denoiser: %s\n", e.what());
        return 1;
    }
}
