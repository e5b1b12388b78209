#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "lr/errors.hpp"
#include "lr/log.hpp"
#include "lr/rng.hpp"

namespace lr {

// Parameters for the toy denoiser family.
struct ToyBackendSpec {
    std::uint64_t seed = 0;
    int n_blocks = 2;
    std::array<std::size_t, 3> latent_shape = {4, 8, 8};
    int d_model = 32;
    int d_text = 16;
    // Scale of the rank-1 weight perturbation on the special-token row of
    // the cross-attention projections. Zero makes the personalized variant
    // coincide with the vanilla one bitwise.
    float delta_scale = 0.5f;
    // Coefficient of the latent itself inside the noise prediction; the
    // attention trunk adds conditioning-dependent structure on top.
    float eps_identity = 0.5f;
    // Scale applied to the trunk's output projection before it joins the
    // prediction.
    float trunk_scale = 0.1f;

    void validate() const {
        if (n_blocks < 1)
            throw validation_error("toy.n_blocks must be >= 1");
        if (d_model < 2) throw validation_error("toy.d_model must be >= 2");
        if (d_text < 2) throw validation_error("toy.d_text must be >= 2");
        for (std::size_t dim : latent_shape)
            if (dim == 0)
                throw validation_error("toy latent dims must be positive");
        if (!(eps_identity >= 0.0f) || !std::isfinite(eps_identity))
            throw validation_error("toy.eps_identity must be finite and >= 0");
        if (!(trunk_scale >= 0.0f) || !std::isfinite(trunk_scale))
            throw validation_error("toy.trunk_scale must be finite and >= 0");
    }
};

// Every run parameter in one place. Loaded from a JSON document; flags
// override file values override these defaults.
struct PipelineConfig {
    int T = 50;
    int lambda1 = 5;        // vanilla-model iterations at the start of stage 1
    int lambda2 = 10;       // timestep bound for the reference K/V branch
    int blend_start = 31;   // first sampling iteration with mask blending
    float ca_threshold = 0.35f;
    int volume_threshold = 16;
    float guidance_scale = 1.0f;
    std::uint64_t seed = 0;
    std::array<std::size_t, 3> latent_shape = {4, 8, 8};
    std::array<std::size_t, 2> image_size = {64, 64};

    float beta_start = 1e-4f;
    float beta_end = 2e-2f;

    std::string special_token = "<*>";
    std::string class_word;             // substituted for the special token
    std::string profile = "normal";     // "challenging" lowers lambda1 to 3

    std::vector<int> swap_layers;       // empty = every catalog layer
    std::vector<int> ca_layers;         // empty = every cross-attention layer
    bool blend_enabled = true;
    bool early_self_q_swap = true;      // also swap self-attn Q in the early branch

    ToyBackendSpec toy;

    // Named sub-seeds: components draw from independent streams so one can
    // be varied without disturbing the others.
    std::uint64_t noise_seed() const { return sub_seed(seed, "noise"); }
    std::uint64_t weights_seed() const { return sub_seed(seed, "toy-weights"); }
    std::uint64_t stub_seed() const { return sub_seed(seed, "stubs"); }

    // The toy spec with seed and latent shape resolved from this config.
    ToyBackendSpec toy_spec() const {
        ToyBackendSpec s = toy;
        s.seed = weights_seed();
        s.latent_shape = latent_shape;
        return s;
    }

    void validate() const {
        auto fail = [](const std::string& field, const std::string& why) {
            throw validation_error("config field '" + field + "': " + why);
        };
        if (T < 1) fail("T", "must be >= 1");
        if (lambda1 < 0 || lambda1 > T) fail("lambda1", "must lie in [0, T]");
        if (lambda2 < 0 || lambda2 > T) fail("lambda2", "must lie in [0, T]");
        if (blend_start < 1 || blend_start > T)
            fail("blend_start", "must lie in [1, T]");
        if (!(ca_threshold > 0.0f && ca_threshold < 1.0f))
            fail("ca_threshold", "must lie in (0, 1)");
        if (volume_threshold < 0) fail("volume_threshold", "must be >= 0");
        if (guidance_scale < 0.0f) fail("guidance_scale", "must be >= 0");
        if (!(beta_start > 0.0f && beta_start <= beta_end && beta_end < 1.0f))
            fail("beta_start/beta_end", "need 0 < beta_start <= beta_end < 1");
        for (auto d : latent_shape)
            if (d == 0) fail("latent_shape", "dimensions must be positive");
        for (auto d : image_size)
            if (d == 0) fail("image_size", "dimensions must be positive");
        if (image_size[0] % latent_shape[1] != 0 ||
            image_size[1] % latent_shape[2] != 0)
            fail("image_size", "must be a multiple of the latent spatial dims");
        if (special_token.empty()) fail("special_token", "must be non-empty");
        if (profile != "normal" && profile != "challenging")
            fail("profile", "must be 'normal' or 'challenging'");
        if (toy.n_blocks < 1) fail("toy.n_blocks", "must be >= 1");
        if (toy.d_model < 1) fail("toy.d_model", "must be >= 1");
        if (toy.d_text < 2) fail("toy.d_text", "must be >= 2");
    }
};

namespace detail {

inline void read_int(const nlohmann::json& j, const char* key, int& out) {
    if (!j.contains(key)) return;
    if (!j[key].is_number_integer())
        throw validation_error(std::string("config field '") + key +
                               "': expected an integer");
    out = j[key].get<int>();
}

inline void read_float(const nlohmann::json& j, const char* key, float& out) {
    if (!j.contains(key)) return;
    if (!j[key].is_number())
        throw validation_error(std::string("config field '") + key +
                               "': expected a number");
    out = j[key].get<float>();
}

inline void read_bool(const nlohmann::json& j, const char* key, bool& out) {
    if (!j.contains(key)) return;
    if (!j[key].is_boolean())
        throw validation_error(std::string("config field '") + key +
                               "': expected a boolean");
    out = j[key].get<bool>();
}

inline void read_string(const nlohmann::json& j, const char* key,
                        std::string& out) {
    if (!j.contains(key)) return;
    if (!j[key].is_string())
        throw validation_error(std::string("config field '") + key +
                               "': expected a string");
    out = j[key].get<std::string>();
}

}  // namespace detail

inline PipelineConfig config_from_json(const nlohmann::json& j) {
    static const std::vector<std::string> known = {
        "T", "lambda1", "lambda2", "blend_start", "ca_threshold",
        "volume_threshold", "guidance_scale", "seed", "latent_shape",
        "image_size", "beta_start", "beta_end", "special_token", "class_word",
        "profile", "swap_layers", "ca_layers", "blend_enabled",
        "early_self_q_swap", "toy"};
    if (!j.is_object() && !j.is_null())
        throw validation_error("config document must be a JSON object");

    PipelineConfig cfg;
    if (j.is_null()) return cfg;

    for (auto it = j.begin(); it != j.end(); ++it) {
        if (std::find(known.begin(), known.end(), it.key()) == known.end())
            LR_LOG_WARN("config: ignoring unknown key '%s'", it.key().c_str());
    }

    detail::read_int(j, "T", cfg.T);
    detail::read_int(j, "lambda2", cfg.lambda2);
    detail::read_int(j, "blend_start", cfg.blend_start);
    detail::read_float(j, "ca_threshold", cfg.ca_threshold);
    detail::read_int(j, "volume_threshold", cfg.volume_threshold);
    detail::read_float(j, "guidance_scale", cfg.guidance_scale);
    detail::read_float(j, "beta_start", cfg.beta_start);
    detail::read_float(j, "beta_end", cfg.beta_end);
    detail::read_string(j, "special_token", cfg.special_token);
    detail::read_string(j, "class_word", cfg.class_word);
    detail::read_string(j, "profile", cfg.profile);
    detail::read_bool(j, "blend_enabled", cfg.blend_enabled);
    detail::read_bool(j, "early_self_q_swap", cfg.early_self_q_swap);

    if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();

    // The challenging profile picks lambda1 = 3 unless the file pins it.
    if (cfg.profile == "challenging") cfg.lambda1 = 3;
    detail::read_int(j, "lambda1", cfg.lambda1);

    if (j.contains("latent_shape")) {
        auto v = j["latent_shape"].get<std::vector<std::size_t>>();
        if (v.size() != 3)
            throw validation_error("config field 'latent_shape': need [C, H, W]");
        std::copy(v.begin(), v.end(), cfg.latent_shape.begin());
    }
    if (j.contains("image_size")) {
        auto v = j["image_size"].get<std::vector<std::size_t>>();
        if (v.size() != 2)
            throw validation_error("config field 'image_size': need [H, W]");
        std::copy(v.begin(), v.end(), cfg.image_size.begin());
    }
    if (j.contains("swap_layers"))
        cfg.swap_layers = j["swap_layers"].get<std::vector<int>>();
    if (j.contains("ca_layers"))
        cfg.ca_layers = j["ca_layers"].get<std::vector<int>>();

    if (j.contains("toy")) {
        const auto& t = j["toy"];
        detail::read_int(t, "n_blocks", cfg.toy.n_blocks);
        detail::read_int(t, "d_model", cfg.toy.d_model);
        detail::read_int(t, "d_text", cfg.toy.d_text);
        detail::read_float(t, "delta_scale", cfg.toy.delta_scale);
        detail::read_float(t, "eps_identity", cfg.toy.eps_identity);
        detail::read_float(t, "trunk_scale", cfg.toy.trunk_scale);
    }

    cfg.validate();
    return cfg;
}

// An empty path means "all defaults".
inline PipelineConfig load_config(const std::string& path) {
    if (path.empty()) return config_from_json(nlohmann::json::object());
    std::ifstream f(path);
    if (!f) throw io_error("cannot open config: " + path);
    std::string text((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());
    // An empty document means "all defaults".
    if (text.find_first_not_of(" \t\r\n") == std::string::npos)
        return config_from_json(nlohmann::json::object());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw validation_error("config parse error in " + path + ": " + e.what());
    }
    return config_from_json(j);
}

inline nlohmann::json config_to_json(const PipelineConfig& c) {
    nlohmann::json j;
    j["T"] = c.T;
    j["lambda1"] = c.lambda1;
    j["lambda2"] = c.lambda2;
    j["blend_start"] = c.blend_start;
    j["ca_threshold"] = c.ca_threshold;
    j["volume_threshold"] = c.volume_threshold;
    j["guidance_scale"] = c.guidance_scale;
    j["seed"] = c.seed;
    j["latent_shape"] = c.latent_shape;
    j["image_size"] = c.image_size;
    j["beta_start"] = c.beta_start;
    j["beta_end"] = c.beta_end;
    j["special_token"] = c.special_token;
    j["class_word"] = c.class_word;
    j["profile"] = c.profile;
    j["swap_layers"] = c.swap_layers;
    j["ca_layers"] = c.ca_layers;
    j["blend_enabled"] = c.blend_enabled;
    j["early_self_q_swap"] = c.early_self_q_swap;
    j["toy"] = {{"n_blocks", c.toy.n_blocks},
                {"d_model", c.toy.d_model},
                {"d_text", c.toy.d_text},
                {"delta_scale", c.toy.delta_scale},
                {"eps_identity", c.toy.eps_identity},
                {"trunk_scale", c.toy.trunk_scale}};
    return j;
}

}  // namespace lr
