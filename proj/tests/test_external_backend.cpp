#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <string>

#include "lr/lr.hpp"

using namespace lr;

namespace {

struct EnvVar {
    std::string name;
    EnvVar(const std::string& n, const std::string& value) : name(n) {
        ::setenv(name.c_str(), value.c_str(), 1);
    }
    ~EnvVar() { ::unsetenv(name.c_str()); }
};

ToyBackendSpec env_spec(std::uint64_t seed) {
    ToyBackendSpec spec;
    spec.seed = seed;
    return spec;
}

}  // namespace

TEST_CASE("external adapter mirrors the in-process catalog") {
    EnvVar seed("LR_TOY_SEED", "42");
    const ExternalBackend ext(LR_TOY_DENOISER_PATH);
    const ToyBackend twin(env_spec(42), BackendRole::personalized);

    REQUIRE(ext.role() == BackendRole::external);
    REQUIRE(ext.latent_shape() == twin.latent_shape());
    REQUIRE(ext.text_dim() == twin.text_dim());
    REQUIRE(ext.attention_layers().size() == twin.attention_layers().size());
    for (std::size_t i = 0; i < ext.attention_layers().size(); ++i) {
        REQUIRE(ext.attention_layers()[i].index ==
                twin.attention_layers()[i].index);
        REQUIRE(ext.attention_layers()[i].kind ==
                twin.attention_layers()[i].kind);
        REQUIRE(ext.attention_layers()[i].resolution ==
                twin.attention_layers()[i].resolution);
    }
}

TEST_CASE("external denoise is bit-identical to the in-process backend") {
    EnvVar seed("LR_TOY_SEED", "42");
    const ExternalBackend ext(LR_TOY_DENOISER_PATH);
    const ToyBackend twin(env_spec(42), BackendRole::personalized);
    const ToyTextEncoder enc(sub_seed(9, "text-embed"), 16, "<*>");
    const TextCondition cond =
        enc.condition("a <*> by a lake", CondVariant::personalized);
    const LatentTensor z = initial_latent(twin.latent_shape(), 7, 50);

    SECTION("plain pass") {
        REQUIRE(bit_equal(ext.denoise(z, cond, 50), twin.denoise(z, cond, 50)));
    }
    SECTION("inversion-style pass where latent timestep differs from i") {
        LatentTensor mid = z;
        mid.timestep = 12;
        REQUIRE(bit_equal(ext.denoise(mid, cond, 13),
                          twin.denoise(mid, cond, 13)));
    }
    SECTION("vanilla role") {
        EnvVar role("LR_TOY_ROLE", "vanilla");
        const ExternalBackend vext(LR_TOY_DENOISER_PATH);
        const ToyBackend vtwin(env_spec(42), BackendRole::vanilla);
        REQUIRE(vext.role() == BackendRole::external);
        REQUIRE(bit_equal(vext.denoise(z, cond, 20),
                          vtwin.denoise(z, cond, 20)));
    }
    SECTION("zero delta collapses roles across the wire") {
        EnvVar delta("LR_TOY_DELTA", "0");
        const ExternalBackend pext(LR_TOY_DENOISER_PATH);
        ToyBackendSpec spec = env_spec(42);
        spec.delta_scale = 0.0f;
        const ToyBackend vtwin(spec, BackendRole::vanilla);
        REQUIRE(bit_equal(pext.denoise(z, cond, 20),
                          vtwin.denoise(z, cond, 20)));
    }
}

TEST_CASE("external denoise carries overrides and taps faithfully") {
    EnvVar seed("LR_TOY_SEED", "42");
    const ExternalBackend ext(LR_TOY_DENOISER_PATH);
    const ToyBackend twin(env_spec(42), BackendRole::personalized);
    const ToyTextEncoder enc(sub_seed(9, "text-embed"), 16, "<*>");
    const TextCondition cond =
        enc.condition("a <*> by a lake", CondVariant::personalized);
    const LatentTensor z = initial_latent(twin.latent_shape(), 7, 50);

    AttentionTrace donor;
    (void)twin.denoise(z, cond, 30, nullptr, TapSink{&donor, 30});

    OverrideBundle bundle;
    {
        LayerOverride ov;
        ov.k = donor.get(30, 0, AttnKind::self_attn).k;
        ov.v = donor.get(30, 0, AttnKind::self_attn).v;
        bundle.by_layer[0] = std::move(ov);
    }
    {
        LayerOverride ov;
        ov.q = donor.get(30, 1, AttnKind::cross_attn).q;
        bundle.by_layer[1] = std::move(ov);
    }
    {
        const TraceEntry& e = donor.get(30, 2, AttnKind::self_attn);
        Tensor mask({e.phi.dim(0)});
        for (std::size_t i = 0; i < mask.numel(); ++i)
            mask[i] = (i % 2 == 0) ? 1.0f : 0.25f;
        LayerOverride ov;
        ov.phi_blend = PhiBlend{e.phi, mask};
        bundle.by_layer[2] = std::move(ov);
    }

    AttentionTrace ext_trace, twin_trace;
    const Tensor a = ext.denoise(z, cond, 30, &bundle, TapSink{&ext_trace, 30});
    const Tensor b = twin.denoise(z, cond, 30, &bundle, TapSink{&twin_trace, 30});
    REQUIRE(bit_equal(a, b));

    int entries = 0;
    twin_trace.for_each([&](int s, int layer, AttnKind kind,
                            const TraceEntry& e) {
        ++entries;
        const TraceEntry& x = ext_trace.get(s, layer, kind);
        REQUIRE(bit_equal(x.q, e.q));
        REQUIRE(bit_equal(x.k, e.k));
        REQUIRE(bit_equal(x.v, e.v));
        REQUIRE(bit_equal(x.attn, e.attn));
        REQUIRE(bit_equal(x.phi, e.phi));
    });
    REQUIRE(entries == 4);
}

TEST_CASE("external provider failures surface as plugin errors") {
    SECTION("command that never answers times out retryably") {
        EnvVar mode("LR_FAKE_MODE", "sleep");
        try {
            const ExternalBackend ext(LR_FAKE_PLUGIN_PATH, 0.3);
            FAIL("expected plugin_error");
        } catch (const plugin_error& e) {
            REQUIRE(e.retryable);
        }
    }
    SECTION("garbage response") {
        EnvVar mode("LR_FAKE_MODE", "garbage");
        REQUIRE_THROWS_AS(ExternalBackend(LR_FAKE_PLUGIN_PATH), plugin_error);
    }
    SECTION("missing command") {
        REQUIRE_THROWS_AS(ExternalBackend("/nonexistent/denoiser"),
                          plugin_error);
    }
    SECTION("provider-side validation failure") {
        EnvVar seed("LR_TOY_SEED", "42");
        const ExternalBackend ext(LR_TOY_DENOISER_PATH);
        const ToyTextEncoder enc(sub_seed(9, "text-embed"), 16, "<*>");
        const TextCondition cond =
            enc.condition("a <*>", CondVariant::personalized);
        const LatentTensor bad = initial_latent({2, 2, 2}, 7, 50);
        REQUIRE_THROWS_AS(ext.denoise(bad, cond, 50), plugin_error);
    }
}
