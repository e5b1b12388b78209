#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "lr/lr.hpp"

using namespace lr;

namespace {

Tensor mask_with_pixel(std::size_t h, std::size_t w, std::size_t y,
                       std::size_t x) {
    Tensor m({h, w});
    m.at(y, x) = 1.0f;
    return m;
}

Tensor mask_with_box(std::size_t h, std::size_t w, std::size_t y0,
                     std::size_t x0, std::size_t y1, std::size_t x1) {
    Tensor m({h, w});
    for (std::size_t y = y0; y <= y1; ++y)
        for (std::size_t x = x0; x <= x1; ++x) m.at(y, x) = 1.0f;
    return m;
}

Tensor one_hot(std::size_t k, std::size_t i) {
    Tensor p({k});
    p[i] = 1.0f;
    return p;
}

Tensor uniform_posterior(std::size_t k) {
    Tensor p({k});
    for (std::size_t i = 0; i < k; ++i) p[i] = 1.0f / float(k);
    return p;
}

}  // namespace

TEST_CASE("subject center uses the bounding-box midpoint") {
    SECTION("lone corner pixel") {
        const auto c = subject_center(mask_with_pixel(16, 32, 0, 0));
        REQUIRE(c[0] == Catch::Approx(0.5 / 32.0).epsilon(1e-12));
        REQUIRE(c[1] == Catch::Approx(0.5 / 16.0).epsilon(1e-12));
    }
    SECTION("full frame centers at one half") {
        const auto c = subject_center(mask_with_box(8, 8, 0, 0, 7, 7));
        REQUIRE(c[0] == Catch::Approx(0.5).epsilon(1e-12));
        REQUIRE(c[1] == Catch::Approx(0.5).epsilon(1e-12));
    }
    SECTION("asymmetric box") {
        // Columns 2..5, rows 1..2 of an 8x8 mask.
        const auto c = subject_center(mask_with_box(8, 8, 1, 2, 2, 5));
        REQUIRE(c[0] == Catch::Approx((3.5 + 0.5) / 8.0).epsilon(1e-12));
        REQUIRE(c[1] == Catch::Approx((1.5 + 0.5) / 8.0).epsilon(1e-12));
    }
    SECTION("holes do not move the bounding box") {
        Tensor m = mask_with_box(8, 8, 2, 2, 5, 5);
        m.at(3, 3) = 0.0f;
        m.at(4, 4) = 0.0f;
        const auto a = subject_center(m);
        const auto b = subject_center(mask_with_box(8, 8, 2, 2, 5, 5));
        REQUIRE(a == b);
    }
    SECTION("errors") {
        REQUIRE_THROWS_AS(subject_center(Tensor({4, 4})), validation_error);
        Tensor half({4, 4});
        half[0] = 0.5f;
        REQUIRE_THROWS_AS(subject_center(half), validation_error);
        REQUIRE_THROWS_AS(subject_center(Tensor({4})), shape_error);
    }
}

TEST_CASE("center spread statistics") {
    SECTION("identical centers have zero variance") {
        const std::vector<std::array<double, 2>> same(
            5, std::array<double, 2>{0.3, 0.7});
        const CenterStats st = center_point_stats(same, 16);
        REQUIRE(st.sigma2_avg == 0.0);
    }
    SECTION("two-point fixture hits the closed form exactly") {
        // x variance = 0.0625, y variance = 0; the average is 0.03125.
        const CenterStats st = center_point_stats(
            {{{0.25, 0.5}}, {{0.75, 0.5}}}, 16);
        REQUIRE(st.sigma2_avg == 0.03125);
    }
    SECTION("density sums to one and peaks at the centers") {
        const CenterStats st = center_point_stats({{{0.25, 0.25}},
                                                   {{0.75, 0.75}}},
                                                  32, 0.05);
        double sum = 0.0;
        float peak = 0.0f;
        std::size_t peak_idx = 0;
        for (std::size_t i = 0; i < st.density.numel(); ++i) {
            sum += st.density[i];
            if (st.density[i] > peak) {
                peak = st.density[i];
                peak_idx = i;
            }
        }
        REQUIRE(sum == Catch::Approx(1.0).margin(1e-6));
        // 0.25 of 32 cells = cell 7.5, so the peak sits at cell 7 or 8.
        const std::size_t py = peak_idx / 32, px = peak_idx % 32;
        const bool near = (py == 7 || py == 8 || py == 23 || py == 24) &&
                          (px == 7 || px == 8 || px == 23 || px == 24);
        REQUIRE(near);
    }
    SECTION("permutation invariance") {
        const std::vector<std::array<double, 2>> a = {
            {{0.1, 0.2}}, {{0.5, 0.9}}, {{0.8, 0.3}}, {{0.4, 0.6}}};
        std::vector<std::array<double, 2>> b = {a[2], a[0], a[3], a[1]};
        REQUIRE(center_point_stats(a, 8).sigma2_avg ==
                Catch::Approx(center_point_stats(b, 8).sigma2_avg)
                    .epsilon(1e-12));
    }
    SECTION("translation invariance of the variance") {
        const std::vector<std::array<double, 2>> a = {
            {{0.1, 0.2}}, {{0.3, 0.4}}, {{0.2, 0.1}}};
        std::vector<std::array<double, 2>> shifted;
        for (const auto& p : a)
            shifted.push_back({p[0] + 0.4, p[1] + 0.5});
        REQUIRE(center_point_stats(a, 8).sigma2_avg ==
                Catch::Approx(center_point_stats(shifted, 8).sigma2_avg)
                    .margin(1e-12));
    }
    SECTION("masks route through subject_center") {
        std::vector<Tensor> masks;
        masks.push_back(mask_with_pixel(8, 8, 4, 2));
        masks.push_back(mask_with_pixel(8, 8, 4, 6));
        const CenterStats st = center_point_stats_from_masks(masks, 8);
        // Centers x: 2.5/8 and 6.5/8 -> variance (0.25)^2 = 0.0625; y equal.
        REQUIRE(st.sigma2_avg == Catch::Approx(0.03125).epsilon(1e-12));
    }
    SECTION("errors") {
        REQUIRE_THROWS_AS(center_point_stats({}), validation_error);
        REQUIRE_THROWS_AS(center_point_stats({{{0.5, 0.5}}}, 0),
                          validation_error);
        REQUIRE_THROWS_AS(center_point_stats({{{0.5, 0.5}}}, 8, 0.0),
                          validation_error);
    }
    SECTION("json export") {
        const CenterStats st =
            center_point_stats({{{0.25, 0.5}}, {{0.75, 0.5}}}, 8);
        const nlohmann::json j = center_stats_json(st, "density.pgm");
        REQUIRE(j["n"].get<std::size_t>() == 2);
        REQUIRE(j["sigma2_avg"].get<double>() == 0.03125);
        REQUIRE(j["centers"].size() == 2);
        REQUIRE(j["density"].get<std::string>() == "density.pgm");
    }
}

TEST_CASE("inception score closed forms") {
    SECTION("uniform posteriors give exactly one") {
        const std::vector<Tensor> ps(4, uniform_posterior(8));
        REQUIRE(inception_score_from_posteriors(ps) ==
                Catch::Approx(1.0).margin(1e-6));
    }
    SECTION("two distinct one-hots give exactly two") {
        const std::vector<Tensor> ps = {one_hot(8, 1), one_hot(8, 5)};
        REQUIRE(inception_score_from_posteriors(ps) ==
                Catch::Approx(2.0).margin(1e-6));
    }
    SECTION("n distinct one-hots give n") {
        std::vector<Tensor> ps;
        for (std::size_t i = 0; i < 5; ++i) ps.push_back(one_hot(5, i));
        REQUIRE(inception_score_from_posteriors(ps) ==
                Catch::Approx(5.0).margin(1e-6));
    }
    SECTION("score lies between 1 and the class count") {
        std::vector<Tensor> ps;
        SplitMix64 g(3);
        for (int n = 0; n < 6; ++n) {
            std::vector<double> raw(8);
            double sum = 0.0;
            for (double& v : raw) {
                v = g.next_uniform() + 0.05;
                sum += v;
            }
            Tensor p({8});
            for (std::size_t i = 0; i < 8; ++i)
                p[i] = float(raw[i] / sum);
            // Renormalize in float so the validation gate passes.
            float fsum = 0.0f;
            for (std::size_t i = 0; i < 8; ++i) fsum += p[i];
            p[7] += 1.0f - fsum;
            ps.push_back(p);
        }
        const double is = inception_score_from_posteriors(ps);
        REQUIRE(is >= 1.0 - 1e-9);
        REQUIRE(is <= 8.0 + 1e-9);
    }
    SECTION("validation") {
        REQUIRE_THROWS_AS(
            inception_score_from_posteriors({uniform_posterior(4)}),
            validation_error);
        REQUIRE_THROWS_AS(inception_score_from_posteriors(
                              {uniform_posterior(4), uniform_posterior(5)}),
                          shape_error);
        Tensor bad({2});
        bad[0] = 0.9f;
        bad[1] = 0.2f;
        REQUIRE_THROWS_AS(
            inception_score_from_posteriors({bad, uniform_posterior(2)}),
            validation_error);
        Tensor neg({2});
        neg[0] = 1.5f;
        neg[1] = -0.5f;
        REQUIRE_THROWS_AS(
            inception_score_from_posteriors({neg, uniform_posterior(2)}),
            validation_error);
    }
}

TEST_CASE("identity and fidelity scores") {
    Tensor e1({4}), e2({4}), e3({4});
    e1[0] = 1.0f;
    e2[1] = 1.0f;
    e3[0] = 1.0f;
    e3[1] = 1.0f;

    SECTION("cosine fixtures") {
        REQUIRE(identity_score_from_embeddings({e1}, {e1}) ==
                Catch::Approx(1.0).margin(1e-12));
        REQUIRE(identity_score_from_embeddings({e1}, {e2}) ==
                Catch::Approx(0.0).margin(1e-12));
        REQUIRE(identity_score_from_embeddings({e1}, {e3}) ==
                Catch::Approx(1.0 / std::sqrt(2.0)).epsilon(1e-9));
    }
    SECTION("mean over all pairs") {
        // Pairs: (e1,e1)=1, (e1,e2)=0, (e2,e1)=0, (e2,e2)=1 -> mean 0.5.
        REQUIRE(identity_score_from_embeddings({e1, e2}, {e1, e2}) ==
                Catch::Approx(0.5).margin(1e-12));
    }
    SECTION("zero-norm embedding is rejected") {
        REQUIRE_THROWS_AS(identity_score_from_embeddings({Tensor({4})}, {e1}),
                          validation_error);
        REQUIRE_THROWS_AS(identity_score_from_embeddings({}, {e1}),
                          validation_error);
    }
    SECTION("image-level scores are deterministic and bounded") {
        PluginHub hub;
        std::vector<Image> gen, refs;
        for (int k = 0; k < 3; ++k) {
            Image img;
            img.data = Tensor({3, 16, 16});
            SplitMix64 g(std::uint64_t(40 + k));
            for (std::size_t i = 0; i < img.data.numel(); ++i)
                img.data[i] = g.next_uniform();
            (k < 2 ? gen : refs).push_back(img);
        }
        const double id = identity_score(gen, refs, hub);
        REQUIRE(id == identity_score(gen, refs, hub));
        REQUIRE(id >= -1.0);
        REQUIRE(id <= 1.0);
        const double fid = fidelity_score(gen, "a photo of a cat", hub);
        REQUIRE(fid >= -1.0);
        REQUIRE(fid <= 1.0);
        REQUIRE_THROWS_AS(fidelity_score({}, "x", hub), validation_error);
    }
}

TEST_CASE("embedding stack for export") {
    Tensor a({3}), b({3});
    a[0] = 1.0f;
    b[2] = 2.0f;
    const Tensor st = stack_embeddings({a, b});
    REQUIRE(st.dim(0) == 2);
    REQUIRE(st.dim(1) == 3);
    REQUIRE(st.at(0, 0) == 1.0f);
    REQUIRE(st.at(1, 2) == 2.0f);
    REQUIRE_THROWS_AS(stack_embeddings({}), validation_error);
    REQUIRE_THROWS_AS(stack_embeddings({a, Tensor({4})}), shape_error);
}

TEST_CASE("spread statistic separates uniform from centered placement") {
    // Nine masks whose subjects sit on a 3x3 grid versus nine near-identical
    // centered masks: the grid spread must dominate.
    std::vector<Tensor> uniform_masks, centered_masks;
    for (std::size_t gy = 0; gy < 3; ++gy)
        for (std::size_t gx = 0; gx < 3; ++gx) {
            const std::size_t y = 4 + gy * 12, x = 4 + gx * 12;
            uniform_masks.push_back(mask_with_box(32, 32, y, x, y + 3, x + 3));
            const std::size_t cy = 14 + (gy % 2), cx = 14 + (gx % 2);
            centered_masks.push_back(
                mask_with_box(32, 32, cy, cx, cy + 3, cx + 3));
        }
    const CenterStats u = center_point_stats_from_masks(uniform_masks, 16);
    const CenterStats c = center_point_stats_from_masks(centered_masks, 16);
    REQUIRE(u.sigma2_avg > c.sigma2_avg);
    REQUIRE(u.sigma2_avg > 10.0 * c.sigma2_avg);
}
