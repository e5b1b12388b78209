#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include <json.hpp>

#include "lr/errors.hpp"
#include "lr/image.hpp"
#include "lr/maskops.hpp"
#include "lr/numeric.hpp"
#include "lr/plugins.hpp"
#include "lr/tensor.hpp"

namespace lr {

// ---------------------------------------------------------------------------
// Subject placement
// ---------------------------------------------------------------------------

// Center of the foreground bounding box in normalized [0,1] coordinates,
// using the pixel-center convention: a lone pixel at (0,0) of an HxW mask
// maps to (0.5/W, 0.5/H). Returns (x, y).
inline std::array<double, 2> subject_center(const Tensor& mask) {
    require_binary(mask, "subject_center");
    const std::size_t h = mask.dim(0), w = mask.dim(1);
    std::size_t xmin = w, xmax = 0, ymin = h, ymax = 0;
    bool any = false;
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            if (mask.at(y, x) != 0.0f) {
                any = true;
                xmin = std::min(xmin, x);
                xmax = std::max(xmax, x);
                ymin = std::min(ymin, y);
                ymax = std::max(ymax, y);
            }
    if (!any)
        throw validation_error("subject_center: mask has no foreground");
    const double cx = ((double(xmin) + double(xmax)) / 2.0 + 0.5) / double(w);
    const double cy = ((double(ymin) + double(ymax)) / 2.0 + 0.5) / double(h);
    return {cx, cy};
}

struct CenterStats {
    std::vector<std::array<double, 2>> centers;  // (x, y) per mask
    double sigma2_avg = 0.0;  // mean of the two per-axis population variances
    Tensor density;           // square grid of Gaussian bumps, sums to 1
};

namespace detail {

inline double population_variance(const std::vector<double>& xs) {
    const double n = static_cast<double>(xs.size());
    const double mean = pairwise_sum(xs) / n;
    std::vector<double> sq(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i)
        sq[i] = (xs[i] - mean) * (xs[i] - mean);
    return pairwise_sum(sq) / n;
}

}  // namespace detail

// Spread statistics over a set of subject centers. The density map drops an
// isotropic Gaussian (sigma in normalized units) on each center over a
// density_res x density_res grid of cell centers, then normalizes to sum 1.
inline CenterStats center_point_stats(
    const std::vector<std::array<double, 2>>& centers,
    std::size_t density_res = 64, double sigma = 0.05) {
    if (centers.empty())
        throw validation_error("center_point_stats: no centers");
    if (density_res == 0 || sigma <= 0.0)
        throw validation_error("center_point_stats: density_res and sigma "
                               "must be positive");

    CenterStats out;
    out.centers = centers;

    std::vector<double> xs(centers.size()), ys(centers.size());
    for (std::size_t i = 0; i < centers.size(); ++i) {
        xs[i] = centers[i][0];
        ys[i] = centers[i][1];
    }
    out.sigma2_avg = (detail::population_variance(xs) +
                      detail::population_variance(ys)) /
                     2.0;

    const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
    std::vector<double> cells(density_res * density_res, 0.0);
    for (std::size_t r = 0; r < density_res; ++r) {
        const double cy = (double(r) + 0.5) / double(density_res);
        for (std::size_t c = 0; c < density_res; ++c) {
            const double cx = (double(c) + 0.5) / double(density_res);
            double v = 0.0;
            for (const auto& p : centers) {
                const double dx = cx - p[0], dy = cy - p[1];
                v += det_exp(-(dx * dx + dy * dy) * inv2s2);
            }
            cells[r * density_res + c] = v;
        }
    }
    const double total = pairwise_sum(cells);
    out.density = Tensor({density_res, density_res});
    for (std::size_t k = 0; k < cells.size(); ++k)
        out.density[k] = static_cast<float>(cells[k] / total);
    return out;
}

inline CenterStats center_point_stats_from_masks(
    const std::vector<Tensor>& masks, std::size_t density_res = 64,
    double sigma = 0.05) {
    std::vector<std::array<double, 2>> centers;
    centers.reserve(masks.size());
    for (const auto& m : masks) centers.push_back(subject_center(m));
    return center_point_stats(centers, density_res, sigma);
}

inline nlohmann::json center_stats_json(const CenterStats& stats,
                                        const std::string& density_path = "") {
    nlohmann::json j;
    j["n"] = stats.centers.size();
    j["sigma2_avg"] = stats.sigma2_avg;
    j["centers"] = nlohmann::json::array();
    for (const auto& c : stats.centers) j["centers"].push_back({c[0], c[1]});
    if (!density_path.empty()) j["density"] = density_path;
    return j;
}

// ---------------------------------------------------------------------------
// Diversity
// ---------------------------------------------------------------------------

// exp(mean_i KL(p_i || mean_j p_j)) over classifier posteriors, computed as
// a single split. Uniform posteriors give exactly 1; n one-hot posteriors of
// n distinct classes give exactly n.
inline double inception_score_from_posteriors(
    const std::vector<Tensor>& posteriors) {
    if (posteriors.size() < 2)
        throw validation_error("inception score needs at least two samples");
    const std::size_t k = posteriors.front().numel();
    for (const auto& p : posteriors) {
        if (p.rank() != 1 || p.numel() != k)
            throw shape_error("inception score: posteriors must share one "
                              "1-D shape");
        double sum = 0.0;
        for (float v : p.values()) {
            if (v < 0.0f)
                throw validation_error("inception score: negative posterior");
            sum += v;
        }
        if (std::abs(sum - 1.0) > 1e-5)
            throw validation_error("inception score: posterior does not sum "
                                   "to one");
    }

    std::vector<double> marginal(k, 0.0);
    for (const auto& p : posteriors)
        for (std::size_t c = 0; c < k; ++c) marginal[c] += p[c];
    for (double& m : marginal) m /= double(posteriors.size());

    std::vector<double> kls(posteriors.size());
    for (std::size_t i = 0; i < posteriors.size(); ++i) {
        double kl = 0.0;
        for (std::size_t c = 0; c < k; ++c) {
            const double p = posteriors[i][c];
            if (p > 0.0) kl += p * std::log(p / marginal[c]);
        }
        kls[i] = kl;
    }
    return std::exp(pairwise_sum(kls) / double(kls.size()));
}

inline double inception_score(const std::vector<Image>& images,
                              const PluginHub& hub) {
    std::vector<Tensor> posteriors;
    posteriors.reserve(images.size());
    for (const auto& img : images) posteriors.push_back(hub.classify(img));
    return inception_score_from_posteriors(posteriors);
}

// ---------------------------------------------------------------------------
// Identity and fidelity
// ---------------------------------------------------------------------------

namespace detail {

inline double cosine(const Tensor& a, const Tensor& b) {
    if (a.rank() != 1 || b.rank() != 1 || a.numel() != b.numel())
        throw shape_error("cosine: vectors must share one 1-D shape");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        dot += double(a[i]) * double(b[i]);
        na += double(a[i]) * double(a[i]);
        nb += double(b[i]) * double(b[i]);
    }
    if (na == 0.0 || nb == 0.0)
        throw validation_error("cosine: zero-norm embedding");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

}  // namespace detail

// Mean pairwise cosine similarity between generated and reference
// embeddings.
inline double identity_score_from_embeddings(
    const std::vector<Tensor>& generated, const std::vector<Tensor>& refs) {
    if (generated.empty() || refs.empty())
        throw validation_error("identity score: empty embedding list");
    std::vector<double> sims;
    sims.reserve(generated.size() * refs.size());
    for (const auto& g : generated)
        for (const auto& r : refs) sims.push_back(detail::cosine(g, r));
    return pairwise_sum(sims) / double(sims.size());
}

inline double identity_score(const std::vector<Image>& generated,
                             const std::vector<Image>& refs,
                             const PluginHub& hub) {
    std::vector<Tensor> ge, re;
    for (const auto& img : generated) ge.push_back(hub.embed_image(img));
    for (const auto& img : refs) re.push_back(hub.embed_image(img));
    return identity_score_from_embeddings(ge, re);
}

// Mean cosine similarity between each generated image's embedding and the
// prompt embedding.
inline double fidelity_score(const std::vector<Image>& generated,
                             const std::string& prompt, const PluginHub& hub) {
    if (generated.empty())
        throw validation_error("fidelity score: no generated images");
    const Tensor text = hub.embed_text(prompt);
    std::vector<double> sims;
    sims.reserve(generated.size());
    for (const auto& img : generated)
        sims.push_back(detail::cosine(hub.embed_image(img), text));
    return pairwise_sum(sims) / double(sims.size());
}

// Stacks 1-D embeddings into an (n, d) tensor for export.
inline Tensor stack_embeddings(const std::vector<Tensor>& embeddings) {
    if (embeddings.empty())
        throw validation_error("stack_embeddings: empty list");
    const std::size_t d = embeddings.front().numel();
    Tensor out({embeddings.size(), d});
    for (std::size_t i = 0; i < embeddings.size(); ++i) {
        if (embeddings[i].rank() != 1 || embeddings[i].numel() != d)
            throw shape_error("stack_embeddings: embeddings must share one "
                              "1-D shape");
        for (std::size_t j = 0; j < d; ++j) out.at(i, j) = embeddings[i][j];
    }
    return out;
}

}  // namespace lr
