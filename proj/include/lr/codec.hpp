#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "lr/errors.hpp"
#include "lr/image.hpp"
#include "lr/rng.hpp"
#include "lr/tensor.hpp"

namespace lr {

// Linear patch codec between latents (C, h, w) and images (3, H, W). Each
// latent pixel decodes to one 3-channel image patch through a shared seeded
// matrix around mid-gray; encode applies the exact least-squares inverse, so
// encode(decode(z)) recovers z up to float rounding. Decoded values are kept
// unclamped so the inverse stays exact; clamping happens at PPM export.
class ToyCodec {
public:
    ToyCodec(std::uint64_t seed, std::array<std::size_t, 3> latent_shape,
             std::array<std::size_t, 2> image_size)
        : latent_(latent_shape), image_(image_size) {
        const std::size_t C = latent_[0], h = latent_[1], w = latent_[2];
        const std::size_t H = image_[0], W = image_[1];
        if (C == 0 || h == 0 || w == 0 || H == 0 || W == 0)
            throw validation_error("codec: zero-sized shape");
        if (H % h != 0 || W % w != 0)
            throw validation_error("codec: image dims must be multiples of "
                                   "latent dims");
        patch_h_ = H / h;
        patch_w_ = W / w;
        rows_ = 3 * patch_h_ * patch_w_;
        if (rows_ < C)
            throw validation_error("codec: patch must hold at least as many "
                                   "values as latent channels");

        SplitMix64 g(sub_seed(seed, "codec"));
        dmat_.resize(rows_ * C);
        for (float& v : dmat_) v = g.next_symmetric(0.2f);

        std::vector<double> gram(C * C, 0.0);
        for (std::size_t a = 0; a < C; ++a)
            for (std::size_t b = 0; b < C; ++b) {
                double s = 0.0;
                for (std::size_t r = 0; r < rows_; ++r)
                    s += double(dmat_[r * C + a]) * double(dmat_[r * C + b]);
                gram[a * C + b] = s;
            }

        std::vector<double> inv(C * C, 0.0);
        for (std::size_t a = 0; a < C; ++a) inv[a * C + a] = 1.0;
        for (std::size_t col = 0; col < C; ++col) {
            std::size_t piv = col;
            for (std::size_t r = col + 1; r < C; ++r)
                if (std::fabs(gram[r * C + col]) >
                    std::fabs(gram[piv * C + col]))
                    piv = r;
            if (std::fabs(gram[piv * C + col]) < 1e-9)
                throw error("codec: decode matrix is degenerate");
            if (piv != col)
                for (std::size_t c = 0; c < C; ++c) {
                    std::swap(gram[piv * C + c], gram[col * C + c]);
                    std::swap(inv[piv * C + c], inv[col * C + c]);
                }
            const double d = gram[col * C + col];
            for (std::size_t c = 0; c < C; ++c) {
                gram[col * C + c] /= d;
                inv[col * C + c] /= d;
            }
            for (std::size_t r = 0; r < C; ++r) {
                if (r == col) continue;
                const double f = gram[r * C + col];
                if (f == 0.0) continue;
                for (std::size_t c = 0; c < C; ++c) {
                    gram[r * C + c] -= f * gram[col * C + c];
                    inv[r * C + c] -= f * inv[col * C + c];
                }
            }
        }

        pinv_.resize(C * rows_);
        for (std::size_t a = 0; a < C; ++a)
            for (std::size_t r = 0; r < rows_; ++r) {
                double s = 0.0;
                for (std::size_t b = 0; b < C; ++b)
                    s += inv[a * C + b] * double(dmat_[r * C + b]);
                pinv_[a * rows_ + r] = s;
            }
    }

    std::array<std::size_t, 3> latent_shape() const { return latent_; }
    std::array<std::size_t, 2> image_size() const { return image_; }

    Image decode(const Tensor& z) const {
        const std::size_t C = latent_[0], h = latent_[1], w = latent_[2];
        if (z.rank() != 3 || z.dim(0) != C || z.dim(1) != h || z.dim(2) != w)
            throw shape_error("codec decode: latent shape mismatch");
        const std::size_t H = image_[0], W = image_[1];
        Image img;
        img.data = Tensor({3, H, W});
        std::vector<float> zv(C);
        for (std::size_t py = 0; py < h; ++py)
            for (std::size_t px = 0; px < w; ++px) {
                for (std::size_t c = 0; c < C; ++c)
                    zv[c] = z.at(c, py, px);
                std::size_t r = 0;
                for (std::size_t ch = 0; ch < 3; ++ch)
                    for (std::size_t dy = 0; dy < patch_h_; ++dy)
                        for (std::size_t dx = 0; dx < patch_w_; ++dx, ++r) {
                            double s = 0.5;
                            for (std::size_t c = 0; c < C; ++c)
                                s += double(dmat_[r * C + c]) * double(zv[c]);
                            img.data.at(ch, py * patch_h_ + dy,
                                        px * patch_w_ + dx) =
                                static_cast<float>(s);
                        }
            }
        return img;
    }

    Tensor encode(const Image& img) const {
        const std::size_t H = image_[0], W = image_[1];
        if (img.data.rank() != 3 || img.data.dim(0) != 3 ||
            img.data.dim(1) != H || img.data.dim(2) != W)
            throw shape_error("codec encode: image size mismatch");
        if (!img.data.all_finite())
            throw validation_error("codec encode: image has non-finite values");
        const std::size_t C = latent_[0], h = latent_[1], w = latent_[2];
        Tensor z({C, h, w});
        std::vector<double> patch(rows_);
        for (std::size_t py = 0; py < h; ++py)
            for (std::size_t px = 0; px < w; ++px) {
                std::size_t r = 0;
                for (std::size_t ch = 0; ch < 3; ++ch)
                    for (std::size_t dy = 0; dy < patch_h_; ++dy)
                        for (std::size_t dx = 0; dx < patch_w_; ++dx, ++r)
                            patch[r] = double(img.data.at(
                                           ch, py * patch_h_ + dy,
                                           px * patch_w_ + dx)) -
                                       0.5;
                for (std::size_t c = 0; c < C; ++c) {
                    double s = 0.0;
                    for (std::size_t k = 0; k < rows_; ++k)
                        s += pinv_[c * rows_ + k] * patch[k];
                    z.at(c, py, px) = static_cast<float>(s);
                }
            }
        return z;
    }

private:
    std::array<std::size_t, 3> latent_;
    std::array<std::size_t, 2> image_;
    std::size_t patch_h_ = 0, patch_w_ = 0, rows_ = 0;
    std::vector<float> dmat_;
    std::vector<double> pinv_;
};

}  // namespace lr
