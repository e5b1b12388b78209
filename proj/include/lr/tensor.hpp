#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "lr/errors.hpp"
#include "lr/rng.hpp"

namespace lr {

// Dense row-major float32 tensor, rank 1..4. The only numeric container in
// the library; latents, attention variables, masks and embeddings all live
// in one of these.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape)
        : shape_(std::move(shape)) {
        if (shape_.empty() || shape_.size() > 4)
            throw shape_error("tensor rank must be 1..4");
        std::size_t n = 1;
        for (auto d : shape_) {
            if (d == 0) throw shape_error("tensor dimension must be positive");
            n *= d;
        }
        data_.assign(n, 0.0f);
    }

    static Tensor zeros(std::vector<std::size_t> shape) {
        return Tensor(std::move(shape));
    }

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t numel() const { return data_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    std::span<float> values() { return data_; }
    std::span<const float> values() const { return data_; }

    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }

    float& at(std::size_t i, std::size_t j) {
        return data_[i * shape_[1] + j];
    }
    float at(std::size_t i, std::size_t j) const {
        return data_[i * shape_[1] + j];
    }
    float& at(std::size_t c, std::size_t y, std::size_t x) {
        return data_[(c * shape_[1] + y) * shape_[2] + x];
    }
    float at(std::size_t c, std::size_t y, std::size_t x) const {
        return data_[(c * shape_[1] + y) * shape_[2] + x];
    }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    bool all_finite() const {
        for (float v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    Tensor reshaped(std::vector<std::size_t> shape) const {
        Tensor out(std::move(shape));
        if (out.numel() != numel())
            throw shape_error("reshape changes element count");
        out.data_ = data_;
        return out;
    }

private:
    std::vector<std::size_t> shape_;
    std::vector<float> data_;
};

inline float max_abs(const Tensor& t) {
    float m = 0.0f;
    for (float v : t.values()) m = std::max(m, std::fabs(v));
    return m;
}

inline float max_abs_diff(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw shape_error("max_abs_diff: shape mismatch");
    float m = 0.0f;
    for (std::size_t i = 0; i < a.numel(); ++i)
        m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

inline double rel_l2(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) throw shape_error("rel_l2: shape mismatch");
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        num += d * d;
        den += static_cast<double>(b[i]) * static_cast<double>(b[i]);
    }
    if (den == 0.0) return num == 0.0 ? 0.0 : std::sqrt(num);
    return std::sqrt(num / den);
}

inline bool bit_equal(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) return false;
    return std::memcmp(a.data(), b.data(), a.numel() * sizeof(float)) == 0;
}

// C(M,N) = A(M,K) * B(K,N), double accumulation, fixed loop order.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw shape_error("matmul: incompatible shapes");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    Tensor c({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t t = 0; t < k; ++t)
                s += static_cast<double>(a.at(i, t)) *
                     static_cast<double>(b.at(t, j));
            c.at(i, j) = static_cast<float>(s);
        }
    return c;
}

// C(M,N) = A(M,K) * B(N,K)^T; used for attention scores.
inline Tensor matmul_nt(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1))
        throw shape_error("matmul_nt: incompatible shapes");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
    Tensor c({m, n});
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            double s = 0.0;
            for (std::size_t t = 0; t < k; ++t)
                s += static_cast<double>(a.at(i, t)) *
                     static_cast<double>(b.at(j, t));
            c.at(i, j) = static_cast<float>(s);
        }
    return c;
}

// A denoising state: a (C, H, W) latent plus its timestep index.
struct LatentTensor {
    Tensor data;
    int timestep = 0;

    LatentTensor() = default;
    LatentTensor(Tensor d, int t) : data(std::move(d)), timestep(t) {
        if (data.rank() != 3)
            throw shape_error("latent tensor must have shape (C, H, W)");
    }

    void validate(int schedule_T) const {
        if (timestep < 0 || timestep > schedule_T)
            throw validation_error("latent timestep out of schedule bounds");
        if (!data.all_finite())
            throw validation_error("latent tensor has non-finite entries");
    }
};

// ---------------------------------------------------------------------------
// "LTR1" tensor container: magic, dtype code, rank, u32 dims, row-major
// float32 payload. Everything little-endian.
// ---------------------------------------------------------------------------

namespace detail {

constexpr char kLtrMagic[4] = {'L', 'T', 'R', '1'};
constexpr std::uint8_t kDtypeF32 = 0x01;

inline void put_u32_le(std::string& out, std::uint32_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
    out.push_back(static_cast<char>((v >> 16) & 0xff));
    out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline std::uint32_t get_u32_le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) |
           (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) |
           (static_cast<std::uint32_t>(p[3]) << 24);
}

inline void put_f32_le(std::string& out, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32_le(out, bits);
}

inline float get_f32_le(const unsigned char* p) {
    std::uint32_t bits = get_u32_le(p);
    float f;
    std::memcpy(&f, &bits, 4);
    return f;
}

}  // namespace detail

inline std::string ltr1_bytes(const Tensor& t) {
    std::string out;
    out.reserve(6 + 4 * t.rank() + 4 * t.numel());
    out.append(detail::kLtrMagic, 4);
    out.push_back(static_cast<char>(detail::kDtypeF32));
    out.push_back(static_cast<char>(t.rank()));
    for (auto d : t.shape())
        detail::put_u32_le(out, static_cast<std::uint32_t>(d));
    for (float v : t.values()) detail::put_f32_le(out, v);
    return out;
}

inline Tensor ltr1_parse(std::span<const unsigned char> bytes) {
    if (bytes.size() < 6 ||
        std::memcmp(bytes.data(), detail::kLtrMagic, 4) != 0)
        throw format_error("not an LTR1 container (bad magic)");
    if (bytes[4] != detail::kDtypeF32)
        throw format_error("LTR1: unsupported dtype code " +
                           std::to_string(int(bytes[4])));
    const std::size_t rank = bytes[5];
    if (rank < 1 || rank > 4)
        throw format_error("LTR1: rank must be 1..4, got " +
                           std::to_string(rank));
    if (bytes.size() < 6 + 4 * rank)
        throw corruption_error("LTR1: truncated shape header");
    std::vector<std::size_t> shape(rank);
    std::size_t n = 1;
    for (std::size_t i = 0; i < rank; ++i) {
        shape[i] = detail::get_u32_le(bytes.data() + 6 + 4 * i);
        if (shape[i] == 0) throw corruption_error("LTR1: zero dimension");
        n *= shape[i];
    }
    const std::size_t payload_off = 6 + 4 * rank;
    if (bytes.size() != payload_off + 4 * n)
        throw corruption_error(
            "LTR1: payload size mismatch (header declares " +
            std::to_string(n) + " floats, payload has " +
            std::to_string((bytes.size() - payload_off) / 4) + ")");
    Tensor t(shape);
    for (std::size_t i = 0; i < n; ++i)
        t[i] = detail::get_f32_le(bytes.data() + payload_off + 4 * i);
    return t;
}

inline void save_tensor(const Tensor& t, const std::string& path) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw io_error("cannot open for writing: " + path);
    std::string bytes = ltr1_bytes(t);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw io_error("write failed: " + path);
}

inline void save_tensor(const LatentTensor& t, const std::string& path) {
    save_tensor(t.data, path);
}

inline Tensor load_tensor(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open for reading: " + path);
    std::string bytes((std::istreambuf_iterator<char>(f)),
                      std::istreambuf_iterator<char>());
    return ltr1_parse(std::span<const unsigned char>(
        reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size()));
}

// Fingerprint of a tensor's exact serialized form; stable across runs.
inline std::uint64_t tensor_fingerprint(const Tensor& t) {
    std::string bytes = ltr1_bytes(t);
    return fnv1a64(bytes.data(), bytes.size());
}

}  // namespace lr
