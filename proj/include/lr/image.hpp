#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <string>

#include "lr/errors.hpp"
#include "lr/tensor.hpp"

namespace lr {

// RGB image as a (3, H, W) float tensor, nominal range [0, 1]. Only 8-bit
// binary PPM (P6) for images and PGM (P5) for masks are supported; value 255
// maps linearly to 1.0.
struct Image {
    Tensor data;  // (3, H, W)

    Image() = default;
    explicit Image(std::size_t h, std::size_t w) : data({3, h, w}) {}
    explicit Image(Tensor t) : data(std::move(t)) {
        if (data.rank() != 3 || data.dim(0) != 3)
            throw shape_error("image tensor must have shape (3, H, W)");
    }

    std::size_t height() const { return data.dim(1); }
    std::size_t width() const { return data.dim(2); }
};

namespace detail {

inline int pnm_next_token(std::istream& in) {
    // Skips whitespace and '#' comments, returns a non-negative integer.
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        } else if (std::isspace(c)) {
            c = in.get();
        } else {
            break;
        }
    }
    if (c == EOF || !std::isdigit(c))
        throw format_error("PNM: malformed header");
    int v = 0;
    while (c != EOF && std::isdigit(c)) {
        v = v * 10 + (c - '0');
        c = in.get();
    }
    return v;
}

inline unsigned char to_byte(float v) {
    float s = std::clamp(v, 0.0f, 1.0f) * 255.0f;
    return static_cast<unsigned char>(std::lround(s));
}

inline std::string read_file_bytes(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open for reading: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

inline void write_file_bytes(const std::string& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw io_error("cannot open for writing: " + path);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw io_error("write failed: " + path);
}

}  // namespace detail

inline std::string ppm_bytes(const Image& img) {
    const std::size_t h = img.height(), w = img.width();
    std::ostringstream out;
    out << "P6\n" << w << " " << h << "\n255\n";
    std::string buf;
    buf.reserve(h * w * 3);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < 3; ++c)
                buf.push_back(
                    static_cast<char>(detail::to_byte(img.data.at(c, y, x))));
    out << buf;
    return out.str();
}

inline Image parse_ppm(const std::string& bytes) {
    std::istringstream f(bytes);
    char m0 = static_cast<char>(f.get()), m1 = static_cast<char>(f.get());
    if (m0 != 'P' || m1 != '6') throw format_error("not a P6 PPM");
    int w = detail::pnm_next_token(f);
    int h = detail::pnm_next_token(f);
    int maxval = detail::pnm_next_token(f);
    if (maxval != 255) throw format_error("PPM: only maxval 255 supported");
    if (w <= 0 || h <= 0) throw format_error("PPM: bad dimensions");
    std::string buf(static_cast<std::size_t>(w) * h * 3, '\0');
    f.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (f.gcount() != static_cast<std::streamsize>(buf.size()))
        throw corruption_error("PPM: truncated payload");
    Image img(static_cast<std::size_t>(h), static_cast<std::size_t>(w));
    std::size_t idx = 0;
    for (std::size_t y = 0; y < static_cast<std::size_t>(h); ++y)
        for (std::size_t x = 0; x < static_cast<std::size_t>(w); ++x)
            for (std::size_t c = 0; c < 3; ++c)
                img.data.at(c, y, x) =
                    static_cast<float>(static_cast<unsigned char>(buf[idx++])) /
                    255.0f;
    return img;
}

inline void save_ppm(const Image& img, const std::string& path) {
    detail::write_file_bytes(path, ppm_bytes(img));
}

inline Image load_ppm(const std::string& path) {
    try {
        return parse_ppm(detail::read_file_bytes(path));
    } catch (const format_error& e) {
        throw format_error(std::string(e.what()) + ": " + path);
    }
}

// Masks travel as 2-D tensors in [0,1]; binary masks use exactly {0, 255}
// on disk.
inline std::string pgm_bytes(const Tensor& mask) {
    if (mask.rank() != 2) throw shape_error("PGM: mask must be 2-D");
    const std::size_t h = mask.dim(0), w = mask.dim(1);
    std::ostringstream out;
    out << "P5\n" << w << " " << h << "\n255\n";
    std::string buf;
    buf.reserve(h * w);
    for (std::size_t i = 0; i < h * w; ++i)
        buf.push_back(static_cast<char>(detail::to_byte(mask[i])));
    out << buf;
    return out.str();
}

inline Tensor parse_pgm(const std::string& bytes) {
    std::istringstream f(bytes);
    char m0 = static_cast<char>(f.get()), m1 = static_cast<char>(f.get());
    if (m0 != 'P' || m1 != '5') throw format_error("not a P5 PGM");
    int w = detail::pnm_next_token(f);
    int h = detail::pnm_next_token(f);
    int maxval = detail::pnm_next_token(f);
    if (maxval != 255) throw format_error("PGM: only maxval 255 supported");
    if (w <= 0 || h <= 0) throw format_error("PGM: bad dimensions");
    std::string buf(static_cast<std::size_t>(w) * h, '\0');
    f.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (f.gcount() != static_cast<std::streamsize>(buf.size()))
        throw corruption_error("PGM: truncated payload");
    Tensor mask({static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
    for (std::size_t i = 0; i < buf.size(); ++i)
        mask[i] = static_cast<float>(static_cast<unsigned char>(buf[i])) / 255.0f;
    return mask;
}

inline void save_pgm(const Tensor& mask, const std::string& path) {
    detail::write_file_bytes(path, pgm_bytes(mask));
}

inline Tensor load_pgm(const std::string& path) {
    try {
        return parse_pgm(detail::read_file_bytes(path));
    } catch (const format_error& e) {
        throw format_error(std::string(e.what()) + ": " + path);
    }
}

// Integer Rec.601 luma, quantized to 0..255. Fixed arithmetic so stub
// thresholds are identical everywhere.
inline int luma8(float r, float g, float b) {
    auto q = [](float v) {
        return static_cast<long>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
    };
    return static_cast<int>((299 * q(r) + 587 * q(g) + 114 * q(b)) / 1000);
}

}  // namespace lr
