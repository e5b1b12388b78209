#pragma once

#include <cmath>
#include <cstddef>
#include <span>

namespace lr {

// exp() built from IEEE-exact primitives (+, *, floor, ldexp) so results are
// bit-identical across libm implementations. Softmax, the classifier stub,
// and the density map all route through this instead of std::exp.
inline double det_exp(double x) {
    if (x != x) return x;
    if (x > 709.0) return 1.7976931348623157e308 * 2.0;  // inf
    if (x < -745.0) return 0.0;

    constexpr double inv_ln2 = 1.4426950408889634074;
    constexpr double ln2_hi = 6.93147180369123816490e-01;
    constexpr double ln2_lo = 1.90821492927058770002e-10;

    double k = std::floor(x * inv_ln2 + 0.5);
    double r = (x - k * ln2_hi) - k * ln2_lo;

    // Taylor series on |r| <= ln2/2; degree 13 reaches double precision.
    constexpr double c[] = {
        1.0 / 6227020800.0,  // 1/13!
        1.0 / 479001600.0, 1.0 / 39916800.0, 1.0 / 3628800.0,
        1.0 / 362880.0,    1.0 / 40320.0,    1.0 / 5040.0,
        1.0 / 720.0,       1.0 / 120.0,      1.0 / 24.0,
        1.0 / 6.0,         1.0 / 2.0,        1.0,
        1.0,
    };
    double p = c[0];
    for (int i = 1; i < 14; ++i) p = p * r + c[i];
    return std::ldexp(p, static_cast<int>(k));
}

// Pairwise (cascade) summation: bounds rounding drift on long reductions and
// keeps evaluation order independent of chunking.
inline double pairwise_sum(std::span<const double> v) {
    if (v.size() <= 8) {
        double s = 0.0;
        for (double x : v) s += x;
        return s;
    }
    std::size_t mid = v.size() / 2;
    return pairwise_sum(v.first(mid)) + pairwise_sum(v.subspan(mid));
}

inline double pairwise_sum(std::span<const float> v) {
    if (v.size() <= 8) {
        double s = 0.0;
        for (float x : v) s += x;
        return s;
    }
    std::size_t mid = v.size() / 2;
    return pairwise_sum(v.first(mid)) + pairwise_sum(v.subspan(mid));
}

}  // namespace lr
