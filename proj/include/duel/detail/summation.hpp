#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace duel::detail {

// Pairwise (cascade) summation. Error grows as O(log n) instead of O(n).
inline double pairwise_sum(std::span<const double> values) {
    constexpr std::size_t kBlock = 16;
    if (values.size() <= kBlock) {
        double s = 0.0;
        for (double v : values) s += v;
        return s;
    }
    const std::size_t half = values.size() / 2;
    return pairwise_sum(values.first(half)) + pairwise_sum(values.subspan(half));
}

inline double pairwise_sum(const std::vector<double>& values) {
    return pairwise_sum(std::span<const double>(values));
}

inline double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

}  // namespace duel::detail
