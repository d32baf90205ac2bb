#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "fmk/error.hpp"

namespace fmk {

/// ||approx - truth||_2 / ||truth||_2 over equally sampled traces.
inline double relative_l2_error(std::span<const double> approx, std::span<const double> truth) {
    if (approx.size() != truth.size() || truth.empty()) {
        throw InvalidArgument("relative_l2_error: traces must be non-empty and equally long");
    }
    double num = 0.0;
    double den = 0.0;
    for (std::size_t k = 0; k < truth.size(); ++k) {
        const double d = approx[k] - truth[k];
        num += d * d;
        den += truth[k] * truth[k];
    }
    if (den == 0.0) {
        return num == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    }
    return std::sqrt(num / den);
}

inline double rms_difference(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size() || a.empty()) {
        throw InvalidArgument("rms_difference: traces must be non-empty and equally long");
    }
    double acc = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        acc += (a[k] - b[k]) * (a[k] - b[k]);
    }
    return std::sqrt(acc / static_cast<double>(a.size()));
}

struct SpikeMatch {
    std::vector<std::pair<double, double>> pairs;  // (reference, candidate)
    double max_misalignment = 0.0;
};

/// Pairs spikes that are each other's nearest neighbour; no tolerance is applied.
inline SpikeMatch match_spikes(const std::vector<double>& reference, const std::vector<double>& candidate) {
    auto nearest = [](const std::vector<double>& pool, double t) {
        std::size_t best = 0;
        for (std::size_t i = 1; i < pool.size(); ++i) {
            if (std::abs(pool[i] - t) < std::abs(pool[best] - t)) {
                best = i;
            }
        }
        return best;
    };
    SpikeMatch out;
    if (reference.empty() || candidate.empty()) {
        return out;
    }
    for (std::size_t i = 0; i < reference.size(); ++i) {
        const std::size_t j = nearest(candidate, reference[i]);
        if (nearest(reference, candidate[j]) == i) {
            out.pairs.emplace_back(reference[i], candidate[j]);
            out.max_misalignment = std::max(out.max_misalignment, std::abs(reference[i] - candidate[j]));
        }
    }
    return out;
}

}  // namespace fmk
