#pragma once

#include <algorithm>
#include <cmath>

#include "crl/types.hpp"

namespace crl {

// Clamp applied to probabilities inside every logarithm.
inline constexpr double kProbEpsilon = 1e-7;

inline double clamp_prob(double p) { return std::clamp(p, kProbEpsilon, 1.0 - kProbEpsilon); }

// Mean over pixels of -log p(label).
inline double cross_entropy(const SoftLabel& pred, const BinaryMask& label) {
    require_same_shape(pred, label, "cross_entropy");
    if (pred.classes() != 2) throw ShapeError("cross_entropy against a binary mask needs 2 classes");
    double s = 0.0;
    for (std::size_t p = 0; p < label.size(); ++p) s -= std::log(clamp_prob(pred.at(p, label[p])));
    return s / static_cast<double>(label.size());
}

// Mean over pixels of -sum_j target_j log p_j.
inline double soft_cross_entropy(const SoftLabel& pred, const SoftLabel& target) {
    if (!pred.same_shape(target)) throw ShapeError("soft_cross_entropy: shape mismatch");
    double s = 0.0;
    for (std::size_t p = 0; p < pred.pixels(); ++p)
        for (int c = 0; c < pred.classes(); ++c) {
            const double t = target.at(p, c);
            if (t != 0.0) s -= t * std::log(clamp_prob(pred.at(p, c)));
        }
    return s / static_cast<double>(pred.pixels());
}

}  // namespace crl
