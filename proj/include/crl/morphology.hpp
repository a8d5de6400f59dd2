#pragma once

// Binary erosion/dilation and the mask-corruption protocol used to synthesise
// imperfect annotations.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "crl/metrics.hpp"
#include "crl/rng.hpp"
#include "crl/types.hpp"

namespace crl {

enum class StructuringElement {
    Square3,  // 3x3, 8-connectivity
    Cross3,   // 3x3 plus-shape, 4-connectivity
};

inline std::string to_string(StructuringElement e) { return e == StructuringElement::Square3 ? "square3" : "cross3"; }

inline StructuringElement parse_structuring_element(const std::string& s) {
    if (s == "square3") return StructuringElement::Square3;
    if (s == "cross3") return StructuringElement::Cross3;
    throw ConfigError("unknown structuring element '" + s + "'");
}

namespace detail {

// One pass; pixels outside the grid count as background for both operations.
inline BinaryMask morph_once(const BinaryMask& m, StructuringElement se, bool erode) {
    const int h = m.height(), w = m.width();
    BinaryMask out(h, w);
    auto get = [&](int y, int x) -> int { return (y < 0 || y >= h || x < 0 || x >= w) ? 0 : m(y, x); };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            int acc = erode ? 1 : 0;
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    if (se == StructuringElement::Cross3 && dy != 0 && dx != 0) continue;
                    const int v = get(y + dy, x + dx);
                    acc = erode ? (acc & v) : (acc | v);
                }
            out(y, x) = static_cast<std::uint8_t>(acc);
        }
    return out;
}

}  // namespace detail

inline BinaryMask erode(const BinaryMask& mask, int iterations, StructuringElement se = StructuringElement::Square3) {
    if (iterations < 0) throw ConfigError("iterations must be non-negative");
    BinaryMask m = mask;
    for (int i = 0; i < iterations; ++i) {
        if (m.count() == 0) break;
        m = detail::morph_once(m, se, true);
    }
    return m;
}

inline BinaryMask dilate(const BinaryMask& mask, int iterations, StructuringElement se = StructuringElement::Square3) {
    if (iterations < 0) throw ConfigError("iterations must be non-negative");
    BinaryMask m = mask;
    for (int i = 0; i < iterations; ++i) {
        if (m.count() == m.size()) break;
        m = detail::morph_once(m, se, false);
    }
    return m;
}

enum class NoiseOp { Erode, Dilate };
enum class NoiseMode { Erode, Dilate, RandomChoice };

inline std::string to_string(NoiseOp op) { return op == NoiseOp::Erode ? "erode" : "dilate"; }

inline std::string to_string(NoiseMode m) {
    switch (m) {
        case NoiseMode::Erode: return "erode";
        case NoiseMode::Dilate: return "dilate";
        default: return "random";
    }
}

inline NoiseMode parse_noise_mode(const std::string& s) {
    if (s == "erode") return NoiseMode::Erode;
    if (s == "dilate") return NoiseMode::Dilate;
    if (s == "random" || s == "random-choice") return NoiseMode::RandomChoice;
    throw ConfigError("unknown noise mode '" + s + "' (expected erode, dilate or random)");
}

inline NoiseOp parse_noise_op(const std::string& s) {
    if (s == "erode") return NoiseOp::Erode;
    if (s == "dilate") return NoiseOp::Dilate;
    throw ConfigError("unknown noise op '" + s + "'");
}

struct NoiseSpec {
    double ratio = 0.0;
    int iter_min = 5;
    int iter_max = 15;
    NoiseMode mode = NoiseMode::RandomChoice;
    StructuringElement element = StructuringElement::Square3;
    std::uint64_t seed = 0;

    void validate() const {
        if (!(ratio >= 0.0 && ratio <= 1.0)) throw ConfigError("noise ratio must lie in [0, 1]");
        if (iter_min < 1 || iter_min > iter_max) throw ConfigError("noise iterations require 1 <= iter_min <= iter_max");
    }

    bool operator==(const NoiseSpec&) const = default;
};

struct CorruptionEntry {
    std::size_t index = 0;
    std::string id;
    NoiseOp op = NoiseOp::Erode;
    int iterations = 0;
    double dice_vs_clean = 1.0;

    bool operator==(const CorruptionEntry&) const = default;
};

using CorruptionLog = std::vector<CorruptionEntry>;

// Round-half-up of ratio * n.
inline std::size_t corrupted_count(double ratio, std::size_t n) {
    return static_cast<std::size_t>(std::floor(ratio * static_cast<double>(n) + 0.5));
}

struct CorruptionResult {
    std::vector<BinaryMask> masks;
    CorruptionLog log;  // ordered by sample index
};

// Replaces exactly round(ratio * N) randomly chosen masks by an erosion or
// dilation with n ~ U[iter_min, iter_max]. `ids` labels log entries (defaults
// to the index).
inline CorruptionResult corrupt_dataset(const std::vector<BinaryMask>& masks, const NoiseSpec& spec,
                                        const std::vector<std::string>& ids = {}) {
    spec.validate();
    if (masks.empty()) throw ConfigError("corrupt_dataset requires at least one mask");
    if (!ids.empty() && ids.size() != masks.size()) throw ConfigError("ids and masks differ in length");

    CorruptionResult result{masks, {}};
    const std::size_t count = corrupted_count(spec.ratio, masks.size());
    if (count == 0) return result;

    Rng rng(spec.seed);
    std::vector<std::size_t> order(masks.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order.begin(), order.end());
    std::vector<std::size_t> chosen(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(count));
    std::sort(chosen.begin(), chosen.end());

    for (std::size_t idx : chosen) {
        CorruptionEntry e;
        e.index = idx;
        e.id = ids.empty() ? std::to_string(idx) : ids[idx];
        switch (spec.mode) {
            case NoiseMode::Erode: e.op = NoiseOp::Erode; break;
            case NoiseMode::Dilate: e.op = NoiseOp::Dilate; break;
            case NoiseMode::RandomChoice: e.op = rng.bernoulli(0.5) ? NoiseOp::Dilate : NoiseOp::Erode; break;
        }
        e.iterations = static_cast<int>(rng.uniform_int(spec.iter_min, spec.iter_max));
        result.masks[idx] = e.op == NoiseOp::Erode ? erode(masks[idx], e.iterations, spec.element)
                                                   : dilate(masks[idx], e.iterations, spec.element);
        e.dice_vs_clean = dice(result.masks[idx], masks[idx]);
        result.log.push_back(std::move(e));
    }
    return result;
}

}  // namespace crl
