#pragma once

#include <cstddef>
#include <vector>

#include "crl/types.hpp"

namespace crl {

// 2|a & b| / (|a| + |b|); two empty masks agree perfectly (1.0).
inline double dice(const BinaryMask& a, const BinaryMask& b) {
    require_same_shape(a, b, "dice");
    std::size_t inter = 0, sa = 0, sb = 0;
    const auto av = a.values();
    const auto bv = b.values();
    for (std::size_t i = 0; i < av.size(); ++i) {
        inter += av[i] & bv[i];
        sa += av[i];
        sb += bv[i];
    }
    if (sa + sb == 0) return 1.0;
    return 2.0 * static_cast<double>(inter) / static_cast<double>(sa + sb);
}

inline double mean_dice(const std::vector<BinaryMask>& pred, const std::vector<BinaryMask>& truth) {
    if (pred.size() != truth.size()) throw ShapeError("mean_dice: sample counts differ");
    if (pred.empty()) throw ConfigError("mean_dice: empty sample set");
    double s = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) s += dice(pred[i], truth[i]);
    return s / static_cast<double>(pred.size());
}

struct LabelAccuracySummary {
    double corrected_dice = 0.0;  // mean Dice(argmax corrected, clean)
    double noisy_dice = 0.0;      // mean Dice(noisy, clean)
    std::vector<double> deltas;   // per sample: corrected minus noisy
};

// Quality of end-of-training corrected labels relative to the training masks they replace.
inline LabelAccuracySummary label_accuracy_report(const std::vector<SoftLabel>& corrected,
                                                  const std::vector<BinaryMask>& noisy,
                                                  const std::vector<BinaryMask>& clean) {
    if (corrected.size() != noisy.size() || noisy.size() != clean.size())
        throw ShapeError("label_accuracy_report: misaligned sample sets");
    if (clean.empty()) throw ConfigError("label_accuracy_report: empty sample set");
    LabelAccuracySummary s;
    s.deltas.reserve(clean.size());
    for (std::size_t i = 0; i < clean.size(); ++i) {
        const double dc = dice(corrected[i].argmax(), clean[i]);
        const double dn = dice(noisy[i], clean[i]);
        s.corrected_dice += dc;
        s.noisy_dice += dn;
        s.deltas.push_back(dc - dn);
    }
    s.corrected_dice /= static_cast<double>(clean.size());
    s.noisy_dice /= static_cast<double>(clean.size());
    return s;
}

}  // namespace crl
