#pragma once

// Committee sample selection: for each target network its two peers first
// discard the samples they disagree on most (largest loss gap), then keep the
// smallest-loss samples of what remains.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "crl/losses.hpp"
#include "crl/model.hpp"
#include "crl/types.hpp"

namespace crl {

// Per-sample mean cross-entropy of the predicted map against the training mask.
inline double per_sample_loss(const SoftLabel& probs, const BinaryMask& label) { return cross_entropy(probs, label); }

// Loss disagreement of two peer networks on one sample.
inline double uncertainty(double loss_b, double loss_c) { return std::abs(loss_b - loss_c); }

struct SampleLossRecord {
    std::size_t index = 0;
    std::array<double, 3> losses{};  // indexed by Member

    double loss(Member m) const { return losses[static_cast<std::size_t>(m)]; }
};

enum class SelectionCriterion { UncertaintyThenLoss, LossOnly };

inline std::string to_string(SelectionCriterion c) {
    return c == SelectionCriterion::LossOnly ? "loss_only" : "uncertainty_then_loss";
}

inline SelectionCriterion parse_selection_criterion(const std::string& s) {
    if (s == "uncertainty_then_loss") return SelectionCriterion::UncertaintyThenLoss;
    if (s == "loss_only") return SelectionCriterion::LossOnly;
    throw ConfigError("unknown selection criterion '" + s + "'");
}

struct SelectionConfig {
    double keep_fraction = 0.5;               // R
    double uncertainty_keep_fraction = 0.75;  // tau
    SelectionCriterion criterion = SelectionCriterion::UncertaintyThenLoss;

    void validate() const {
        if (!(keep_fraction > 0.0 && keep_fraction <= uncertainty_keep_fraction && uncertainty_keep_fraction <= 1.0))
            throw ConfigError("selection fractions must satisfy 0 < keep_fraction <= uncertainty_keep_fraction <= 1");
    }

    bool operator==(const SelectionConfig&) const = default;
};

// floor(fraction * n), robust to representation error in the product.
inline std::size_t fraction_count(double fraction, std::size_t n) {
    return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 1e-9));
}

struct SelectionDetail {
    std::size_t index = 0;
    double mu = 0.0;     // peer loss gap
    double score = 0.0;  // mean peer loss
    bool in_pool = false;
    bool selected = false;
};

// Full per-record breakdown of select_for, in record order.
inline std::vector<SelectionDetail> selection_details(Member target, const std::vector<SampleLossRecord>& records,
                                                      const SelectionConfig& cfg) {
    cfg.validate();
    if (records.empty()) throw ConfigError("selection over an empty batch");
    const std::size_t b = records.size();
    const std::size_t keep = fraction_count(cfg.keep_fraction, b);
    if (keep == 0)
        throw ConfigError("empty selection: floor(keep_fraction * batch) = 0 for a batch of " + std::to_string(b));
    const auto peers = peers_of(target);

    std::vector<SelectionDetail> d(b);
    for (std::size_t i = 0; i < b; ++i) {
        const double lb = records[i].loss(peers[0]), lc = records[i].loss(peers[1]);
        d[i] = {records[i].index, uncertainty(lb, lc), 0.5 * (lb + lc), false, false};
    }

    std::vector<std::size_t> order(b);
    for (std::size_t i = 0; i < b; ++i) order[i] = i;
    auto by = [&](auto key) {
        return [&, key](std::size_t x, std::size_t y) {
            const double kx = key(d[x]), ky = key(d[y]);
            if (kx != ky) return kx < ky;
            return d[x].index < d[y].index;
        };
    };

    std::size_t pool_size = b;
    if (cfg.criterion == SelectionCriterion::UncertaintyThenLoss) {
        pool_size = std::max(keep, fraction_count(cfg.uncertainty_keep_fraction, b));
        std::sort(order.begin(), order.end(), by([](const SelectionDetail& s) { return s.mu; }));
    }
    order.resize(pool_size);
    for (std::size_t i : order) d[i].in_pool = true;
    std::sort(order.begin(), order.end(), by([](const SelectionDetail& s) { return s.score; }));
    for (std::size_t k = 0; k < keep; ++k) d[order[k]].selected = true;
    return d;
}

// Sample indices (ascending) used to update `target`; reads only the peers' losses.
inline std::vector<std::size_t> select_for(Member target, const std::vector<SampleLossRecord>& records,
                                           const SelectionConfig& cfg) {
    std::vector<std::size_t> out;
    for (const auto& d : selection_details(target, records, cfg))
        if (d.selected) out.push_back(d.index);
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace crl
