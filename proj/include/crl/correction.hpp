#pragma once

// Label correction from peer predictions (averaged, then temperature
// sharpened) and the joint loss mixing noisy and corrected supervision.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "crl/losses.hpp"
#include "crl/model.hpp"
#include "crl/types.hpp"

namespace crl {

enum class JoScope { UnselectedOnly, AllSamples };

inline std::string to_string(JoScope s) { return s == JoScope::AllSamples ? "all_samples" : "unselected_only"; }

inline JoScope parse_jo_scope(const std::string& s) {
    if (s == "unselected_only") return JoScope::UnselectedOnly;
    if (s == "all_samples") return JoScope::AllSamples;
    throw ConfigError("unknown jo scope '" + s + "'");
}

struct CorrectionConfig {
    double temperature = 0.5;
    double alpha = 0.5;  // weight of the noisy-label term
    JoScope jo_scope = JoScope::UnselectedOnly;
    int jo_start_epoch = 20;  // k
    int peer_count = 2;       // 2: the target's peers; 3: all members
    bool hard_targets = false;  // replace the corrected label by its argmax one-hot

    void validate() const {
        if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
        if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
        if (jo_start_epoch < 0) throw ConfigError("jo start epoch k must be >= 0");
        if (peer_count != 2 && peer_count != 3) throw ConfigError("peer_count must be 2 or 3");
    }

    bool operator==(const CorrectionConfig&) const = default;
};

inline SoftLabel average_peer_prediction(const SoftLabel& p_b, const SoftLabel& p_c) {
    if (!p_b.same_shape(p_c)) throw ShapeError("average_peer_prediction: shape mismatch");
    const SoftLabel* maps[] = {&p_b, &p_c};
    return mean_soft_labels(maps);
}

// Per pixel q_i^(1/T) / sum_j q_j^(1/T), evaluated in the log domain.
inline SoftLabel sharpen(const SoftLabel& q, double temperature) {
    if (!(temperature > 0.0)) throw ConfigError("sharpen: temperature must be > 0");
    SoftLabel out = q;
    if (temperature == 1.0) return out;
    const double inv_t = 1.0 / temperature;
    std::vector<double> logs(static_cast<std::size_t>(q.classes()));
    for (std::size_t p = 0; p < q.pixels(); ++p) {
        auto src = q.pixel(p);
        double top = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < src.size(); ++c) {
            if (src[c] < 0.0) throw ShapeError("sharpen: negative probability");
            logs[c] = src[c] > 0.0 ? std::log(src[c]) * inv_t : -std::numeric_limits<double>::infinity();
            top = std::max(top, logs[c]);
        }
        if (!std::isfinite(top)) throw ShapeError("sharpen: pixel with an all-zero distribution");
        auto dst = out.pixel(p);
        double sum = 0.0;
        for (std::size_t c = 0; c < src.size(); ++c) sum += dst[c] = std::exp(logs[c] - top);
        for (double& v : dst) v /= sum;
    }
    return out;
}

inline SoftLabel one_hot_argmax(const SoftLabel& q) {
    SoftLabel out(q.height(), q.width(), q.classes());
    for (std::size_t p = 0; p < q.pixels(); ++p) {
        auto px = q.pixel(p);
        const auto best = std::max_element(px.begin(), px.end()) - px.begin();
        out.at(p, static_cast<int>(best)) = 1.0;
    }
    return out;
}

// Corrected label for `target` from per-member maps of one sample (indexed by Member).
inline SoftLabel corrected_label_from(const std::array<const SoftLabel*, 3>& member_maps, Member target,
                                      const CorrectionConfig& cfg) {
    SoftLabel q;
    if (cfg.peer_count == 3) {
        q = mean_soft_labels(member_maps);
    } else {
        const auto peers = peers_of(target);
        q = average_peer_prediction(*member_maps[static_cast<std::size_t>(peers[0])],
                                    *member_maps[static_cast<std::size_t>(peers[1])]);
    }
    SoftLabel sharp = sharpen(q, cfg.temperature);
    return cfg.hard_targets ? one_hot_argmax(sharp) : sharp;
}

// Corrected labels for a batch, evaluating the peers of `target` afresh.
inline std::vector<SoftLabel> corrected_label(TriNet& trinet, Member target, std::span<const Image> images,
                                              const CorrectionConfig& cfg) {
    cfg.validate();
    std::array<std::vector<SoftLabel>, 3> maps;
    for (Member m : kMembers)
        if (m != target || cfg.peer_count == 3) maps[static_cast<std::size_t>(m)] = trinet[m].predict_proba(images);
    std::vector<SoftLabel> out;
    for (std::size_t i = 0; i < images.size(); ++i) {
        std::array<const SoftLabel*, 3> ptrs{};
        for (Member m : kMembers) {
            const auto& v = maps[static_cast<std::size_t>(m)];
            ptrs[static_cast<std::size_t>(m)] = v.empty() ? nullptr : &v[i];
        }
        out.push_back(corrected_label_from(ptrs, target, cfg));
    }
    return out;
}

// alpha * CE(pred, noisy) + (1 - alpha) * CE(pred, corrected).
inline double joint_loss(const SoftLabel& pred, const BinaryMask& noisy, const SoftLabel& corrected, double alpha) {
    if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
    require_same_shape(pred, noisy, "joint_loss");
    if (!pred.same_shape(corrected)) throw ShapeError("joint_loss: corrected label shape mismatch");
    return alpha * cross_entropy(pred, noisy) + (1.0 - alpha) * soft_cross_entropy(pred, corrected);
}

}  // namespace crl
