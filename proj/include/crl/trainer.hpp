#pragma once

// Two-stage cascade: committee sample selection, then (from epoch k) joint
// optimisation against the noisy mask and the sharpened peer-consensus label.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <functional>
#include <iterator>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "crl/correction.hpp"
#include "crl/data.hpp"
#include "crl/metrics.hpp"
#include "crl/model.hpp"
#include "crl/selection.hpp"

namespace crl {

enum class Strategy { Vanilla, CoteachSmallLoss, SS, SSJO };

inline std::string to_string(Strategy s) {
    switch (s) {
        case Strategy::Vanilla: return "vanilla";
        case Strategy::CoteachSmallLoss: return "coteach_small_loss";
        case Strategy::SS: return "ss";
        default: return "ss_jo";
    }
}

inline Strategy parse_strategy(const std::string& s) {
    if (s == "vanilla") return Strategy::Vanilla;
    if (s == "coteach_small_loss" || s == "coteach") return Strategy::CoteachSmallLoss;
    if (s == "ss") return Strategy::SS;
    if (s == "ss_jo") return Strategy::SSJO;
    throw ConfigError("unknown strategy '" + s + "' (expected vanilla, coteach_small_loss, ss or ss_jo)");
}

struct TrainConfig {
    int epochs = 100;
    int batch_size = 32;
    double learning_rate = 0.001;
    double momentum = 0.9;
    double weight_decay = 0.001;
    double lr_decay = 0.97;  // gamma: lr(e) = lr0 * gamma^e
    Strategy strategy = Strategy::SSJO;
    SelectionConfig selection;
    CorrectionConfig correction;  // carries k (jo_start_epoch)
    ModelConfig model;
    bool augment = true;
    AugmentConfig augmentation;
    int eval_every = 1;  // 0: final epoch only
    std::uint64_t seed = 0;

    // Effective selection rule (co-teaching baseline ranks by loss only).
    SelectionConfig effective_selection() const {
        SelectionConfig s = selection;
        if (strategy == Strategy::CoteachSmallLoss) s.criterion = SelectionCriterion::LossOnly;
        return s;
    }

    void validate() const {
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be > 0");
        if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
        if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be >= 0");
        if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("lr decay must lie in (0, 1]");
        if (eval_every < 0) throw ConfigError("eval_every must be >= 0");
        selection.validate();
        correction.validate();
        model.validate();
        if (strategy == Strategy::SSJO && correction.jo_start_epoch > epochs)
            throw ConfigError("jo start epoch k must not exceed epochs");
        if (strategy != Strategy::Vanilla && fraction_count(selection.keep_fraction, batch_size) < 1)
            throw ConfigError("batch_size too small: floor(keep_fraction * batch_size) must be >= 1");
    }

    bool operator==(const TrainConfig&) const = default;
};

struct EpochMetrics {
    int epoch = 0;
    double learning_rate = 0.0;
    std::array<double, 3> train_loss{};  // mean optimised loss per member (vanilla: A only)
    bool jo_active = false;
    int corrections = 0;                 // corrected-label evaluations (batch x target)
    double selection_clean_fraction = std::numeric_limits<double>::quiet_NaN();
    double selection_overlap = std::numeric_limits<double>::quiet_NaN();  // mean pairwise Jaccard
    std::optional<double> test_dice;
    std::optional<double> corrected_label_dice;
    std::optional<double> noisy_label_dice;
    double seconds = 0.0;
};

struct TrainState {
    int epoch = 0;  // completed epochs
    TriNet trinet;
    std::vector<EpochMetrics> history;
};

struct TrainResult {
    std::vector<EpochMetrics> history;
    double test_dice = 0.0;
    LabelAccuracySummary label_accuracy;
    double runtime_seconds = 0.0;
};

inline double learning_rate_at(const TrainConfig& cfg, int epoch) {
    return cfg.learning_rate * std::pow(cfg.lr_decay, epoch);
}

namespace detail {

// dL/dlogits for per-sample weighted mean cross-entropy against soft targets:
// w_i * (p - t) / pixels per sample.
inline nn::Matrix soft_target_gradient(const nn::Matrix& probs, const nn::Geometry& geo,
                                       const std::vector<SoftLabel>& targets, const std::vector<double>& weights) {
    nn::Matrix g(probs.rows(), probs.cols());
    const std::size_t per = static_cast<std::size_t>(geo.height) * geo.width;
    const auto classes = static_cast<std::size_t>(probs.rows());
    for (int n = 0; n < geo.batch; ++n) {
        const double w = weights[static_cast<std::size_t>(n)] / static_cast<double>(per);
        const auto t = targets[static_cast<std::size_t>(n)].values();
        const std::size_t off = static_cast<std::size_t>(n) * per * classes;
        for (std::size_t i = 0; i < per * classes; ++i)
            g.data()[off + i] = static_cast<float>(w * (probs.data()[off + i] - t[i]));
    }
    return g;
}

inline double jaccard(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
    std::vector<std::size_t> inter;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(inter));
    const std::size_t uni = a.size() + b.size() - inter.size();
    return uni == 0 ? 1.0 : static_cast<double>(inter.size()) / static_cast<double>(uni);
}

}  // namespace detail

class Trainer {
public:
    using EpochCallback = std::function<void(const Trainer&, const EpochMetrics&)>;

    Trainer(TrainConfig cfg, std::vector<Sample> train, std::vector<Sample> test)
        : Trainer(std::move(cfg), std::make_shared<const std::vector<Sample>>(std::move(train)),
                  std::make_shared<const std::vector<Sample>>(std::move(test))) {}

    Trainer(TrainConfig cfg, std::shared_ptr<const std::vector<Sample>> train,
            std::shared_ptr<const std::vector<Sample>> test)
        : cfg_(std::move(cfg)), train_(std::move(train)), test_(std::move(test)) {
        cfg_.validate();
        if (train_->empty()) throw ConfigError("empty training set");
        for (const auto& s : *train_) {
            s.validate();
            cfg_.model.check_input(s.height(), s.width());
        }
        for (const auto& s : *test_) s.validate();
        state_.trinet = TriNet(cfg_.model, cfg_.seed, static_cast<float>(cfg_.momentum),
                               static_cast<float>(cfg_.weight_decay));
    }

    const TrainConfig& config() const { return cfg_; }
    const TrainState& state() const { return state_; }
    TrainState& state() { return state_; }
    const std::vector<Sample>& train_set() const { return *train_; }
    const std::vector<Sample>& test_set() const { return *test_; }

    // Replace the configuration mid-run (e.g. to branch a run at epoch k). The
    // model shape and seed must not change.
    void reconfigure(TrainConfig cfg) {
        cfg.validate();
        if (!(cfg.model == cfg_.model)) throw ConfigError("cannot change the model configuration of a running trainer");
        cfg_ = std::move(cfg);
    }

    void set_epoch_callback(EpochCallback cb) { on_epoch_ = std::move(cb); }
    void set_selection_log(std::ostream* out) { selection_log_ = out; }

    int active_members() const { return cfg_.strategy == Strategy::Vanilla ? 1 : 3; }
    bool done() const { return state_.epoch >= cfg_.epochs; }
    bool jo_active(int epoch) const {
        return cfg_.strategy == Strategy::SSJO && epoch >= cfg_.correction.jo_start_epoch;
    }

    // Runs one epoch; returns its metrics (also appended to the history).
    const EpochMetrics& run_epoch() {
        const auto t0 = std::chrono::steady_clock::now();
        const int epoch = state_.epoch;
        EpochMetrics m;
        m.epoch = epoch;
        m.learning_rate = learning_rate_at(cfg_, epoch);
        m.jo_active = jo_active(epoch);
        EpochAccumulator acc;
        for (const auto& batch : epoch_batches(epoch)) {
            std::vector<Sample> samples = prepare_batch(batch, epoch);
            if (cfg_.strategy == Strategy::Vanilla)
                vanilla_step(samples, m, acc);
            else
                committee_step(samples, epoch, acc, m);
            ++acc.batch_index;
        }
        for (std::size_t i = 0; i < 3; ++i)
            m.train_loss[i] = acc.loss_count[i] ? acc.loss_sum[i] / static_cast<double>(acc.loss_count[i]) : 0.0;
        if (acc.selected_total)
            m.selection_clean_fraction = static_cast<double>(acc.selected_clean) / static_cast<double>(acc.selected_total);
        if (acc.overlap_count) m.selection_overlap = acc.overlap_sum / static_cast<double>(acc.overlap_count);
        ++state_.epoch;
        const bool last = state_.epoch == cfg_.epochs;
        if (!test_->empty() && (last || (cfg_.eval_every > 0 && state_.epoch % cfg_.eval_every == 0)))
            m.test_dice = evaluate();
        if (last) {
            const LabelAccuracySummary la = label_accuracy();
            m.corrected_label_dice = la.corrected_dice;
            m.noisy_label_dice = la.noisy_dice;
        }
        m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        state_.history.push_back(m);
        if (on_epoch_) on_epoch_(*this, state_.history.back());
        return state_.history.back();
    }

    TrainResult run() {
        const auto t0 = std::chrono::steady_clock::now();
        while (!done()) run_epoch();
        TrainResult r;
        r.history = state_.history;
        r.test_dice = test_->empty() ? 0.0 : evaluate();
        r.label_accuracy = label_accuracy();
        r.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        return r;
    }

    // Ensemble probability maps for samples (non-augmented).
    std::vector<SoftLabel> predict(const std::vector<Sample>& samples) {
        std::vector<SoftLabel> out;
        const std::size_t bs = static_cast<std::size_t>(std::max(cfg_.batch_size, 1));
        for (std::size_t start = 0; start < samples.size(); start += bs) {
            std::vector<Image> imgs;
            for (std::size_t i = start; i < std::min(samples.size(), start + bs); ++i) imgs.push_back(samples[i].image);
            auto p = ensemble_predict(state_.trinet, imgs, active_members());
            for (auto& s : p) out.push_back(std::move(s));
        }
        return out;
    }

    // Mean Dice of argmax(ensemble) against the clean test masks.
    double evaluate() { return evaluate_on(*test_); }

    double evaluate_on(const std::vector<Sample>& samples) {
        if (samples.empty()) throw ConfigError("evaluate: empty test set");
        const auto probs = predict(samples);
        double s = 0.0;
        for (std::size_t i = 0; i < samples.size(); ++i) s += dice(probs[i].argmax(), samples[i].clean_mask);
        return s / static_cast<double>(samples.size());
    }

    // Corrected labels of the training set under the current committee: the
    // sharpened member average (the mean of the three targets' peer averages).
    std::vector<SoftLabel> final_corrected_labels() {
        auto probs = predict(*train_);
        for (auto& p : probs) p = sharpen(p, cfg_.correction.temperature);
        return probs;
    }

    LabelAccuracySummary label_accuracy() {
        std::vector<BinaryMask> noisy, clean;
        for (const auto& s : *train_) {
            noisy.push_back(s.train_mask);
            clean.push_back(s.clean_mask);
        }
        return label_accuracy_report(final_corrected_labels(), noisy, clean);
    }

    // Shuffled batches of training indices; a trailing partial batch is kept only
    // if it still yields a non-empty selection.
    std::vector<std::vector<std::size_t>> epoch_batches(int epoch) const {
        std::vector<std::size_t> order(train_->size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng rng(derive_seed(cfg_.seed, hash_string("shuffle"), static_cast<std::uint64_t>(epoch)));
        rng.shuffle(order.begin(), order.end());
        std::vector<std::vector<std::size_t>> batches;
        const auto bs = static_cast<std::size_t>(cfg_.batch_size);
        for (std::size_t start = 0; start < order.size(); start += bs) {
            std::vector<std::size_t> b(order.begin() + static_cast<std::ptrdiff_t>(start),
                                       order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + bs)));
            if (cfg_.strategy != Strategy::Vanilla && fraction_count(cfg_.selection.keep_fraction, b.size()) == 0)
                continue;
            batches.push_back(std::move(b));
        }
        return batches;
    }

private:
    struct EpochAccumulator {
        std::array<double, 3> loss_sum{};
        std::array<std::size_t, 3> loss_count{};
        std::size_t selected_total = 0;
        std::size_t selected_clean = 0;
        double overlap_sum = 0.0;
        std::size_t overlap_count = 0;
        int batch_index = 0;
    };

    std::vector<Sample> prepare_batch(const std::vector<std::size_t>& idx, int epoch) const {
        std::vector<Sample> out;
        out.reserve(idx.size());
        for (std::size_t i : idx) {
            const Sample& s = (*train_)[i];
            if (cfg_.augment) {
                Rng rng(derive_seed(cfg_.seed, hash_string("augment"), static_cast<std::uint64_t>(epoch), i));
                out.push_back(augment(s, rng, cfg_.augmentation));
            } else {
                out.push_back(s);
            }
            out.back().provenance = s.provenance;
        }
        return out;
    }

    static std::vector<Image> images_of(const std::vector<Sample>& samples, const std::vector<std::size_t>* subset) {
        std::vector<Image> imgs;
        if (subset) {
            for (std::size_t i : *subset) imgs.push_back(samples[i].image);
        } else {
            for (const auto& s : samples) imgs.push_back(s.image);
        }
        return imgs;
    }

    void vanilla_step(const std::vector<Sample>& samples, EpochMetrics&, EpochAccumulator& acc) {
        Network& net = state_.trinet[Member::A];
        nn::Geometry geo;
        const auto imgs = images_of(samples, nullptr);
        nn::Matrix probs = net.forward(imgs, geo, true);
        const auto maps = to_soft_labels(probs, geo);
        std::vector<SoftLabel> targets;
        for (std::size_t i = 0; i < samples.size(); ++i) {
            acc.loss_sum[0] += cross_entropy(maps[i], samples[i].train_mask);
            ++acc.loss_count[0];
            targets.push_back(SoftLabel::one_hot(samples[i].train_mask));
        }
        const std::vector<double> w(samples.size(), 1.0 / static_cast<double>(samples.size()));
        net.backward(detail::soft_target_gradient(probs, geo, targets, w));
        net.step(static_cast<float>(learning_rate_at(cfg_, state_.epoch)));
    }

    void committee_step(const std::vector<Sample>& samples, int epoch, EpochAccumulator& acc, EpochMetrics& m) {
        const bool jo = jo_active(epoch);
        const auto imgs = images_of(samples, nullptr);
        const float lr = static_cast<float>(learning_rate_at(cfg_, epoch));

        // Frozen predictions of all three members before any update. In the joint
        // stage every sample is trained on, so the forward caches are kept.
        std::array<nn::Matrix, 3> probs;
        std::array<nn::Geometry, 3> geos;
        std::array<std::vector<SoftLabel>, 3> maps;
        for (Member mem : kMembers) {
            const auto k = static_cast<std::size_t>(mem);
            probs[k] = state_.trinet[mem].forward(imgs, geos[k], jo);
            maps[k] = to_soft_labels(probs[k], geos[k]);
        }
        std::vector<SampleLossRecord> records(samples.size());
        for (std::size_t i = 0; i < samples.size(); ++i) {
            records[i].index = i;
            for (Member mem : kMembers)
                records[i].losses[static_cast<std::size_t>(mem)] =
                    per_sample_loss(maps[static_cast<std::size_t>(mem)][i], samples[i].train_mask);
        }

        const SelectionConfig sel_cfg = cfg_.effective_selection();
        std::array<std::vector<std::size_t>, 3> selected;
        for (Member target : kMembers) {
            const auto details = selection_details(target, records, sel_cfg);
            auto& sel = selected[static_cast<std::size_t>(target)];
            for (const auto& d : details)
                if (d.selected) sel.push_back(d.index);
            std::sort(sel.begin(), sel.end());
            if (selection_log_) log_selection(epoch, acc.batch_index, target, samples, details);
            for (std::size_t i : sel) {
                ++acc.selected_total;
                if (!samples[i].provenance.corrupted) ++acc.selected_clean;
            }
        }
        for (int a = 0; a < 3; ++a)
            for (int b = a + 1; b < 3; ++b) {
                acc.overlap_sum += detail::jaccard(selected[a], selected[b]);
                ++acc.overlap_count;
            }

        for (Member target : kMembers) {
            const auto t = static_cast<std::size_t>(target);
            Network& net = state_.trinet[target];
            const auto& sel = selected[t];
            if (!jo) {
                nn::Geometry geo;
                const auto sub = images_of(samples, &sel);
                nn::Matrix p = net.forward(sub, geo, true);
                const auto sub_maps = to_soft_labels(p, geo);
                std::vector<SoftLabel> targets;
                for (std::size_t j = 0; j < sel.size(); ++j) {
                    acc.loss_sum[t] += cross_entropy(sub_maps[j], samples[sel[j]].train_mask);
                    ++acc.loss_count[t];
                    targets.push_back(SoftLabel::one_hot(samples[sel[j]].train_mask));
                }
                const std::vector<double> w(sel.size(), 1.0 / static_cast<double>(sel.size()));
                net.backward(detail::soft_target_gradient(p, geo, targets, w));
                net.step(lr);
                continue;
            }

            ++m.corrections;
            const double alpha = cfg_.correction.alpha;
            std::vector<SoftLabel> targets;
            for (std::size_t i = 0; i < samples.size(); ++i) {
                const bool is_selected = std::binary_search(sel.begin(), sel.end(), i);
                const SoftLabel noisy = SoftLabel::one_hot(samples[i].train_mask);
                if (is_selected && cfg_.correction.jo_scope == JoScope::UnselectedOnly) {
                    acc.loss_sum[t] += cross_entropy(maps[t][i], samples[i].train_mask);
                    targets.push_back(noisy);
                } else {
                    const std::array<const SoftLabel*, 3> member_maps{&maps[0][i], &maps[1][i], &maps[2][i]};
                    const SoftLabel corrected = corrected_label_from(member_maps, target, cfg_.correction);
                    acc.loss_sum[t] += joint_loss(maps[t][i], samples[i].train_mask, corrected, alpha);
                    // The joint loss is linear in the target, so one soft target carries both terms.
                    SoftLabel mixed = noisy;
                    auto mv = mixed.values();
                    const auto cv = corrected.values();
                    for (std::size_t q = 0; q < mv.size(); ++q) mv[q] = alpha * mv[q] + (1.0 - alpha) * cv[q];
                    targets.push_back(std::move(mixed));
                }
                ++acc.loss_count[t];
            }
            const std::vector<double> w(samples.size(), 1.0 / static_cast<double>(samples.size()));
            net.backward(detail::soft_target_gradient(probs[t], geos[t], targets, w));
            net.step(lr);
        }
    }

    void log_selection(int epoch, int batch, Member target, const std::vector<Sample>& samples,
                       const std::vector<SelectionDetail>& details) const {
        for (const auto& d : details) {
            nlohmann::json j = {{"epoch", epoch},          {"batch", batch},    {"sample_id", samples[d.index].id},
                                {"target", to_string(target)}, {"mu", d.mu},   {"score", d.score},
                                {"in_pool", d.in_pool},    {"selected", d.selected}};
            *selection_log_ << j.dump() << '\n';
        }
    }

    TrainConfig cfg_;
    std::shared_ptr<const std::vector<Sample>> train_;
    std::shared_ptr<const std::vector<Sample>> test_;
    TrainState state_;
    EpochCallback on_epoch_;
    std::ostream* selection_log_ = nullptr;
};

// Convenience wrapper: trains to completion from scratch.
inline TrainResult run(const TrainConfig& cfg, std::vector<Sample> train, std::vector<Sample> test) {
    Trainer t(cfg, std::move(train), std::move(test));
    return t.run();
}

}  // namespace crl
