#pragma once

// Experiment specs (json), dataset materialisation and run directories:
//   <output>/<run name>/config.json          resolved spec for exactly this run
//                       history.jsonl        one record per epoch
//                       corruption_log.jsonl one record per corrupted training mask
//                       checkpoints/         weights every N epochs
//                       report.json          final result row and label quality

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "crl/data.hpp"
#include "crl/morphology.hpp"
#include "crl/report.hpp"
#include "crl/trainer.hpp"

namespace crl {

using nlohmann::json;

// Environment variable consulted when a dataset spec has no path.
inline constexpr const char* kDataRootEnv = "CRL_DATA_ROOT";

namespace detail {

inline void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
    if (!j.is_object()) throw ConfigError(where + ": expected an object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || it.key() == a;
        if (!ok) throw ConfigError(where + ": unknown key '" + it.key() + "'");
    }
}

template <typename T>
void get_opt(const json& j, const char* key, T& out) {
    if (!j.contains(key)) return;
    try {
        out = j.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
    }
}

inline std::string hex64(std::uint64_t v) {
    std::ostringstream o;
    o << std::hex << std::setw(16) << std::setfill('0') << v;
    return o.str();
}

}  // namespace detail

// ---- json conversions ----------------------------------------------------------

inline void to_json(json& j, const NoiseSpec& n) {
    j = {{"ratio", n.ratio},        {"iter_min", n.iter_min},          {"iter_max", n.iter_max},
         {"mode", to_string(n.mode)}, {"element", to_string(n.element)}, {"seed", n.seed}};
}

inline void from_json(const json& j, NoiseSpec& n) {
    detail::check_keys(j, {"ratio", "iter_min", "iter_max", "mode", "element", "seed"}, "noise");
    detail::get_opt(j, "ratio", n.ratio);
    detail::get_opt(j, "iter_min", n.iter_min);
    detail::get_opt(j, "iter_max", n.iter_max);
    if (j.contains("mode")) n.mode = parse_noise_mode(j.at("mode").get<std::string>());
    if (j.contains("element")) n.element = parse_structuring_element(j.at("element").get<std::string>());
    detail::get_opt(j, "seed", n.seed);
}

inline void to_json(json& j, const TrainConfig& c) {
    j = {{"epochs", c.epochs},
         {"batch_size", c.batch_size},
         {"learning_rate", c.learning_rate},
         {"momentum", c.momentum},
         {"weight_decay", c.weight_decay},
         {"lr_decay", c.lr_decay},
         {"strategy", to_string(c.strategy)},
         {"keep_fraction", c.selection.keep_fraction},
         {"uncertainty_keep_fraction", c.selection.uncertainty_keep_fraction},
         {"criterion", to_string(c.selection.criterion)},
         {"k", c.correction.jo_start_epoch},
         {"alpha", c.correction.alpha},
         {"temperature", c.correction.temperature},
         {"jo_scope", to_string(c.correction.jo_scope)},
         {"peer_count", c.correction.peer_count},
         {"hard_targets", c.correction.hard_targets},
         {"model", c.model},
         {"augment", c.augment},
         {"max_rotation_deg", c.augmentation.max_rotation_deg},
         {"flip_probability", c.augmentation.flip_probability},
         {"eval_every", c.eval_every},
         {"seed", c.seed}};
}

inline void from_json(const json& j, TrainConfig& c) {
    detail::check_keys(j,
                       {"epochs", "batch_size", "learning_rate", "momentum", "weight_decay", "lr_decay", "strategy",
                        "keep_fraction", "uncertainty_keep_fraction", "criterion", "k", "alpha", "temperature",
                        "jo_scope", "peer_count", "hard_targets", "model", "augment", "max_rotation_deg",
                        "flip_probability", "eval_every", "seed"},
                       "train");
    detail::get_opt(j, "epochs", c.epochs);
    detail::get_opt(j, "batch_size", c.batch_size);
    detail::get_opt(j, "learning_rate", c.learning_rate);
    detail::get_opt(j, "momentum", c.momentum);
    detail::get_opt(j, "weight_decay", c.weight_decay);
    detail::get_opt(j, "lr_decay", c.lr_decay);
    if (j.contains("strategy")) c.strategy = parse_strategy(j.at("strategy").get<std::string>());
    detail::get_opt(j, "keep_fraction", c.selection.keep_fraction);
    detail::get_opt(j, "uncertainty_keep_fraction", c.selection.uncertainty_keep_fraction);
    if (j.contains("criterion")) c.selection.criterion = parse_selection_criterion(j.at("criterion").get<std::string>());
    detail::get_opt(j, "k", c.correction.jo_start_epoch);
    detail::get_opt(j, "alpha", c.correction.alpha);
    detail::get_opt(j, "temperature", c.correction.temperature);
    if (j.contains("jo_scope")) c.correction.jo_scope = parse_jo_scope(j.at("jo_scope").get<std::string>());
    detail::get_opt(j, "peer_count", c.correction.peer_count);
    detail::get_opt(j, "hard_targets", c.correction.hard_targets);
    if (j.contains("model")) {
        detail::check_keys(j.at("model"), {"in_channels", "classes", "depth", "base_channels"}, "train.model");
        j.at("model").get_to(c.model);
    }
    detail::get_opt(j, "augment", c.augment);
    detail::get_opt(j, "max_rotation_deg", c.augmentation.max_rotation_deg);
    detail::get_opt(j, "flip_probability", c.augmentation.flip_probability);
    detail::get_opt(j, "eval_every", c.eval_every);
    detail::get_opt(j, "seed", c.seed);
}

inline json to_json_value(const EpochMetrics& m) {
    auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
    auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
    return {{"epoch", m.epoch},
            {"learning_rate", m.learning_rate},
            {"train_loss", m.train_loss},
            {"jo_active", m.jo_active},
            {"corrections", m.corrections},
            {"selection_clean_fraction", num(m.selection_clean_fraction)},
            {"selection_overlap", num(m.selection_overlap)},
            {"test_dice", opt(m.test_dice)},
            {"corrected_label_dice", opt(m.corrected_label_dice)},
            {"noisy_label_dice", opt(m.noisy_label_dice)},
            {"seconds", m.seconds}};
}

inline EpochMetrics epoch_metrics_from_json(const json& j) {
    auto opt = [&](const char* k) {
        return j.contains(k) && !j.at(k).is_null() ? std::optional<double>(j.at(k).get<double>()) : std::nullopt;
    };
    auto num = [&](const char* k) {
        return j.contains(k) && !j.at(k).is_null() ? j.at(k).get<double>() : std::numeric_limits<double>::quiet_NaN();
    };
    EpochMetrics m;
    m.epoch = j.at("epoch").get<int>();
    m.learning_rate = j.at("learning_rate").get<double>();
    m.train_loss = j.at("train_loss").get<std::array<double, 3>>();
    m.jo_active = j.at("jo_active").get<bool>();
    m.corrections = j.at("corrections").get<int>();
    m.selection_clean_fraction = num("selection_clean_fraction");
    m.selection_overlap = num("selection_overlap");
    m.test_dice = opt("test_dice");
    m.corrected_label_dice = opt("corrected_label_dice");
    m.noisy_label_dice = opt("noisy_label_dice");
    m.seconds = j.value("seconds", 0.0);
    return m;
}

// ---- experiment spec -------------------------------------------------------------

enum class DataSource { Synthetic, Directory, Shenzhen };

inline std::string to_string(DataSource s) {
    switch (s) {
        case DataSource::Synthetic: return "synthetic";
        case DataSource::Directory: return "directory";
        default: return "shenzhen";
    }
}

inline DataSource parse_data_source(const std::string& s) {
    if (s == "synthetic") return DataSource::Synthetic;
    if (s == "directory") return DataSource::Directory;
    if (s == "shenzhen") return DataSource::Shenzhen;
    throw ConfigError("unknown dataset source '" + s + "' (expected synthetic, directory or shenzhen)");
}

struct DatasetSpec {
    DataSource source = DataSource::Synthetic;
    std::string path;  // directory / shenzhen root; empty: $CRL_DATA_ROOT
    // synthetic: generated in memory
    int size = 64;
    std::uint64_t seed = 0;
    std::size_t train_count = 200;
    std::size_t test_count = 100;
    // shenzhen: split seed and resize target
    std::uint64_t split_seed = 0;
    int image_size = 256;

    std::filesystem::path resolved_path() const {
        if (!path.empty()) return path;
        if (const char* env = std::getenv(kDataRootEnv); env && *env) return env;
        throw ConfigError("dataset path not given and " + std::string(kDataRootEnv) + " is not set");
    }

    void validate() const {
        if (source == DataSource::Synthetic) {
            if (size < 32) throw ConfigError("synthetic size must be >= 32");
            if (train_count < 1) throw ConfigError("synthetic train_count must be >= 1");
        }
        if (source == DataSource::Shenzhen && image_size < 8) throw ConfigError("image_size must be >= 8");
    }

    bool operator==(const DatasetSpec&) const = default;
};

inline void to_json(json& j, const DatasetSpec& d) {
    j = {{"source", to_string(d.source)}, {"path", d.path},           {"size", d.size},
         {"seed", d.seed},                {"train_count", d.train_count}, {"test_count", d.test_count},
         {"split_seed", d.split_seed},    {"image_size", d.image_size}};
}

inline void from_json(const json& j, DatasetSpec& d) {
    detail::check_keys(j, {"source", "path", "size", "seed", "train_count", "test_count", "split_seed", "image_size"},
                       "dataset");
    if (j.contains("source")) d.source = parse_data_source(j.at("source").get<std::string>());
    detail::get_opt(j, "path", d.path);
    detail::get_opt(j, "size", d.size);
    detail::get_opt(j, "seed", d.seed);
    detail::get_opt(j, "train_count", d.train_count);
    detail::get_opt(j, "test_count", d.test_count);
    detail::get_opt(j, "split_seed", d.split_seed);
    detail::get_opt(j, "image_size", d.image_size);
}

struct ExperimentSpec {
    DatasetSpec dataset;
    NoiseSpec noise;
    TrainConfig train;
    std::string output_dir = "runs";
    std::vector<std::uint64_t> seeds{0};
    int checkpoint_every = 0;  // epochs; 0 disables
    bool selection_log = false;

    void validate() const {
        dataset.validate();
        noise.validate();
        train.validate();
        if (seeds.empty()) throw ConfigError("at least one seed is required");
        if (checkpoint_every < 0) throw ConfigError("checkpoint_every must be >= 0");
        if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
    }
};

inline void to_json(json& j, const ExperimentSpec& s) {
    j = {{"dataset", s.dataset},   {"noise", s.noise},
         {"train", s.train},       {"output_dir", s.output_dir},
         {"seeds", s.seeds},       {"checkpoint_every", s.checkpoint_every},
         {"selection_log", s.selection_log}};
}

inline void from_json(const json& j, ExperimentSpec& s) {
    detail::check_keys(j, {"dataset", "noise", "train", "output_dir", "seeds", "checkpoint_every", "selection_log"},
                       "experiment");
    if (j.contains("dataset")) j.at("dataset").get_to(s.dataset);
    if (j.contains("noise")) j.at("noise").get_to(s.noise);
    if (j.contains("train")) j.at("train").get_to(s.train);
    detail::get_opt(j, "output_dir", s.output_dir);
    detail::get_opt(j, "seeds", s.seeds);
    detail::get_opt(j, "checkpoint_every", s.checkpoint_every);
    detail::get_opt(j, "selection_log", s.selection_log);
}

inline ExperimentSpec load_experiment_spec(const std::filesystem::path& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open spec file '" + path.string() + "'");
    json j;
    try {
        j = json::parse(f);
    } catch (const json::parse_error& e) {
        throw ConfigError("spec file '" + path.string() + "' is not valid json: " + e.what());
    }
    try {
        return j.get<ExperimentSpec>();
    } catch (const json::exception& e) {
        throw ConfigError("spec file '" + path.string() + "': " + e.what());
    }
}

// Desk-scale defaults used by the CLI and the acceptance suite.
inline ExperimentSpec desk_preset() {
    ExperimentSpec s;
    s.dataset.source = DataSource::Synthetic;
    s.dataset.size = 64;
    s.dataset.seed = 1000;
    s.dataset.train_count = 200;
    s.dataset.test_count = 100;
    s.noise.iter_min = 3;
    s.noise.iter_max = 8;
    s.train.epochs = 30;
    s.train.batch_size = 16;
    s.train.learning_rate = 0.05;
    s.train.correction.jo_start_epoch = 10;
    s.train.eval_every = 0;
    return s;
}

// Hash of everything that determines a run's outcome except the seed.
inline std::string config_hash(const ExperimentSpec& s) {
    json j = s;
    j.erase("output_dir");
    j.erase("seeds");
    j.erase("checkpoint_every");
    j.erase("selection_log");
    j["train"].erase("seed");
    j["train"].erase("eval_every");
    return detail::hex64(hash_string(j.dump()));
}

// Single-seed copy of a spec with the training seed set.
inline ExperimentSpec for_seed(ExperimentSpec s, std::uint64_t seed) {
    s.seeds = {seed};
    s.train.seed = seed;
    return s;
}

// ---- data ------------------------------------------------------------------------

inline Dataset materialize_dataset(const DatasetSpec& d) {
    d.validate();
    switch (d.source) {
        case DataSource::Synthetic: {
            auto all = synth_shapes(static_cast<int>(d.train_count + d.test_count), d.size, d.seed);
            Dataset out;
            out.train.assign(std::make_move_iterator(all.begin()),
                             std::make_move_iterator(all.begin() + static_cast<std::ptrdiff_t>(d.train_count)));
            out.test.assign(std::make_move_iterator(all.begin() + static_cast<std::ptrdiff_t>(d.train_count)),
                            std::make_move_iterator(all.end()));
            return out;
        }
        case DataSource::Directory: {
            const auto root = d.resolved_path();
            return load_dataset(root, load_manifest(root / "manifest.json"));
        }
        default: {
            const auto root = d.resolved_path();
            return load_shenzhen(root, shenzhen_manifest(root, d.split_seed, d.image_size));
        }
    }
}

inline json to_json_value(const CorruptionEntry& e) {
    return {{"id", e.id}, {"op", to_string(e.op)}, {"n", e.iterations}, {"dice_vs_clean", e.dice_vs_clean}};
}

inline void write_corruption_log(const std::filesystem::path& path, const CorruptionLog& log) {
    std::ostringstream o;
    for (const auto& e : log) o << to_json_value(e).dump() << '\n';
    write_text_file(path, o.str());
}

// ---- runs ------------------------------------------------------------------------

inline std::string noise_level_label(const NoiseSpec& n) {
    if (n.ratio == 0.0) return "";
    return std::to_string(n.iter_min) + "-" + std::to_string(n.iter_max);
}

inline ResultRow make_result_row(const ExperimentSpec& s, double dice_value, double runtime, std::string variant = "") {
    ResultRow r;
    r.noise_ratio = s.noise.ratio;
    r.noise_level = noise_level_label(s.noise);
    r.strategy = to_string(s.train.strategy);
    if (s.train.strategy == Strategy::SSJO) r.k = s.train.correction.jo_start_epoch;
    r.variant = std::move(variant);
    r.dice = dice_value;
    r.seed = s.train.seed;
    r.runtime_s = runtime;
    return r;
}

inline std::string run_name(const ExperimentSpec& s, const std::string& variant = "") {
    std::ostringstream o;
    o << to_string(s.train.strategy) << "_nr" << detail::fmt("%.2f", s.noise.ratio);
    if (s.train.strategy == Strategy::SSJO) o << "_k" << s.train.correction.jo_start_epoch;
    if (!variant.empty()) {
        std::string v = variant;
        for (char& ch : v)
            if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '.' && ch != '-') ch = '_';
        o << '_' << v;
    }
    o << '_' << config_hash(s).substr(0, 8) << "_s" << s.train.seed;
    return o.str();
}

struct RunOutcome {
    std::filesystem::path dir;
    ResultRow row;
    TrainResult result;
};

// Trainer wired to a run directory: history and checkpoints are written as epochs finish.
class RunWriter {
public:
    RunWriter(ExperimentSpec spec, std::filesystem::path dir, std::string variant = "")
        : spec_(std::move(spec)), dir_(std::move(dir)), variant_(std::move(variant)) {
        std::filesystem::create_directories(dir_);
        json cfg = spec_;
        cfg["config_hash"] = config_hash(spec_);
        cfg["variant"] = variant_;
        write_text_file(dir_ / "config.json", cfg.dump(2) + "\n");
        history_.open(dir_ / "history.jsonl", std::ios::trunc);
        if (!history_) throw DataError("cannot write history in '" + dir_.string() + "'");
    }

    const std::filesystem::path& dir() const { return dir_; }

    void attach(Trainer& t) {
        t.set_epoch_callback([this](const Trainer& tr, const EpochMetrics& m) { on_epoch(tr, m); });
        if (spec_.selection_log) {
            selection_.open(dir_ / "selection.jsonl", std::ios::trunc);
            t.set_selection_log(&selection_);
        }
    }

    // Re-targets a trainer (typically a copy branched from another run) to this directory,
    // replaying the history it already carries.
    void adopt(Trainer& t) {
        for (const auto& m : t.state().history) history_ << to_json_value(m).dump() << '\n';
        history_.flush();
        attach(t);
    }

    RunOutcome finish(Trainer& t, const TrainResult& r, const CorruptionLog& log) {
        t.set_epoch_callback({});
        t.set_selection_log(nullptr);
        write_corruption_log(dir_ / "corruption_log.jsonl", log);
        RunOutcome out{dir_, make_result_row(spec_, r.test_dice, r.runtime_seconds, variant_), r};
        json rep = {{"row", json::parse(emit_table({out.row}, TableFormat::Json))[0]},
                    {"config_hash", config_hash(spec_)},
                    {"test_dice", r.test_dice},
                    {"corrected_label_dice", r.label_accuracy.corrected_dice},
                    {"noisy_label_dice", r.label_accuracy.noisy_dice},
                    {"runtime_s", r.runtime_seconds},
                    {"epochs", static_cast<int>(r.history.size())}};
        write_text_file(dir_ / "report.json", rep.dump(2) + "\n");
        return out;
    }

private:
    void on_epoch(const Trainer& t, const EpochMetrics& m) {
        history_ << to_json_value(m).dump() << '\n';
        history_.flush();
        if (spec_.checkpoint_every > 0 && (m.epoch + 1) % spec_.checkpoint_every == 0) {
            const auto ck = dir_ / "checkpoints";
            std::filesystem::create_directories(ck);
            const std::string stem = "epoch_" + std::to_string(m.epoch + 1);
            json manifest = {{"epoch", m.epoch + 1}, {"config_hash", config_hash(spec_)}, {"seed", spec_.train.seed},
                             {"model", spec_.train.model}, {"members", json::object()}};
            for (Member mem : kMembers) {
                const std::string file = stem + "_" + to_string(mem) + ".bin";
                save_weights(ck / file, t.state().trinet[mem]);
                manifest["members"][to_string(mem)] = {{"file", file},
                                                       {"init_seed", t.state().trinet[mem].init_seed()}};
            }
            write_text_file(ck / (stem + ".json"), manifest.dump(2) + "\n");
        }
    }

    ExperimentSpec spec_;
    std::filesystem::path dir_;
    std::string variant_;
    std::ofstream history_;
    std::ofstream selection_;
};

struct PreparedData {
    std::shared_ptr<const std::vector<Sample>> train;
    std::shared_ptr<const std::vector<Sample>> test;
    CorruptionLog log;
};

inline PreparedData prepare_data(const ExperimentSpec& s) {
    Dataset d = materialize_dataset(s.dataset);
    if (d.train.empty()) throw DataError("dataset has no training samples");
    PreparedData p;
    p.log = corrupt_samples(d.train, s.noise);
    p.train = std::make_shared<const std::vector<Sample>>(std::move(d.train));
    p.test = std::make_shared<const std::vector<Sample>>(std::move(d.test));
    return p;
}

// Trains one seed of a spec into <output_dir>/<run name>.
inline RunOutcome run_experiment(const ExperimentSpec& spec_all, std::uint64_t seed, const PreparedData* data = nullptr,
                                 const std::string& variant = "") {
    const ExperimentSpec s = for_seed(spec_all, seed);
    s.validate();
    PreparedData local;
    if (!data) {
        local = prepare_data(s);
        data = &local;
    }
    Trainer t(s.train, data->train, data->test);
    RunWriter w(s, std::filesystem::path(s.output_dir) / run_name(s, variant), variant);
    w.attach(t);
    const TrainResult r = t.run();
    return w.finish(t, r, data->log);
}

// Settings that only influence joint-optimisation epochs are irrelevant before k.
inline TrainConfig stage_one_view(TrainConfig c, int epoch) {
    if (c.strategy == Strategy::SSJO && c.correction.jo_start_epoch >= epoch) c.strategy = Strategy::SS;
    if (c.strategy != Strategy::SSJO) c.correction = CorrectionConfig{};
    c.epochs = 0;
    return c;
}

// Trains each variant of one seed, sharing the epochs [0, branch_epoch) in which all
// variants behave identically. Every variant's run directory is the same as a
// from-scratch run.
inline std::vector<RunOutcome> run_branched(const ExperimentSpec& base, std::uint64_t seed,
                                            const std::vector<std::pair<std::string, TrainConfig>>& variants,
                                            int branch_epoch) {
    if (variants.empty()) throw ConfigError("run_branched: no variants");
    const ExperimentSpec s0 = for_seed(base, seed);
    std::vector<ExperimentSpec> specs;
    for (const auto& [tag, cfg] : variants) {
        ExperimentSpec s = s0;
        s.train = cfg;
        s.train.seed = seed;
        s.validate();
        if (!(stage_one_view(s.train, branch_epoch) == stage_one_view(specs.empty() ? s.train : specs[0].train, branch_epoch)))
            throw ConfigError("run_branched: variant '" + tag + "' differs from the others before epoch " +
                              std::to_string(branch_epoch));
        if (s.train.epochs < branch_epoch) throw ConfigError("run_branched: branch epoch beyond the run length");
        specs.push_back(s);
    }
    const PreparedData data = prepare_data(s0);
    Trainer stem(specs[0].train, data.train, data.test);
    const auto t0 = std::chrono::steady_clock::now();
    while (stem.state().epoch < branch_epoch) stem.run_epoch();
    const double stem_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    std::vector<RunOutcome> out;
    for (std::size_t i = 0; i < variants.size(); ++i) {
        Trainer t = stem;
        t.reconfigure(specs[i].train);
        RunWriter w(specs[i], std::filesystem::path(specs[i].output_dir) / run_name(specs[i], variants[i].first),
                    variants[i].first);
        w.adopt(t);
        TrainResult r = t.run();
        r.runtime_seconds += stem_seconds;
        r.history = t.state().history;
        out.push_back(w.finish(t, r, data.log));
    }
    return out;
}

// ---- reading run directories ---------------------------------------------------------

struct RunRecord {
    std::filesystem::path dir;
    std::string config_hash;
    ResultRow row;
    std::vector<EpochMetrics> history;
    double corrected_label_dice = 0.0;
    double noisy_label_dice = 0.0;
};

inline json read_json_file(const std::filesystem::path& p) {
    std::ifstream f(p);
    if (!f) throw DataError("missing " + p.filename().string() + " in '" + p.parent_path().string() + "'");
    try {
        return json::parse(f);
    } catch (const json::parse_error& e) {
        throw DataError("corrupt " + p.filename().string() + " in '" + p.parent_path().string() + "': " + e.what());
    }
}

inline std::vector<EpochMetrics> read_history(const std::filesystem::path& p) {
    std::ifstream f(p);
    if (!f) throw DataError("missing history.jsonl in '" + p.parent_path().string() + "'");
    std::vector<EpochMetrics> h;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        try {
            h.push_back(epoch_metrics_from_json(json::parse(line)));
        } catch (const json::exception& e) {
            throw DataError("corrupt history.jsonl in '" + p.parent_path().string() + "': " + e.what());
        }
    }
    return h;
}

inline RunRecord read_run_dir(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw DataError("'" + dir.string() + "' is not a run directory");
    RunRecord r;
    r.dir = dir;
    read_json_file(dir / "config.json");
    r.history = read_history(dir / "history.jsonl");
    const json rep = read_json_file(dir / "report.json");
    r.config_hash = rep.at("config_hash").get<std::string>();
    r.row = parse_json_table("[" + rep.at("row").dump() + "]").at(0);
    r.corrected_label_dice = rep.value("corrected_label_dice", 0.0);
    r.noisy_label_dice = rep.value("noisy_label_dice", 0.0);
    if (r.history.empty()) throw DataError("empty history.jsonl in '" + dir.string() + "'");
    return r;
}

struct MergeResult {
    std::vector<RunRecord> runs;          // deduplicated, first occurrence wins
    std::vector<std::string> errors;      // one line per unreadable run directory
    std::size_t duplicates = 0;
};

// Reads every run directory (or every run directory directly inside a given directory),
// dropping repeats of the same (config hash, variant, seed).
inline MergeResult merge_runs(const std::vector<std::filesystem::path>& paths) {
    std::vector<std::filesystem::path> dirs;
    for (const auto& p : paths) {
        if (std::filesystem::is_directory(p) && !std::filesystem::exists(p / "config.json")) {
            std::vector<std::filesystem::path> sub;
            // Subdirectories without either run file (plot folders, scratch) are not runs.
            for (const auto& e : std::filesystem::directory_iterator(p))
                if (e.is_directory() &&
                    (std::filesystem::exists(e.path() / "config.json") || std::filesystem::exists(e.path() / "history.jsonl")))
                    sub.push_back(e.path());
            std::sort(sub.begin(), sub.end());
            dirs.insert(dirs.end(), sub.begin(), sub.end());
        } else {
            dirs.push_back(p);
        }
    }
    MergeResult m;
    std::set<std::tuple<std::string, std::string, std::uint64_t>> seen;
    for (const auto& d : dirs) {
        try {
            RunRecord r = read_run_dir(d);
            if (!seen.insert({r.config_hash, r.row.variant, r.row.seed}).second) {
                ++m.duplicates;
                continue;
            }
            m.runs.push_back(std::move(r));
        } catch (const std::exception& e) {
            m.errors.push_back(d.string() + ": " + e.what());
        }
    }
    return m;
}

}  // namespace crl
