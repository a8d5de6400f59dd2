// Command-line entry point: synth-data, corrupt, train, ablate, report.
// Exit codes: 0 success, 2 validation error, 3 runtime failure.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "crl/crl.hpp"

namespace fs = std::filesystem;
using namespace crl;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitRuntime = 3;

// Experiment flags shared by `train` and `ablate`; a flag overrides the spec file only
// when it was given.
struct ExperimentFlags {
    std::string spec_file;
    std::string preset = "desk";
    std::string data;
    std::string source;
    std::string out;
    std::string strategy;
    double noise_ratio = 0.0;
    int iter_min = 0, iter_max = 0;
    std::string noise_mode;
    std::uint64_t noise_seed = 0;
    int k = 0;
    double alpha = 0.5;
    double temperature = 0.5;
    std::string criterion;
    std::string jo_scope;
    int peer_count = 2;
    std::vector<std::uint64_t> seeds;
    int epochs = 0;
    int batch_size = 0;
    double lr = 0.0;
    int eval_every = 0;
    int checkpoint_every = 0;
    bool selection_log = false;
    bool no_augment = false;

    std::map<std::string, CLI::Option*> opts;

    void add(CLI::App* app, bool with_strategy) {
        app->add_option("--spec", spec_file, "Experiment spec file (json)")->check(CLI::ExistingFile);
        app->add_option("--preset", preset, "Base settings when no spec file is given")
            ->check(CLI::IsMember({"desk", "full"}));
        opts["data"] = app->add_option("--data", data, "Dataset directory (default: $" + std::string(kDataRootEnv) + ")");
        opts["source"] = app->add_option("--source", source, "Dataset source")
                             ->check(CLI::IsMember({"synthetic", "directory", "shenzhen"}));
        opts["out"] = app->add_option("--out", out, "Output root for run directories");
        if (with_strategy)
            opts["strategy"] = app->add_option("--strategy", strategy, "Training strategy")
                                   ->check(CLI::IsMember({"vanilla", "coteach_small_loss", "ss", "ss_jo"}));
        opts["noise_ratio"] = app->add_option("--noise-ratio", noise_ratio, "Fraction of corrupted training masks")
                                  ->check(CLI::Range(0.0, 1.0));
        opts["iter_min"] = app->add_option("--iter-min", iter_min, "Minimum morphological iterations")
                               ->check(CLI::PositiveNumber);
        opts["iter_max"] = app->add_option("--iter-max", iter_max, "Maximum morphological iterations")
                               ->check(CLI::PositiveNumber);
        opts["noise_mode"] = app->add_option("--noise-mode", noise_mode, "erode, dilate or random")
                                 ->check(CLI::IsMember({"erode", "dilate", "random", "random-choice"}));
        opts["noise_seed"] = app->add_option("--noise-seed", noise_seed, "Seed of the corruption draw");
        opts["k"] = app->add_option("--k", k, "Epoch at which joint optimisation starts")->check(CLI::NonNegativeNumber);
        opts["alpha"] = app->add_option("--alpha", alpha, "Weight of the noisy-label term")->check(CLI::Range(0.0, 1.0));
        opts["T"] = app->add_option("--T", temperature, "Sharpening temperature")->check(CLI::PositiveNumber);
        opts["criterion"] = app->add_option("--criterion", criterion, "Selection criterion")
                                ->check(CLI::IsMember({"uncertainty_then_loss", "loss_only"}));
        opts["jo_scope"] = app->add_option("--jo-scope", jo_scope, "Samples receiving the joint loss")
                               ->check(CLI::IsMember({"unselected_only", "all_samples"}));
        opts["peer_count"] = app->add_option("--peer-count", peer_count, "Members averaged for correction")
                                 ->check(CLI::IsMember({2, 3}));
        opts["seed"] = app->add_option("--seed,--seeds", seeds, "Training seed(s)")->delimiter(',');
        opts["epochs"] = app->add_option("--epochs", epochs, "Training epochs")->check(CLI::PositiveNumber);
        opts["batch_size"] = app->add_option("--batch-size", batch_size, "Batch size")->check(CLI::PositiveNumber);
        opts["lr"] = app->add_option("--lr", lr, "Initial learning rate")->check(CLI::PositiveNumber);
        opts["eval_every"] = app->add_option("--eval-every", eval_every, "Test evaluation cadence (0: final only)")
                                 ->check(CLI::NonNegativeNumber);
        opts["checkpoint_every"] = app->add_option("--checkpoint-every", checkpoint_every, "Checkpoint cadence")
                                       ->check(CLI::NonNegativeNumber);
        opts["selection_log"] = app->add_flag("--selection-log", selection_log, "Write per-sample selection records");
        opts["no_augment"] = app->add_flag("--no-augment", no_augment, "Disable augmentation");
    }

    bool given(const std::string& name) const {
        const auto it = opts.find(name);
        return it != opts.end() && it->second->count() > 0;
    }

    ExperimentSpec resolve() const {
        ExperimentSpec s;
        if (!spec_file.empty()) {
            s = load_experiment_spec(spec_file);
        } else if (preset == "desk") {
            s = desk_preset();
        } else {
            s.dataset.source = DataSource::Shenzhen;
            s.noise.iter_min = 5;
            s.noise.iter_max = 15;
            s.train.epochs = 100;
            s.train.batch_size = 32;
            s.train.model.base_channels = 64;
            s.train.model.depth = 4;
        }
        if (given("data")) {
            s.dataset.path = data;
            if (!given("source") && s.dataset.source == DataSource::Synthetic) s.dataset.source = DataSource::Directory;
        }
        if (given("source")) s.dataset.source = parse_data_source(source);
        if (given("out")) s.output_dir = out;
        if (given("strategy")) s.train.strategy = parse_strategy(strategy);
        if (given("noise_ratio")) s.noise.ratio = noise_ratio;
        if (given("iter_min")) s.noise.iter_min = iter_min;
        if (given("iter_max")) s.noise.iter_max = iter_max;
        if (given("noise_mode")) s.noise.mode = parse_noise_mode(noise_mode);
        if (given("noise_seed")) s.noise.seed = noise_seed;
        if (given("k")) s.train.correction.jo_start_epoch = k;
        if (given("alpha")) s.train.correction.alpha = alpha;
        if (given("T")) s.train.correction.temperature = temperature;
        if (given("criterion")) s.train.selection.criterion = parse_selection_criterion(criterion);
        if (given("jo_scope")) s.train.correction.jo_scope = parse_jo_scope(jo_scope);
        if (given("peer_count")) s.train.correction.peer_count = peer_count;
        if (given("seed")) s.seeds = seeds;
        if (given("epochs")) s.train.epochs = epochs;
        if (given("batch_size")) s.train.batch_size = batch_size;
        if (given("lr")) s.train.learning_rate = lr;
        if (given("eval_every")) s.train.eval_every = eval_every;
        if (given("checkpoint_every")) s.checkpoint_every = checkpoint_every;
        if (given("selection_log")) s.selection_log = selection_log;
        if (given("no_augment")) s.train.augment = !no_augment;
        s.validate();
        return s;
    }
};

void print_row(const RunOutcome& o) {
    std::cout << o.dir.string() << "  dice=" << detail::fmt("%.4f", o.row.dice)
              << "  corrected_label_dice=" << detail::fmt("%.4f", o.result.label_accuracy.corrected_dice)
              << "  noisy_label_dice=" << detail::fmt("%.4f", o.result.label_accuracy.noisy_dice) << '\n';
}

void write_ablation_outputs(const fs::path& out, const std::string& name, const std::vector<RunOutcome>& runs) {
    std::vector<ResultRow> rows;
    std::vector<std::pair<std::string, std::vector<EpochMetrics>>> curves;
    for (const auto& r : runs) {
        rows.push_back(r.row);
        curves.emplace_back(r.row.strategy + (r.row.variant.empty() ? "" : " " + r.row.variant) + " s" +
                                std::to_string(r.row.seed),
                            r.result.history);
    }
    write_text_file(out / (name + ".csv"), emit_table(rows, TableFormat::Csv));
    write_text_file(out / (name + ".md"), emit_table(rows, TableFormat::Markdown) + "\n" +
                                              emit_summary_markdown(summarize(rows)));
    emit_plots(curves, rows, out / (name + "_plots"));
    std::cout << emit_summary_markdown(summarize(rows));
}

std::vector<double> parse_list(const std::string& s) {
    std::vector<double> out;
    for (const auto& part : detail::split(s, ',')) out.push_back(detail::parse_double(part, "list value"));
    if (out.empty()) throw ConfigError("empty value list");
    return out;
}

std::string format_alpha(double a) { return detail::fmt("%g", a); }

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Robust training of segmentation networks under corrupted masks"};
    app.require_subcommand(1);

    // synth-data
    auto* synth = app.add_subcommand("synth-data", "Write a synthetic dataset (images/, masks/, manifest.json)");
    std::string synth_out;
    int synth_count = 300, synth_size = 64;
    std::uint64_t synth_seed = 0;
    int synth_train = -1, synth_test = -1;
    synth->add_option("--out", synth_out, "Output directory")->required();
    synth->add_option("--count", synth_count, "Number of samples")->check(CLI::PositiveNumber);
    synth->add_option("--size", synth_size, "Image side length")->check(CLI::Range(32, 4096));
    synth->add_option("--seed", synth_seed, "Generator seed");
    synth->add_option("--train", synth_train, "Training split size (default: two thirds)");
    synth->add_option("--test", synth_test, "Test split size (default: the rest)");

    // corrupt
    auto* corrupt = app.add_subcommand("corrupt", "Corrupt the training masks of a dataset directory");
    std::string corrupt_data, corrupt_out, corrupt_mode = "random", corrupt_element = "square3";
    double corrupt_ratio = 0.5;
    int corrupt_min = 5, corrupt_max = 15;
    std::uint64_t corrupt_seed = 0;
    bool corrupt_all = false;
    corrupt->add_option("--data", corrupt_data, "Dataset directory")->required()->check(CLI::ExistingDirectory);
    corrupt->add_option("--out", corrupt_out, "Output directory for masks and the log")->required();
    corrupt->add_option("--ratio", corrupt_ratio, "Fraction of masks to corrupt")->check(CLI::Range(0.0, 1.0));
    corrupt->add_option("--iter-min", corrupt_min, "Minimum iterations")->check(CLI::PositiveNumber);
    corrupt->add_option("--iter-max", corrupt_max, "Maximum iterations")->check(CLI::PositiveNumber);
    corrupt->add_option("--mode", corrupt_mode, "erode, dilate or random")
        ->check(CLI::IsMember({"erode", "dilate", "random", "random-choice"}));
    corrupt->add_option("--element", corrupt_element, "Structuring element")->check(CLI::IsMember({"square3", "cross3"}));
    corrupt->add_option("--seed", corrupt_seed, "Corruption seed");
    corrupt->add_flag("--all", corrupt_all, "Corrupt every mask instead of the manifest's training split");

    // train
    auto* train = app.add_subcommand("train", "Train one configuration for each seed");
    ExperimentFlags train_flags;
    train_flags.add(train, true);

    // ablate
    auto* ablate = app.add_subcommand("ablate", "Ablation studies");
    ablate->require_subcommand(1);
    auto* ab_alpha = ablate->add_subcommand("alpha", "Sweep the joint-loss weight");
    ExperimentFlags alpha_flags;
    std::string alpha_values = "0,0.5,1";
    alpha_flags.add(ab_alpha, false);
    ab_alpha->add_option("--values", alpha_values, "Comma-separated alpha values");
    auto* ab_sel = ablate->add_subcommand("selection", "Compare selection criteria");
    ExperimentFlags sel_flags;
    std::string sel_criteria = "loss_only,uncertainty_then_loss";
    sel_flags.add(ab_sel, true);
    ab_sel->add_option("--criteria", sel_criteria, "Comma-separated criteria");
    auto* ab_n100 = ablate->add_subcommand("noise100", "Selection only vs vanilla with every mask corrupted");
    ExperimentFlags n100_flags;
    std::string n100_levels = "5,20";
    n100_flags.add(ab_n100, false);
    ab_n100->add_option("--levels", n100_levels, "Comma-separated noise levels n (iterations)");

    // report
    auto* report = app.add_subcommand("report", "Merge run directories into one table");
    std::vector<std::string> report_dirs;
    std::string report_format = "markdown", report_out, report_plots;
    report->add_option("runs", report_dirs, "Run directories, or directories containing them")->required();
    report->add_option("--format", report_format, "csv, markdown or json")
        ->check(CLI::IsMember({"csv", "markdown", "md", "json"}));
    report->add_option("--out", report_out, "Write the table to this file instead of stdout");
    report->add_option("--plots", report_plots, "Directory for SVG plots");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitValidation;
    }

    try {
        if (*synth) {
            const std::size_t count = static_cast<std::size_t>(synth_count);
            std::size_t n_train = synth_train >= 0 ? static_cast<std::size_t>(synth_train)
                                                   : static_cast<std::size_t>(std::llround(count * 2.0 / 3.0));
            std::size_t n_test = synth_test >= 0 ? static_cast<std::size_t>(synth_test) : count - std::min(count, n_train);
            if (n_train + n_test > count) throw ConfigError("train + test exceeds --count");
            write_synthetic_dataset(synth_out, synth_count, synth_size, synth_seed, n_train, n_test);
            std::cout << "wrote " << synth_count << " samples to " << synth_out << '\n';
            return kExitOk;
        }

        if (*corrupt) {
            NoiseSpec ns;
            ns.ratio = corrupt_ratio;
            ns.iter_min = corrupt_min;
            ns.iter_max = corrupt_max;
            ns.mode = parse_noise_mode(corrupt_mode);
            ns.element = parse_structuring_element(corrupt_element);
            ns.seed = corrupt_seed;
            ns.validate();
            const fs::path root = corrupt_data;
            std::vector<std::string> ids;
            if (!corrupt_all && fs::exists(root / "manifest.json"))
                ids = load_manifest(root / "manifest.json").train_ids;
            else
                ids = scan_dataset_ids(root);
            std::vector<BinaryMask> masks;
            for (const auto& id : ids) masks.push_back(mask_from_gray(read_png_gray(root / "masks" / (id + ".png"))));
            const CorruptionResult r = corrupt_dataset(masks, ns, ids);
            const fs::path out = corrupt_out;
            fs::create_directories(out / "masks");
            for (std::size_t i = 0; i < ids.size(); ++i)
                write_png_gray(out / "masks" / (ids[i] + ".png"), mask_to_gray(r.masks[i]));
            write_corruption_log(out / "corruption_log.jsonl", r.log);
            std::cout << "corrupted " << r.log.size() << " of " << ids.size() << " masks; log: "
                      << (out / "corruption_log.jsonl").string() << '\n';
            return kExitOk;
        }

        if (*train) {
            const ExperimentSpec s = train_flags.resolve();
            const PreparedData data = prepare_data(s);
            for (std::uint64_t seed : s.seeds) print_row(run_experiment(s, seed, &data));
            return kExitOk;
        }

        if (*ab_alpha) {
            ExperimentSpec s = alpha_flags.resolve();
            s.train.strategy = Strategy::SSJO;
            const auto values = parse_list(alpha_values);
            std::vector<std::pair<std::string, TrainConfig>> variants;
            for (double a : values) {
                TrainConfig c = s.train;
                c.correction.alpha = a;
                c.correction.validate();
                variants.emplace_back("alpha=" + format_alpha(a), c);
            }
            std::vector<RunOutcome> runs;
            for (std::uint64_t seed : s.seeds)
                for (auto& r : run_branched(s, seed, variants, s.train.correction.jo_start_epoch)) {
                    print_row(r);
                    runs.push_back(std::move(r));
                }
            write_ablation_outputs(s.output_dir, "ablate_alpha", runs);
            return kExitOk;
        }

        if (*ab_sel) {
            ExperimentSpec s = sel_flags.resolve();
            if (!sel_flags.given("strategy")) s.train.strategy = Strategy::SS;
            if (s.train.strategy == Strategy::Vanilla || s.train.strategy == Strategy::CoteachSmallLoss)
                throw ConfigError("selection ablation needs strategy ss or ss_jo");
            std::vector<RunOutcome> runs;
            const PreparedData data = prepare_data(s);
            for (const auto& name : detail::split(sel_criteria, ',')) {
                ExperimentSpec v = s;
                v.train.selection.criterion = parse_selection_criterion(name);
                for (std::uint64_t seed : s.seeds) {
                    runs.push_back(run_experiment(v, seed, &data, "criterion=" + name));
                    print_row(runs.back());
                }
            }
            write_ablation_outputs(s.output_dir, "ablate_selection", runs);
            return kExitOk;
        }

        if (*ab_n100) {
            ExperimentSpec s = n100_flags.resolve();
            s.noise.ratio = 1.0;
            std::vector<RunOutcome> runs;
            for (double level : parse_list(n100_levels)) {
                if (level < 1 || level != std::floor(level)) throw ConfigError("noise levels must be positive integers");
                ExperimentSpec v = s;
                v.noise.iter_min = v.noise.iter_max = static_cast<int>(level);
                v.validate();
                const PreparedData data = prepare_data(v);
                for (Strategy st : {Strategy::Vanilla, Strategy::SS}) {
                    v.train.strategy = st;
                    for (std::uint64_t seed : s.seeds) {
                        runs.push_back(run_experiment(v, seed, &data));
                        print_row(runs.back());
                    }
                }
            }
            write_ablation_outputs(s.output_dir, "ablate_noise100", runs);
            return kExitOk;
        }

        if (*report) {
            std::vector<fs::path> dirs(report_dirs.begin(), report_dirs.end());
            const MergeResult m = merge_runs(dirs);
            for (const auto& e : m.errors) std::cerr << "error: " << e << '\n';
            if (m.duplicates) std::cerr << "skipped " << m.duplicates << " duplicate run(s)\n";
            if (m.runs.empty()) {
                std::cerr << "no readable runs\n";
                return kExitRuntime;
            }
            std::vector<ResultRow> rows;
            std::vector<std::pair<std::string, std::vector<EpochMetrics>>> curves;
            for (const auto& r : m.runs) {
                rows.push_back(r.row);
                curves.emplace_back(r.dir.filename().string(), r.history);
            }
            std::string table = emit_table(rows, parse_table_format(report_format));
            if (parse_table_format(report_format) == TableFormat::Markdown)
                table += "\n" + emit_summary_markdown(summarize(rows));
            if (report_out.empty())
                std::cout << table;
            else
                write_text_file(report_out, table);
            if (!report_plots.empty()) emit_plots(curves, rows, report_plots);
            return m.errors.empty() ? kExitOk : kExitRuntime;
        }
    } catch (const std::invalid_argument& e) {
        std::cerr << "validation error: " << e.what() << '\n';
        return kExitValidation;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitOk;
}
