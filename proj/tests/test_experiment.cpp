#include <gtest/gtest.h>

#include <fstream>

#include "crl/experiment.hpp"
#include "test_util.hpp"

using namespace crl;
namespace fs = std::filesystem;

namespace {

ExperimentSpec tiny_spec(const fs::path& out) {
    ExperimentSpec s;
    s.dataset.size = 32;
    s.dataset.seed = 4;
    s.dataset.train_count = 16;
    s.dataset.test_count = 4;
    s.noise.ratio = 0.5;
    s.noise.iter_min = 1;
    s.noise.iter_max = 2;
    s.train.epochs = 2;
    s.train.batch_size = 8;
    s.train.learning_rate = 0.02;
    s.train.model.depth = 2;
    s.train.correction.jo_start_epoch = 1;
    s.output_dir = out.string();
    return s;
}

void write(const fs::path& p, const std::string& text) {
    std::ofstream f(p);
    f << text;
}

}  // namespace

TEST(Spec, JsonRoundTrip) {
    ExperimentSpec s = desk_preset();
    s.train.correction.alpha = 0.25;
    s.train.selection.criterion = SelectionCriterion::LossOnly;
    s.train.correction.jo_scope = JoScope::AllSamples;
    s.noise.mode = NoiseMode::Dilate;
    s.seeds = {1, 2, 3};
    s.checkpoint_every = 5;
    const json j = s;
    const ExperimentSpec back = j.get<ExperimentSpec>();
    EXPECT_EQ(json(back).dump(), j.dump());
    EXPECT_TRUE(back.train == s.train);
    EXPECT_TRUE(back.noise == s.noise);
    EXPECT_TRUE(back.dataset == s.dataset);
}

TEST(Spec, PartialSpecKeepsDefaults) {
    const auto dir = crl::testing::temp_dir("spec_partial");
    write(dir / "s.json", R"({"train": {"alpha": 0.2, "model": {"depth": 2}}, "seeds": [4]})");
    const ExperimentSpec s = load_experiment_spec(dir / "s.json");
    EXPECT_EQ(s.train.correction.alpha, 0.2);
    EXPECT_EQ(s.train.model.depth, 2);
    EXPECT_EQ(s.train.model.base_channels, 8);
    EXPECT_EQ(s.train.epochs, 100);
    EXPECT_EQ(s.seeds, std::vector<std::uint64_t>{4});
}

TEST(Spec, UnknownKeysAndBadValuesAreConfigErrors) {
    const auto dir = crl::testing::temp_dir("spec_bad");
    write(dir / "a.json", R"({"train": {"alpha": 0.2, "alhpa": 0.3}})");
    EXPECT_THROW(load_experiment_spec(dir / "a.json"), ConfigError);
    write(dir / "b.json", R"({"trian": {}})");
    EXPECT_THROW(load_experiment_spec(dir / "b.json"), ConfigError);
    write(dir / "c.json", R"({"train": {"epochs": "ten"}})");
    EXPECT_THROW(load_experiment_spec(dir / "c.json"), ConfigError);
    write(dir / "d.json", "{not json");
    EXPECT_THROW(load_experiment_spec(dir / "d.json"), ConfigError);
    write(dir / "e.json", R"({"train": {"strategy": "mixup"}})");
    EXPECT_THROW(load_experiment_spec(dir / "e.json"), ConfigError);
    EXPECT_THROW(load_experiment_spec(dir / "missing.json"), ConfigError);
}

TEST(Spec, HashIgnoresBookkeepingOnly) {
    const ExperimentSpec a = desk_preset();
    ExperimentSpec b = a;
    b.output_dir = "elsewhere";
    b.seeds = {7, 8};
    b.train.seed = 9;
    b.train.eval_every = 3;
    b.checkpoint_every = 2;
    b.selection_log = true;
    EXPECT_EQ(config_hash(a), config_hash(b));
    b.train.correction.alpha = 0.4;
    EXPECT_NE(config_hash(a), config_hash(b));
    ExperimentSpec c = a;
    c.noise.ratio = 0.25;
    EXPECT_NE(config_hash(a), config_hash(c));
    EXPECT_EQ(config_hash(a).size(), 16u);
}

TEST(Spec, DeskPresetIsValid) {
    const ExperimentSpec s = desk_preset();
    EXPECT_NO_THROW(s.validate());
    EXPECT_EQ(s.dataset.train_count, 200u);
    EXPECT_EQ(s.dataset.test_count, 100u);
    EXPECT_EQ(s.train.epochs, 30);
    EXPECT_EQ(s.train.batch_size, 16);
    EXPECT_EQ(s.train.model.depth, 3);
    EXPECT_EQ(s.train.model.base_channels, 8);
}

TEST(Spec, DataPathFallsBackToEnvironment) {
    DatasetSpec d;
    d.source = DataSource::Directory;
    ::unsetenv(kDataRootEnv);
    EXPECT_THROW(d.resolved_path(), ConfigError);
    ::setenv(kDataRootEnv, "/data/x", 1);
    EXPECT_EQ(d.resolved_path(), fs::path("/data/x"));
    d.path = "/data/y";
    EXPECT_EQ(d.resolved_path(), fs::path("/data/y"));
    ::unsetenv(kDataRootEnv);
}

TEST(Metrics, EpochHistoryJsonRoundTrip) {
    EpochMetrics m;
    m.epoch = 4;
    m.learning_rate = 0.01;
    m.train_loss = {0.5, 0.25, 0.125};
    m.jo_active = true;
    m.corrections = 9;
    m.selection_overlap = 0.75;
    m.test_dice = 0.9;
    const EpochMetrics back = epoch_metrics_from_json(json::parse(to_json_value(m).dump()));
    EXPECT_EQ(back.epoch, 4);
    EXPECT_EQ(back.train_loss, m.train_loss);
    EXPECT_TRUE(back.jo_active);
    EXPECT_EQ(back.corrections, 9);
    EXPECT_TRUE(std::isnan(back.selection_clean_fraction));
    EXPECT_EQ(back.selection_overlap, 0.75);
    EXPECT_EQ(back.test_dice, 0.9);
    EXPECT_FALSE(back.corrected_label_dice.has_value());
}

TEST(Runs, RunDirectoryLayoutAndMerge) {
    const auto out = crl::testing::temp_dir("runs_layout");
    ExperimentSpec s = tiny_spec(out);
    s.checkpoint_every = 1;
    s.selection_log = true;
    const RunOutcome r = run_experiment(s, 0);
    for (const char* f : {"config.json", "history.jsonl", "corruption_log.jsonl", "report.json", "selection.jsonl",
                          "checkpoints/epoch_1.json", "checkpoints/epoch_2_C.bin"})
        EXPECT_TRUE(fs::exists(r.dir / f)) << f;

    std::ifstream log(r.dir / "corruption_log.jsonl");
    std::string line;
    int lines = 0;
    while (std::getline(log, line)) {
        const json e = json::parse(line);
        EXPECT_TRUE(e.contains("id") && e.contains("op") && e.contains("n") && e.contains("dice_vs_clean"));
        ++lines;
    }
    EXPECT_EQ(lines, 8);

    Network net(s.train.model, 123);
    EXPECT_NO_THROW(load_weights(r.dir / "checkpoints" / "epoch_2_A.bin", net));
    const json ck = read_json_file(r.dir / "checkpoints" / "epoch_2.json");
    EXPECT_EQ(ck.at("members").at("A").at("init_seed").get<std::uint64_t>(), member_seed(0, Member::A));

    const RunRecord rec = read_run_dir(r.dir);
    EXPECT_EQ(rec.history.size(), 2u);
    EXPECT_EQ(rec.row.strategy, "ss_jo");
    EXPECT_EQ(rec.row.k, 1);
    EXPECT_NEAR(rec.row.dice, r.row.dice, 5e-5);

    // A second seed plus a copy of the first: the copy is a duplicate.
    run_experiment(s, 1);
    fs::copy(r.dir, out / "copy_of_first", fs::copy_options::recursive);
    const MergeResult m = merge_runs({out});
    EXPECT_EQ(m.runs.size(), 2u);
    EXPECT_EQ(m.duplicates, 1u);
    EXPECT_TRUE(m.errors.empty());
}

TEST(Runs, MergeReportsUnreadableDirectories) {
    const auto out = crl::testing::temp_dir("runs_bad");
    fs::create_directories(out / "broken");
    write(out / "broken" / "config.json", "{}");
    const MergeResult m = merge_runs({out / "broken", out / "does_not_exist"});
    ASSERT_EQ(m.errors.size(), 2u);
    EXPECT_NE(m.errors[0].find("missing history.jsonl"), std::string::npos);
    EXPECT_TRUE(m.runs.empty());

    // Scanning the parent: plot folders are skipped, half-written runs are still errors.
    fs::create_directories(out / "alpha_plots");
    write(out / "alpha_plots" / "dice_curves.svg", "<svg/>");
    const MergeResult scan = merge_runs({out});
    ASSERT_EQ(scan.errors.size(), 1u);
    EXPECT_NE(scan.errors[0].find("broken"), std::string::npos);
}

TEST(Runs, BranchedVariantsMatchFromScratchRuns) {
    const auto out = crl::testing::temp_dir("runs_branch");
    ExperimentSpec s = tiny_spec(out);
    s.train.epochs = 3;
    s.train.correction.jo_start_epoch = 2;
    std::vector<std::pair<std::string, TrainConfig>> variants;
    for (double a : {0.0, 1.0}) {
        TrainConfig c = s.train;
        c.correction.alpha = a;
        variants.emplace_back("alpha=" + detail::fmt("%g", a), c);
    }
    TrainConfig ss = s.train;
    ss.strategy = Strategy::SS;
    variants.emplace_back("ss", ss);
    const auto branched = run_branched(s, 5, variants, 2);
    ASSERT_EQ(branched.size(), 3u);
    ExperimentSpec scratch = s;
    scratch.output_dir = (out / "scratch").string();
    scratch.train.correction.alpha = 1.0;
    const RunOutcome ref = run_experiment(scratch, 5, nullptr, "alpha=1");
    EXPECT_EQ(branched[1].result.test_dice, ref.result.test_dice);
    EXPECT_EQ(read_history(branched[1].dir / "history.jsonl").size(), 3u);
    EXPECT_EQ(branched[1].dir.filename(), ref.dir.filename());

    // Variants that already differ before the branch point are rejected.
    variants[0].second.learning_rate = 0.5;
    EXPECT_THROW(run_branched(s, 5, variants, 2), ConfigError);
    variants[0].second.learning_rate = s.train.learning_rate;
    variants[0].second.correction.jo_start_epoch = 1;
    EXPECT_THROW(run_branched(s, 5, variants, 2), ConfigError);
}
