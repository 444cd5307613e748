#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>

#include "dgcn/errors.hpp"
#include "dgcn/harness.hpp"

using namespace dgcn;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    auto dir = fs::temp_directory_path() / ("dgcn_harness_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), {});
}

SynthSpec small_spec(std::size_t classes, std::size_t train, std::size_t test, std::uint64_t seed = 1) {
    SynthSpec s;
    s.n_classes = classes;
    s.train_per_class = train;
    s.test_per_class = test;
    s.frames = 20;
    s.seed = seed;
    return s;
}

RunConfig smoke_config() {
    auto c = run_preset("smoke");
    c.model.n_classes = 2;
    return c;
}

struct CliResult {
    int status;
    std::string out;
};

CliResult run_cli(const std::string& args) {
    std::string cmd = std::string(DGCN_CLI_PATH) + " " + args + " 2>&1";
    std::unique_ptr<FILE, int (*)(FILE*)> pipe(popen(cmd.c_str(), "r"), pclose);
    std::string out;
    std::array<char, 4096> buf;
    while (auto n = std::fread(buf.data(), 1, buf.size(), pipe.get())) out.append(buf.data(), n);
    int status = pclose(pipe.release());
    return {WEXITSTATUS(status), out};
}

}  // namespace

TEST(RunConfig, DefaultMirrorsPublishedSchedule) {
    RunConfig c;
    EXPECT_DOUBLE_EQ(c.lr, 0.1);
    EXPECT_EQ(c.milestones, (std::vector<std::size_t>{35, 55}));
    EXPECT_EQ(c.epochs, 65u);
    EXPECT_DOUBLE_EQ(c.weight_decay, 0.0004);
    EXPECT_EQ(c.batch_size, 64u);
    EXPECT_DOUBLE_EQ(c.momentum, 0.9);
    EXPECT_TRUE(c.nesterov);
    EXPECT_DOUBLE_EQ(c.lr_decay, 0.1);
    EXPECT_EQ(run_preset("ntu-like").model, model_preset("ntu-like"));
    EXPECT_EQ(run_preset("kinetics-like").model.n_classes, 400u);
    EXPECT_THROW(run_preset("imagenet"), ValidationError);
}

TEST(RunConfig, JsonRoundTripAndValidation) {
    auto dir = scratch_dir("config");
    auto c = run_preset("synthetic");
    c.modality = Modality::bone_motion;
    c.seed = 99;
    c.train_manifest = "a/train.manifest";
    c.model.learner = LearnerVariant::cen_symmetric;
    save_run_config(c, (dir / "run.json").string());
    EXPECT_EQ(load_run_config((dir / "run.json").string()), c);

    nlohmann::json j = c;
    j["colour"] = "red";
    RunConfig d;
    EXPECT_THROW(from_json(j, d), ParseError);

    auto bad = c;
    bad.milestones = {10, 40};
    EXPECT_THROW(bad.validate(), ValidationError);
    bad.milestones = {10, 5};
    EXPECT_THROW(bad.validate(), ValidationError);
    bad = c;
    bad.batch_size = 0;
    EXPECT_THROW(bad.validate(), ValidationError);
    EXPECT_THROW(parse_modality("depth"), ValidationError);
    for (auto m : {Modality::joint, Modality::bone, Modality::joint_motion, Modality::bone_motion})
        EXPECT_EQ(parse_modality(to_string(m)), m);
}

TEST(PrepareSet, ShapesPaddingAndModalities) {
    auto seqs = synth_samples(small_spec(2, 1, 1), "train");
    auto cfg = model_preset("synthetic");
    cfg.persons = 2;
    auto joint = prepare_set(seqs, cfg, Modality::joint);
    ASSERT_EQ(joint.size(), 2u);
    EXPECT_EQ(joint.samples[0].size(), 2u * 3 * 16 * 25);
    std::vector<std::size_t> idx{0, 1};
    auto x = joint.batch(idx);
    EXPECT_EQ(x.shape(), (Shape{4, 3, 16, 25}));
    // Second person is padding.
    for (std::size_t i = 3 * 16 * 25; i < joint.samples[0].size(); ++i) ASSERT_EQ(joint.samples[0][i], 0.0f);

    auto layout = build_layout("ntu25");
    auto bone = prepare_set(seqs, cfg, Modality::bone_motion);
    Tensor<float> j0({2, 3, 16, 25}, joint.samples[1]);
    auto expected = derive_motion(derive_bone(j0, layout));
    auto e = expected.data();
    for (std::size_t i = 0; i < e.size(); ++i) ASSERT_EQ(bone.samples[1][i], e[i]);

    auto wrong = cfg;
    wrong.layout = "openpose18";
    EXPECT_THROW(prepare_set(seqs, wrong, Modality::joint), DimensionError);
    wrong = cfg;
    wrong.in_channels = 2;
    EXPECT_THROW(prepare_set(seqs, wrong, Modality::joint), DimensionError);
}

TEST(MetricsLog, FormatParseAndOrdering) {
    MetricsLog log;
    log.append({1, 0.9, 0.5, 0.4, 0.8, 0.1, 3.2});
    log.append({2, 0.5, 0.7, -1, -1, 0.1, 3.1});
    auto text = log.format();
    EXPECT_EQ(text.substr(0, text.find('\n')), "epoch\ttrain_loss\ttrain_acc\ttop1\ttop5\tlr");
    EXPECT_EQ(text.find("3.2"), std::string::npos);  // wall time lives in the timing file
    auto back = MetricsLog::parse(text);
    ASSERT_EQ(back.records.size(), 2u);
    EXPECT_DOUBLE_EQ(back.records[0].top5, 0.8);
    EXPECT_DOUBLE_EQ(back.records[1].top1, -1);
    EXPECT_THROW(log.append({2, 0, 0, 0, 0, 0, 0}), StateError);
    EXPECT_THROW(MetricsLog::parse("nope\n"), ParseError);
}

TEST(Scoring, TopKOrderingTiesAndConfusion) {
    Tensor<float> logits({4, 6}, {0, 1, 2, 3, 4, 5,     // label 5: top1
                                  5, 4, 3, 2, 1, 0,     // label 4: top5 only
                                  0, 0, 0, 0, 0, 0,     // label 0: tie goes to class 0
                                  9, 8, 7, 6, 5, 4});   // label 5: rank 6, miss
    std::vector<int> labels{5, 4, 0, 5};
    auto r = score_logits(logits, labels);
    EXPECT_DOUBLE_EQ(r.top1, 0.5);
    EXPECT_DOUBLE_EQ(r.top5, 0.75);
    EXPECT_EQ(r.confusion[5][5], 1u);
    EXPECT_EQ(r.confusion[4][0], 1u);
    EXPECT_EQ(r.confusion[0][0], 1u);
    EXPECT_EQ(r.confusion[5][0], 1u);
    EXPECT_GE(r.top5, r.top1);
    std::vector<int> bad{6, 0, 0, 0};
    EXPECT_THROW(score_logits(logits, bad), ValidationError);
}

TEST(Evaluate, SingleClassDatasetIsPerfectForThatClass) {
    Tensor<float> logits({3, 2}, {1, 0, 2, -1, 0.5f, 0.25f});
    std::vector<int> labels{0, 0, 0};
    EXPECT_DOUBLE_EQ(score_logits(logits, labels).top1, 1.0);
}

TEST(Evaluate, RandomModelsSitNearChance) {
    auto cfg = model_preset("synthetic");
    auto test = prepare_set(synth_samples(small_spec(5, 1, 20, 4), "test"), cfg, Modality::joint);
    double mean = 0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        DynamicGCN<float> model(cfg, seed);
        auto r = evaluate(model, test);
        EXPECT_GE(r.top1, 0.1) << "seed " << seed;
        EXPECT_LE(r.top1, 0.35) << "seed " << seed;
        EXPECT_GE(r.top5, r.top1);
        mean += r.top1 / 5;
    }
    EXPECT_NEAR(mean, 0.2, 0.1);
}

TEST(Train, SmokeLossDecreasesAndRunsAreDeterministic) {
    auto seqs_train = synth_samples(small_spec(2, 10, 5), "train");
    auto seqs_test = synth_samples(small_spec(2, 10, 5), "test");
    auto cfg = smoke_config();
    auto a = train_on(cfg, seqs_train, seqs_test);
    ASSERT_EQ(a.log.records.size(), 3u);
    EXPECT_LT(a.log.records[2].train_loss, a.log.records[0].train_loss);
    auto b = train_on(cfg, seqs_train, seqs_test);
    EXPECT_EQ(a.log.format(), b.log.format());
    cfg.seed = 5;
    auto c = train_on(cfg, seqs_train, seqs_test);
    EXPECT_NE(a.log.format(), c.log.format());
}

TEST(Train, WritesArtifactsAndCheckpointReproducesLogits) {
    auto dir = scratch_dir("train");
    auto data = synth_generate(small_spec(2, 10, 5), (dir / "data").string());
    auto cfg = smoke_config();
    cfg.train_manifest = data.train_manifest_path;
    cfg.test_manifest = data.test_manifest_path;
    cfg.modality = Modality::bone;
    cfg.output_dir = (dir / "run1").string();
    train(cfg);
    fs::rename(dir / "run1", dir / "first");
    auto r1 = train(cfg);
    for (const char* f : {"metrics.tsv", "model.ckpt", "run.json"})
        EXPECT_EQ(slurp(dir / "run1" / f), slurp(dir / "first" / f)) << f;
    EXPECT_TRUE(fs::exists(dir / "run1" / "timing.tsv"));
    EXPECT_EQ(load_run_config((dir / "run1" / "run.json").string()), cfg);

    DynamicGCN<float> trained(cfg.model, 0);
    train_on(cfg, load_dataset(data.train), load_dataset(data.test), false, {}, &trained);
    auto set = prepare_set(load_dataset(data.test), cfg.model, cfg.modality);
    auto before = predict_logits(trained, set);
    auto stream = load_stream(r1.checkpoint_path);
    EXPECT_EQ(stream.modality, Modality::bone);
    auto after = predict_logits(stream.model, set);
    auto bv = before.data();
    auto av = after.data();
    ASSERT_EQ(bv.size(), av.size());
    for (std::size_t i = 0; i < bv.size(); ++i) ASSERT_EQ(bv[i], av[i]);

    auto ev = evaluate_checkpoint(r1.checkpoint_path, data.test_manifest_path);
    EXPECT_DOUBLE_EQ(ev.top1, r1.log.records.back().top1);
}

TEST(Train, ErrorsAreReported) {
    auto seqs = synth_samples(small_spec(2, 4, 1), "train");
    auto cfg = smoke_config();
    cfg.lr = 1e30;
    EXPECT_THROW(train_on(cfg, seqs, {}), NumericError);
    cfg = smoke_config();
    cfg.model.layout = "openpose18";
    EXPECT_THROW(train_on(cfg, seqs, {}), DimensionError);
    cfg = smoke_config();
    cfg.train_manifest = "/nonexistent/train.manifest";
    EXPECT_THROW(train(cfg, false), IoError);
    cfg = smoke_config();
    cfg.model.n_classes = 1;
    EXPECT_THROW(train_on(cfg, seqs, {}), ValidationError);
}

TEST(Ensemble, SingleAndDuplicatedStreamsMatchEvaluate) {
    auto dir = scratch_dir("ensemble");
    auto data = synth_generate(small_spec(2, 10, 5), (dir / "data").string());
    auto cfg = smoke_config();
    cfg.train_manifest = data.train_manifest_path;
    cfg.output_dir = (dir / "a").string();
    auto ck = train(cfg).checkpoint_path;
    auto single = evaluate_checkpoint(ck, data.test_manifest_path);
    auto one = ensemble_checkpoints({ck}, data.test_manifest_path);
    auto two = ensemble_checkpoints({ck, ck}, data.test_manifest_path);
    EXPECT_EQ(one.top1, single.top1);
    EXPECT_EQ(one.confusion, single.confusion);
    EXPECT_EQ(two.top1, single.top1);
    EXPECT_EQ(two.confusion, single.confusion);

    auto other = cfg;
    other.model.n_classes = 3;
    other.output_dir = (dir / "b").string();
    auto ck3 = train(other).checkpoint_path;
    EXPECT_THROW(ensemble_checkpoints({ck, ck3}, data.test_manifest_path), ValidationError);
    EXPECT_THROW(ensemble_checkpoints({}, data.test_manifest_path), ValidationError);
}

TEST(Evaluate, LayoutMismatchIsRejected) {
    auto dir = scratch_dir("mismatch");
    auto spec = small_spec(2, 2, 2);
    spec.layout = "openpose18";
    auto data = synth_generate(spec, (dir / "data").string());
    DynamicGCN<float> model(model_preset("smoke"), 0);
    save_checkpoint((dir / "m.ckpt").string(), model);
    EXPECT_THROW(evaluate_checkpoint((dir / "m.ckpt").string(), data.test_manifest_path), ValidationError);
}

TEST(ExportTopology, RowsStayInUnitBallAndThresholdFilters) {
    auto cfg = model_preset("synthetic");
    auto seqs = synth_samples(small_spec(3, 4, 1), "train");
    LoadedStream stream{DynamicGCN<float>(cfg, 3), Modality::joint};
    auto r = export_topology(stream, seqs, 1, 2);
    EXPECT_EQ(r.samples, 4u);
    ASSERT_EQ(r.matrix.size(), 25u);
    for (const auto& row : r.matrix) {
        double sq = 0;
        for (double v : row) sq += v * v;
        EXPECT_LE(std::sqrt(sq), 1 + 1e-5);
    }
    EXPECT_NE(r.dot.find("color=gray"), std::string::npos);
    auto none = export_topology(stream, seqs, 1, 2, 1.1);
    EXPECT_EQ(none.dot.find("color=red"), std::string::npos);
    std::size_t physical = 0;
    for (std::size_t p = 0; (p = none.dot.find("color=gray", p)) != std::string::npos; ++p) ++physical;
    EXPECT_EQ(physical, build_layout("ntu25").edges.size());
    // Any entry above the threshold shows up as a learned edge.
    auto low = export_topology(stream, seqs, 1, 2, 0.0);
    std::size_t positive = 0;
    for (const auto& row : low.matrix)
        for (double v : row) positive += v > 0.0;
    std::size_t red = 0;
    for (std::size_t p = 0; (p = low.dot.find("color=red", p)) != std::string::npos; ++p) ++red;
    EXPECT_EQ(red, positive);

    EXPECT_THROW(export_topology(stream, seqs, 4, 2), ValidationError);
    EXPECT_THROW(export_topology(stream, seqs, 0, 7), ValidationError);
    cfg.learner = LearnerVariant::none;
    LoadedStream plain{DynamicGCN<float>(cfg, 3), Modality::joint};
    EXPECT_THROW(export_topology(plain, seqs, 0, 0), StateError);
}

TEST(Cli, SubcommandsAndErrorLine) {
    auto dir = scratch_dir("cli").string();
    auto synth = run_cli("synth --out " + dir + "/d --classes 2 --train-per-class 4 --test-per-class 2 --frames 12");
    ASSERT_EQ(synth.status, 0) << synth.out;
    auto tr = run_cli("train --preset smoke --train " + dir + "/d/train.manifest --test " + dir +
                      "/d/test.manifest --out " + dir + "/r --epochs 2 --quiet");
    ASSERT_EQ(tr.status, 0) << tr.out;
    auto ev = run_cli("eval --checkpoint " + dir + "/r/model.ckpt --manifest " + dir + "/d/test.manifest --json");
    ASSERT_EQ(ev.status, 0) << ev.out;
    auto j = nlohmann::json::parse(ev.out);
    EXPECT_GE(j["top5"].get<double>(), j["top1"].get<double>());
    auto fl = run_cli("flops --preset ntu-like --json");
    ASSERT_EQ(fl.status, 0);
    auto f = nlohmann::json::parse(fl.out);
    EXPECT_LT(f["without_cen"]["total_flops"].get<std::uint64_t>(), f["with_cen"]["total_flops"].get<std::uint64_t>());
    auto topo = run_cli("export-topology --checkpoint " + dir + "/r/model.ckpt --manifest " + dir +
                        "/d/test.manifest --layer 1 --class 1 --out " + dir + "/topo");
    ASSERT_EQ(topo.status, 0) << topo.out;
    EXPECT_TRUE(fs::exists(dir + "/topo.dot"));

    auto missing = run_cli("eval --checkpoint " + dir + "/none.ckpt --manifest " + dir + "/d/test.manifest");
    EXPECT_EQ(missing.status, 2);
    EXPECT_EQ(missing.out.rfind("error\tio\t", 0), 0u) << missing.out;
    auto usage = run_cli("train --epochs banana");
    EXPECT_EQ(usage.status, 2);
    EXPECT_EQ(usage.out.rfind("error\tusage\t", 0), 0u) << usage.out;
    auto bad_mod = run_cli("train --modality depth");
    EXPECT_EQ(bad_mod.out.rfind("error\tvalidation\t", 0), 0u) << bad_mod.out;
}
