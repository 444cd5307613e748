// dgcn: synth / train / eval / ensemble / flops / export-topology.
// Failures print one line "error<TAB><kind><TAB><message>" to stderr and exit 2.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"

#include "dgcn/errors.hpp"
#include "dgcn/flops.hpp"
#include "dgcn/harness.hpp"

using namespace dgcn;

namespace {

struct ModelSource {
    std::string preset = "ntu-like";
    std::string config;

    RunConfig resolve() const { return config.empty() ? run_preset(preset) : load_run_config(config); }
};

void add_model_source(CLI::App* cmd, ModelSource& src) {
    cmd->add_option("--preset", src.preset, "ntu-like, kinetics-like, smoke, synthetic")->capture_default_str();
    cmd->add_option("--config", src.config, "run config JSON (overrides --preset)");
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << text;
}

void print_eval(const EvalResult& r, bool confusion, bool json) {
    if (json) {
        nlohmann::json j{{"samples", r.n_samples}, {"top1", r.top1}, {"top5", r.top5}};
        if (confusion) j["confusion"] = r.confusion;
        std::cout << j.dump() << "\n";
        return;
    }
    std::printf("samples %zu\ntop1 %.4f\ntop5 %.4f\n", r.n_samples, r.top1, r.top5);
    if (confusion) {
        std::printf("confusion (rows: true class, columns: predicted)\n");
        for (const auto& row : r.confusion) {
            for (std::size_t c = 0; c < row.size(); ++c) std::printf("%s%zu", c ? " " : "", row[c]);
            std::printf("\n");
        }
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dynamic GCN for skeleton action recognition"};
    app.require_subcommand(1);

    // synth
    auto* synth = app.add_subcommand("synth", "generate the procedural skeleton dataset");
    SynthSpec spec;
    std::string synth_out = "data/synthetic";
    synth->add_option("--out", synth_out, "output directory")->capture_default_str();
    synth->add_option("--classes", spec.n_classes)->capture_default_str();
    synth->add_option("--train-per-class", spec.train_per_class)->capture_default_str();
    synth->add_option("--test-per-class", spec.test_per_class)->capture_default_str();
    synth->add_option("--frames", spec.frames)->capture_default_str();
    synth->add_option("--noise", spec.noise_sigma, "Gaussian noise sigma")->capture_default_str();
    synth->add_option("--layout", spec.layout)->capture_default_str();
    synth->add_option("--seed", spec.seed)->capture_default_str();

    // train
    auto* train_cmd = app.add_subcommand("train", "train one stream");
    ModelSource train_src;
    train_src.preset = "smoke";
    add_model_source(train_cmd, train_src);
    std::optional<std::string> o_train, o_test, o_out, o_modality, o_learner;
    std::optional<std::size_t> o_epochs, o_batch;
    std::optional<double> o_lr, o_lambda;
    std::optional<std::uint64_t> o_seed;
    std::string dump_config;
    bool quiet = false;
    train_cmd->add_option("--train", o_train, "training manifest");
    train_cmd->add_option("--test", o_test, "evaluation manifest");
    train_cmd->add_option("--out", o_out, "output directory");
    train_cmd->add_option("--modality", o_modality, "joint, bone, joint_motion, bone_motion");
    train_cmd->add_option("--learner", o_learner, "none, cen, cen_symmetric, cen_feature, cen_temporal, nonlocal");
    train_cmd->add_option("--epochs", o_epochs);
    train_cmd->add_option("--batch-size", o_batch);
    train_cmd->add_option("--lr", o_lr);
    train_cmd->add_option("--lambda", o_lambda, "static topology weight (0 drops the static branch)");
    train_cmd->add_option("--seed", o_seed);
    train_cmd->add_option("--dump-config", dump_config, "write the resolved run config here and exit");
    train_cmd->add_flag("--quiet", quiet, "no per-epoch lines");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "top-1/top-5 of a checkpoint");
    std::string eval_ckpt, eval_manifest;
    bool eval_confusion = false, eval_json = false;
    eval_cmd->add_option("--checkpoint", eval_ckpt)->required();
    eval_cmd->add_option("--manifest", eval_manifest)->required();
    eval_cmd->add_flag("--confusion", eval_confusion, "print the confusion matrix");
    eval_cmd->add_flag("--json", eval_json);

    // ensemble
    auto* ens_cmd = app.add_subcommand("ensemble", "sum logits of several streams");
    std::vector<std::string> ens_ckpts;
    std::string ens_manifest;
    bool ens_confusion = false, ens_json = false;
    ens_cmd->add_option("--checkpoint", ens_ckpts, "repeatable")->required();
    ens_cmd->add_option("--manifest", ens_manifest)->required();
    ens_cmd->add_flag("--confusion", ens_confusion);
    ens_cmd->add_flag("--json", ens_json);

    // flops
    auto* flops_cmd = app.add_subcommand("flops", "analytic FLOPs per body");
    ModelSource flops_src;
    add_model_source(flops_cmd, flops_src);
    bool with_cen = false, without_cen = false, flops_json = false;
    std::string flops_out;
    flops_cmd->add_flag("--with-cen", with_cen);
    flops_cmd->add_flag("--without-cen", without_cen);
    flops_cmd->add_flag("--json", flops_json);
    flops_cmd->add_option("--out", flops_out, "also write the report to this file");

    // export-topology
    auto* topo_cmd = app.add_subcommand("export-topology", "mean learned adjacency of one class");
    std::string topo_ckpt, topo_manifest, topo_out = "topology";
    std::size_t topo_layer = 5;
    int topo_class = 0;
    double topo_threshold = 0.4;
    topo_cmd->add_option("--checkpoint", topo_ckpt)->required();
    topo_cmd->add_option("--manifest", topo_manifest)->required();
    topo_cmd->add_option("--layer", topo_layer, "1-based layer index")->capture_default_str();
    topo_cmd->add_option("--class", topo_class)->capture_default_str();
    topo_cmd->add_option("--threshold", topo_threshold)->capture_default_str();
    topo_cmd->add_option("--out", topo_out, "writes <out>.txt and <out>.dot")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error\tusage\t" << e.what() << "\n";
        return 2;
    }

    try {
        if (*synth) {
            auto r = synth_generate(spec, synth_out);
            std::printf("train %zu samples -> %s\ntest %zu samples -> %s\n", r.train.entries.size(),
                        r.train_manifest_path.c_str(), r.test.entries.size(), r.test_manifest_path.c_str());
        } else if (*train_cmd) {
            auto cfg = train_src.resolve();
            if (o_train) cfg.train_manifest = *o_train;
            if (o_test) cfg.test_manifest = *o_test;
            if (o_out) cfg.output_dir = *o_out;
            if (o_modality) cfg.modality = parse_modality(*o_modality);
            if (o_learner) cfg.model.learner = parse_learner_variant(*o_learner);
            if (o_epochs) {
                cfg.epochs = *o_epochs;
                std::erase_if(cfg.milestones, [&](std::size_t m) { return m >= cfg.epochs; });
            }
            if (o_batch) cfg.batch_size = *o_batch;
            if (o_lr) cfg.lr = *o_lr;
            if (o_lambda) cfg.model.lambda_static = *o_lambda;
            if (o_seed) cfg.seed = *o_seed;
            cfg.validate();
            if (!dump_config.empty()) {
                save_run_config(cfg, dump_config);
                return 0;
            }
            auto r = train(cfg, true, [&](const EpochRecord& rec) {
                if (quiet) return;
                std::printf("epoch %zu  loss %.4f  train_acc %.4f", rec.epoch, rec.train_loss, rec.train_acc);
                if (rec.top1 >= 0) std::printf("  top1 %.4f  top5 %.4f", rec.top1, rec.top5);
                std::printf("  lr %g  %.1fs\n", rec.lr, rec.seconds);
                std::fflush(stdout);
            });
            std::printf("checkpoint %s\n", r.checkpoint_path.c_str());
        } else if (*eval_cmd) {
            print_eval(evaluate_checkpoint(eval_ckpt, eval_manifest), eval_confusion, eval_json);
        } else if (*ens_cmd) {
            print_eval(ensemble_checkpoints(ens_ckpts, ens_manifest), ens_confusion, ens_json);
        } else if (*flops_cmd) {
            auto cfg = flops_src.resolve().model;
            cfg.validate();
            if (!with_cen && !without_cen) with_cen = without_cen = true;
            std::string label = flops_src.config.empty() ? flops_src.preset : flops_src.config;
            std::string text;
            nlohmann::json j = nlohmann::json::object();
            std::optional<CostReport> base, full;
            if (without_cen) base = count_model_flops(cfg, false, label);
            if (with_cen) full = count_model_flops(cfg, true, label);
            if (base) {
                text += format_report(*base);
                j["without_cen"] = report_to_json(*base);
            }
            if (full) {
                text += (text.empty() ? "" : "\n") + format_report(*full);
                j["with_cen"] = report_to_json(*full);
            }
            if (base && full) {
                auto o = overhead_report(*base, *full);
                char line[128];
                std::snprintf(line, sizeof line, "\nCeN overhead: %+.2f%%\n", 100 * o.ratio);
                text += line + format_overhead(o);
                j["overhead"] = overhead_to_json(o);
            }
            std::string out = flops_json ? j.dump(2) + "\n" : text;
            std::cout << out;
            if (!flops_out.empty()) write_file(flops_out, out);
        } else if (*topo_cmd) {
            if (topo_layer == 0) throw ValidationError("export-topology: --layer is 1-based");
            auto stream = load_stream(topo_ckpt);
            auto manifest = load_manifest(topo_manifest);
            auto seqs = load_dataset(manifest);
            auto r = export_topology(stream, seqs, topo_layer - 1, topo_class, topo_threshold);
            write_file(topo_out + ".txt", r.matrix_text);
            write_file(topo_out + ".dot", r.dot);
            std::printf("averaged %zu samples -> %s.txt, %s.dot\n", r.samples, topo_out.c_str(), topo_out.c_str());
        }
    } catch (const Error& e) {
        std::cerr << "error\t" << e.kind() << "\t" << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error\tinternal\t" << e.what() << "\n";
        return 2;
    }
    return 0;
}
