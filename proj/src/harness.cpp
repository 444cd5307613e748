#include "dgcn/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "dgcn/errors.hpp"
#include "dgcn/ops.hpp"
#include "dgcn/optim.hpp"

namespace fs = std::filesystem;

namespace dgcn {

std::string to_string(Modality m) {
    switch (m) {
        case Modality::joint: return "joint";
        case Modality::bone: return "bone";
        case Modality::joint_motion: return "joint_motion";
        case Modality::bone_motion: return "bone_motion";
    }
    return "?";
}

Modality parse_modality(const std::string& name) {
    for (auto m : {Modality::joint, Modality::bone, Modality::joint_motion, Modality::bone_motion})
        if (to_string(m) == name) return m;
    throw ValidationError("unknown modality '" + name + "' (expected joint, bone, joint_motion, bone_motion)");
}

void RunConfig::validate() const {
    model.validate();
    if (batch_size == 0) throw ValidationError("run config: batch_size must be >= 1");
    if (epochs == 0) throw ValidationError("run config: epochs must be >= 1");
    if (eval_interval == 0) throw ValidationError("run config: eval_interval must be >= 1");
    for (std::size_t i = 0; i < milestones.size(); ++i) {
        if (milestones[i] >= epochs)
            throw ValidationError("run config: milestone " + std::to_string(milestones[i]) + " is not below epochs " +
                                  std::to_string(epochs));
        if (i && milestones[i] <= milestones[i - 1])
            throw ValidationError("run config: milestones must be strictly increasing");
    }
    for (auto [name, v] : {std::pair{"lr", lr}, {"momentum", momentum}, {"weight_decay", weight_decay},
                           {"lr_decay", lr_decay}})
        if (!std::isfinite(v) || v < 0) throw ValidationError(std::string("run config: ") + name + " must be >= 0");
}

RunConfig run_preset(const std::string& name) {
    RunConfig c;
    if (name == "ntu-like" || name == "kinetics-like") {
        c.model = model_preset(name);
        return c;
    }
    if (name == "smoke") {
        c.model = model_preset("smoke");
        c.lr = 0.05;
        c.batch_size = 4;
        c.epochs = 3;
        c.milestones = {};
        c.output_dir = "runs/smoke";
        return c;
    }
    if (name == "synthetic") {
        c.model = model_preset("synthetic");
        c.batch_size = 16;
        c.epochs = 30;
        c.milestones = {20, 26};
        c.output_dir = "runs/synthetic";
        return c;
    }
    throw ValidationError("unknown run preset '" + name + "' (expected ntu-like, kinetics-like, smoke, synthetic)");
}

void to_json(nlohmann::json& j, const RunConfig& c) {
    j = {{"model", c.model},
         {"lr", c.lr},
         {"momentum", c.momentum},
         {"nesterov", c.nesterov},
         {"weight_decay", c.weight_decay},
         {"batch_size", c.batch_size},
         {"epochs", c.epochs},
         {"milestones", c.milestones},
         {"lr_decay", c.lr_decay},
         {"eval_interval", c.eval_interval},
         {"train_manifest", c.train_manifest},
         {"test_manifest", c.test_manifest},
         {"modality", to_string(c.modality)},
         {"seed", c.seed},
         {"output_dir", c.output_dir}};
}

void from_json(const nlohmann::json& j, RunConfig& c) {
    if (!j.is_object()) throw ParseError("run config must be a JSON object");
    static const std::set<std::string> known{"model",         "lr",           "momentum",       "nesterov",
                                             "weight_decay",  "batch_size",   "epochs",         "milestones",
                                             "lr_decay",      "eval_interval", "train_manifest", "test_manifest",
                                             "modality",      "seed",         "output_dir"};
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!known.count(it.key())) throw ParseError("run config: unknown key '" + it.key() + "'");
    try {
        auto get = [&](const char* key, auto& field) {
            if (j.contains(key)) j.at(key).get_to(field);
        };
        if (j.contains("model")) {
            ModelConfig m = c.model;
            from_json(j.at("model"), m);
            c.model = m;
        }
        get("lr", c.lr);
        get("momentum", c.momentum);
        get("nesterov", c.nesterov);
        get("weight_decay", c.weight_decay);
        get("batch_size", c.batch_size);
        get("epochs", c.epochs);
        get("milestones", c.milestones);
        get("lr_decay", c.lr_decay);
        get("eval_interval", c.eval_interval);
        get("train_manifest", c.train_manifest);
        get("test_manifest", c.test_manifest);
        if (j.contains("modality")) c.modality = parse_modality(j.at("modality").get<std::string>());
        get("seed", c.seed);
        get("output_dir", c.output_dir);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("run config: ") + e.what());
    }
}

void save_run_config(const RunConfig& c, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write '" + path + "'");
    out << nlohmann::json(c).dump(2) << "\n";
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(path + ": " + e.what());
    }
    RunConfig c;
    from_json(j, c);
    c.validate();
    return c;
}

Tensor<float> PreparedSet::batch(std::span<const std::size_t> indices) const {
    const std::size_t block = persons * channels * frames * joints;
    std::vector<float> data;
    data.reserve(indices.size() * block);
    for (auto i : indices) data.insert(data.end(), samples.at(i).begin(), samples.at(i).end());
    return Tensor<float>({indices.size() * persons, channels, frames, joints}, std::move(data));
}

PreparedSet prepare_set(const std::vector<SkeletonSequence>& seqs, const ModelConfig& config, Modality modality) {
    auto layout = build_layout(config.layout);
    PreparedSet out;
    out.persons = config.persons;
    out.channels = config.in_channels;
    out.frames = config.frames;
    out.joints = layout.n_joints;
    for (const auto& raw : seqs) {
        if (raw.joints != layout.n_joints)
            throw DimensionError("sample '" + raw.sample_id + "' has " + std::to_string(raw.joints) +
                                 " joints, layout '" + layout.name + "' has " + std::to_string(layout.n_joints));
        if (raw.dims != config.in_channels)
            throw DimensionError("sample '" + raw.sample_id + "' has " + std::to_string(raw.dims) +
                                 " coordinates, model expects " + std::to_string(config.in_channels));
        if (raw.persons > config.persons)
            throw DimensionError("sample '" + raw.sample_id + "' has " + std::to_string(raw.persons) +
                                 " persons, model takes " + std::to_string(config.persons));
        auto seq = normalize_coords(resize_sequence(raw, config.frames), layout);
        std::vector<float> block(out.persons * out.channels * out.frames * out.joints, 0.0f);
        for (std::size_t m = 0; m < seq.persons; ++m)
            for (std::size_t c = 0; c < seq.dims; ++c)
                for (std::size_t t = 0; t < seq.frames; ++t)
                    for (std::size_t n = 0; n < seq.joints; ++n)
                        block[((m * out.channels + c) * out.frames + t) * out.joints + n] = seq.at(t, m, n, c);
        if (modality != Modality::joint) {
            NoGradGuard no_grad;
            Tensor<float> x({out.persons, out.channels, out.frames, out.joints}, std::move(block));
            if (modality == Modality::bone || modality == Modality::bone_motion) x = derive_bone(x, layout);
            if (modality == Modality::joint_motion || modality == Modality::bone_motion) x = derive_motion(x);
            auto v = x.data();
            block.assign(v.begin(), v.end());
        }
        out.samples.push_back(std::move(block));
        out.labels.push_back(raw.label);
        out.ids.push_back(raw.sample_id);
    }
    return out;
}

void MetricsLog::append(const EpochRecord& r) {
    if (!records.empty() && r.epoch <= records.back().epoch)
        throw StateError("metrics log: epoch " + std::to_string(r.epoch) + " does not follow " +
                         std::to_string(records.back().epoch));
    records.push_back(r);
}

namespace {

std::string fmt(double v, const char* spec = "%.6f") {
    if (v < 0) return "-";
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

}  // namespace

std::string MetricsLog::format() const {
    std::string out = "epoch\ttrain_loss\ttrain_acc\ttop1\ttop5\tlr\n";
    for (const auto& r : records)
        out += std::to_string(r.epoch) + "\t" + fmt(r.train_loss) + "\t" + fmt(r.train_acc) + "\t" + fmt(r.top1) +
               "\t" + fmt(r.top5) + "\t" + fmt(r.lr, "%.8g") + "\n";
    return out;
}

std::string MetricsLog::format_timing() const {
    std::string out = "epoch\tseconds\n";
    for (const auto& r : records) out += std::to_string(r.epoch) + "\t" + fmt(r.seconds, "%.3f") + "\n";
    return out;
}

MetricsLog MetricsLog::parse(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line.rfind("epoch\ttrain_loss", 0) != 0)
        throw ParseError("metrics log: missing header");
    MetricsLog log;
    auto num = [](const std::string& s) { return s == "-" ? -1.0 : std::stod(s); };
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string f[6];
        for (auto& x : f)
            if (!std::getline(ls, x, '\t')) throw ParseError("metrics log: short line '" + line + "'");
        EpochRecord r;
        try {
            r.epoch = std::stoul(f[0]);
            r.train_loss = num(f[1]);
            r.train_acc = num(f[2]);
            r.top1 = num(f[3]);
            r.top5 = num(f[4]);
            r.lr = num(f[5]);
        } catch (const std::exception&) {
            throw ParseError("metrics log: bad number in '" + line + "'");
        }
        log.append(r);
    }
    return log;
}

EvalResult score_logits(const Tensor<float>& logits, std::span<const int> labels) {
    if (logits.dim() != 2 || logits.size(0) != labels.size())
        throw DimensionError("score_logits: logits " + to_string(logits.shape()) + " vs " +
                             std::to_string(labels.size()) + " labels");
    const std::size_t n = logits.size(0), k = logits.size(1);
    EvalResult r;
    r.logits = logits;
    r.n_samples = n;
    r.confusion.assign(k, std::vector<std::size_t>(k, 0));
    auto v = logits.data();
    std::size_t hit1 = 0, hit5 = 0;
    for (std::size_t i = 0; i < n; ++i) {
        auto row = v.subspan(i * k, k);
        auto label = static_cast<std::size_t>(labels[i]);
        if (label >= k) throw ValidationError("score_logits: label " + std::to_string(label) + " >= classes");
        std::size_t pred = 0, rank = 0;
        for (std::size_t c = 0; c < k; ++c) {
            if (row[c] > row[pred]) pred = c;
            if (row[c] > row[label] || (row[c] == row[label] && c < label)) ++rank;
        }
        ++r.confusion[label][pred];
        hit1 += pred == label;
        hit5 += rank < 5;
    }
    r.top1 = n ? double(hit1) / n : 0.0;
    r.top5 = n ? double(hit5) / n : 0.0;
    return r;
}

Tensor<float> predict_logits(DynamicGCN<float>& model, const PreparedSet& set, std::size_t batch_size) {
    NoGradGuard no_grad;
    const std::size_t k = model.config().n_classes;
    std::vector<float> all;
    all.reserve(set.size() * k);
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < set.size(); start += batch_size) {
        idx.clear();
        for (std::size_t i = start; i < std::min(set.size(), start + batch_size); ++i) idx.push_back(i);
        auto logits = model.forward(set.batch(idx), false, set.persons);
        auto v = logits.data();
        all.insert(all.end(), v.begin(), v.end());
    }
    return Tensor<float>({set.size(), k}, std::move(all));
}

EvalResult evaluate(DynamicGCN<float>& model, const PreparedSet& set, std::size_t batch_size) {
    return score_logits(predict_logits(model, set, batch_size), set.labels);
}

namespace {

nlohmann::json stream_meta(const RunConfig& c) {
    return {{"modality", to_string(c.modality)}, {"seed", c.seed}, {"run", nlohmann::json(c)}};
}

void write_text(const fs::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw IoError("cannot write '" + p.string() + "'");
    out << s;
}

void check_layout(const ModelConfig& m, const std::string& layout, const std::string& where) {
    if (!layout.empty() && layout != build_layout(m.layout).name)
        throw ValidationError(where + ": data layout '" + layout + "' does not match model layout '" + m.layout +
                              "'");
}

}  // namespace

TrainResult train_on(const RunConfig& config, const std::vector<SkeletonSequence>& train_set,
                     const std::vector<SkeletonSequence>& test_set, bool write_files, const EpochCallback& on_epoch,
                     DynamicGCN<float>* trained) {
    config.validate();
    if (train_set.empty()) throw ValidationError("train: empty training set");
    for (const auto& s : train_set)
        if (static_cast<std::size_t>(s.label) >= config.model.n_classes)
            throw ValidationError("train: sample '" + s.sample_id + "' label " + std::to_string(s.label) +
                                  " exceeds n_classes " + std::to_string(config.model.n_classes));
    auto train_data = prepare_set(train_set, config.model, config.modality);
    auto test_data = prepare_set(test_set, config.model, config.modality);

    DynamicGCN<float> model(config.model, config.seed);
    auto params = model.trainable_parameters();
    std::mt19937_64 order_rng(config.seed ^ 0x5eed0da7a0dc0ffeULL);
    SgdOptions opts;
    opts.momentum = config.momentum;
    opts.weight_decay = config.weight_decay;
    opts.nesterov = config.nesterov;

    TrainResult result;
    std::vector<std::size_t> order(train_data.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        auto t0 = std::chrono::steady_clock::now();
        opts.lr = learning_rate_at(epoch, config.lr, config.milestones, config.lr_decay);
        std::shuffle(order.begin(), order.end(), order_rng);
        double loss_sum = 0;
        std::size_t correct = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            std::span<const std::size_t> idx(order.data() + start,
                                             std::min(config.batch_size, order.size() - start));
            std::vector<int> labels;
            for (auto i : idx) labels.push_back(train_data.labels[i]);
            auto logits = model.forward(train_data.batch(idx), true, train_data.persons);
            auto loss = softmax_cross_entropy(logits, std::span<const int>(labels));
            float lv = loss.item();
            if (!std::isfinite(lv))
                throw NumericError("train: non-finite loss " + std::to_string(lv) + " at epoch " +
                                   std::to_string(epoch + 1) + ", batch starting at " + std::to_string(start) +
                                   " (lr " + std::to_string(opts.lr) + ")");
            loss.backward();
            sgd_nesterov_step(std::span<Parameter<float>* const>(params), opts);
            loss_sum += double(lv) * idx.size();
            auto sc = score_logits(logits.detach(), labels);
            correct += static_cast<std::size_t>(std::lround(sc.top1 * idx.size()));
        }
        EpochRecord rec;
        rec.epoch = epoch + 1;
        rec.train_loss = loss_sum / order.size();
        rec.train_acc = double(correct) / order.size();
        rec.lr = opts.lr;
        bool last = epoch + 1 == config.epochs;
        if (test_data.size() && (last || (epoch + 1) % config.eval_interval == 0)) {
            auto ev = evaluate(model, test_data, config.batch_size);
            rec.top1 = ev.top1;
            rec.top5 = ev.top5;
        }
        rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.log.append(rec);
        if (on_epoch) on_epoch(rec);
    }

    if (write_files) {
        fs::path dir(config.output_dir);
        std::error_code ec;
        fs::create_directories(dir, ec);
        if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
        result.checkpoint_path = (dir / "model.ckpt").string();
        save_checkpoint(result.checkpoint_path, model, stream_meta(config));
        write_text(dir / "metrics.tsv", result.log.format());
        write_text(dir / "timing.tsv", result.log.format_timing());
        save_run_config(config, (dir / "run.json").string());
    }
    if (trained) *trained = std::move(model);
    return result;
}

TrainResult train(const RunConfig& config, bool write_files, const EpochCallback& on_epoch) {
    config.validate();
    if (config.train_manifest.empty()) throw ValidationError("train: no training manifest given");
    auto train_m = load_manifest(config.train_manifest);
    check_layout(config.model, train_m.layout, config.train_manifest);
    auto train_set = load_dataset(train_m);
    std::vector<SkeletonSequence> test_set;
    if (!config.test_manifest.empty()) {
        auto test_m = load_manifest(config.test_manifest);
        check_layout(config.model, test_m.layout, config.test_manifest);
        test_set = load_dataset(test_m);
    }
    return train_on(config, train_set, test_set, write_files, on_epoch);
}

LoadedStream load_stream(const std::string& checkpoint_path) {
    nlohmann::json meta;
    auto model = load_checkpoint(checkpoint_path, &meta);
    Modality m = Modality::joint;
    if (meta.is_object() && meta.contains("modality")) m = parse_modality(meta.at("modality").get<std::string>());
    return {std::move(model), m};
}

EvalResult evaluate_checkpoint(const std::string& checkpoint_path, const std::string& manifest_path) {
    auto stream = load_stream(checkpoint_path);
    auto manifest = load_manifest(manifest_path);
    check_layout(stream.model.config(), manifest.layout, manifest_path);
    auto seqs = load_dataset(manifest);
    for (const auto& s : seqs)
        if (static_cast<std::size_t>(s.label) >= stream.model.config().n_classes)
            throw ValidationError(manifest_path + ": label " + std::to_string(s.label) + " exceeds the model's " +
                                  std::to_string(stream.model.config().n_classes) + " classes");
    auto set = prepare_set(seqs, stream.model.config(), stream.modality);
    return evaluate(stream.model, set);
}

EvalResult ensemble_streams(std::vector<LoadedStream>& streams, const std::vector<SkeletonSequence>& seqs) {
    if (streams.empty()) throw ValidationError("ensemble: no checkpoints given");
    const auto k = streams.front().model.config().n_classes;
    std::vector<Tensor<float>> logits;
    std::vector<int> labels;
    for (auto& s : streams) {
        if (s.model.config().n_classes != k)
            throw ValidationError("ensemble: class counts differ (" + std::to_string(k) + " vs " +
                                  std::to_string(s.model.config().n_classes) + ")");
        auto set = prepare_set(seqs, s.model.config(), s.modality);
        labels = set.labels;
        logits.push_back(predict_logits(s.model, set));
    }
    NoGradGuard no_grad;
    return score_logits(ensemble_logits(std::span<const Tensor<float>>(logits)), labels);
}

EvalResult ensemble_checkpoints(const std::vector<std::string>& checkpoint_paths, const std::string& manifest_path) {
    std::vector<LoadedStream> streams;
    for (const auto& p : checkpoint_paths) streams.push_back(load_stream(p));
    auto manifest = load_manifest(manifest_path);
    for (auto& s : streams) check_layout(s.model.config(), manifest.layout, manifest_path);
    return ensemble_streams(streams, load_dataset(manifest));
}

TopologyExport export_topology(LoadedStream& stream, const std::vector<SkeletonSequence>& seqs,
                               std::size_t layer_index, int class_id, double threshold) {
    auto& model = stream.model;
    if (layer_index >= model.n_layers())
        throw ValidationError("export-topology: layer " + std::to_string(layer_index + 1) + " out of range (model has " +
                              std::to_string(model.n_layers()) + " layers)");
    if (!model.layer(layer_index).learner().active())
        throw StateError("export-topology: layer " + std::to_string(layer_index + 1) + " has no topology learner");
    std::vector<SkeletonSequence> members;
    for (const auto& s : seqs)
        if (s.label == class_id) members.push_back(s);
    if (members.empty()) throw ValidationError("export-topology: class " + std::to_string(class_id) + " has no samples");

    auto set = prepare_set(members, model.config(), stream.modality);
    const std::size_t block = set.channels * set.frames * set.joints;  // first person only
    const std::size_t n = model.layer(layer_index).plan().n_in;
    TopologyExport out;
    out.matrix.assign(n, std::vector<double>(n, 0.0));
    for (const auto& sample : set.samples) {
        Tensor<float> x({1, set.channels, set.frames, set.joints},
                        std::vector<float>(sample.begin(), sample.begin() + static_cast<std::ptrdiff_t>(block)));
        auto g = model.dynamic_topology_at(x, layer_index);
        auto v = g.data();
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < n; ++j) out.matrix[i][j] += v[i * n + j];
    }
    out.samples = set.size();
    for (auto& row : out.matrix)
        for (auto& x : row) x /= double(out.samples);

    std::ostringstream mt;
    char buf[32];
    for (const auto& row : out.matrix) {
        for (std::size_t j = 0; j < n; ++j) {
            std::snprintf(buf, sizeof buf, "%.6f", row[j]);
            mt << (j ? " " : "") << buf;
        }
        mt << "\n";
    }
    out.matrix_text = mt.str();

    std::ostringstream dot;
    dot << "digraph topology {\n  label=\"layer " << layer_index + 1 << ", class " << class_id << ", "
        << out.samples << " samples, threshold " << threshold << "\";\n  node [shape=circle];\n";
    for (std::size_t i = 0; i < n; ++i) dot << "  " << i << ";\n";
    if (n == model.layout().n_joints)
        for (const auto& [a, b] : model.layout().edges)
            dot << "  " << a << " -> " << b << " [dir=none, color=gray, style=dashed];\n";
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            if (out.matrix[i][j] > threshold) {
                std::snprintf(buf, sizeof buf, "%.3f", out.matrix[i][j]);
                dot << "  " << i << " -> " << j << " [label=\"" << buf << "\", color=red];\n";
            }
    dot << "}\n";
    out.dot = dot.str();
    return out;
}

}  // namespace dgcn
