#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

#include "dgcn/data.hpp"
#include "dgcn/model.hpp"
#include "dgcn/model_config.hpp"

namespace dgcn {

enum class Modality { joint, bone, joint_motion, bone_motion };

std::string to_string(Modality m);
/// Throws ValidationError on an unknown name.
Modality parse_modality(const std::string& name);

struct RunConfig {
    ModelConfig model;
    double lr = 0.1;
    double momentum = 0.9;
    bool nesterov = true;
    double weight_decay = 0.0004;
    std::size_t batch_size = 64;
    std::size_t epochs = 65;
    std::vector<std::size_t> milestones{35, 55};  // 0-based epochs at which lr decays
    double lr_decay = 0.1;
    std::size_t eval_interval = 1;  // the last epoch is always evaluated
    std::string train_manifest;
    std::string test_manifest;
    Modality modality = Modality::joint;
    std::uint64_t seed = 0;
    std::string output_dir = "runs/default";

    /// Throws ValidationError unless milestones are increasing and below
    /// `epochs`, batch_size >= 1, and rates are finite and non-negative.
    void validate() const;
    bool operator==(const RunConfig&) const = default;
};

/// "ntu-like", "kinetics-like", "smoke", "synthetic". The first two carry
/// the published schedule (lr 0.1, decay at 35 and 55, 65 epochs, batch 64).
RunConfig run_preset(const std::string& name);

void to_json(nlohmann::json& j, const RunConfig& c);
/// Missing keys keep their defaults; unknown keys throw ParseError.
void from_json(const nlohmann::json& j, RunConfig& c);
void save_run_config(const RunConfig& c, const std::string& path);
RunConfig load_run_config(const std::string& path);

/// Inputs ready for the model: one block of [M, C, T, N] floats per sample.
struct PreparedSet {
    std::size_t persons = 1, channels = 0, frames = 0, joints = 0;
    std::vector<std::vector<float>> samples;
    std::vector<int> labels;
    std::vector<std::string> ids;

    std::size_t size() const { return samples.size(); }
    Tensor<float> batch(std::span<const std::size_t> indices) const;
};

/// Resize to config.frames, center, pad persons to config.persons with
/// zeros, then apply the modality transform. Throws DimensionError when a
/// sequence does not fit the layout or the channel count.
PreparedSet prepare_set(const std::vector<SkeletonSequence>& seqs, const ModelConfig& config, Modality modality);

struct EpochRecord {
    std::size_t epoch = 0;  // 1-based
    double train_loss = 0;
    double train_acc = 0;
    double top1 = -1;  // -1 when the epoch was not evaluated
    double top5 = -1;
    double lr = 0;
    double seconds = 0;
    bool operator==(const EpochRecord&) const = default;
};

/// Tab-separated text. The header line names the columns; wall time is kept
/// out of the deterministic log and written separately.
struct MetricsLog {
    std::vector<EpochRecord> records;

    /// Throws StateError unless epochs strictly increase.
    void append(const EpochRecord& r);
    std::string format() const;
    std::string format_timing() const;
    static MetricsLog parse(const std::string& text);
};

struct EvalResult {
    double top1 = 0, top5 = 0;
    std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
    Tensor<float> logits;                             // [samples, classes]
    std::size_t n_samples = 0;
};

/// Accuracy and confusion counts from logits. Ties go to the lower class.
EvalResult score_logits(const Tensor<float>& logits, std::span<const int> labels);
Tensor<float> predict_logits(DynamicGCN<float>& model, const PreparedSet& set, std::size_t batch_size = 64);
EvalResult evaluate(DynamicGCN<float>& model, const PreparedSet& set, std::size_t batch_size = 64);

struct TrainResult {
    MetricsLog log;
    std::string checkpoint_path;  // empty when nothing was written
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Runs the full schedule. Writes <output_dir>/{model.ckpt, metrics.tsv,
/// timing.tsv, run.json} unless `write_files` is false. Throws NumericError
/// on a non-finite loss.
TrainResult train(const RunConfig& config, bool write_files = true, const EpochCallback& on_epoch = {});
/// Same, on data already in memory (test set may be empty).
TrainResult train_on(const RunConfig& config, const std::vector<SkeletonSequence>& train_set,
                     const std::vector<SkeletonSequence>& test_set, bool write_files = false,
                     const EpochCallback& on_epoch = {}, DynamicGCN<float>* trained = nullptr);

struct LoadedStream {
    DynamicGCN<float> model;
    Modality modality = Modality::joint;
};

/// Reads the modality from the checkpoint metadata (joint when absent).
LoadedStream load_stream(const std::string& checkpoint_path);

/// Throws ValidationError when the checkpoint layout differs from the manifest's.
EvalResult evaluate_checkpoint(const std::string& checkpoint_path, const std::string& manifest_path);

/// Sums each stream's logits, then scores. Throws ValidationError on
/// mismatched class counts.
EvalResult ensemble_checkpoints(const std::vector<std::string>& checkpoint_paths, const std::string& manifest_path);
EvalResult ensemble_streams(std::vector<LoadedStream>& streams, const std::vector<SkeletonSequence>& seqs);

struct TopologyExport {
    std::vector<std::vector<double>> matrix;  // mean adjacency, N x N
    std::size_t samples = 0;
    std::string matrix_text;
    std::string dot;
};

/// Mean learned adjacency at `layer_index` (0-based) over all samples of
/// `class_id`, first person only. DOT shows physical edges plus learned
/// entries above `threshold`.
TopologyExport export_topology(LoadedStream& stream, const std::vector<SkeletonSequence>& seqs,
                               std::size_t layer_index, int class_id, double threshold = 0.4);

}  // namespace dgcn
