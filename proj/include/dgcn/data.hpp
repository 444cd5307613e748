#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dgcn/skeleton.hpp"
#include "dgcn/tensor.hpp"

namespace dgcn {

/// Coordinates of one clip, stored [T][M][N][D] row-major.
struct SkeletonSequence {
    std::size_t frames = 0;
    std::size_t persons = 1;
    std::size_t joints = 0;
    std::size_t dims = 3;
    std::vector<float> values;
    int label = 0;
    std::string layout;
    std::string sample_id;

    SkeletonSequence() = default;
    SkeletonSequence(std::size_t t, std::size_t m, std::size_t n, std::size_t d)
        : frames(t), persons(m), joints(n), dims(d), values(t * m * n * d, 0.0f) {}

    float& at(std::size_t t, std::size_t m, std::size_t n, std::size_t d) {
        return values[((t * persons + m) * joints + n) * dims + d];
    }
    float at(std::size_t t, std::size_t m, std::size_t n, std::size_t d) const {
        return values[((t * persons + m) * joints + n) * dims + d];
    }
    /// Throws ValidationError unless T >= 1, 1 <= M <= 2, N >= 1, D >= 1,
    /// label >= 0 and the value count matches.
    void validate() const;
    bool operator==(const SkeletonSequence&) const = default;
};

enum class SequenceFormat { binary, text };

/// Binary layout (little-endian):
///   "DGSK" | u32 version=1 | u32 N | u32 D | u32 M | u32 T | i32 label |
///   u32 len + layout name | u32 len + sample id | T*M*N*D float32
/// Text layout: "dgcn-sequence 1", then "joints/dims/persons/frames/label/
/// layout/id <value>" lines, then per frame "frame <t>" followed by up to M
/// "person <m>" blocks of exactly N lines with D numbers. Persons a frame
/// omits are zero-filled. '#' starts a comment.
void save_sequence(const SkeletonSequence& seq, const std::string& path,
                   SequenceFormat format = SequenceFormat::binary);
/// Detects the format from the first bytes.
SkeletonSequence load_sequence(const std::string& path);
SkeletonSequence parse_sequence_text(const std::string& text, const std::string& origin = "<text>");
std::string format_sequence_text(const SkeletonSequence& seq);

/// Linear interpolation onto `target` points spread evenly over [0, T-1]
/// (a single target point samples the middle). Every channel, confidence
/// included, is treated alike.
SkeletonSequence resize_sequence(const SkeletonSequence& seq, std::size_t target);

/// Number of leading coordinate channels that are positions: 2 for
/// openpose18 (x, y, score), otherwise all of them.
std::size_t position_dims(const SkeletonSequence& seq);

/// Subtracts the first frame's center joint of person 0 from every present
/// person's positions (all-zero persons count as absent and stay zero).
/// Confidence channels are untouched.
SkeletonSequence normalize_coords(const SkeletonSequence& seq, const SkeletonLayout& layout);

/// Model input for a list of sequences: [B*M, D, T, N], persons of a sample
/// on consecutive rows.
Tensor<float> sequences_to_tensor(const std::vector<const SkeletonSequence*>& seqs);

/// NTU .skeleton ingestion would convert to SkeletonSequence here; not part
/// of this project. Always throws StateError.
SkeletonSequence convert_ntu_skeleton(const std::string& path);

struct ManifestEntry {
    std::string path;  // resolved against the manifest's directory
    int label = 0;
    bool operator==(const ManifestEntry&) const = default;
};

/// "path<TAB>label" lines; header comments "# layout <name>", "# split <tag>",
/// "# class <index> <name>".
struct DatasetManifest {
    std::vector<ManifestEntry> entries;
    std::vector<std::string> class_names;
    std::string layout;
    std::string split;

    std::size_t n_classes() const;
    bool operator==(const DatasetManifest&) const = default;
};

/// Writes entry paths relative to the manifest directory when possible.
void save_manifest(const DatasetManifest& manifest, const std::string& path);
/// Validates labels against the class table and that every file exists.
DatasetManifest load_manifest(const std::string& path);
std::vector<SkeletonSequence> load_dataset(const DatasetManifest& manifest);

struct SynthSpec {
    std::size_t n_classes = 5;
    std::size_t train_per_class = 40;
    std::size_t test_per_class = 20;
    std::string layout = "ntu25";
    std::size_t frames = 32;
    double noise_sigma = 0.05;
    std::uint64_t seed = 0;
};

struct SynthResult {
    DatasetManifest train, test;
    std::string train_manifest_path, test_manifest_path;
};

/// Procedural classes: each class moves its own connected group of joints
/// sinusoidally (own frequency, directions, amplitude) around a shared rest
/// pose; samples differ by a random phase plus Gaussian noise. Writes
/// <out_dir>/{train,test}/<id>.dgsk and <out_dir>/{train,test}.manifest.
SynthResult synth_generate(const SynthSpec& spec, const std::string& out_dir);

/// In-memory version of the same generator (identical samples).
std::vector<SkeletonSequence> synth_samples(const SynthSpec& spec, const std::string& split);

}  // namespace dgcn
