#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "medbench/core.hpp"
#include "medbench/prompt.hpp"

namespace medbench {

// One annotation source: a set of JSONL annotation files over one image
// directory. `label` is the fallback class for records that omit theirs.
struct SourceSpec {
    SourceKind kind = SourceKind::Polyp;
    std::vector<std::string> annotation_files;
    std::string image_dir;
    std::string label;
};

struct SourceManifest {
    std::vector<SourceSpec> sources;

    // {"sources": [{"kind": "polyp", "annotations": [...], "image_dir": "...",
    //               "label": "polyp"}, ...]}
    static SourceManifest from_json_file(const std::string& path);
};

struct IngestedRecord {
    ImageRecord image;
    AnnotationSet annotations;  // evaluation space, validated
};

struct IngestResult {
    std::vector<IngestedRecord> records;
    std::vector<std::string> warnings;
    size_t skipped = 0;
};

// Reads every annotation record of one source, resizes into evaluation
// space, validates, and keeps what survives. Unreadable files throw
// DataError; malformed records are skipped with a warning naming the line.
IngestResult ingest_source(const SourceSpec& spec);

IngestResult ingest_manifest(const SourceManifest& manifest);

struct ImageRef {
    std::string image_id;
    std::string uri;
    int eval_width = 0;
    int eval_height = 0;
};

struct InstructionSample {
    std::string sample_id;
    ImageRef image;
    TaskKind task = TaskKind::CountOnly;
    std::string instruction;
    std::string target;
    std::string label;
};

// Instruction samples for one validated record: one per task the annotation
// set supports (a task whose geometry was never annotated is skipped). The
// question template is a deterministic function of (seed, image id, task).
std::vector<InstructionSample> build_samples(const ImageRecord& rec, const AnnotationSet& ann,
                                             const QuestionBank& bank, long long seed);

struct BuildResult {
    std::vector<InstructionSample> samples;  // sorted by (image id, task, label)
    size_t skipped_tasks = 0;
};

BuildResult build_all(const std::vector<IngestedRecord>& records, const QuestionBank& bank,
                      long long seed);

enum class SplitUnit { Image, Sample };

std::string to_string(SplitUnit unit);
std::optional<SplitUnit> split_unit_from_string(std::string_view name);

struct SplitSpec {
    long long seed = 0;
    size_t test_size = 500;
    bool stratify = false;
    SplitUnit unit = SplitUnit::Image;
};

struct SplitResult {
    std::vector<InstructionSample> train;
    std::vector<InstructionSample> test;
};

// Whole image groups move together; membership depends only on the set of
// image ids and the seed. With unit=Sample, groups are accumulated until the
// test set reaches test_size samples, so it may overshoot by one group.
SplitResult split_dataset(const std::vector<InstructionSample>& samples, const SplitSpec& spec);

struct JsonlMeta {
    std::string format;
    std::string config_digest;
    long long seed = 0;
};

// One meta line, then one object per sample:
// {sample_id, image_id, image_uri, eval_width, eval_height, task,
//  instruction, target, label}.
void emit_jsonl(const std::vector<InstructionSample>& samples, const std::string& path,
                const JsonlMeta& meta);

struct LoadedDataset {
    JsonlMeta meta;
    std::vector<InstructionSample> samples;
};

LoadedDataset load_samples_jsonl(const std::string& path);

// Reconstructs the ground truth an emitted sample encodes by parsing its
// canonical target.
AnnotationSet truth_from_sample(const InstructionSample& sample);

}  // namespace medbench
