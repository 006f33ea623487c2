#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "medbench/util.hpp"

namespace medbench {

// All evaluation happens in a resized coordinate space capped at this width.
inline constexpr int kMaxEvalWidth = 700;
inline constexpr double kDefaultMatchThresholdPx = 10.0;

enum class SourceKind { Polyp, Instrument, SpermNormal, SpermCluster, SpermPinhead };

// The five instruction task formats. Order matters: it is the row-group
// order of rendered reports and the sort order inside emitted datasets.
enum class TaskKind { CountOnly, PointOnly, BoxOnly, CountPoint, CountBox };

inline constexpr std::array<TaskKind, 5> kAllTasks = {
    TaskKind::CountOnly, TaskKind::PointOnly, TaskKind::BoxOnly,
    TaskKind::CountPoint, TaskKind::CountBox};

std::string to_string(TaskKind task);
std::optional<TaskKind> task_from_string(std::string_view name);
std::string task_display_name(TaskKind task);

std::string to_string(SourceKind kind);
std::optional<SourceKind> source_from_string(std::string_view name);

bool task_uses_counts(TaskKind task);
bool task_uses_points(TaskKind task);
bool task_uses_boxes(TaskKind task);

// Response keys for a task, in canonical serialization order
// (geometry first, then "counts", then "label").
std::vector<std::string> task_keys(TaskKind task);

struct Box {
    double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
    double area() const { return (x2 - x1) * (y2 - y1); }
};

struct Point {
    double x = 0, y = 0;
};

double euclidean(const Point& a, const Point& b);

struct ImageRecord {
    std::string id;
    SourceKind source = SourceKind::Polyp;
    int orig_width = 0;
    int orig_height = 0;
    double scale = 1.0;
    int eval_width = 0;
    int eval_height = 0;
    std::string uri;
};

struct ResizeResult {
    int eval_width = 0;
    int eval_height = 0;
    double scale = 1.0;
};

// scale = min(1, 700 / width); never upscales, dimensions round half-up.
// Throws DataError on non-positive dimensions.
ResizeResult compute_resize(int orig_width, int orig_height);

// Ground truth for one label class on one image. boxes/points are optional:
// an absent list means that geometry kind was never annotated (the point
// tasks cannot be built), while a present-but-empty list means "no findings".
struct AnnotationSet {
    std::string label;
    std::optional<std::vector<Box>> boxes;
    std::optional<std::vector<Point>> points;
    long long count = 0;

    size_t box_count() const { return boxes ? boxes->size() : 0; }
    size_t point_count() const { return points ? points->size() : 0; }
};

// Pure coordinate transform; count and ordering are untouched.
AnnotationSet rescale_annotations(const AnnotationSet& ann, double scale);

enum class ViolationKind { OutOfBounds, DegenerateBox, CountMismatch, DuplicateGeometry };

std::string to_string(ViolationKind kind);

struct Violation {
    ViolationKind kind;
    std::string detail;
};

struct ValidationOutcome {
    bool accepted = false;
    std::string reject_reason;  // set when !accepted
    AnnotationSet repaired;     // valid when accepted
    std::vector<Violation> violations;

    bool ok() const { return accepted && violations.empty(); }
};

// Validates ground truth against the evaluation space of `rec`, applying the
// defined repairs (clamping, count fix-up, integer-resolution dedup). Boxes
// that are degenerate at integer resolution reject the whole record, since a
// serialized target could never represent them.
ValidationOutcome validate_annotation(const AnnotationSet& ann, const ImageRecord& rec);

// Lowercase, trimmed, alias-mapped ("polpy" -> "polyp" by default).
struct LabelAliases {
    std::map<std::string, std::string> map;
    static const LabelAliases& defaults();
};

std::string normalize_label(std::string_view raw,
                            const LabelAliases& aliases = LabelAliases::defaults());

}  // namespace medbench
