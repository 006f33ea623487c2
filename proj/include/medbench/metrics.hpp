#pragma once

#include <optional>
#include <string>
#include <vector>

#include "medbench/core.hpp"
#include "medbench/parser.hpp"

namespace medbench {

// One evaluation unit: ground truth and the parsed prediction for the same
// sample, both in the evaluation coordinate space.
struct SamplePair {
    std::string sample_id;
    TaskKind task = TaskKind::CountOnly;
    AnnotationSet truth;
    Prediction pred;
};

struct MatchedPair {
    size_t pred_index;
    size_t truth_index;
    double distance;
};

struct Assignment {
    std::vector<MatchedPair> pairs;
    std::vector<size_t> unmatched_pred;
    std::vector<size_t> unmatched_truth;
    double total_distance() const;
};

enum class Averaging { Micro, Macro };

std::string to_string(Averaging averaging);
std::optional<Averaging> averaging_from_string(std::string_view name);

struct EvalOptions {
    double match_threshold = kDefaultMatchThresholdPx;
    Averaging averaging = Averaging::Micro;
    double map_start = 0.50;
    double map_step = 0.05;
    double map_stop = 0.95;
};

struct TaskReport {
    TaskKind task = TaskKind::CountOnly;
    size_t n = 0;
    std::optional<double> count_mae;
    std::optional<double> count_mse;
    std::optional<double> point_mae;
    std::optional<double> point_rmse;
    std::optional<double> matching_accuracy;
    std::optional<long long> zero_case_points;
    std::optional<double> map;
    std::optional<double> map50;
    std::optional<double> map75;
    std::optional<double> avg_iou;
};

// Continuous-area intersection over union; 0 when the union is empty.
double iou(const Box& a, const Box& b);

// Minimal-total-Euclidean-distance maximal bipartite matching between the
// two point lists; cardinality = min(|preds|, |truths|).
Assignment match_points(const std::vector<Point>& preds, const std::vector<Point>& truths);

// Maximal matching between box lists maximizing total IoU.
Assignment match_boxes_by_iou(const std::vector<Box>& preds, const std::vector<Box>& truths);

struct CountMetrics {
    double mae = 0;
    double mse = 0;
};

// A failed parse or absent count scores as 0.
CountMetrics count_metrics(const std::vector<SamplePair>& pairs);

struct PointMetrics {
    std::optional<double> mae;
    std::optional<double> rmse;
    double matching_accuracy = 0;
    long long zero_case_points = 0;
};

PointMetrics point_metrics(const std::vector<SamplePair>& pairs,
                           double threshold = kDefaultMatchThresholdPx,
                           Averaging averaging = Averaging::Micro);

// Average precision at one IoU threshold: predictions ranked by
// pseudo-confidence 1/(1+k) with k the position in the model's output list,
// greedy per-image TP assignment, 101-point interpolated PR curve, averaged
// over label classes that have at least one ground-truth box.
double ap_at_threshold(const std::vector<SamplePair>& pairs, double iou_threshold);

struct DetectionMetrics {
    double map = 0;
    double map50 = 0;
    double map75 = 0;
    std::optional<double> avg_iou;
};

DetectionMetrics detection_metrics(const std::vector<SamplePair>& pairs,
                                   const EvalOptions& opts = {});

// Populates exactly the metric subset defined for the task; all pairs must
// share the task and the list must be non-empty.
TaskReport evaluate_task(TaskKind task, const std::vector<SamplePair>& pairs,
                         const EvalOptions& opts = {});

}  // namespace medbench
