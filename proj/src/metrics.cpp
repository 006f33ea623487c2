#include "medbench/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>

namespace medbench {

double Assignment::total_distance() const {
    double total = 0;
    for (const auto& p : pairs) total += p.distance;
    return total;
}

std::string to_string(Averaging averaging) {
    return averaging == Averaging::Micro ? "micro" : "macro";
}

std::optional<Averaging> averaging_from_string(std::string_view name) {
    if (name == "micro") return Averaging::Micro;
    if (name == "macro") return Averaging::Macro;
    return std::nullopt;
}

double iou(const Box& a, const Box& b) {
    double ix = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
    double iy = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
    double inter = std::max(0.0, ix) * std::max(0.0, iy);
    double uni = a.area() + b.area() - inter;
    if (uni <= 0) return 0;
    return inter / uni;
}

namespace {

// Hungarian algorithm via potentials, O(n^2 m); requires n <= m.
// Returns row -> column of the minimal-cost full assignment of rows.
std::vector<int> solve_rect_assignment(const std::vector<std::vector<double>>& cost) {
    int n = static_cast<int>(cost.size());
    int m = static_cast<int>(cost[0].size());
    const double kInf = 1e100;
    std::vector<double> u(n + 1, 0), v(m + 1, 0);
    std::vector<int> p(m + 1, 0), way(m + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(m + 1, kInf);
        std::vector<char> used(m + 1, false);
        do {
            used[j0] = true;
            int i0 = p[j0], j1 = -1;
            double delta = kInf;
            for (int j = 1; j <= m; ++j) {
                if (used[j]) continue;
                double cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= m; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }
    std::vector<int> row_to_col(n, -1);
    for (int j = 1; j <= m; ++j) {
        if (p[j] > 0) row_to_col[p[j] - 1] = j - 1;
    }
    return row_to_col;
}

// Optimal assignment between preds (rows) and truths (cols) under the given
// pairwise cost; transposes internally so the solver always sees rows <= cols.
Assignment assign_optimal(size_t n_pred, size_t n_truth,
                          const std::function<double(size_t, size_t)>& cost_fn) {
    Assignment out;
    if (n_pred == 0 || n_truth == 0) {
        for (size_t i = 0; i < n_pred; ++i) out.unmatched_pred.push_back(i);
        for (size_t j = 0; j < n_truth; ++j) out.unmatched_truth.push_back(j);
        return out;
    }
    bool transposed = n_pred > n_truth;
    size_t rows = transposed ? n_truth : n_pred;
    size_t cols = transposed ? n_pred : n_truth;
    std::vector<std::vector<double>> cost(rows, std::vector<double>(cols));
    for (size_t r = 0; r < rows; ++r) {
        for (size_t c = 0; c < cols; ++c) {
            cost[r][c] = transposed ? cost_fn(c, r) : cost_fn(r, c);
        }
    }
    std::vector<int> row_to_col = solve_rect_assignment(cost);
    std::vector<char> pred_used(n_pred, false), truth_used(n_truth, false);
    for (size_t r = 0; r < rows; ++r) {
        size_t c = static_cast<size_t>(row_to_col[r]);
        size_t pi = transposed ? c : r;
        size_t ti = transposed ? r : c;
        out.pairs.push_back({pi, ti, cost_fn(pi, ti)});
        pred_used[pi] = true;
        truth_used[ti] = true;
    }
    std::sort(out.pairs.begin(), out.pairs.end(),
              [](const MatchedPair& a, const MatchedPair& b) { return a.pred_index < b.pred_index; });
    for (size_t i = 0; i < n_pred; ++i) {
        if (!pred_used[i]) out.unmatched_pred.push_back(i);
    }
    for (size_t j = 0; j < n_truth; ++j) {
        if (!truth_used[j]) out.unmatched_truth.push_back(j);
    }
    return out;
}

}  // namespace

Assignment match_points(const std::vector<Point>& preds, const std::vector<Point>& truths) {
    return assign_optimal(preds.size(), truths.size(), [&](size_t i, size_t j) {
        return euclidean(preds[i], truths[j]);
    });
}

Assignment match_boxes_by_iou(const std::vector<Box>& preds, const std::vector<Box>& truths) {
    Assignment out = assign_optimal(preds.size(), truths.size(), [&](size_t i, size_t j) {
        return -iou(preds[i], truths[j]);
    });
    for (auto& p : out.pairs) p.distance = -p.distance;
    return out;
}

CountMetrics count_metrics(const std::vector<SamplePair>& pairs) {
    if (pairs.empty()) throw DataError("count metrics over an empty sample list");
    double abs_sum = 0, sq_sum = 0;
    for (const auto& sp : pairs) {
        long long pred = sp.pred.count.value_or(0);
        double diff = static_cast<double>(pred - sp.truth.count);
        abs_sum += std::abs(diff);
        sq_sum += diff * diff;
    }
    CountMetrics m;
    m.mae = abs_sum / static_cast<double>(pairs.size());
    m.mse = sq_sum / static_cast<double>(pairs.size());
    return m;
}

PointMetrics point_metrics(const std::vector<SamplePair>& pairs, double threshold,
                           Averaging averaging) {
    if (pairs.empty()) throw DataError("point metrics over an empty sample list");
    PointMetrics out;

    // Micro accumulators, pooled over every matched pair in the dataset.
    double dist_sum = 0, sq_sum = 0;
    size_t matched = 0, within = 0, total_pred = 0;

    // Macro accumulators, one contribution per qualifying sample.
    double mae_sum = 0, rmse_sum = 0, acc_sum = 0;
    size_t mae_samples = 0, acc_samples = 0;

    for (const auto& sp : pairs) {
        const std::vector<Point> empty;
        const std::vector<Point>& truth = sp.truth.points ? *sp.truth.points : empty;
        const std::vector<Point>& pred = sp.pred.points;

        if (!truth.empty() && pred.empty()) out.zero_case_points += 1;
        total_pred += pred.size();

        Assignment asg = match_points(pred, truth);
        double s_dist = 0, s_sq = 0;
        size_t s_within = 0;
        for (const auto& mp : asg.pairs) {
            s_dist += mp.distance;
            s_sq += mp.distance * mp.distance;
            if (mp.distance <= threshold) ++s_within;
        }
        dist_sum += s_dist;
        sq_sum += s_sq;
        matched += asg.pairs.size();
        within += s_within;

        if (!asg.pairs.empty()) {
            mae_sum += s_dist / static_cast<double>(asg.pairs.size());
            rmse_sum += std::sqrt(s_sq / static_cast<double>(asg.pairs.size()));
            ++mae_samples;
        }
        if (!pred.empty()) {
            acc_sum += static_cast<double>(s_within) / static_cast<double>(pred.size());
            ++acc_samples;
        }
    }

    if (averaging == Averaging::Micro) {
        if (matched > 0) {
            out.mae = dist_sum / static_cast<double>(matched);
            out.rmse = std::sqrt(sq_sum / static_cast<double>(matched));
        }
        out.matching_accuracy =
            total_pred > 0 ? static_cast<double>(within) / static_cast<double>(total_pred) : 0.0;
    } else {
        if (mae_samples > 0) {
            out.mae = mae_sum / static_cast<double>(mae_samples);
            out.rmse = rmse_sum / static_cast<double>(mae_samples);
        }
        out.matching_accuracy =
            acc_samples > 0 ? acc_sum / static_cast<double>(acc_samples) : 0.0;
    }
    return out;
}

namespace {

struct RankedDetection {
    double score;
    std::string sample_id;
    size_t position;
    Box box;
    size_t sample_index;
};

double class_ap(const std::vector<const SamplePair*>& samples, double iou_threshold) {
    size_t npos = 0;
    std::vector<RankedDetection> dets;
    for (size_t si = 0; si < samples.size(); ++si) {
        const SamplePair& sp = *samples[si];
        if (sp.truth.boxes) npos += sp.truth.boxes->size();
        for (size_t k = 0; k < sp.pred.boxes.size(); ++k) {
            dets.push_back({1.0 / (1.0 + static_cast<double>(k)), sp.sample_id, k,
                            sp.pred.boxes[k], si});
        }
    }
    if (npos == 0) return -1;  // class absent from ground truth, excluded
    std::sort(dets.begin(), dets.end(), [](const RankedDetection& a, const RankedDetection& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.sample_id != b.sample_id) return a.sample_id < b.sample_id;
        return a.position < b.position;
    });

    std::vector<std::vector<char>> gt_used(samples.size());
    for (size_t si = 0; si < samples.size(); ++si) {
        size_t n = samples[si]->truth.boxes ? samples[si]->truth.boxes->size() : 0;
        gt_used[si].assign(n, false);
    }

    std::vector<double> precision, recall;
    size_t tp = 0, fp = 0;
    for (const auto& det : dets) {
        const SamplePair& sp = *samples[det.sample_index];
        double best = -1;
        int best_j = -1;
        if (sp.truth.boxes) {
            for (size_t j = 0; j < sp.truth.boxes->size(); ++j) {
                if (gt_used[det.sample_index][j]) continue;
                double v = iou(det.box, (*sp.truth.boxes)[j]);
                if (v > best) {
                    best = v;
                    best_j = static_cast<int>(j);
                }
            }
        }
        if (best_j >= 0 && best >= iou_threshold) {
            gt_used[det.sample_index][best_j] = true;
            ++tp;
        } else {
            ++fp;
        }
        precision.push_back(static_cast<double>(tp) / static_cast<double>(tp + fp));
        recall.push_back(static_cast<double>(tp) / static_cast<double>(npos));
    }

    if (precision.empty()) return 0;
    for (size_t i = precision.size() - 1; i > 0; --i) {
        precision[i - 1] = std::max(precision[i - 1], precision[i]);
    }
    double ap = 0;
    for (int t = 0; t <= 100; ++t) {
        double r = static_cast<double>(t) / 100.0;
        auto it = std::lower_bound(recall.begin(), recall.end(), r);
        if (it != recall.end()) ap += precision[static_cast<size_t>(it - recall.begin())];
    }
    return ap / 101.0;
}

std::map<std::string, std::vector<const SamplePair*>> group_by_class(
    const std::vector<SamplePair>& pairs) {
    std::map<std::string, std::vector<const SamplePair*>> by_class;
    for (const auto& sp : pairs) by_class[normalize_label(sp.truth.label)].push_back(&sp);
    return by_class;
}

}  // namespace

double ap_at_threshold(const std::vector<SamplePair>& pairs, double iou_threshold) {
    auto by_class = group_by_class(pairs);
    double sum = 0;
    size_t classes = 0;
    for (const auto& [label, samples] : by_class) {
        double ap = class_ap(samples, iou_threshold);
        if (ap < 0) continue;
        sum += ap;
        ++classes;
    }
    if (classes == 0) throw DataError("no ground-truth boxes in the evaluation set");
    return sum / static_cast<double>(classes);
}

DetectionMetrics detection_metrics(const std::vector<SamplePair>& pairs, const EvalOptions& opts) {
    if (pairs.empty()) throw DataError("detection metrics over an empty sample list");
    if (opts.map_step <= 0 || opts.map_stop < opts.map_start) {
        throw UsageError("invalid mAP sweep");
    }
    DetectionMetrics out;
    int steps = static_cast<int>(std::round((opts.map_stop - opts.map_start) / opts.map_step)) + 1;
    double sum = 0;
    for (int i = 0; i < steps; ++i) {
        sum += ap_at_threshold(pairs, opts.map_start + opts.map_step * i);
    }
    out.map = sum / steps;
    out.map50 = ap_at_threshold(pairs, 0.50);
    out.map75 = ap_at_threshold(pairs, 0.75);

    double iou_sum = 0;
    size_t matches = 0;
    for (const auto& sp : pairs) {
        const std::vector<Box> empty;
        const std::vector<Box>& truth = sp.truth.boxes ? *sp.truth.boxes : empty;
        Assignment asg = match_boxes_by_iou(sp.pred.boxes, truth);
        for (const auto& mp : asg.pairs) {
            iou_sum += mp.distance;
            ++matches;
        }
    }
    if (matches > 0) out.avg_iou = iou_sum / static_cast<double>(matches);
    return out;
}

TaskReport evaluate_task(TaskKind task, const std::vector<SamplePair>& pairs,
                         const EvalOptions& opts) {
    if (pairs.empty()) throw DataError("no samples to evaluate for task " + to_string(task));
    for (const auto& sp : pairs) {
        if (sp.task != task) {
            throw DataError("mixed tasks in evaluation batch: expected " + to_string(task) +
                            ", found " + to_string(sp.task) + " (" + sp.sample_id + ")");
        }
    }
    TaskReport report;
    report.task = task;
    report.n = pairs.size();
    if (task_uses_counts(task)) {
        CountMetrics cm = count_metrics(pairs);
        report.count_mae = cm.mae;
        report.count_mse = cm.mse;
    }
    if (task_uses_points(task)) {
        PointMetrics pm = point_metrics(pairs, opts.match_threshold, opts.averaging);
        report.point_mae = pm.mae;
        report.point_rmse = pm.rmse;
        report.matching_accuracy = pm.matching_accuracy;
        report.zero_case_points = pm.zero_case_points;
    }
    if (task_uses_boxes(task)) {
        DetectionMetrics dm = detection_metrics(pairs, opts);
        report.map = dm.map;
        report.map50 = dm.map50;
        report.map75 = dm.map75;
        report.avg_iou = dm.avg_iou;
    }
    return report;
}

}  // namespace medbench
