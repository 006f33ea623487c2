#include "medbench/core.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

namespace medbench {

std::string to_string(TaskKind task) {
    switch (task) {
        case TaskKind::CountOnly: return "CountOnly";
        case TaskKind::PointOnly: return "PointOnly";
        case TaskKind::BoxOnly: return "BoxOnly";
        case TaskKind::CountPoint: return "CountPoint";
        case TaskKind::CountBox: return "CountBox";
    }
    return "?";
}

std::optional<TaskKind> task_from_string(std::string_view name) {
    for (TaskKind t : kAllTasks) {
        if (to_string(t) == name) return t;
    }
    return std::nullopt;
}

std::string task_display_name(TaskKind task) {
    switch (task) {
        case TaskKind::CountOnly: return "Counting Only";
        case TaskKind::PointOnly: return "Pointing Only";
        case TaskKind::BoxOnly: return "Bounding Box Detection";
        case TaskKind::CountPoint: return "Counting + Pointing";
        case TaskKind::CountBox: return "Counting + Bounding";
    }
    return "?";
}

std::string to_string(SourceKind kind) {
    switch (kind) {
        case SourceKind::Polyp: return "polyp";
        case SourceKind::Instrument: return "instrument";
        case SourceKind::SpermNormal: return "sperm-normal";
        case SourceKind::SpermCluster: return "sperm-cluster";
        case SourceKind::SpermPinhead: return "sperm-pinhead";
    }
    return "?";
}

std::optional<SourceKind> source_from_string(std::string_view name) {
    static const std::array<SourceKind, 5> kinds = {
        SourceKind::Polyp, SourceKind::Instrument, SourceKind::SpermNormal,
        SourceKind::SpermCluster, SourceKind::SpermPinhead};
    for (SourceKind k : kinds) {
        if (to_string(k) == name) return k;
    }
    return std::nullopt;
}

bool task_uses_counts(TaskKind task) {
    return task == TaskKind::CountOnly || task == TaskKind::CountPoint ||
           task == TaskKind::CountBox;
}

bool task_uses_points(TaskKind task) {
    return task == TaskKind::PointOnly || task == TaskKind::CountPoint;
}

bool task_uses_boxes(TaskKind task) {
    return task == TaskKind::BoxOnly || task == TaskKind::CountBox;
}

std::vector<std::string> task_keys(TaskKind task) {
    std::vector<std::string> keys;
    if (task_uses_boxes(task)) keys.push_back("bbox_2d");
    if (task_uses_points(task)) keys.push_back("point_2d");
    if (task_uses_counts(task)) keys.push_back("counts");
    keys.push_back("label");
    return keys;
}

double euclidean(const Point& a, const Point& b) {
    return std::hypot(a.x - b.x, a.y - b.y);
}

ResizeResult compute_resize(int orig_width, int orig_height) {
    if (orig_width < 1 || orig_height < 1) {
        throw DataError("invalid image dimensions: " + std::to_string(orig_width) + "x" +
                        std::to_string(orig_height));
    }
    ResizeResult r;
    if (orig_width <= kMaxEvalWidth) {
        r.scale = 1.0;
        r.eval_width = orig_width;
        r.eval_height = orig_height;
        return r;
    }
    r.scale = static_cast<double>(kMaxEvalWidth) / orig_width;
    r.eval_width = kMaxEvalWidth;
    r.eval_height = static_cast<int>(round_half_up(orig_height * r.scale));
    if (r.eval_height < 1) r.eval_height = 1;
    return r;
}

AnnotationSet rescale_annotations(const AnnotationSet& ann, double scale) {
    AnnotationSet out = ann;
    if (out.boxes) {
        for (auto& b : *out.boxes) {
            b.x1 *= scale;
            b.y1 *= scale;
            b.x2 *= scale;
            b.y2 *= scale;
        }
    }
    if (out.points) {
        for (auto& p : *out.points) {
            p.x *= scale;
            p.y *= scale;
        }
    }
    return out;
}

namespace {

double clamp_coord(double v, double lo, double hi, bool& clamped) {
    if (v < lo) {
        clamped = true;
        return lo;
    }
    if (v > hi) {
        clamped = true;
        return hi;
    }
    return v;
}

std::string box_str(const Box& b) {
    std::ostringstream ss;
    ss << "[" << b.x1 << "," << b.y1 << "," << b.x2 << "," << b.y2 << "]";
    return ss.str();
}

}  // namespace

std::string to_string(ViolationKind kind) {
    switch (kind) {
        case ViolationKind::OutOfBounds: return "out-of-bounds";
        case ViolationKind::DegenerateBox: return "degenerate-box";
        case ViolationKind::CountMismatch: return "count-mismatch";
        case ViolationKind::DuplicateGeometry: return "duplicate-geometry";
    }
    return "?";
}

ValidationOutcome validate_annotation(const AnnotationSet& ann, const ImageRecord& rec) {
    ValidationOutcome out;
    AnnotationSet fixed = ann;
    const double w = rec.eval_width;
    const double h = rec.eval_height;

    if (fixed.boxes && fixed.points && fixed.boxes->size() != fixed.points->size()) {
        out.accepted = false;
        out.reject_reason = "geometry-cardinality-conflict";
        return out;
    }

    if (fixed.boxes) {
        for (auto& b : *fixed.boxes) {
            bool clamped = false;
            Box orig = b;
            b.x1 = clamp_coord(b.x1, 0, w, clamped);
            b.x2 = clamp_coord(b.x2, 0, w, clamped);
            b.y1 = clamp_coord(b.y1, 0, h, clamped);
            b.y2 = clamp_coord(b.y2, 0, h, clamped);
            if (clamped) {
                out.violations.push_back({ViolationKind::OutOfBounds,
                                          "box " + box_str(orig) + " clamped to " + box_str(b)});
            }
        }
        // Degeneracy is judged at integer resolution: the serialized target
        // rounds half-up, so a box must span at least one whole pixel.
        for (const auto& b : *fixed.boxes) {
            if (round_half_up(b.x1) >= round_half_up(b.x2) ||
                round_half_up(b.y1) >= round_half_up(b.y2)) {
                out.accepted = false;
                out.reject_reason = "zero-area-box";
                return out;
            }
        }
        std::set<std::array<long long, 4>> seen;
        std::vector<Box> kept;
        for (const auto& b : *fixed.boxes) {
            std::array<long long, 4> key = {round_half_up(b.x1), round_half_up(b.y1),
                                            round_half_up(b.x2), round_half_up(b.y2)};
            if (!seen.insert(key).second) {
                out.violations.push_back(
                    {ViolationKind::DuplicateGeometry, "duplicate box " + box_str(b) + " dropped"});
                continue;
            }
            kept.push_back(b);
        }
        *fixed.boxes = std::move(kept);
    }

    if (fixed.points) {
        for (auto& p : *fixed.points) {
            bool clamped = false;
            double ox = p.x, oy = p.y;
            p.x = clamp_coord(p.x, 0, w, clamped);
            p.y = clamp_coord(p.y, 0, h, clamped);
            if (clamped) {
                std::ostringstream ss;
                ss << "point (" << ox << "," << oy << ") clamped to (" << p.x << "," << p.y << ")";
                out.violations.push_back({ViolationKind::OutOfBounds, ss.str()});
            }
        }
        std::set<std::array<long long, 2>> seen;
        std::vector<Point> kept;
        for (const auto& p : *fixed.points) {
            std::array<long long, 2> key = {round_half_up(p.x), round_half_up(p.y)};
            if (!seen.insert(key).second) {
                std::ostringstream ss;
                ss << "duplicate point (" << p.x << "," << p.y << ") dropped";
                out.violations.push_back({ViolationKind::DuplicateGeometry, ss.str()});
                continue;
            }
            kept.push_back(p);
        }
        *fixed.points = std::move(kept);
    }

    // Dedup can desync boxes and points; that leaves no consistent target.
    if (fixed.boxes && fixed.points && fixed.boxes->size() != fixed.points->size()) {
        out.accepted = false;
        out.reject_reason = "geometry-cardinality-conflict";
        return out;
    }

    std::optional<long long> geom_count;
    if (fixed.boxes) geom_count = static_cast<long long>(fixed.boxes->size());
    else if (fixed.points) geom_count = static_cast<long long>(fixed.points->size());

    if (geom_count) {
        if (fixed.count != *geom_count) {
            out.violations.push_back(
                {ViolationKind::CountMismatch, "count " + std::to_string(fixed.count) +
                                                   " repaired to " + std::to_string(*geom_count)});
            fixed.count = *geom_count;
        }
    } else if (fixed.count < 0) {
        out.accepted = false;
        out.reject_reason = "negative-count";
        return out;
    }

    out.accepted = true;
    out.repaired = std::move(fixed);
    return out;
}

const LabelAliases& LabelAliases::defaults() {
    static const LabelAliases aliases{{{"polpy", "polyp"}}};
    return aliases;
}

std::string normalize_label(std::string_view raw, const LabelAliases& aliases) {
    std::string norm = to_lower(trim(raw));
    auto it = aliases.map.find(norm);
    if (it != aliases.map.end()) return it->second;
    return norm;
}

}  // namespace medbench
