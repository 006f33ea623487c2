#include "medbench/parser.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <set>

namespace medbench {

using nlohmann::json;

std::string to_string(ParseStatus status) {
    switch (status) {
        case ParseStatus::Clean: return "clean";
        case ParseStatus::Recovered: return "recovered";
        case ParseStatus::Failed: return "failed";
    }
    return "?";
}

std::optional<ParseStatus> parse_status_from_string(std::string_view name) {
    if (name == "clean") return ParseStatus::Clean;
    if (name == "recovered") return ParseStatus::Recovered;
    if (name == "failed") return ParseStatus::Failed;
    return std::nullopt;
}

std::string to_string(ConsistencyFlag flag) {
    switch (flag) {
        case ConsistencyFlag::CountGeometryMismatch: return "count-geometry-mismatch";
        case ConsistencyFlag::MissingRequiredKey: return "missing-required-key";
        case ConsistencyFlag::ExtraKey: return "extra-key";
        case ConsistencyFlag::CoordinateClamped: return "coordinate-clamped";
        case ConsistencyFlag::DuplicateGeometry: return "duplicate-geometry";
        case ConsistencyFlag::MalformedGeometry: return "malformed-geometry";
        case ConsistencyFlag::CountCoerced: return "count-coerced";
        case ConsistencyFlag::LabelMismatch: return "label-mismatch";
    }
    return "?";
}

std::optional<ConsistencyFlag> flag_from_string(std::string_view name) {
    static const ConsistencyFlag all[] = {
        ConsistencyFlag::CountGeometryMismatch, ConsistencyFlag::MissingRequiredKey,
        ConsistencyFlag::ExtraKey,              ConsistencyFlag::CoordinateClamped,
        ConsistencyFlag::DuplicateGeometry,     ConsistencyFlag::MalformedGeometry,
        ConsistencyFlag::CountCoerced,          ConsistencyFlag::LabelMismatch,
    };
    for (ConsistencyFlag f : all) {
        if (to_string(f) == name) return f;
    }
    return std::nullopt;
}

namespace {

bool try_parse_object(const std::string& text, json& out) {
    json v = json::parse(text, nullptr, false);
    if (v.is_discarded() || !v.is_object()) return false;
    out = std::move(v);
    return true;
}

// Content between the first ``` fence line and the closing ```; language
// tags after the opening fence are skipped.
std::string strip_code_fences(const std::string& text) {
    size_t open = text.find("```");
    if (open == std::string::npos) return text;
    size_t body = text.find('\n', open);
    if (body == std::string::npos) {
        body = open + 3;
        // Inline fence without a newline: skip a bare language tag.
        while (body < text.size() && std::isalpha(static_cast<unsigned char>(text[body]))) ++body;
    } else {
        body += 1;
    }
    size_t close = text.find("```", body);
    if (close == std::string::npos) return text.substr(body);
    return text.substr(body, close - body);
}

// First balanced {...} region, string- and escape-aware. Returns the input
// unchanged when there is none.
std::string extract_balanced(const std::string& text, char open_ch, char close_ch) {
    size_t start = text.find(open_ch);
    if (start == std::string::npos) return text;
    int depth = 0;
    bool in_string = false;
    bool escaped = false;
    for (size_t i = start; i < text.size(); ++i) {
        char c = text[i];
        if (in_string) {
            if (escaped) escaped = false;
            else if (c == '\\') escaped = true;
            else if (c == '"') in_string = false;
            continue;
        }
        if (c == '"') in_string = true;
        else if (c == open_ch) ++depth;
        else if (c == close_ch) {
            --depth;
            if (depth == 0) return text.substr(start, i - start + 1);
        }
    }
    return text;
}

std::string normalize_quotes_and_commas(const std::string& text) {
    std::string quoted;
    quoted.reserve(text.size());
    for (char c : text) quoted.push_back(c == '\'' ? '"' : c);

    std::string out;
    out.reserve(quoted.size());
    bool in_string = false;
    bool escaped = false;
    for (size_t i = 0; i < quoted.size(); ++i) {
        char c = quoted[i];
        if (in_string) {
            if (escaped) escaped = false;
            else if (c == '\\') escaped = true;
            else if (c == '"') in_string = false;
            out.push_back(c);
            continue;
        }
        if (c == '"') {
            in_string = true;
            out.push_back(c);
            continue;
        }
        if (c == ',') {
            size_t j = i + 1;
            while (j < quoted.size() && std::isspace(static_cast<unsigned char>(quoted[j]))) ++j;
            if (j < quoted.size() && (quoted[j] == '}' || quoted[j] == ']')) continue;
        }
        out.push_back(c);
    }
    return out;
}

// Stage 5: parse an array and take its first object element.
bool try_array_first_object(const std::string& text, json& out) {
    json v = json::parse(text, nullptr, false);
    if (v.is_discarded()) {
        std::string region = extract_balanced(text, '[', ']');
        v = json::parse(region, nullptr, false);
    }
    if (v.is_discarded() || !v.is_array()) return false;
    for (const auto& item : v) {
        if (item.is_object()) {
            out = item;
            return true;
        }
    }
    return false;
}

std::optional<double> coerce_number(const json& v) {
    if (v.is_number()) return v.get<double>();
    if (v.is_string()) {
        const std::string& s = v.get_ref<const std::string&>();
        if (s.empty()) return std::nullopt;
        char* end = nullptr;
        double d = std::strtod(s.c_str(), &end);
        if (end == s.c_str()) return std::nullopt;
        while (*end && std::isspace(static_cast<unsigned char>(*end))) ++end;
        if (*end != '\0') return std::nullopt;
        if (!std::isfinite(d)) return std::nullopt;
        return d;
    }
    return std::nullopt;
}

// Coordinate tuple of expected arity from a JSON array, with numeric-string
// coercion. nullopt when the element cannot be salvaged.
std::optional<std::vector<double>> coerce_tuple(const json& v, size_t arity) {
    if (!v.is_array() || v.size() != arity) return std::nullopt;
    std::vector<double> vals;
    vals.reserve(arity);
    for (const auto& item : v) {
        auto num = coerce_number(item);
        if (!num) return std::nullopt;
        vals.push_back(*num);
    }
    return vals;
}

bool all_numeric(const json& arr) {
    for (const auto& item : arr) {
        if (!coerce_number(item)) return false;
    }
    return true;
}

void add_flag(std::vector<ConsistencyFlag>& flags, ConsistencyFlag f) {
    if (std::find(flags.begin(), flags.end(), f) == flags.end()) flags.push_back(f);
}

double clamp_value(double v, double lo, double hi, bool& clamped) {
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

}  // namespace

ExtractResult extract_structured(std::string_view input) {
    ExtractResult result;
    std::string text(input);

    // Stage 1: direct parse.
    if (try_parse_object(text, result.value)) {
        result.ok = true;
        return result;
    }

    // Stages 2..5 each transform the text produced by the previous stage and
    // retry; every attempted stage lands in recovery_steps.
    for (size_t stage = 0; stage < kRecoveryLadder.size(); ++stage) {
        result.recovery_steps.emplace_back(kRecoveryLadder[stage]);
        bool ok = false;
        switch (stage) {
            case 0:
                text = strip_code_fences(text);
                ok = try_parse_object(text, result.value);
                break;
            case 1:
                text = extract_balanced(text, '{', '}');
                ok = try_parse_object(text, result.value);
                break;
            case 2:
                text = normalize_quotes_and_commas(text);
                ok = try_parse_object(text, result.value);
                break;
            case 3:
                ok = try_array_first_object(text, result.value);
                break;
        }
        if (ok) {
            result.ok = true;
            return result;
        }
    }
    result.failed_stage = kRecoveryLadder.back();
    result.recovery_steps.clear();
    return result;
}

Prediction normalize_prediction(const json& raw, TaskKind task, int eval_width, int eval_height) {
    Prediction pred;
    pred.parse_status = ParseStatus::Clean;
    if (!raw.is_object()) {
        pred.parse_status = ParseStatus::Failed;
        return pred;
    }

    const std::vector<std::string> schema = task_keys(task);
    auto in_schema = [&](const std::string& key) {
        return std::find(schema.begin(), schema.end(), key) != schema.end();
    };

    for (const auto& [key, value] : raw.items()) {
        if (!in_schema(key)) add_flag(pred.flags, ConsistencyFlag::ExtraKey);

        if (key == "bbox_2d") {
            if (value.is_array() && value.size() == 4 && all_numeric(value)) {
                // A single flat [x1, y1, x2, y2] coerces to a one-box list.
                auto t = coerce_tuple(value, 4);
                pred.boxes.push_back({(*t)[0], (*t)[1], (*t)[2], (*t)[3]});
                add_flag(pred.flags, ConsistencyFlag::MalformedGeometry);
            } else if (value.is_array()) {
                for (const auto& item : value) {
                    auto t = coerce_tuple(item, 4);
                    if (!t) {
                        add_flag(pred.flags, ConsistencyFlag::MalformedGeometry);
                        continue;
                    }
                    pred.boxes.push_back({(*t)[0], (*t)[1], (*t)[2], (*t)[3]});
                }
            } else {
                add_flag(pred.flags, ConsistencyFlag::MalformedGeometry);
            }
        } else if (key == "point_2d") {
            if (value.is_array() && value.size() == 2 && all_numeric(value)) {
                auto t = coerce_tuple(value, 2);
                pred.points.push_back({(*t)[0], (*t)[1]});
                add_flag(pred.flags, ConsistencyFlag::MalformedGeometry);
            } else if (value.is_array()) {
                for (const auto& item : value) {
                    auto t = coerce_tuple(item, 2);
                    if (!t) {
                        add_flag(pred.flags, ConsistencyFlag::MalformedGeometry);
                        continue;
                    }
                    pred.points.push_back({(*t)[0], (*t)[1]});
                }
            } else {
                add_flag(pred.flags, ConsistencyFlag::MalformedGeometry);
            }
        } else if (key == "counts") {
            auto num = coerce_number(value);
            if (!num) {
                add_flag(pred.flags, ConsistencyFlag::CountCoerced);
            } else {
                double d = *num;
                long long c = static_cast<long long>(std::floor(d));
                if (d != std::floor(d) || c < 0) {
                    add_flag(pred.flags, ConsistencyFlag::CountCoerced);
                }
                pred.count = std::max<long long>(0, c);
            }
        } else if (key == "label") {
            if (value.is_string()) pred.label = value.get<std::string>();
        }
    }

    for (const auto& key : schema) {
        if (!raw.contains(key)) add_flag(pred.flags, ConsistencyFlag::MissingRequiredKey);
    }

    if (eval_width > 0 && eval_height > 0) {
        bool clamped = false;
        for (auto& b : pred.boxes) {
            b.x1 = clamp_value(b.x1, 0, eval_width, clamped);
            b.x2 = clamp_value(b.x2, 0, eval_width, clamped);
            b.y1 = clamp_value(b.y1, 0, eval_height, clamped);
            b.y2 = clamp_value(b.y2, 0, eval_height, clamped);
        }
        for (auto& p : pred.points) {
            p.x = clamp_value(p.x, 0, eval_width, clamped);
            p.y = clamp_value(p.y, 0, eval_height, clamped);
        }
        if (clamped) add_flag(pred.flags, ConsistencyFlag::CoordinateClamped);
    }

    return pred;
}

std::vector<ConsistencyFlag> consistency_check(const Prediction& pred, TaskKind task,
                                               const std::optional<std::string>& expected_label) {
    std::vector<ConsistencyFlag> flags;

    if (pred.count) {
        std::vector<size_t> cardinalities;
        if (task_uses_boxes(task)) cardinalities.push_back(pred.boxes.size());
        if (task_uses_points(task)) cardinalities.push_back(pred.points.size());
        if (cardinalities.empty()) {
            // CountOnly: check any geometry the model volunteered.
            if (!pred.boxes.empty()) cardinalities.push_back(pred.boxes.size());
            if (!pred.points.empty()) cardinalities.push_back(pred.points.size());
        }
        for (size_t c : cardinalities) {
            if (static_cast<long long>(c) != *pred.count) {
                add_flag(flags, ConsistencyFlag::CountGeometryMismatch);
            }
        }
    }

    {
        std::set<std::array<long long, 4>> boxes_seen;
        for (const auto& b : pred.boxes) {
            std::array<long long, 4> key = {round_half_up(b.x1), round_half_up(b.y1),
                                            round_half_up(b.x2), round_half_up(b.y2)};
            if (!boxes_seen.insert(key).second) {
                add_flag(flags, ConsistencyFlag::DuplicateGeometry);
            }
        }
        std::set<std::array<long long, 2>> points_seen;
        for (const auto& p : pred.points) {
            std::array<long long, 2> key = {round_half_up(p.x), round_half_up(p.y)};
            if (!points_seen.insert(key).second) {
                add_flag(flags, ConsistencyFlag::DuplicateGeometry);
            }
        }
    }

    if (expected_label && pred.label &&
        normalize_label(*pred.label) != normalize_label(*expected_label)) {
        add_flag(flags, ConsistencyFlag::LabelMismatch);
    }

    return flags;
}

Prediction parse_response(std::string_view text, TaskKind task, int eval_width, int eval_height,
                          const std::optional<std::string>& expected_label) {
    ExtractResult ex = extract_structured(text);
    if (!ex.ok) {
        Prediction failed;
        failed.parse_status = ParseStatus::Failed;
        return failed;
    }
    Prediction pred = normalize_prediction(ex.value, task, eval_width, eval_height);
    pred.parse_status = ex.recovery_steps.empty() ? ParseStatus::Clean : ParseStatus::Recovered;
    pred.recovery_steps = std::move(ex.recovery_steps);
    for (ConsistencyFlag f : consistency_check(pred, task, expected_label)) {
        add_flag(pred.flags, f);
    }
    return pred;
}

json prediction_to_json(const std::string& sample_id, TaskKind task, const Prediction& pred) {
    json row = json::object();
    row["sample_id"] = sample_id;
    row["task"] = to_string(task);
    row["parse_status"] = to_string(pred.parse_status);
    row["recovery_steps"] = pred.recovery_steps;
    json boxes = json::array();
    for (const auto& b : pred.boxes) boxes.push_back({b.x1, b.y1, b.x2, b.y2});
    row["boxes"] = boxes;
    json points = json::array();
    for (const auto& p : pred.points) points.push_back({p.x, p.y});
    row["points"] = points;
    row["count"] = pred.count ? json(*pred.count) : json(nullptr);
    row["label"] = pred.label ? json(*pred.label) : json(nullptr);
    json flags = json::array();
    for (ConsistencyFlag f : pred.flags) flags.push_back(to_string(f));
    row["flags"] = flags;
    return row;
}

Prediction prediction_from_json(const json& row) {
    Prediction pred;
    auto status = parse_status_from_string(row.value("parse_status", ""));
    if (!status) throw DataError("bad parse_status in predictions row");
    pred.parse_status = *status;
    if (row.contains("recovery_steps")) {
        for (const auto& s : row["recovery_steps"]) pred.recovery_steps.push_back(s);
    }
    if (row.contains("boxes")) {
        for (const auto& b : row["boxes"]) {
            if (!b.is_array() || b.size() != 4) throw DataError("bad box in predictions row");
            pred.boxes.push_back(
                {b[0].get<double>(), b[1].get<double>(), b[2].get<double>(), b[3].get<double>()});
        }
    }
    if (row.contains("points")) {
        for (const auto& p : row["points"]) {
            if (!p.is_array() || p.size() != 2) throw DataError("bad point in predictions row");
            pred.points.push_back({p[0].get<double>(), p[1].get<double>()});
        }
    }
    if (row.contains("count") && !row["count"].is_null()) pred.count = row["count"].get<long long>();
    if (row.contains("label") && !row["label"].is_null()) {
        pred.label = row["label"].get<std::string>();
    }
    if (row.contains("flags")) {
        for (const auto& f : row["flags"]) {
            auto flag = flag_from_string(f.get<std::string>());
            if (flag) pred.flags.push_back(*flag);
        }
    }
    return pred;
}

}  // namespace medbench
