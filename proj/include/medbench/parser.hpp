#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "medbench/core.hpp"

namespace medbench {

enum class ParseStatus { Clean, Recovered, Failed };

std::string to_string(ParseStatus status);
std::optional<ParseStatus> parse_status_from_string(std::string_view name);

enum class ConsistencyFlag {
    CountGeometryMismatch,
    MissingRequiredKey,
    ExtraKey,
    CoordinateClamped,
    DuplicateGeometry,
    MalformedGeometry,
    CountCoerced,
    LabelMismatch,
};

std::string to_string(ConsistencyFlag flag);
std::optional<ConsistencyFlag> flag_from_string(std::string_view name);

struct Prediction {
    std::vector<Box> boxes;
    std::vector<Point> points;
    std::optional<long long> count;
    std::optional<std::string> label;
    ParseStatus parse_status = ParseStatus::Failed;
    std::vector<std::string> recovery_steps;
    std::vector<ConsistencyFlag> flags;
};

// Recovery ladder stages, in order. Stage 1 is the direct parse; the tags
// below name the fix stages 2..5 and are exactly what recovery_steps holds.
inline constexpr std::array<const char*, 4> kRecoveryLadder = {
    "fence-strip", "object-extract", "quote-normalize", "array-first-object"};

struct ExtractResult {
    bool ok = false;
    nlohmann::json value;                     // a JSON object when ok
    std::vector<std::string> recovery_steps;  // prefix of kRecoveryLadder
    std::string failed_stage;                 // last attempted stage when !ok
};

// Total over arbitrary bytes; failure is a value, never an exception.
ExtractResult extract_structured(std::string_view text);

// Maps a raw JSON object onto a Prediction for the given task, applying the
// defined coercions and recording flags. Coordinates are clamped to
// [0, eval_width] x [0, eval_height]; pass 0x0 bounds to skip clamping
// (offline parsing without image dimensions).
Prediction normalize_prediction(const nlohmann::json& raw, TaskKind task, int eval_width,
                                int eval_height);

// Post-hoc consistency flags (count/geometry divergence, integer-resolution
// duplicates, label mismatch against the queried class). Requires a
// non-failed prediction.
std::vector<ConsistencyFlag> consistency_check(
    const Prediction& pred, TaskKind task,
    const std::optional<std::string>& expected_label = std::nullopt);

// extract + normalize + consistency_check in one step; the usual entry point.
Prediction parse_response(std::string_view text, TaskKind task, int eval_width, int eval_height,
                          const std::optional<std::string>& expected_label = std::nullopt);

// predictions.jsonl row: {sample_id, task, parse_status, recovery_steps,
// boxes, points, count, label, flags}.
nlohmann::json prediction_to_json(const std::string& sample_id, TaskKind task,
                                  const Prediction& pred);
Prediction prediction_from_json(const nlohmann::json& row);

}  // namespace medbench
