#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "medbench/metrics.hpp"

namespace medbench {

enum class ReportFormat { Markdown, Csv, Json };

std::string to_string(ReportFormat format);
std::optional<ReportFormat> report_format_from_string(std::string_view name);

// {"task": "CountOnly", "n": 105, "count_mae": ..., ...}; absent metrics are
// omitted.
nlohmann::ordered_json task_report_to_json(const TaskReport& report);
TaskReport task_report_from_json(const nlohmann::json& row);

struct SystemReports {
    std::string name;
    std::vector<TaskReport> reports;
};

// One table over all systems in Table-1 layout: a row group per task with
// its metric rows, a value column per system, direction marker per metric,
// 2-decimal formatting (integers for n and Zero-case Points), "-" for
// absent values. All systems must cover the same task set.
std::string render_report(const std::vector<SystemReports>& systems, ReportFormat format);

// Evaluation output file: {"config_digest", "options", "reports": [...]}.
struct EvalFile {
    std::string config_digest;
    nlohmann::json options;
    std::vector<TaskReport> reports;
};

void save_eval_file(const EvalFile& file, const std::string& path);
EvalFile load_eval_file(const std::string& path);

struct TrainingManifestConfig {
    std::string dataset_path;
    std::string base_model = "Qwen/Qwen2.5-VL-7B-Instruct";
    int lora_rank = 16;
    double learning_rate = 2e-4;
    int epochs = 5;
    int effective_batch_size = 4;
    int eval_interval_steps = 200;
};

// Machine-readable handoff for an external trainer. Deterministic; throws
// DataError when the dataset file does not exist.
nlohmann::ordered_json training_manifest(const TrainingManifestConfig& cfg,
                                         const std::string& config_digest);

}  // namespace medbench
