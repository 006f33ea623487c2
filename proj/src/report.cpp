#include "medbench/report.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace medbench {

using nlohmann::json;
using nlohmann::ordered_json;

std::string to_string(ReportFormat format) {
    switch (format) {
        case ReportFormat::Markdown: return "markdown";
        case ReportFormat::Csv: return "csv";
        case ReportFormat::Json: return "json";
    }
    return "?";
}

std::optional<ReportFormat> report_format_from_string(std::string_view name) {
    if (name == "markdown") return ReportFormat::Markdown;
    if (name == "csv") return ReportFormat::Csv;
    if (name == "json") return ReportFormat::Json;
    return std::nullopt;
}

ordered_json task_report_to_json(const TaskReport& report) {
    ordered_json row;
    row["task"] = to_string(report.task);
    row["n"] = report.n;
    auto put = [&](const char* key, const std::optional<double>& v) {
        if (v) row[key] = *v;
    };
    put("count_mae", report.count_mae);
    put("count_mse", report.count_mse);
    put("point_mae", report.point_mae);
    put("point_rmse", report.point_rmse);
    put("matching_accuracy", report.matching_accuracy);
    if (report.zero_case_points) row["zero_case_points"] = *report.zero_case_points;
    put("map", report.map);
    put("map50", report.map50);
    put("map75", report.map75);
    put("avg_iou", report.avg_iou);
    return row;
}

TaskReport task_report_from_json(const json& row) {
    if (!row.is_object()) throw DataError("task report is not a JSON object");
    auto task = task_from_string(row.value("task", ""));
    if (!task) throw DataError("task report has unknown task: " + row.value("task", ""));
    if (!row.contains("n") || !row["n"].is_number_integer()) {
        throw DataError("task report is missing n");
    }
    TaskReport report;
    report.task = *task;
    report.n = row["n"].get<size_t>();
    auto get = [&](const char* key) -> std::optional<double> {
        if (row.contains(key) && row[key].is_number()) return row[key].get<double>();
        return std::nullopt;
    };
    report.count_mae = get("count_mae");
    report.count_mse = get("count_mse");
    report.point_mae = get("point_mae");
    report.point_rmse = get("point_rmse");
    report.matching_accuracy = get("matching_accuracy");
    if (row.contains("zero_case_points") && row["zero_case_points"].is_number_integer()) {
        report.zero_case_points = row["zero_case_points"].get<long long>();
    }
    report.map = get("map");
    report.map50 = get("map50");
    report.map75 = get("map75");
    report.avg_iou = get("avg_iou");
    return report;
}

namespace {

struct MetricSpec {
    std::string name;
    bool lower_better;
    bool integer;
    std::function<std::optional<double>(const TaskReport&)> get;
};

std::vector<MetricSpec> metric_specs(TaskKind task) {
    auto field = [](std::optional<double> TaskReport::*member) {
        return [member](const TaskReport& r) { return r.*member; };
    };
    std::vector<MetricSpec> specs;
    if (task_uses_counts(task)) {
        specs.push_back({"Count MAE", true, false, field(&TaskReport::count_mae)});
        specs.push_back({"Count MSE", true, false, field(&TaskReport::count_mse)});
    }
    if (task_uses_points(task)) {
        specs.push_back({"Point MAE", true, false, field(&TaskReport::point_mae)});
        specs.push_back({"Point RMSE", true, false, field(&TaskReport::point_rmse)});
        specs.push_back({"Matching Accuracy", false, false, field(&TaskReport::matching_accuracy)});
        specs.push_back({"Zero-case Points", true, true,
                         [](const TaskReport& r) -> std::optional<double> {
                             if (!r.zero_case_points) return std::nullopt;
                             return static_cast<double>(*r.zero_case_points);
                         }});
    }
    if (task_uses_boxes(task)) {
        specs.push_back({"mAP", false, false, field(&TaskReport::map)});
        specs.push_back({"mAP@50", false, false, field(&TaskReport::map50)});
        specs.push_back({"mAP@75", false, false, field(&TaskReport::map75)});
        specs.push_back({"IoU (avg)", false, false, field(&TaskReport::avg_iou)});
    }
    return specs;
}

std::string format_value(const std::optional<double>& v, bool integer) {
    if (!v) return "-";
    if (integer) return std::to_string(static_cast<long long>(std::llround(*v)));
    return format_fixed(*v, 2);
}

std::string csv_escape(const std::string& field) {
    if (field.find_first_of(",\"\n") == std::string::npos) return field;
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out += "\"\"";
        else out += c;
    }
    out += "\"";
    return out;
}

struct ReportLayout {
    std::vector<TaskKind> tasks;
    // per task: one TaskReport per system, systems order preserved
    std::map<TaskKind, std::vector<const TaskReport*>> rows;
};

ReportLayout validate_layout(const std::vector<SystemReports>& systems) {
    if (systems.empty()) throw UsageError("no systems to render");
    std::vector<std::map<TaskKind, const TaskReport*>> indexed;
    for (const auto& sys : systems) {
        std::map<TaskKind, const TaskReport*> by_task;
        for (const auto& r : sys.reports) {
            if (!by_task.emplace(r.task, &r).second) {
                throw DataError("system \"" + sys.name + "\" reports task " + to_string(r.task) +
                                " twice");
            }
        }
        indexed.push_back(std::move(by_task));
    }
    for (size_t i = 1; i < systems.size(); ++i) {
        for (TaskKind t : kAllTasks) {
            bool first = indexed[0].count(t) > 0;
            bool cur = indexed[i].count(t) > 0;
            if (first != cur) {
                throw DataError("task coverage mismatch: system \"" +
                                (first ? systems[i].name : systems[0].name) +
                                "\" has no report for " + task_display_name(t));
            }
        }
    }
    ReportLayout layout;
    for (TaskKind t : kAllTasks) {
        if (!indexed[0].count(t)) continue;
        layout.tasks.push_back(t);
        for (const auto& idx : indexed) layout.rows[t].push_back(idx.at(t));
    }
    if (layout.tasks.empty()) throw DataError("no task reports to render");
    return layout;
}

std::string group_n(const std::vector<const TaskReport*>& reports) {
    bool uniform = true;
    for (const auto* r : reports) {
        if (r->n != reports[0]->n) uniform = false;
    }
    std::string out = std::to_string(reports[0]->n);
    if (!uniform) {
        for (size_t i = 1; i < reports.size(); ++i) out += "/" + std::to_string(reports[i]->n);
    }
    return out;
}

std::string render_markdown(const std::vector<SystemReports>& systems,
                            const ReportLayout& layout) {
    std::ostringstream out;
    out << "| Task | Metric |";
    for (const auto& sys : systems) out << " " << sys.name << " |";
    out << "\n| --- | --- |";
    for (size_t i = 0; i < systems.size(); ++i) out << " ---: |";
    out << "\n";
    for (TaskKind t : layout.tasks) {
        const auto& reports = layout.rows.at(t);
        std::string group = "**" + task_display_name(t) + "** (n=" + group_n(reports) + ")";
        bool first_row = true;
        for (const auto& spec : metric_specs(t)) {
            out << "| " << (first_row ? group : "") << " | " << spec.name
                << (spec.lower_better ? " ↓" : " ↑") << " |";
            for (const auto* r : reports) out << " " << format_value(spec.get(*r), spec.integer)
                                              << " |";
            out << "\n";
            first_row = false;
        }
    }
    return out.str();
}

std::string render_csv(const std::vector<SystemReports>& systems, const ReportLayout& layout) {
    std::ostringstream out;
    out << "task,n,metric,direction";
    for (const auto& sys : systems) out << "," << csv_escape(sys.name);
    out << "\n";
    for (TaskKind t : layout.tasks) {
        const auto& reports = layout.rows.at(t);
        for (const auto& spec : metric_specs(t)) {
            out << csv_escape(task_display_name(t)) << "," << group_n(reports) << ","
                << csv_escape(spec.name) << "," << (spec.lower_better ? "lower" : "higher");
            for (const auto* r : reports) out << "," << format_value(spec.get(*r), spec.integer);
            out << "\n";
        }
    }
    return out.str();
}

std::string render_json(const std::vector<SystemReports>& systems, const ReportLayout& layout) {
    ordered_json doc;
    doc["systems"] = json::array();
    for (const auto& sys : systems) doc["systems"].push_back(sys.name);
    doc["groups"] = json::array();
    for (TaskKind t : layout.tasks) {
        const auto& reports = layout.rows.at(t);
        ordered_json group;
        group["task"] = to_string(t);
        group["display"] = task_display_name(t);
        group["n"] = json::array();
        for (const auto* r : reports) group["n"].push_back(r->n);
        group["rows"] = json::array();
        for (const auto& spec : metric_specs(t)) {
            ordered_json row;
            row["metric"] = spec.name;
            row["direction"] = spec.lower_better ? "lower" : "higher";
            row["values"] = json::array();
            for (const auto* r : reports) {
                auto v = spec.get(*r);
                if (!v) {
                    row["values"].push_back(nullptr);
                } else if (spec.integer) {
                    row["values"].push_back(static_cast<long long>(std::llround(*v)));
                } else {
                    // Rendered value, so every format shows the same number.
                    row["values"].push_back(std::stod(format_fixed(*v, 2)));
                }
            }
            group["rows"].push_back(std::move(row));
        }
        doc["groups"].push_back(std::move(group));
    }
    return doc.dump(2) + "\n";
}

}  // namespace

std::string render_report(const std::vector<SystemReports>& systems, ReportFormat format) {
    ReportLayout layout = validate_layout(systems);
    switch (format) {
        case ReportFormat::Markdown: return render_markdown(systems, layout);
        case ReportFormat::Csv: return render_csv(systems, layout);
        case ReportFormat::Json: return render_json(systems, layout);
    }
    return "";
}

void save_eval_file(const EvalFile& file, const std::string& path) {
    ordered_json doc;
    doc["config_digest"] = file.config_digest;
    doc["options"] = file.options;
    doc["reports"] = json::array();
    for (const auto& r : file.reports) doc["reports"].push_back(task_report_to_json(r));
    write_file(path, doc.dump(2) + "\n");
}

EvalFile load_eval_file(const std::string& path) {
    json doc = json::parse(read_file(path), nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) {
        throw DataError("evaluation report is not valid JSON: " + path);
    }
    EvalFile file;
    file.config_digest = doc.value("config_digest", "");
    file.options = doc.value("options", json::object());
    if (!doc.contains("reports") || !doc["reports"].is_array() || doc["reports"].empty()) {
        throw DataError("evaluation report has no \"reports\" array: " + path);
    }
    for (const auto& row : doc["reports"]) file.reports.push_back(task_report_from_json(row));
    return file;
}

nlohmann::ordered_json training_manifest(const TrainingManifestConfig& cfg,
                                         const std::string& config_digest) {
    if (!std::filesystem::exists(cfg.dataset_path)) {
        throw DataError("training dataset does not exist: " + cfg.dataset_path);
    }
    ordered_json doc;
    doc["config_digest"] = config_digest;
    doc["dataset"] = cfg.dataset_path;
    doc["base_model"] = cfg.base_model;
    doc["objective"] = "token-cross-entropy";
    doc["adapter"] = {{"type", "lora"},
                      {"rank", cfg.lora_rank},
                      {"target", "llm-linear-layers"},
                      {"exclude", json::array({"lm_head"})}};
    doc["optimizer"] = {{"name", "adamw"}, {"learning_rate", cfg.learning_rate}};
    doc["epochs"] = cfg.epochs;
    doc["batch"] = {{"effective_size", cfg.effective_batch_size},
                    {"method", "gradient-accumulation"}};
    doc["eval_interval_steps"] = cfg.eval_interval_steps;
    doc["vision_encoder"] = "frozen";
    return doc;
}

}  // namespace medbench
