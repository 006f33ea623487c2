#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "medbench/client.hpp"
#include "medbench/core.hpp"
#include "medbench/dataset.hpp"
#include "medbench/metrics.hpp"
#include "medbench/parser.hpp"
#include "medbench/prompt.hpp"
#include "medbench/report.hpp"

namespace {

using medbench::DataError;
using medbench::UsageError;
using nlohmann::json;
using nlohmann::ordered_json;

std::string config_digest_for(const std::string& command, const ordered_json& options) {
    ordered_json doc;
    doc["command"] = command;
    doc["options"] = options;
    return medbench::to_hex(medbench::fnv1a64(doc.dump()));
}

void print_error(const std::string& kind, const std::string& message) {
    json err;
    err["error"] = kind;
    err["message"] = message;
    std::cerr << err.dump() << "\n";
}

void report_warnings(const std::vector<std::string>& warnings, bool verbose) {
    if (verbose) {
        for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
    } else if (!warnings.empty()) {
        std::cerr << "warning: " << warnings.size()
                  << " records were skipped or repaired (run with --verbose for details)\n";
    }
}

struct BuildOpts {
    std::string manifest;
    std::string out_dir;
    std::string question_bank;
    long long seed = 0;
    std::uint64_t test_size = 500;
    std::string test_unit = "image";
    bool stratify = false;
};

void run_build(const BuildOpts& o, bool verbose) {
    auto unit = medbench::split_unit_from_string(o.test_unit);
    if (!unit) throw UsageError("unknown --test-unit: " + o.test_unit);

    medbench::SourceManifest manifest = medbench::SourceManifest::from_json_file(o.manifest);
    medbench::QuestionBank custom_bank;
    const medbench::QuestionBank* bank = &medbench::QuestionBank::default_bank();
    if (!o.question_bank.empty()) {
        custom_bank = medbench::QuestionBank::from_json_file(o.question_bank);
        bank = &custom_bank;
    }

    medbench::IngestResult ingested = medbench::ingest_manifest(manifest);
    report_warnings(ingested.warnings, verbose);
    if (ingested.records.empty()) throw DataError("no valid records in any source");

    medbench::BuildResult built = medbench::build_all(ingested.records, *bank, o.seed);
    medbench::SplitSpec split;
    split.seed = o.seed;
    split.test_size = static_cast<size_t>(o.test_size);
    split.stratify = o.stratify;
    split.unit = *unit;
    medbench::SplitResult parts = medbench::split_dataset(built.samples, split);

    ordered_json options;
    options["manifest"] = o.manifest;
    options["out_dir"] = o.out_dir;
    options["seed"] = o.seed;
    options["test_size"] = o.test_size;
    options["test_unit"] = o.test_unit;
    options["stratify"] = o.stratify;
    options["question_bank"] = o.question_bank.empty() ? bank->version() : o.question_bank;
    std::string digest = config_digest_for("build", options);

    std::filesystem::create_directories(o.out_dir);
    auto path_of = [&](const char* name) {
        return (std::filesystem::path(o.out_dir) / name).string();
    };
    medbench::JsonlMeta meta{"dataset", digest, o.seed};
    medbench::emit_jsonl(built.samples, path_of("dataset.jsonl"), meta);
    medbench::emit_jsonl(parts.train, path_of("train.jsonl"), meta);
    medbench::emit_jsonl(parts.test, path_of("test.jsonl"), meta);

    std::set<std::string> images;
    for (const auto& r : ingested.records) images.insert(r.image.id);
    ordered_json summary;
    summary["config_digest"] = digest;
    summary["images"] = images.size();
    summary["records"] = ingested.records.size();
    summary["samples"] = built.samples.size();
    summary["train"] = parts.train.size();
    summary["test"] = parts.test.size();
    summary["skipped_records"] = ingested.skipped;
    summary["skipped_tasks"] = built.skipped_tasks;
    summary["dataset"] = path_of("dataset.jsonl");
    summary["train_file"] = path_of("train.jsonl");
    summary["test_file"] = path_of("test.jsonl");
    std::cout << summary.dump() << "\n";
}

struct InferOpts {
    std::string dataset;
    std::string endpoint;
    std::string model;
    std::string out;
    std::string api_key_env = "MEDBENCH_API_KEY";
    int concurrency = 4;
    double timeout_s = 60.0;
    int max_retries = 3;
    double backoff_base_s = 0.5;
    double temperature = 0.0;
    int max_tokens = 512;
};

void run_infer(const InferOpts& o) {
    medbench::LoadedDataset ds = medbench::load_samples_jsonl(o.dataset);
    if (ds.meta.format != "dataset") {
        throw DataError("--dataset is not a dataset file (meta format \"" + ds.meta.format +
                        "\")");
    }
    medbench::EndpointConfig cfg;
    cfg.base_url = o.endpoint;
    cfg.model = o.model;
    cfg.api_key_env = o.api_key_env;
    cfg.timeout_s = o.timeout_s;
    cfg.max_retries = o.max_retries;
    cfg.backoff_base_s = o.backoff_base_s;
    cfg.max_in_flight = o.concurrency;
    cfg.temperature = o.temperature;
    cfg.max_tokens = o.max_tokens;

    ordered_json options;
    options["dataset"] = o.dataset;
    options["endpoint"] = o.endpoint;
    options["model"] = o.model;
    options["concurrency"] = o.concurrency;
    options["temperature"] = o.temperature;
    options["max_tokens"] = o.max_tokens;
    std::string digest = config_digest_for("infer", options);

    medbench::RunStats stats =
        medbench::run_inference(ds.samples, cfg, o.out, {"responses", digest, ds.meta.seed});

    ordered_json summary;
    summary["config_digest"] = digest;
    summary["total"] = stats.total;
    summary["skipped"] = stats.skipped;
    summary["attempted"] = stats.attempted;
    summary["succeeded"] = stats.succeeded;
    summary["failed"] = stats.failed;
    summary["out"] = o.out;
    std::cout << summary.dump() << "\n";
}

struct EvalOpts {
    std::string truth;
    std::string pred;
    std::string task = "all";
    std::string out;
    double match_threshold = medbench::kDefaultMatchThresholdPx;
    std::string averaging = "micro";
    std::string map_sweep = "0.50:0.05:0.95";
};

std::string detect_pred_format(const std::string& path) {
    std::istringstream lines(medbench::read_file(path));
    std::string line;
    while (std::getline(lines, line)) {
        if (medbench::trim(line).empty()) continue;
        json row = json::parse(line, nullptr, false);
        if (row.is_discarded() || !row.is_object() || row.value("type", "") != "meta") break;
        return row.value("format", "");
    }
    throw DataError("--pred file has no meta line: " + path);
}

void run_eval(const EvalOpts& o) {
    auto averaging = medbench::averaging_from_string(o.averaging);
    if (!averaging) throw UsageError("unknown --averaging: " + o.averaging);
    auto sweep_parts = medbench::split_string(o.map_sweep, ':');
    medbench::EvalOptions eval_opts;
    eval_opts.match_threshold = o.match_threshold;
    eval_opts.averaging = *averaging;
    try {
        if (sweep_parts.size() != 3) throw std::invalid_argument("three fields required");
        eval_opts.map_start = std::stod(sweep_parts[0]);
        eval_opts.map_step = std::stod(sweep_parts[1]);
        eval_opts.map_stop = std::stod(sweep_parts[2]);
    } catch (const std::exception&) {
        throw UsageError("--map-sweep must be start:step:stop, got: " + o.map_sweep);
    }
    if (eval_opts.map_step <= 0 || eval_opts.map_stop < eval_opts.map_start) {
        throw UsageError("--map-sweep must satisfy step > 0 and stop >= start");
    }

    medbench::LoadedDataset truth = medbench::load_samples_jsonl(o.truth);
    if (truth.meta.format != "dataset") {
        throw DataError("--truth is not a dataset file (meta format \"" + truth.meta.format +
                        "\")");
    }

    std::set<medbench::TaskKind> selected;
    if (o.task == "all") {
        for (const auto& s : truth.samples) selected.insert(s.task);
    } else {
        auto kind = medbench::task_from_string(o.task);
        if (!kind) throw UsageError("unknown --task: " + o.task);
        selected.insert(*kind);
    }

    std::vector<const medbench::InstructionSample*> truth_samples;
    for (const auto& s : truth.samples) {
        if (selected.count(s.task)) truth_samples.push_back(&s);
    }
    if (truth_samples.empty()) throw DataError("no truth samples for the selected task");

    // Predictions arrive either as a raw response log (parsed here) or as an
    // already-parsed predictions file.
    std::map<std::string, medbench::Prediction> by_id;
    std::string format = detect_pred_format(o.pred);
    if (format == "responses") {
        medbench::ResponseLog log = medbench::load_response_log(o.pred);
        std::vector<medbench::InstructionSample> filtered;
        for (const auto* s : truth_samples) filtered.push_back(*s);
        auto rows = medbench::replay_log(log, filtered);
        for (size_t i = 0; i < rows.size(); ++i) {
            const medbench::InstructionSample& s = filtered[i];
            by_id[rows[i].first] =
                medbench::parse_response(rows[i].second, s.task, s.image.eval_width,
                                         s.image.eval_height, s.label);
        }
    } else if (format == "predictions") {
        std::istringstream lines(medbench::read_file(o.pred));
        std::string line;
        size_t line_no = 0;
        bool meta_seen = false;
        std::set<std::string> truth_ids;
        for (const auto* s : truth_samples) truth_ids.insert(s->sample_id);
        std::vector<std::string> extra;
        for (; std::getline(lines, line);) {
            ++line_no;
            if (medbench::trim(line).empty()) continue;
            json row = json::parse(line, nullptr, false);
            if (row.is_discarded() || !row.is_object()) {
                throw DataError(o.pred + ":" + std::to_string(line_no) + ": not a JSON object");
            }
            if (!meta_seen) {
                meta_seen = true;
                continue;
            }
            auto task = medbench::task_from_string(row.value("task", ""));
            if (!task) {
                throw DataError(o.pred + ":" + std::to_string(line_no) + ": unknown task");
            }
            if (!selected.count(*task)) continue;
            std::string sample_id = row.value("sample_id", "");
            if (!truth_ids.count(sample_id)) {
                extra.push_back(sample_id);
                continue;
            }
            by_id[sample_id] = medbench::prediction_from_json(row);
        }
        if (!extra.empty()) {
            std::string joined;
            for (size_t i = 0; i < std::min<size_t>(extra.size(), 10); ++i) {
                if (i) joined += ", ";
                joined += extra[i];
            }
            throw DataError("predictions cover sample ids absent from the truth set: " + joined);
        }
    } else {
        throw DataError("--pred file has unsupported format \"" + format + "\"");
    }

    std::vector<std::string> missing;
    std::map<medbench::TaskKind, std::vector<medbench::SamplePair>> by_task;
    for (const auto* s : truth_samples) {
        auto it = by_id.find(s->sample_id);
        if (it == by_id.end()) {
            missing.push_back(s->sample_id);
            continue;
        }
        medbench::SamplePair pair;
        pair.sample_id = s->sample_id;
        pair.task = s->task;
        pair.truth = medbench::truth_from_sample(*s);
        pair.pred = it->second;
        by_task[s->task].push_back(std::move(pair));
    }
    if (!missing.empty()) {
        std::string joined;
        for (size_t i = 0; i < std::min<size_t>(missing.size(), 10); ++i) {
            if (i) joined += ", ";
            joined += missing[i];
        }
        if (missing.size() > 10) {
            joined += ", ... (" + std::to_string(missing.size() - 10) + " more)";
        }
        throw DataError("no prediction for truth sample ids: " + joined);
    }

    ordered_json options;
    options["truth"] = o.truth;
    options["pred"] = o.pred;
    options["task"] = o.task;
    options["match_threshold"] = o.match_threshold;
    options["averaging"] = o.averaging;
    options["map_sweep"] = o.map_sweep;
    std::string digest = config_digest_for("eval", options);

    medbench::EvalFile file;
    file.config_digest = digest;
    file.options = options;
    for (medbench::TaskKind t : medbench::kAllTasks) {
        auto it = by_task.find(t);
        if (it == by_task.end()) continue;
        file.reports.push_back(medbench::evaluate_task(t, it->second, eval_opts));
    }
    medbench::save_eval_file(file, o.out);

    ordered_json summary;
    summary["config_digest"] = digest;
    summary["tasks"] = file.reports.size();
    ordered_json counts;
    for (const auto& r : file.reports) counts[medbench::to_string(r.task)] = r.n;
    summary["n"] = counts;
    summary["out"] = o.out;
    std::cout << summary.dump() << "\n";
}

struct ReportOpts {
    std::vector<std::string> inputs;
    std::vector<std::string> names;
    std::string format = "markdown";
    std::string out;
};

void run_report(const ReportOpts& o) {
    auto format = medbench::report_format_from_string(o.format);
    if (!format) throw UsageError("unknown --format: " + o.format);
    if (!o.names.empty() && o.names.size() != o.inputs.size()) {
        throw UsageError("--name count must match --in count");
    }
    std::vector<medbench::SystemReports> systems;
    for (size_t i = 0; i < o.inputs.size(); ++i) {
        medbench::EvalFile file = medbench::load_eval_file(o.inputs[i]);
        medbench::SystemReports sys;
        sys.name = i < o.names.size() ? o.names[i]
                                      : std::filesystem::path(o.inputs[i]).stem().string();
        sys.reports = std::move(file.reports);
        systems.push_back(std::move(sys));
    }
    std::string text = medbench::render_report(systems, *format);
    if (o.out.empty()) {
        std::cout << text;
    } else {
        medbench::write_file(o.out, text);
    }
}

struct ManifestOpts {
    std::string dataset;
    std::string out;
    std::string base_model = "Qwen/Qwen2.5-VL-7B-Instruct";
    int lora_rank = 16;
    double learning_rate = 2e-4;
    int epochs = 5;
    int batch_size = 4;
    int eval_interval = 200;
};

void run_manifest(const ManifestOpts& o) {
    medbench::TrainingManifestConfig cfg;
    cfg.dataset_path = o.dataset;
    cfg.base_model = o.base_model;
    cfg.lora_rank = o.lora_rank;
    cfg.learning_rate = o.learning_rate;
    cfg.epochs = o.epochs;
    cfg.effective_batch_size = o.batch_size;
    cfg.eval_interval_steps = o.eval_interval;

    ordered_json options;
    options["dataset"] = o.dataset;
    options["base_model"] = o.base_model;
    options["lora_rank"] = o.lora_rank;
    options["learning_rate"] = o.learning_rate;
    options["epochs"] = o.epochs;
    options["batch_size"] = o.batch_size;
    options["eval_interval"] = o.eval_interval;
    std::string digest = config_digest_for("manifest", options);

    std::string text = medbench::training_manifest(cfg, digest).dump(2) + "\n";
    if (o.out.empty()) {
        std::cout << text;
    } else {
        medbench::write_file(o.out, text);
    }
}

struct ParseOpts {
    std::string in;
    std::string task;
    std::string out;
};

void run_parse(const ParseOpts& o) {
    auto task = medbench::task_from_string(o.task);
    if (!task) throw UsageError("unknown --task: " + o.task);
    medbench::ResponseLog log = medbench::load_response_log(o.in);

    ordered_json options;
    options["in"] = o.in;
    options["task"] = o.task;
    std::string digest = config_digest_for("parse", options);

    std::ostringstream out;
    ordered_json meta_line;
    meta_line["type"] = "meta";
    meta_line["format"] = "predictions";
    meta_line["config_digest"] = digest;
    meta_line["seed"] = log.meta.seed;
    out << meta_line.dump() << "\n";

    size_t clean = 0, recovered = 0, failed = 0;
    for (const auto& entry : log.entries) {
        const std::string text = entry.status == "ok" ? entry.raw_text : "";
        medbench::Prediction pred = medbench::parse_response(text, *task, 0, 0);
        switch (pred.parse_status) {
            case medbench::ParseStatus::Clean: ++clean; break;
            case medbench::ParseStatus::Recovered: ++recovered; break;
            case medbench::ParseStatus::Failed: ++failed; break;
        }
        out << medbench::prediction_to_json(entry.sample_id, *task, pred).dump() << "\n";
    }
    medbench::write_file(o.out, out.str());

    ordered_json summary;
    summary["config_digest"] = digest;
    summary["entries"] = log.entries.size();
    summary["clean"] = clean;
    summary["recovered"] = recovered;
    summary["failed"] = failed;
    summary["out"] = o.out;
    std::cout << summary.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Benchmark harness for instruction-driven medical image annotation models"};
    app.require_subcommand(1);
    app.set_config("--config", "", "Read options from a TOML config file");
    bool verbose = false;
    app.add_flag("--verbose", verbose, "Print every ingestion warning");

    BuildOpts build_opts;
    auto* build = app.add_subcommand("build", "Compile annotation sources into instruction datasets");
    build->configurable();
    build->add_option("--manifest", build_opts.manifest, "Source manifest JSON")->required();
    build->add_option("--out-dir", build_opts.out_dir, "Output directory")->required();
    build->add_option("--seed", build_opts.seed, "Seed for template choice and the split");
    build->add_option("--test-size", build_opts.test_size, "Held-out test set size");
    build->add_option("--test-unit", build_opts.test_unit, "Unit test-size counts: image|sample");
    build->add_flag("--stratify", build_opts.stratify, "Stratify the split by source kind");
    build->add_option("--question-bank", build_opts.question_bank, "Custom question bank JSON");

    InferOpts infer_opts;
    auto* infer = app.add_subcommand("infer", "Collect model responses for a dataset");
    infer->configurable();
    infer->add_option("--dataset", infer_opts.dataset, "Dataset JSONL")->required();
    infer->add_option("--endpoint", infer_opts.endpoint, "Chat-completions base URL")->required();
    infer->add_option("--model", infer_opts.model, "Model name")->required();
    infer->add_option("--out", infer_opts.out, "Response log JSONL (appended, resumable)")
        ->required();
    infer->add_option("--concurrency", infer_opts.concurrency, "Max in-flight requests");
    infer->add_option("--timeout", infer_opts.timeout_s, "Per-request timeout in seconds");
    infer->add_option("--max-retries", infer_opts.max_retries, "Retries after the first attempt");
    infer->add_option("--backoff-base", infer_opts.backoff_base_s, "Backoff base in seconds");
    infer->add_option("--temperature", infer_opts.temperature, "Sampling temperature");
    infer->add_option("--max-tokens", infer_opts.max_tokens, "Max output tokens");
    infer->add_option("--api-key-env", infer_opts.api_key_env,
                      "Environment variable holding the API key");

    EvalOpts eval_opts;
    auto* eval = app.add_subcommand("eval", "Score predictions against ground truth");
    eval->configurable();
    eval->add_option("--truth", eval_opts.truth, "Dataset JSONL with targets")->required();
    eval->add_option("--pred", eval_opts.pred, "Response log or predictions JSONL")->required();
    eval->add_option("--task", eval_opts.task, "Task kind or \"all\"");
    eval->add_option("--out", eval_opts.out, "Report JSON")->required();
    eval->add_option("--match-threshold", eval_opts.match_threshold,
                     "Point match threshold in pixels");
    eval->add_option("--averaging", eval_opts.averaging, "micro|macro point averaging");
    eval->add_option("--map-sweep", eval_opts.map_sweep, "mAP IoU sweep start:step:stop");

    ReportOpts report_opts;
    auto* report = app.add_subcommand("report", "Render evaluation reports as a comparison table");
    report->configurable();
    report->add_option("--in", report_opts.inputs, "Report JSON (repeat per system)")
        ->required()
        ->take_all();
    report->add_option("--name", report_opts.names, "System name (one per --in)")->take_all();
    report->add_option("--format", report_opts.format, "markdown|csv|json");
    report->add_option("--out", report_opts.out, "Output path (stdout when omitted)");

    ManifestOpts manifest_opts;
    auto* manifest = app.add_subcommand("manifest", "Emit the training manifest for a dataset");
    manifest->configurable();
    manifest->add_option("--dataset", manifest_opts.dataset, "Training dataset JSONL")->required();
    manifest->add_option("--out", manifest_opts.out, "Output path (stdout when omitted)");
    manifest->add_option("--base-model", manifest_opts.base_model, "Base model identifier");
    manifest->add_option("--lora-rank", manifest_opts.lora_rank, "Adapter rank");
    manifest->add_option("--learning-rate", manifest_opts.learning_rate, "Learning rate");
    manifest->add_option("--epochs", manifest_opts.epochs, "Training epochs");
    manifest->add_option("--batch-size", manifest_opts.batch_size, "Effective batch size");
    manifest->add_option("--eval-interval", manifest_opts.eval_interval,
                         "Evaluation interval in steps");

    ParseOpts parse_opts;
    auto* parse = app.add_subcommand("parse", "Parse a response log into structured predictions");
    parse->configurable();
    parse->add_option("--in", parse_opts.in, "Response log JSONL")->required();
    parse->add_option("--task", parse_opts.task, "Task kind the responses answer")->required();
    parse->add_option("--out", parse_opts.out, "Predictions JSONL")->required();

    try {
        app.parse(argc, argv);
        if (*build) run_build(build_opts, verbose);
        if (*infer) run_infer(infer_opts);
        if (*eval) run_eval(eval_opts);
        if (*report) run_report(report_opts);
        if (*manifest) run_manifest(manifest_opts);
        if (*parse) run_parse(parse_opts);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        print_error("usage", e.what());
        return 2;
    } catch (const UsageError& e) {
        print_error("usage", e.what());
        return 2;
    } catch (const medbench::EndpointError& e) {
        print_error("endpoint", e.what());
        return 3;
    } catch (const DataError& e) {
        print_error("data", e.what());
        return 1;
    } catch (const std::exception& e) {
        print_error("internal", e.what());
        return 1;
    }
    return 0;
}
