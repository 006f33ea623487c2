#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <sstream>

#include "medbench/report.hpp"
#include "medbench/util.hpp"

using namespace medbench;

namespace {

TaskReport count_report(size_t n, double mae, double mse) {
    TaskReport r;
    r.task = TaskKind::CountOnly;
    r.n = n;
    r.count_mae = mae;
    r.count_mse = mse;
    return r;
}

TaskReport point_report(size_t n) {
    TaskReport r;
    r.task = TaskKind::PointOnly;
    r.n = n;
    r.point_mae = 104.226;
    r.point_rmse = 136.164;
    r.matching_accuracy = 0.104;
    r.zero_case_points = 49;
    return r;
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::istringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) out.push_back(line);
    return out;
}

}  // namespace

TEST_CASE("task reports round-trip through JSON with absent fields") {
    TaskReport r;
    r.task = TaskKind::CountPoint;
    r.n = 98;
    r.count_mae = 1.5;
    r.count_mse = 7.25;
    r.matching_accuracy = 0.40;
    r.zero_case_points = 3;
    // point_mae/rmse deliberately absent (no matched pairs)

    auto row = task_report_to_json(r);
    CHECK_FALSE(row.contains("point_mae"));
    TaskReport back = task_report_from_json(row);
    CHECK(back.task == r.task);
    CHECK(back.n == 98);
    CHECK(back.count_mae == r.count_mae);
    CHECK_FALSE(back.point_mae.has_value());
    CHECK(back.zero_case_points == r.zero_case_points);
}

TEST_CASE("markdown rendering: layout, arrows, rounding, absent cells") {
    TaskReport ours = count_report(105, 0.296, 0.438);
    TaskReport theirs = count_report(105, 11.818, 435.99);

    TaskReport ours_p = point_report(91);
    TaskReport theirs_p = point_report(91);
    theirs_p.point_mae.reset();
    theirs_p.point_rmse.reset();
    theirs_p.matching_accuracy = 0.0;
    theirs_p.zero_case_points = 91;

    std::vector<SystemReports> systems = {{"Qwen-public", {theirs, theirs_p}},
                                          {"Ours", {ours, ours_p}}};
    std::string text = render_report(systems, ReportFormat::Markdown);
    auto lines = lines_of(text);

    REQUIRE(lines.size() == 2 + 2 + 4);
    CHECK(lines[0] == "| Task | Metric | Qwen-public | Ours |");
    CHECK(lines[1] == "| --- | --- | ---: | ---: |");
    CHECK(lines[2] == "| **Counting Only** (n=105) | Count MAE ↓ | 11.82 | 0.30 |");
    CHECK(lines[3] == "|  | Count MSE ↓ | 435.99 | 0.44 |");
    CHECK(lines[4] == "| **Pointing Only** (n=91) | Point MAE ↓ | - | 104.23 |");
    CHECK(lines[5] == "|  | Point RMSE ↓ | - | 136.16 |");
    CHECK(lines[6] == "|  | Matching Accuracy ↑ | 0.00 | 0.10 |");
    CHECK(lines[7] == "|  | Zero-case Points ↓ | 91 | 49 |");
}

TEST_CASE("box groups render the four detection metrics in order") {
    TaskReport r;
    r.task = TaskKind::CountBox;
    r.n = 99;
    r.count_mae = 2.2;
    r.count_mse = 9.6;
    r.map = 0.051;
    r.map50 = 0.117;
    r.map75 = 0.036;
    // avg_iou absent: no matches at all
    std::vector<SystemReports> systems = {{"Ours", {r}}};
    auto lines = lines_of(render_report(systems, ReportFormat::Markdown));
    REQUIRE(lines.size() == 2 + 6);
    CHECK(lines[2] == "| **Counting + Bounding** (n=99) | Count MAE ↓ | 2.20 |");
    CHECK(lines[4] == "|  | mAP ↑ | 0.05 |");
    CHECK(lines[5] == "|  | mAP@50 ↑ | 0.12 |");
    CHECK(lines[6] == "|  | mAP@75 ↑ | 0.04 |");
    CHECK(lines[7] == "|  | IoU (avg) ↑ | - |");
}

TEST_CASE("groups follow the fixed task order regardless of input order") {
    std::vector<SystemReports> systems = {{"S", {point_report(10), count_report(4, 1, 2)}}};
    auto lines = lines_of(render_report(systems, ReportFormat::Markdown));
    CHECK(lines[2].find("Counting Only") != std::string::npos);
    CHECK(lines[4].find("Pointing Only") != std::string::npos);
}

TEST_CASE("differing sample counts are shown per system") {
    std::vector<SystemReports> systems = {{"A", {count_report(105, 1, 2)}},
                                          {"B", {count_report(99, 1, 2)}}};
    auto lines = lines_of(render_report(systems, ReportFormat::Markdown));
    CHECK(lines[2].find("(n=105/99)") != std::string::npos);
}

TEST_CASE("csv rendering escapes and labels directions") {
    std::vector<SystemReports> systems = {{"My, \"weird\" name", {count_report(4, 1.005, 2)}}};
    auto lines = lines_of(render_report(systems, ReportFormat::Csv));
    REQUIRE(lines.size() == 3);
    CHECK(lines[0] == "task,n,metric,direction,\"My, \"\"weird\"\" name\"");
    CHECK(lines[1] == "Counting Only,4,Count MAE,lower,1.00");
    CHECK(lines[2] == "Counting Only,4,Count MSE,lower,2.00");
}

TEST_CASE("json rendering keeps structure and nulls for absent values") {
    TaskReport r = point_report(91);
    r.point_mae.reset();
    std::vector<SystemReports> systems = {{"Ours", {r}}};
    auto doc = nlohmann::json::parse(render_report(systems, ReportFormat::Json));
    CHECK(doc["systems"] == nlohmann::json::array({"Ours"}));
    REQUIRE(doc["groups"].size() == 1);
    const auto& group = doc["groups"][0];
    CHECK(group["task"] == "PointOnly");
    CHECK(group["display"] == "Pointing Only");
    CHECK(group["n"][0] == 91);
    REQUIRE(group["rows"].size() == 4);
    CHECK(group["rows"][0]["metric"] == "Point MAE");
    CHECK(group["rows"][0]["values"][0].is_null());
    CHECK(group["rows"][1]["values"][0] == doctest::Approx(136.16));
    CHECK(group["rows"][3]["metric"] == "Zero-case Points");
    CHECK(group["rows"][3]["values"][0] == 49);
}

TEST_CASE("rendering rejects coverage mismatches and empty input") {
    CHECK_THROWS_AS(render_report({}, ReportFormat::Markdown), UsageError);

    std::vector<SystemReports> mismatch = {{"A", {count_report(4, 1, 2)}},
                                           {"B", {point_report(9)}}};
    CHECK_THROWS_AS(render_report(mismatch, ReportFormat::Markdown), DataError);

    std::vector<SystemReports> dup = {{"A", {count_report(4, 1, 2), count_report(4, 1, 2)}}};
    CHECK_THROWS_AS(render_report(dup, ReportFormat::Markdown), DataError);
}

TEST_CASE("rendering is deterministic") {
    std::vector<SystemReports> systems = {{"A", {count_report(4, 1, 2), point_report(9)}}};
    CHECK(render_report(systems, ReportFormat::Markdown) ==
          render_report(systems, ReportFormat::Markdown));
    CHECK(render_report(systems, ReportFormat::Json) ==
          render_report(systems, ReportFormat::Json));
}

TEST_CASE("eval files round-trip") {
    std::string path =
        (std::filesystem::temp_directory_path() / "medbench-evalfile-test.json").string();
    EvalFile file;
    file.config_digest = "abc123";
    file.options = {{"match_threshold", 10.0}, {"averaging", "micro"}};
    file.reports = {count_report(4, 1.25, 3.5), point_report(9)};
    save_eval_file(file, path);

    EvalFile back = load_eval_file(path);
    CHECK(back.config_digest == "abc123");
    CHECK(back.options["averaging"] == "micro");
    REQUIRE(back.reports.size() == 2);
    CHECK(back.reports[0].task == TaskKind::CountOnly);
    CHECK(back.reports[0].count_mae == 1.25);
    CHECK(back.reports[1].zero_case_points == 49);
    std::filesystem::remove(path);
}

TEST_CASE("the training manifest captures the fine-tuning recipe") {
    std::string dataset =
        (std::filesystem::temp_directory_path() / "medbench-manifest-train.jsonl").string();
    write_file(dataset, "{}\n");

    TrainingManifestConfig cfg;
    cfg.dataset_path = dataset;
    auto doc = training_manifest(cfg, "digest9");
    CHECK(doc["config_digest"] == "digest9");
    CHECK(doc["dataset"] == dataset);
    CHECK(doc["base_model"] == "Qwen/Qwen2.5-VL-7B-Instruct");
    CHECK(doc["adapter"]["type"] == "lora");
    CHECK(doc["adapter"]["rank"] == 16);
    CHECK(doc["adapter"]["target"] == "llm-linear-layers");
    CHECK(doc["adapter"]["exclude"] == nlohmann::json::array({"lm_head"}));
    CHECK(doc["optimizer"]["name"] == "adamw");
    CHECK(doc["optimizer"]["learning_rate"] == 2e-4);
    CHECK(doc["epochs"] == 5);
    CHECK(doc["batch"]["effective_size"] == 4);
    CHECK(doc["batch"]["method"] == "gradient-accumulation");
    CHECK(doc["eval_interval_steps"] == 200);
    CHECK(doc["vision_encoder"] == "frozen");

    TrainingManifestConfig override_cfg = cfg;
    override_cfg.epochs = 1;
    auto overridden = training_manifest(override_cfg, "digest9");
    CHECK(overridden["epochs"] == 1);
    CHECK(overridden["adapter"]["rank"] == 16);

    CHECK(training_manifest(cfg, "digest9").dump() == doc.dump());

    TrainingManifestConfig missing = cfg;
    missing.dataset_path = dataset + ".nope";
    CHECK_THROWS_AS(training_manifest(missing, "digest9"), DataError);
    std::filesystem::remove(dataset);
}
