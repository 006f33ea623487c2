#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "medbench/core.hpp"

using namespace medbench;

TEST_CASE("resize caps width at 700 and scales proportionally") {
    auto r = compute_resize(1400, 1000);
    CHECK(r.eval_width == 700);
    CHECK(r.eval_height == 500);
    CHECK(r.scale == doctest::Approx(0.5));
}

TEST_CASE("resize never upscales") {
    auto r = compute_resize(350, 200);
    CHECK(r.eval_width == 350);
    CHECK(r.eval_height == 200);
    CHECK(r.scale == 1.0);

    auto exact = compute_resize(700, 123);
    CHECK(exact.eval_width == 700);
    CHECK(exact.eval_height == 123);
    CHECK(exact.scale == 1.0);
}

TEST_CASE("resize rounds halves up") {
    // 1001 * 0.5 = 500.5, which must land on 501 rather than banker's 500.
    auto r = compute_resize(1400, 1001);
    CHECK(r.eval_height == 501);
}

TEST_CASE("resize is idempotent") {
    std::mt19937_64 rng(99);
    for (int i = 0; i < 200; ++i) {
        int w = 1 + static_cast<int>(rng() % 4000);
        int h = 1 + static_cast<int>(rng() % 4000);
        auto first = compute_resize(w, h);
        auto second = compute_resize(first.eval_width, first.eval_height);
        CHECK(second.eval_width == first.eval_width);
        CHECK(second.eval_height == first.eval_height);
        CHECK(second.scale == 1.0);
    }
}

TEST_CASE("resize rejects non-positive dimensions") {
    CHECK_THROWS_AS(compute_resize(0, 100), DataError);
    CHECK_THROWS_AS(compute_resize(100, -1), DataError);
}

TEST_CASE("tiny heights survive resizing") {
    auto r = compute_resize(10000, 1);
    CHECK(r.eval_width == 700);
    CHECK(r.eval_height == 1);
}

TEST_CASE("rescale transforms geometry but not counts") {
    AnnotationSet ann;
    ann.label = "polyp";
    ann.boxes = {{10, 20, 110, 220}};
    ann.points = {{{50, 60}}};
    ann.count = 7;
    auto out = rescale_annotations(ann, 0.5);
    CHECK(out.boxes->at(0).x1 == doctest::Approx(5));
    CHECK(out.boxes->at(0).y2 == doctest::Approx(110));
    CHECK(out.points->at(0).x == doctest::Approx(25));
    CHECK(out.count == 7);
    CHECK(out.label == "polyp");
}

static ImageRecord eval_space(int w, int h) {
    ImageRecord rec;
    rec.id = "polyp/x.png";
    rec.eval_width = w;
    rec.eval_height = h;
    rec.orig_width = w;
    rec.orig_height = h;
    return rec;
}

TEST_CASE("validation clamps out-of-bounds boxes and records the violation") {
    AnnotationSet ann;
    ann.label = "polyp";
    ann.boxes = {{-5, 10, 710, 400}};
    ann.count = 1;
    auto out = validate_annotation(ann, eval_space(700, 500));
    REQUIRE(out.accepted);
    CHECK(out.repaired.boxes->at(0).x1 == 0);
    CHECK(out.repaired.boxes->at(0).x2 == 700);
    REQUIRE(out.violations.size() == 1);
    CHECK(out.violations[0].kind == ViolationKind::OutOfBounds);
}

TEST_CASE("validation rejects boxes that collapse at integer resolution") {
    AnnotationSet ann;
    ann.label = "polyp";
    ann.boxes = {{10.2, 10.0, 10.4, 50.0}};
    ann.count = 1;
    auto out = validate_annotation(ann, eval_space(700, 500));
    CHECK_FALSE(out.accepted);
    CHECK(out.reject_reason == "zero-area-box");
}

TEST_CASE("validation deduplicates boxes that match at integer resolution") {
    AnnotationSet ann;
    ann.label = "polyp";
    ann.boxes = {{10, 10, 50, 50}, {10.3, 9.8, 50.2, 50.4}, {100, 100, 200, 200}};
    ann.count = 3;
    auto out = validate_annotation(ann, eval_space(700, 500));
    REQUIRE(out.accepted);
    CHECK(out.repaired.boxes->size() == 2);
    CHECK(out.repaired.count == 2);
    bool saw_dup = false, saw_count = false;
    for (const auto& v : out.violations) {
        saw_dup = saw_dup || v.kind == ViolationKind::DuplicateGeometry;
        saw_count = saw_count || v.kind == ViolationKind::CountMismatch;
    }
    CHECK(saw_dup);
    CHECK(saw_count);
}

TEST_CASE("validation repairs a count that disagrees with geometry") {
    AnnotationSet ann;
    ann.label = "polyp";
    ann.points = {{{10, 10}, {20, 20}}};
    ann.count = 5;
    auto out = validate_annotation(ann, eval_space(700, 500));
    REQUIRE(out.accepted);
    CHECK(out.repaired.count == 2);
    REQUIRE(out.violations.size() == 1);
    CHECK(out.violations[0].kind == ViolationKind::CountMismatch);
}

TEST_CASE("validation rejects box/point cardinality conflicts") {
    AnnotationSet ann;
    ann.label = "polyp";
    ann.boxes = {{10, 10, 50, 50}};
    ann.points = {{{20, 20}, {30, 30}}};
    ann.count = 1;
    auto out = validate_annotation(ann, eval_space(700, 500));
    CHECK_FALSE(out.accepted);
    CHECK(out.reject_reason == "geometry-cardinality-conflict");
}

TEST_CASE("validation rejects a negative count with no geometry") {
    AnnotationSet ann;
    ann.label = "polyp";
    ann.count = -2;
    auto out = validate_annotation(ann, eval_space(700, 500));
    CHECK_FALSE(out.accepted);
    CHECK(out.reject_reason == "negative-count");
}

TEST_CASE("a clean annotation passes untouched") {
    AnnotationSet ann;
    ann.label = "polyp";
    ann.boxes = {{10, 10, 50, 50}};
    ann.points = {{{30, 30}}};
    ann.count = 1;
    auto out = validate_annotation(ann, eval_space(700, 500));
    CHECK(out.ok());
    CHECK(out.repaired.boxes->size() == 1);
    CHECK(out.repaired.points->size() == 1);
}

TEST_CASE("task helpers agree on key schemas") {
    CHECK(task_keys(TaskKind::CountOnly) == std::vector<std::string>{"counts", "label"});
    CHECK(task_keys(TaskKind::PointOnly) == std::vector<std::string>{"point_2d", "label"});
    CHECK(task_keys(TaskKind::BoxOnly) == std::vector<std::string>{"bbox_2d", "label"});
    CHECK(task_keys(TaskKind::CountPoint) ==
          std::vector<std::string>{"point_2d", "counts", "label"});
    CHECK(task_keys(TaskKind::CountBox) == std::vector<std::string>{"bbox_2d", "counts", "label"});
    for (TaskKind t : kAllTasks) {
        CHECK(task_from_string(to_string(t)) == t);
        CHECK(task_uses_counts(t) == (to_string(t).find("Count") != std::string::npos));
    }
}

TEST_CASE("display names spell out the row groups") {
    CHECK(task_display_name(TaskKind::CountOnly) == "Counting Only");
    CHECK(task_display_name(TaskKind::PointOnly) == "Pointing Only");
    CHECK(task_display_name(TaskKind::BoxOnly) == "Bounding Box Detection");
    CHECK(task_display_name(TaskKind::CountPoint) == "Counting + Pointing");
    CHECK(task_display_name(TaskKind::CountBox) == "Counting + Bounding");
}

TEST_CASE("labels normalize through trim, case and aliases") {
    CHECK(normalize_label("  Polyp ") == "polyp");
    CHECK(normalize_label("polpy") == "polyp");
    CHECK(normalize_label("Sperm-Normal") == "sperm-normal");
    LabelAliases custom;
    custom.map["inst"] = "instrument";
    CHECK(normalize_label("INST", custom) == "instrument");
}

TEST_CASE("euclidean distance") {
    CHECK(euclidean({0, 0}, {3, 4}) == doctest::Approx(5.0));
}
