#include "medbench/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "medbench/parser.hpp"

namespace medbench {

using nlohmann::json;
using nlohmann::ordered_json;

SourceManifest SourceManifest::from_json_file(const std::string& path) {
    json doc = json::parse(read_file(path), nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) {
        throw DataError("manifest is not valid JSON: " + path);
    }
    if (!doc.contains("sources") || !doc["sources"].is_array() || doc["sources"].empty()) {
        throw DataError("manifest needs a non-empty \"sources\" array: " + path);
    }
    // Relative paths inside the manifest are resolved against the manifest's
    // own directory so the file stays portable.
    const std::filesystem::path base = std::filesystem::path(path).parent_path();
    auto resolve = [&](const std::string& p) {
        std::filesystem::path fp(p);
        return fp.is_absolute() || base.empty() ? fp.string() : (base / fp).string();
    };
    SourceManifest manifest;
    for (const auto& entry : doc["sources"]) {
        if (!entry.is_object()) throw DataError("manifest source entry is not an object: " + path);
        SourceSpec spec;
        auto kind = source_from_string(entry.value("kind", ""));
        if (!kind) throw DataError("manifest source has unknown kind: " + entry.value("kind", ""));
        spec.kind = *kind;
        if (!entry.contains("annotations") || !entry["annotations"].is_array() ||
            entry["annotations"].empty()) {
            throw DataError("manifest source needs a non-empty \"annotations\" list: " + path);
        }
        for (const auto& f : entry["annotations"]) {
            if (!f.is_string()) throw DataError("manifest annotation path is not a string");
            spec.annotation_files.push_back(resolve(f.get<std::string>()));
        }
        spec.image_dir = resolve(entry.value("image_dir", ""));
        spec.label = entry.value("label", "");
        if (trim(spec.label).empty()) {
            throw DataError("manifest source needs a non-empty label: " + path);
        }
        manifest.sources.push_back(std::move(spec));
    }
    return manifest;
}

namespace {

struct IngestContext {
    std::map<std::string, std::pair<int, int>> dims;
    std::set<std::pair<std::string, std::string>> seen;  // (image_id, label)
};

std::optional<std::vector<Box>> parse_gt_boxes(const json& v) {
    if (!v.is_array()) return std::nullopt;
    std::vector<Box> boxes;
    for (const auto& item : v) {
        if (!item.is_array() || item.size() != 4) return std::nullopt;
        for (const auto& n : item) {
            if (!n.is_number()) return std::nullopt;
        }
        boxes.push_back({item[0].get<double>(), item[1].get<double>(), item[2].get<double>(),
                         item[3].get<double>()});
    }
    return boxes;
}

std::optional<std::vector<Point>> parse_gt_points(const json& v) {
    if (!v.is_array()) return std::nullopt;
    std::vector<Point> points;
    for (const auto& item : v) {
        if (!item.is_array() || item.size() != 2) return std::nullopt;
        for (const auto& n : item) {
            if (!n.is_number()) return std::nullopt;
        }
        points.push_back({item[0].get<double>(), item[1].get<double>()});
    }
    return points;
}

void ingest_file(const SourceSpec& spec, const std::string& file, IngestContext& ctx,
                 IngestResult& out) {
    std::string content = read_file(file);
    std::istringstream lines(content);
    std::string line;
    size_t line_no = 0;
    auto skip = [&](const std::string& why) {
        out.warnings.push_back(file + ":" + std::to_string(line_no) + ": skipped: " + why);
        out.skipped += 1;
    };
    while (std::getline(lines, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        json row = json::parse(line, nullptr, false);
        if (row.is_discarded() || !row.is_object()) {
            skip("not a JSON object");
            continue;
        }
        if (!row.contains("image") || !row["image"].is_string() ||
            row["image"].get<std::string>().empty()) {
            skip("missing image path");
            continue;
        }
        std::string image_name = row["image"].get<std::string>();
        if (!row.contains("width") || !row["width"].is_number_integer() ||
            !row.contains("height") || !row["height"].is_number_integer()) {
            skip("missing integer width/height");
            continue;
        }
        int width = row["width"].get<int>();
        int height = row["height"].get<int>();
        if (width <= 0 || height <= 0) {
            skip("non-positive dimensions");
            continue;
        }
        std::string label = normalize_label(row.value("label", spec.label));
        if (label.empty()) {
            skip("empty label");
            continue;
        }

        std::optional<std::vector<Box>> boxes;
        if (row.contains("bbox_2d")) {
            boxes = parse_gt_boxes(row["bbox_2d"]);
            if (!boxes) {
                skip("malformed bbox_2d");
                continue;
            }
        }
        std::optional<std::vector<Point>> points;
        if (row.contains("point_2d")) {
            points = parse_gt_points(row["point_2d"]);
            if (!points) {
                skip("malformed point_2d");
                continue;
            }
        }
        std::optional<long long> counts;
        if (row.contains("counts")) {
            if (!row["counts"].is_number_integer() || row["counts"].get<long long>() < 0) {
                skip("counts is not a non-negative integer");
                continue;
            }
            counts = row["counts"].get<long long>();
        }
        if (!counts && !boxes && !points) {
            skip("record carries no annotations");
            continue;
        }

        std::string image_id = to_string(spec.kind) + "/" + image_name;
        auto dims_it = ctx.dims.find(image_id);
        if (dims_it != ctx.dims.end() && dims_it->second != std::make_pair(width, height)) {
            skip("conflicting dimensions for " + image_id);
            continue;
        }
        if (!ctx.seen.insert({image_id, label}).second) {
            skip("duplicate record for (" + image_id + ", " + label + ")");
            continue;
        }

        ResizeResult rz = compute_resize(width, height);
        ImageRecord rec;
        rec.id = image_id;
        rec.source = spec.kind;
        rec.orig_width = width;
        rec.orig_height = height;
        rec.scale = rz.scale;
        rec.eval_width = rz.eval_width;
        rec.eval_height = rz.eval_height;
        rec.uri = spec.image_dir.empty()
                      ? image_name
                      : (std::filesystem::path(spec.image_dir) / image_name).string();

        AnnotationSet ann;
        ann.label = label;
        ann.boxes = boxes;
        ann.points = points;
        if (counts) {
            ann.count = *counts;
        } else if (boxes) {
            ann.count = static_cast<long long>(boxes->size());
        } else {
            ann.count = static_cast<long long>(points->size());
        }

        ValidationOutcome vo = validate_annotation(rescale_annotations(ann, rz.scale), rec);
        if (!vo.accepted) {
            skip("rejected: " + vo.reject_reason);
            continue;
        }
        for (const auto& v : vo.violations) {
            out.warnings.push_back(file + ":" + std::to_string(line_no) +
                                   ": repaired: " + to_string(v.kind) + " (" + v.detail + ")");
        }
        ctx.dims[image_id] = {width, height};
        out.records.push_back({rec, vo.repaired});
    }
}

void ingest_into(const SourceSpec& spec, IngestContext& ctx, IngestResult& out) {
    if (trim(spec.label).empty()) throw DataError("source has an empty label");
    for (const auto& file : spec.annotation_files) {
        ingest_file(spec, file, ctx, out);
    }
}

}  // namespace

IngestResult ingest_source(const SourceSpec& spec) {
    IngestResult out;
    IngestContext ctx;
    ingest_into(spec, ctx, out);
    return out;
}

IngestResult ingest_manifest(const SourceManifest& manifest) {
    IngestResult out;
    IngestContext ctx;
    for (const auto& spec : manifest.sources) {
        ingest_into(spec, ctx, out);
    }
    return out;
}

std::vector<InstructionSample> build_samples(const ImageRecord& rec, const AnnotationSet& ann,
                                             const QuestionBank& bank, long long seed) {
    std::vector<InstructionSample> out;
    for (TaskKind task : kAllTasks) {
        std::optional<std::string> target = canonical_response(ann, task);
        if (!target) continue;
        std::uint64_t h = fnv1a64(rec.id);
        h = fnv1a64("\x1f", h);
        h = fnv1a64(to_string(task), h);
        std::uint64_t mixed = splitmix64(h ^ splitmix64(static_cast<std::uint64_t>(seed)));
        size_t qi = static_cast<size_t>(mixed % bank.size(task));

        InstructionSample s;
        s.sample_id = rec.id + "#" + ann.label + "#" + to_string(task);
        s.image = {rec.id, rec.uri, rec.eval_width, rec.eval_height};
        s.task = task;
        s.instruction = render_instruction(task, ann.label, qi, bank);
        s.target = std::move(*target);
        s.label = ann.label;
        out.push_back(std::move(s));
    }
    return out;
}

BuildResult build_all(const std::vector<IngestedRecord>& records, const QuestionBank& bank,
                      long long seed) {
    BuildResult out;
    for (const auto& rec : records) {
        auto samples = build_samples(rec.image, rec.annotations, bank, seed);
        out.skipped_tasks += kAllTasks.size() - samples.size();
        for (auto& s : samples) out.samples.push_back(std::move(s));
    }
    std::sort(out.samples.begin(), out.samples.end(),
              [](const InstructionSample& a, const InstructionSample& b) {
                  if (a.image.image_id != b.image.image_id) {
                      return a.image.image_id < b.image.image_id;
                  }
                  if (a.task != b.task) return a.task < b.task;
                  return a.label < b.label;
              });
    return out;
}

std::string to_string(SplitUnit unit) {
    return unit == SplitUnit::Image ? "image" : "sample";
}

std::optional<SplitUnit> split_unit_from_string(std::string_view name) {
    if (name == "image") return SplitUnit::Image;
    if (name == "sample") return SplitUnit::Sample;
    return std::nullopt;
}

namespace {

struct ImageGroup {
    std::string id;
    std::uint64_t key = 0;
    std::string kind;
    size_t sample_count = 0;
};

size_t group_weight(const ImageGroup& g, SplitUnit unit) {
    return unit == SplitUnit::Image ? 1 : g.sample_count;
}

// Walks groups in key order, taking whole groups until the accumulated
// weight reaches the quota.
void take_groups(const std::vector<const ImageGroup*>& ordered, size_t quota, SplitUnit unit,
                 std::set<std::string>& test_ids) {
    size_t taken = 0;
    for (const ImageGroup* g : ordered) {
        if (taken >= quota) break;
        test_ids.insert(g->id);
        taken += group_weight(*g, unit);
    }
}

}  // namespace

SplitResult split_dataset(const std::vector<InstructionSample>& samples, const SplitSpec& spec) {
    std::vector<ImageGroup> groups;
    std::map<std::string, size_t> index_of;
    for (const auto& s : samples) {
        auto [it, inserted] = index_of.try_emplace(s.image.image_id, groups.size());
        if (inserted) {
            ImageGroup g;
            g.id = s.image.image_id;
            g.key = fnv1a64(g.id, splitmix64(static_cast<std::uint64_t>(spec.seed)));
            g.kind = g.id.substr(0, g.id.find('/'));
            groups.push_back(std::move(g));
        }
        groups[it->second].sample_count += 1;
    }

    size_t total = spec.unit == SplitUnit::Image ? groups.size() : samples.size();
    if (spec.test_size > total) {
        throw DataError("test size " + std::to_string(spec.test_size) + " exceeds available " +
                        to_string(spec.unit) + " count " + std::to_string(total));
    }

    std::vector<const ImageGroup*> ordered;
    ordered.reserve(groups.size());
    for (const auto& g : groups) ordered.push_back(&g);
    std::sort(ordered.begin(), ordered.end(), [](const ImageGroup* a, const ImageGroup* b) {
        if (a->key != b->key) return a->key < b->key;
        return a->id < b->id;
    });

    std::set<std::string> test_ids;
    if (!spec.stratify) {
        take_groups(ordered, spec.test_size, spec.unit, test_ids);
    } else {
        std::map<std::string, std::vector<const ImageGroup*>> by_kind;
        for (const ImageGroup* g : ordered) by_kind[g->kind].push_back(g);

        struct KindQuota {
            std::string kind;
            size_t base = 0;
            double remainder = 0;
            size_t capacity = 0;
        };
        std::vector<KindQuota> quotas;
        size_t base_sum = 0;
        for (const auto& [kind, list] : by_kind) {
            size_t cap = 0;
            for (const ImageGroup* g : list) cap += group_weight(*g, spec.unit);
            double exact = static_cast<double>(spec.test_size) * static_cast<double>(cap) /
                           static_cast<double>(total);
            KindQuota q;
            q.kind = kind;
            q.base = static_cast<size_t>(std::floor(exact));
            q.remainder = exact - std::floor(exact);
            q.capacity = cap;
            base_sum += q.base;
            quotas.push_back(q);
        }
        std::vector<size_t> order(quotas.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
            if (quotas[a].remainder != quotas[b].remainder) {
                return quotas[a].remainder > quotas[b].remainder;
            }
            if (quotas[a].capacity != quotas[b].capacity) {
                return quotas[a].capacity > quotas[b].capacity;
            }
            return quotas[a].kind < quotas[b].kind;
        });
        size_t leftover = spec.test_size - base_sum;
        for (size_t i = 0; i < order.size() && leftover > 0; ++i) {
            if (quotas[order[i]].base < quotas[order[i]].capacity) {
                quotas[order[i]].base += 1;
                --leftover;
            }
        }
        for (const auto& q : quotas) {
            take_groups(by_kind[q.kind], q.base, spec.unit, test_ids);
        }
    }

    SplitResult out;
    for (const auto& s : samples) {
        if (test_ids.count(s.image.image_id)) {
            out.test.push_back(s);
        } else {
            out.train.push_back(s);
        }
    }
    return out;
}

void emit_jsonl(const std::vector<InstructionSample>& samples, const std::string& path,
                const JsonlMeta& meta) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write file: " + path);
    ordered_json meta_line;
    meta_line["type"] = "meta";
    meta_line["format"] = meta.format;
    meta_line["config_digest"] = meta.config_digest;
    meta_line["seed"] = meta.seed;
    out << meta_line.dump() << "\n";
    for (const auto& s : samples) {
        ordered_json row;
        row["sample_id"] = s.sample_id;
        row["image_id"] = s.image.image_id;
        row["image_uri"] = s.image.uri;
        row["eval_width"] = s.image.eval_width;
        row["eval_height"] = s.image.eval_height;
        row["task"] = to_string(s.task);
        row["instruction"] = s.instruction;
        row["target"] = s.target;
        row["label"] = s.label;
        out << row.dump() << "\n";
    }
    out.flush();
    if (!out) {
        out.close();
        std::remove(path.c_str());
        throw DataError("write failed: " + path);
    }
}

LoadedDataset load_samples_jsonl(const std::string& path) {
    std::string content = read_file(path);
    std::istringstream lines(content);
    std::string line;
    size_t line_no = 0;
    LoadedDataset out;
    bool have_meta = false;
    auto bad = [&](const std::string& why) {
        return DataError(path + ":" + std::to_string(line_no) + ": " + why);
    };
    while (std::getline(lines, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        json row = json::parse(line, nullptr, false);
        if (row.is_discarded() || !row.is_object()) throw bad("not a JSON object");
        if (!have_meta) {
            if (row.value("type", "") != "meta") throw bad("first line must be the meta line");
            out.meta.format = row.value("format", "");
            out.meta.config_digest = row.value("config_digest", "");
            out.meta.seed = row.value("seed", 0LL);
            have_meta = true;
            continue;
        }
        InstructionSample s;
        for (const char* field : {"sample_id", "image_id", "image_uri", "task", "instruction",
                                  "target", "label"}) {
            if (!row.contains(field) || !row[field].is_string()) {
                throw bad(std::string("missing string field ") + field);
            }
        }
        if (!row.contains("eval_width") || !row["eval_width"].is_number_integer() ||
            !row.contains("eval_height") || !row["eval_height"].is_number_integer()) {
            throw bad("missing integer eval_width/eval_height");
        }
        s.sample_id = row["sample_id"];
        s.image.image_id = row["image_id"];
        s.image.uri = row["image_uri"];
        s.image.eval_width = row["eval_width"];
        s.image.eval_height = row["eval_height"];
        auto task = task_from_string(row["task"].get<std::string>());
        if (!task) throw bad("unknown task " + row["task"].get<std::string>());
        s.task = *task;
        s.instruction = row["instruction"];
        s.target = row["target"];
        s.label = row["label"];
        out.samples.push_back(std::move(s));
    }
    if (!have_meta) throw DataError(path + ": empty dataset file (no meta line)");
    return out;
}

AnnotationSet truth_from_sample(const InstructionSample& sample) {
    Prediction p = parse_response(sample.target, sample.task, sample.image.eval_width,
                                  sample.image.eval_height, sample.label);
    if (p.parse_status == ParseStatus::Failed) {
        throw DataError("unparseable target for sample " + sample.sample_id);
    }
    AnnotationSet ann;
    ann.label = sample.label;
    if (task_uses_boxes(sample.task)) ann.boxes = p.boxes;
    if (task_uses_points(sample.task)) ann.points = p.points;
    if (p.count) {
        ann.count = *p.count;
    } else if (ann.boxes) {
        ann.count = static_cast<long long>(ann.boxes->size());
    } else if (ann.points) {
        ann.count = static_cast<long long>(ann.points->size());
    }
    return ann;
}

}  // namespace medbench
