#include "medbench/prompt.hpp"

#include <sstream>

#include <json.hpp>

namespace medbench {

namespace {

std::string substitute_label(std::string_view tpl, const std::string& label) {
    std::string out;
    out.reserve(tpl.size() + label.size());
    size_t pos = 0;
    while (pos < tpl.size()) {
        size_t hit = tpl.find("{label}", pos);
        if (hit == std::string_view::npos) {
            out.append(tpl.substr(pos));
            break;
        }
        out.append(tpl.substr(pos, hit - pos));
        out.append(label);
        pos = hit + 7;
    }
    return out;
}

size_t count_occurrences(std::string_view s, std::string_view needle) {
    size_t n = 0, pos = 0;
    while ((pos = s.find(needle, pos)) != std::string_view::npos) {
        ++n;
        pos += needle.size();
    }
    return n;
}

const char* task_description(TaskKind task) {
    switch (task) {
        case TaskKind::CountOnly:
            return "Count the number of {label} instances visible in the image.";
        case TaskKind::PointOnly:
            return "Locate each {label} in the image by the coordinates of its center point.";
        case TaskKind::BoxOnly:
            return "Return bounding boxes for each {label} in the image.";
        case TaskKind::CountPoint:
            return "Locate the center point of each {label} in the image and report the total "
                   "count.";
        case TaskKind::CountBox:
            return "Return bounding boxes for each {label} in the image and the total count.";
    }
    return "";
}

const char* format_directive(TaskKind task) {
    switch (task) {
        case TaskKind::CountOnly:
            return "Respond with only a JSON object with exactly the keys \"counts\" and "
                   "\"label\".";
        case TaskKind::PointOnly:
            return "Respond with only a JSON object with exactly the keys \"point_2d\" and "
                   "\"label\", where \"point_2d\" is a list of [x, y] center positions.";
        case TaskKind::BoxOnly:
            return "Respond with only a JSON object with exactly the keys \"bbox_2d\" and "
                   "\"label\", where \"bbox_2d\" is a list of [x1, y1, x2, y2] rectangles.";
        case TaskKind::CountPoint:
            return "Respond with only a JSON object with exactly the keys \"point_2d\", "
                   "\"counts\" and \"label\", where \"point_2d\" is a list of [x, y] center "
                   "positions.";
        case TaskKind::CountBox:
            return "Respond with only a JSON object with exactly the keys \"bbox_2d\", "
                   "\"counts\" and \"label\", where \"bbox_2d\" is a list of [x1, y1, x2, y2] "
                   "rectangles.";
    }
    return "";
}

std::array<std::vector<std::string>, 5> default_questions() {
    std::array<std::vector<std::string>, 5> q;
    q[static_cast<size_t>(TaskKind::CountOnly)] = {
        "How many {label} instances are present?",
        "What is the total number of {label} findings in this image?",
        "Give the count of {label} occurrences you can see.",
        "How many distinct {label} findings does the image contain?",
        "State the number of {label} instances shown.",
    };
    q[static_cast<size_t>(TaskKind::PointOnly)] = {
        "Where is each {label} located?",
        "Mark the center of every {label} you can find.",
        "At which positions do the {label} findings appear?",
        "Point out each {label} present in the image.",
        "Identify the position of every {label} instance.",
    };
    q[static_cast<size_t>(TaskKind::BoxOnly)] = {
        "Where exactly is each {label} in the image?",
        "Draw a box around every {label} you can find.",
        "Which regions of the image contain a {label}?",
        "Outline each {label} with a rectangle.",
        "Give the rectangular extent of every {label} instance.",
    };
    q[static_cast<size_t>(TaskKind::CountPoint)] = {
        "How many {label} findings are there, and where is each one centered?",
        "Mark every {label} center and state how many there are.",
        "Report the number of {label} instances together with their positions.",
        "Where are the {label} findings, and what is their total count?",
        "Locate each {label} and give the overall count.",
    };
    q[static_cast<size_t>(TaskKind::CountBox)] = {
        "How many {label} findings are there, and where is each one?",
        "Box every {label} and state how many there are.",
        "Report the number of {label} instances together with their bounding boxes.",
        "Which rectangles cover the {label} findings, and how many are there?",
        "Outline each {label} and give the overall count.",
    };
    return q;
}

}  // namespace

const QuestionBank& QuestionBank::default_bank() {
    static const QuestionBank bank = [] {
        QuestionBank b;
        b.questions_ = default_questions();
        b.version_ = "default-1";
        b.validate();
        return b;
    }();
    return bank;
}

QuestionBank QuestionBank::from_json_file(const std::string& path) {
    nlohmann::json doc = nlohmann::json::parse(read_file(path), nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) {
        throw DataError("question bank is not valid JSON: " + path);
    }
    QuestionBank b;
    b.version_ = doc.value("version", "custom");
    if (!doc.contains("questions") || !doc["questions"].is_object()) {
        throw DataError("question bank missing \"questions\" object: " + path);
    }
    for (TaskKind t : kAllTasks) {
        const std::string name = to_string(t);
        if (!doc["questions"].contains(name)) {
            throw DataError("question bank has no templates for task " + name);
        }
        for (const auto& item : doc["questions"][name]) {
            if (!item.is_string()) throw DataError("non-string template for task " + name);
            b.questions_[static_cast<size_t>(t)].push_back(item.get<std::string>());
        }
    }
    b.validate();
    return b;
}

size_t QuestionBank::size(TaskKind task) const {
    return questions_[static_cast<size_t>(task)].size();
}

const std::string& QuestionBank::question(TaskKind task, size_t index) const {
    const auto& list = questions_[static_cast<size_t>(task)];
    if (index >= list.size()) {
        throw std::out_of_range("question index " + std::to_string(index) + " out of range for " +
                                to_string(task));
    }
    return list[index];
}

void QuestionBank::validate() const {
    for (TaskKind t : kAllTasks) {
        const auto& list = questions_[static_cast<size_t>(t)];
        if (list.empty()) {
            throw DataError("question bank has no templates for task " + to_string(t));
        }
        for (const auto& tpl : list) {
            if (count_occurrences(tpl, "{label}") != 1) {
                throw DataError("template must contain {label} exactly once: " + tpl);
            }
        }
    }
}

std::string render_instruction(TaskKind task, const std::string& label, size_t question_index,
                               const QuestionBank& bank) {
    const std::string& question = bank.question(task, question_index);
    std::string text = substitute_label(task_description(task), label);
    text += " ";
    text += substitute_label(question, label);
    text += " ";
    text += format_directive(task);
    return text;
}

std::string serialize_canonical(const std::vector<Box>* boxes, const std::vector<Point>* points,
                                std::optional<long long> counts, const std::string& label) {
    std::ostringstream ss;
    ss << "{";
    bool first = true;
    auto key = [&](const char* k) {
        if (!first) ss << ", ";
        first = false;
        ss << "\"" << k << "\": ";
    };
    if (boxes) {
        key("bbox_2d");
        ss << "[";
        for (size_t i = 0; i < boxes->size(); ++i) {
            const Box& b = (*boxes)[i];
            if (i) ss << ", ";
            ss << "[" << round_half_up(b.x1) << ", " << round_half_up(b.y1) << ", "
               << round_half_up(b.x2) << ", " << round_half_up(b.y2) << "]";
        }
        ss << "]";
    }
    if (points) {
        key("point_2d");
        ss << "[";
        for (size_t i = 0; i < points->size(); ++i) {
            const Point& p = (*points)[i];
            if (i) ss << ", ";
            ss << "[" << round_half_up(p.x) << ", " << round_half_up(p.y) << "]";
        }
        ss << "]";
    }
    if (counts) {
        key("counts");
        ss << *counts;
    }
    key("label");
    ss << nlohmann::json(label).dump();
    ss << "}";
    return ss.str();
}

std::optional<std::string> canonical_response(const AnnotationSet& ann, TaskKind task) {
    const bool want_boxes = task_uses_boxes(task);
    const bool want_points = task_uses_points(task);
    if (want_boxes && !ann.boxes) return std::nullopt;
    if (want_points && !ann.points) return std::nullopt;
    return serialize_canonical(want_boxes ? &*ann.boxes : nullptr,
                               want_points ? &*ann.points : nullptr,
                               task_uses_counts(task) ? std::optional<long long>(ann.count)
                                                      : std::nullopt,
                               ann.label);
}

}  // namespace medbench
