#pragma once

#include <optional>
#include <string>
#include <vector>

#include "medbench/core.hpp"

namespace medbench {

// Question phrasings per task, each with a `{label}` placeholder. The shipped
// default bank has five templates per task; a custom bank can be loaded from
// JSON: {"version": "...", "questions": {"CountOnly": ["...{label}..."], ...}}.
class QuestionBank {
public:
    static const QuestionBank& default_bank();
    static QuestionBank from_json_file(const std::string& path);

    size_t size(TaskKind task) const;
    const std::string& question(TaskKind task, size_t index) const;
    const std::string& version() const { return version_; }

    // Throws DataError unless every task has >= 1 template and every
    // template contains `{label}` exactly once.
    void validate() const;

private:
    std::array<std::vector<std::string>, 5> questions_;
    std::string version_;
};

// Instruction text: task description + selected question + output-format
// directive, with `{label}` substituted everywhere. Deterministic.
// Throws std::out_of_range when question_index >= bank.size(task).
std::string render_instruction(TaskKind task, const std::string& label, size_t question_index,
                               const QuestionBank& bank = QuestionBank::default_bank());

// The target response: a JSON object with exactly the task's keys, geometry
// key first, then "counts", then "label". Coordinates round half-up to
// integers here and only here. Returns nullopt when the task needs a
// geometry kind the annotation set was never given.
std::optional<std::string> canonical_response(const AnnotationSet& ann, TaskKind task);

// Shared canonical serializer (also used when tests need byte-exact targets).
std::string serialize_canonical(const std::vector<Box>* boxes, const std::vector<Point>* points,
                                std::optional<long long> counts, const std::string& label);

}  // namespace medbench
