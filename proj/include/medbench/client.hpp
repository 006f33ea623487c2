#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "medbench/dataset.hpp"

namespace medbench {

struct EndpointConfig {
    std::string base_url;
    std::string model;
    std::string api_key_env = "MEDBENCH_API_KEY";
    double timeout_s = 60.0;
    int max_retries = 3;
    double backoff_base_s = 0.5;
    int max_in_flight = 4;
    double temperature = 0.0;
    int max_tokens = 512;
};

// Pure function of request content: instruction, image bytes digest, model,
// and decoding parameters. The resume and replay joins key on it.
std::string request_fingerprint(const std::string& instruction, const std::string& image_digest,
                                const std::string& model, double temperature, int max_tokens);

// FNV-1a hex digest of the file bytes, or "unreadable".
std::string image_digest_for_uri(const std::string& uri);

struct EncodedRequest {
    bool ok = false;
    std::string error;        // set when !ok (image unreadable)
    nlohmann::json body;      // chat-completions payload when ok
    std::string fingerprint;  // always set
    std::string image_digest;
};

EncodedRequest encode_request(const InstructionSample& sample, const EndpointConfig& cfg);

struct ResponseLogEntry {
    std::string sample_id;
    std::string fingerprint;
    std::string status;  // "ok" | "failed"
    int http_status = 0;  // 0 when no HTTP exchange happened
    int attempts = 0;
    double latency_ms = 0;
    std::string timestamp;  // ISO 8601 UTC, informational only
    std::string raw_text;   // model output; empty on failure
    std::string error;      // failure reason; empty on success
};

nlohmann::json log_entry_to_json(const ResponseLogEntry& entry);
ResponseLogEntry log_entry_from_json(const nlohmann::json& row);

struct ResponseLog {
    JsonlMeta meta;  // format "responses"
    std::string model;
    double temperature = 0;
    int max_tokens = 0;
    std::vector<ResponseLogEntry> entries;
};

// Strict except for a truncated final line, which an interrupted run can
// leave behind and which is ignored.
ResponseLog load_response_log(const std::string& path);

struct RunStats {
    size_t total = 0;
    size_t skipped = 0;  // fingerprint already in the log
    size_t attempted = 0;
    size_t succeeded = 0;
    size_t failed = 0;
};

// Drives the endpoint over every sample not already covered by the log.
// At most cfg.max_in_flight requests are outstanding at once; retries with
// exponential backoff and full jitter on transport errors, 429 and 5xx, up
// to cfg.max_retries retries after the first attempt. Every outcome is
// appended to the log, one flushed line per sample. A preflight
// GET {base}/models runs only when at least one HTTP request is pending;
// an unreachable endpoint throws EndpointError.
RunStats run_inference(const std::vector<InstructionSample>& samples, const EndpointConfig& cfg,
                       const std::string& log_path, const JsonlMeta& meta);

// Joins log entries to samples by sample_id and verifies each recorded
// fingerprint against the sample and the log's own decoding parameters.
// Failed entries yield empty text. Missing samples or fingerprint
// mismatches throw DataError naming the ids.
std::vector<std::pair<std::string, std::string>> replay_log(
    const ResponseLog& log, const std::vector<InstructionSample>& samples);

}  // namespace medbench
