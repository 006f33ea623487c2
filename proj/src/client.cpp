#include "medbench/client.hpp"

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include <httplib.h>

namespace medbench {

using nlohmann::json;
using nlohmann::ordered_json;

std::string request_fingerprint(const std::string& instruction, const std::string& image_digest,
                                const std::string& model, double temperature, int max_tokens) {
    std::uint64_t h = fnv1a64(instruction);
    h = fnv1a64("\x1f", h);
    h = fnv1a64(image_digest, h);
    h = fnv1a64("\x1f", h);
    h = fnv1a64(model, h);
    h = fnv1a64("\x1f", h);
    h = fnv1a64(format_fixed(temperature, 6), h);
    h = fnv1a64("\x1f", h);
    h = fnv1a64(std::to_string(max_tokens), h);
    return to_hex(h);
}

std::string image_digest_for_uri(const std::string& uri) {
    try {
        return to_hex(fnv1a64(read_file(uri)));
    } catch (const DataError&) {
        return "unreadable";
    }
}

EncodedRequest encode_request(const InstructionSample& sample, const EndpointConfig& cfg) {
    EncodedRequest out;
    std::string bytes;
    try {
        bytes = read_file(sample.image.uri);
    } catch (const DataError&) {
        out.image_digest = "unreadable";
        out.fingerprint = request_fingerprint(sample.instruction, out.image_digest, cfg.model,
                                              cfg.temperature, cfg.max_tokens);
        out.error = "unreadable image: " + sample.image.uri;
        return out;
    }
    out.image_digest = to_hex(fnv1a64(bytes));
    out.fingerprint = request_fingerprint(sample.instruction, out.image_digest, cfg.model,
                                          cfg.temperature, cfg.max_tokens);
    json content = json::array();
    content.push_back({{"type", "image_url"}, {"image_url", {{"url", image_data_uri(bytes)}}}});
    content.push_back({{"type", "text"}, {"text", sample.instruction}});
    out.body["model"] = cfg.model;
    out.body["messages"] = json::array({{{"role", "user"}, {"content", content}}});
    out.body["temperature"] = cfg.temperature;
    out.body["max_tokens"] = cfg.max_tokens;
    out.ok = true;
    return out;
}

json log_entry_to_json(const ResponseLogEntry& entry) {
    ordered_json row;
    row["sample_id"] = entry.sample_id;
    row["fingerprint"] = entry.fingerprint;
    row["status"] = entry.status;
    row["http_status"] = entry.http_status;
    row["attempts"] = entry.attempts;
    row["latency_ms"] = entry.latency_ms;
    row["timestamp"] = entry.timestamp;
    row["raw_text"] = entry.raw_text;
    row["error"] = entry.error;
    return row;
}

ResponseLogEntry log_entry_from_json(const json& row) {
    ResponseLogEntry entry;
    if (!row.is_object() || !row.contains("sample_id") || !row.contains("fingerprint") ||
        !row.contains("status")) {
        throw DataError("malformed response log entry");
    }
    entry.sample_id = row["sample_id"].get<std::string>();
    entry.fingerprint = row["fingerprint"].get<std::string>();
    entry.status = row["status"].get<std::string>();
    if (entry.status != "ok" && entry.status != "failed") {
        throw DataError("response log entry has unknown status: " + entry.status);
    }
    entry.http_status = row.value("http_status", 0);
    entry.attempts = row.value("attempts", 0);
    entry.latency_ms = row.value("latency_ms", 0.0);
    entry.timestamp = row.value("timestamp", "");
    entry.raw_text = row.value("raw_text", "");
    entry.error = row.value("error", "");
    return entry;
}

namespace {

struct EndpointAddress {
    std::string client_base;  // scheme://authority
    std::string path_prefix;  // no trailing slash
};

EndpointAddress split_endpoint(const std::string& base_url) {
    size_t scheme_end = base_url.find("://");
    if (scheme_end == std::string::npos) {
        throw UsageError("endpoint URL needs a scheme: " + base_url);
    }
    size_t path_start = base_url.find('/', scheme_end + 3);
    EndpointAddress addr;
    if (path_start == std::string::npos) {
        addr.client_base = base_url;
    } else {
        addr.client_base = base_url.substr(0, path_start);
        addr.path_prefix = base_url.substr(path_start);
    }
    while (!addr.path_prefix.empty() && addr.path_prefix.back() == '/') {
        addr.path_prefix.pop_back();
    }
    if (addr.client_base.size() == scheme_end + 3) {
        throw UsageError("endpoint URL has no host: " + base_url);
    }
    return addr;
}

std::string now_iso8601_utc() {
    std::time_t t = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void configure_client(httplib::Client& cli, const EndpointConfig& cfg) {
    auto sec = static_cast<time_t>(cfg.timeout_s);
    auto usec = static_cast<time_t>((cfg.timeout_s - static_cast<double>(sec)) * 1e6);
    cli.set_connection_timeout(sec, usec);
    cli.set_read_timeout(sec, usec);
    cli.set_write_timeout(sec, usec);
}

httplib::Headers auth_headers(const EndpointConfig& cfg) {
    httplib::Headers headers;
    if (!cfg.api_key_env.empty()) {
        const char* key = std::getenv(cfg.api_key_env.c_str());
        if (key && *key) headers.emplace("Authorization", std::string("Bearer ") + key);
    }
    return headers;
}

// {"choices": [{"message": {"content": "..."}}]}
std::optional<std::string> extract_content(const std::string& body) {
    json doc = json::parse(body, nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) return std::nullopt;
    if (!doc.contains("choices") || !doc["choices"].is_array() || doc["choices"].empty()) {
        return std::nullopt;
    }
    const json& first = doc["choices"][0];
    if (!first.is_object() || !first.contains("message")) return std::nullopt;
    const json& msg = first["message"];
    if (!msg.is_object() || !msg.contains("content") || !msg["content"].is_string()) {
        return std::nullopt;
    }
    return msg["content"].get<std::string>();
}

// Replaces the log with exactly the lines that parsed, dropping a dangling
// partial line an interrupted run may have left, so appends stay well formed.
void rewrite_log(const std::string& path, const ResponseLog& log) {
    std::ostringstream out;
    ordered_json meta_line;
    meta_line["type"] = "meta";
    meta_line["format"] = "responses";
    meta_line["config_digest"] = log.meta.config_digest;
    meta_line["seed"] = log.meta.seed;
    meta_line["model"] = log.model;
    meta_line["temperature"] = log.temperature;
    meta_line["max_tokens"] = log.max_tokens;
    out << meta_line.dump() << "\n";
    for (const auto& e : log.entries) out << log_entry_to_json(e).dump() << "\n";
    write_file(path, out.str());
}

class LogWriter {
public:
    LogWriter(const std::string& path, bool fresh, const JsonlMeta& meta,
              const EndpointConfig& cfg) {
        out_.open(path, std::ios::binary | std::ios::app);
        if (!out_) throw DataError("cannot open response log for writing: " + path);
        if (fresh) {
            ordered_json meta_line;
            meta_line["type"] = "meta";
            meta_line["format"] = "responses";
            meta_line["config_digest"] = meta.config_digest;
            meta_line["seed"] = meta.seed;
            meta_line["model"] = cfg.model;
            meta_line["temperature"] = cfg.temperature;
            meta_line["max_tokens"] = cfg.max_tokens;
            out_ << meta_line.dump() << "\n";
            out_.flush();
        }
    }

    void append(const ResponseLogEntry& entry) {
        std::lock_guard<std::mutex> lock(mu_);
        out_ << log_entry_to_json(entry).dump() << "\n";
        out_.flush();
    }

private:
    std::ofstream out_;
    std::mutex mu_;
};

}  // namespace

ResponseLog load_response_log(const std::string& path) {
    std::string content = read_file(path);
    std::vector<std::string> lines;
    {
        std::string line;
        std::istringstream ss(content);
        while (std::getline(ss, line)) {
            if (!trim(line).empty()) lines.push_back(line);
        }
    }
    if (lines.empty()) throw DataError("response log is empty: " + path);

    ResponseLog log;
    bool have_meta = false;
    for (size_t i = 0; i < lines.size(); ++i) {
        json row = json::parse(lines[i], nullptr, false);
        if (row.is_discarded()) {
            // An interrupted run can truncate the final line mid-write.
            if (i + 1 == lines.size()) break;
            throw DataError(path + ": malformed log line " + std::to_string(i + 1));
        }
        if (!have_meta) {
            if (!row.is_object() || row.value("type", "") != "meta" ||
                row.value("format", "") != "responses") {
                throw DataError(path + ": first line must be a responses meta line");
            }
            log.meta.format = "responses";
            log.meta.config_digest = row.value("config_digest", "");
            log.meta.seed = row.value("seed", 0LL);
            log.model = row.value("model", "");
            log.temperature = row.value("temperature", 0.0);
            log.max_tokens = row.value("max_tokens", 0);
            have_meta = true;
            continue;
        }
        try {
            log.entries.push_back(log_entry_from_json(row));
        } catch (const DataError& e) {
            if (i + 1 == lines.size()) break;
            throw DataError(path + ": line " + std::to_string(i + 1) + ": " + e.what());
        }
    }
    return log;
}

RunStats run_inference(const std::vector<InstructionSample>& samples, const EndpointConfig& cfg,
                       const std::string& log_path, const JsonlMeta& meta) {
    if (cfg.max_in_flight < 1) throw UsageError("concurrency must be at least 1");
    if (cfg.timeout_s <= 0) throw UsageError("timeout must be positive");
    if (cfg.max_retries < 0) throw UsageError("max retries cannot be negative");
    EndpointAddress addr = split_endpoint(cfg.base_url);

    RunStats stats;
    stats.total = samples.size();

    std::set<std::string> done;
    bool fresh = true;
    if (std::filesystem::exists(log_path) && std::filesystem::file_size(log_path) > 0) {
        ResponseLog prev = load_response_log(log_path);
        if (prev.model != cfg.model || prev.temperature != cfg.temperature ||
            prev.max_tokens != cfg.max_tokens) {
            throw UsageError("response log " + log_path +
                             " was written with a different model or decoding configuration; "
                             "use a new --out file");
        }
        for (const auto& e : prev.entries) done.insert(e.fingerprint);
        fresh = false;
        std::string raw = read_file(log_path);
        if (raw.empty() || raw.back() != '\n') rewrite_log(log_path, prev);
    }

    std::vector<const InstructionSample*> pending;
    std::vector<ResponseLogEntry> unreadable;
    for (const auto& s : samples) {
        std::string digest = image_digest_for_uri(s.image.uri);
        std::string fp =
            request_fingerprint(s.instruction, digest, cfg.model, cfg.temperature, cfg.max_tokens);
        if (done.count(fp)) {
            stats.skipped += 1;
            continue;
        }
        if (digest == "unreadable") {
            ResponseLogEntry entry;
            entry.sample_id = s.sample_id;
            entry.fingerprint = fp;
            entry.status = "failed";
            entry.timestamp = now_iso8601_utc();
            entry.error = "unreadable image: " + s.image.uri;
            unreadable.push_back(std::move(entry));
        } else {
            pending.push_back(&s);
        }
    }

    if (pending.empty() && unreadable.empty()) return stats;

    LogWriter writer(log_path, fresh, meta, cfg);
    for (const auto& entry : unreadable) {
        writer.append(entry);
        stats.attempted += 1;
        stats.failed += 1;
    }
    if (pending.empty()) return stats;

    {
        httplib::Client probe(addr.client_base);
        configure_client(probe, cfg);
        auto res = probe.Get((addr.path_prefix + "/models").c_str(), auth_headers(cfg));
        if (!res) {
            throw EndpointError("endpoint unreachable: " + cfg.base_url + " (" +
                                httplib::to_string(res.error()) + ")");
        }
    }

    std::atomic<size_t> next{0};
    std::atomic<size_t> succeeded{0}, failed{0};
    const std::string post_path = addr.path_prefix + "/chat/completions";
    const httplib::Headers headers = auth_headers(cfg);

    auto worker = [&](unsigned worker_id) {
        httplib::Client cli(addr.client_base);
        configure_client(cli, cfg);
        std::mt19937_64 rng(std::random_device{}() + worker_id);
        std::uniform_real_distribution<double> jitter(0.0, 1.0);

        for (;;) {
            size_t i = next.fetch_add(1);
            if (i >= pending.size()) break;
            const InstructionSample& s = *pending[i];
            auto t0 = std::chrono::steady_clock::now();

            EncodedRequest req = encode_request(s, cfg);
            ResponseLogEntry entry;
            entry.sample_id = s.sample_id;
            entry.fingerprint = req.fingerprint;
            if (!req.ok) {
                entry.status = "failed";
                entry.error = req.error;
                entry.timestamp = now_iso8601_utc();
                writer.append(entry);
                failed.fetch_add(1);
                continue;
            }
            const std::string body = req.body.dump();

            int attempts = 0;
            bool ok = false;
            int last_status = 0;
            std::string text, error;
            for (;;) {
                ++attempts;
                auto res = cli.Post(post_path.c_str(), headers, body, "application/json");
                bool retryable = false;
                if (res && res->status >= 200 && res->status < 300) {
                    last_status = res->status;
                    auto content = extract_content(res->body);
                    if (content) {
                        ok = true;
                        text = std::move(*content);
                    } else {
                        error = "malformed response body";
                    }
                    break;
                }
                if (res) {
                    last_status = res->status;
                    error = "http " + std::to_string(res->status);
                    retryable = res->status == 429 || res->status / 100 == 5;
                } else {
                    last_status = 0;
                    error = std::string("transport: ") + httplib::to_string(res.error());
                    retryable = true;
                }
                if (!retryable || attempts > cfg.max_retries) break;
                double delay =
                    cfg.backoff_base_s * std::pow(2.0, attempts - 1) * jitter(rng);
                std::this_thread::sleep_for(std::chrono::duration<double>(delay));
            }

            auto t1 = std::chrono::steady_clock::now();
            entry.status = ok ? "ok" : "failed";
            entry.http_status = last_status;
            entry.attempts = attempts;
            entry.latency_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
            entry.timestamp = now_iso8601_utc();
            entry.raw_text = text;
            entry.error = ok ? "" : error;
            writer.append(entry);
            (ok ? succeeded : failed).fetch_add(1);
        }
    };

    size_t n_workers = std::min(static_cast<size_t>(cfg.max_in_flight), pending.size());
    std::vector<std::thread> threads;
    threads.reserve(n_workers);
    for (size_t w = 0; w < n_workers; ++w) threads.emplace_back(worker, static_cast<unsigned>(w));
    for (auto& t : threads) t.join();

    stats.attempted += pending.size();
    stats.succeeded = succeeded.load();
    stats.failed += failed.load();
    return stats;
}

std::vector<std::pair<std::string, std::string>> replay_log(
    const ResponseLog& log, const std::vector<InstructionSample>& samples) {
    std::map<std::string, const ResponseLogEntry*> by_id;
    for (const auto& e : log.entries) by_id[e.sample_id] = &e;

    std::vector<std::string> missing, mismatched;
    std::vector<std::pair<std::string, std::string>> out;
    out.reserve(samples.size());
    for (const auto& s : samples) {
        auto it = by_id.find(s.sample_id);
        if (it == by_id.end()) {
            missing.push_back(s.sample_id);
            continue;
        }
        std::string digest = image_digest_for_uri(s.image.uri);
        std::string fp = request_fingerprint(s.instruction, digest, log.model, log.temperature,
                                             log.max_tokens);
        if (fp != it->second->fingerprint) {
            mismatched.push_back(s.sample_id);
            continue;
        }
        out.emplace_back(s.sample_id, it->second->status == "ok" ? it->second->raw_text : "");
    }

    auto join_ids = [](const std::vector<std::string>& ids) {
        std::string joined;
        size_t shown = std::min<size_t>(ids.size(), 10);
        for (size_t i = 0; i < shown; ++i) {
            if (i) joined += ", ";
            joined += ids[i];
        }
        if (ids.size() > shown) {
            joined += ", ... (" + std::to_string(ids.size() - shown) + " more)";
        }
        return joined;
    };
    if (!missing.empty()) {
        throw DataError("response log has no entry for: " + join_ids(missing));
    }
    if (!mismatched.empty()) {
        throw DataError("fingerprint mismatch (samples changed since the log was written): " +
                        join_ids(mismatched));
    }
    return out;
}

}  // namespace medbench
