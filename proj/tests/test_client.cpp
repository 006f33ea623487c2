#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>

#include "medbench/client.hpp"
#include "test_support.hpp"

using namespace medbench;
using testsupport::MockEndpoint;
using testsupport::TempDir;

namespace {

std::vector<InstructionSample> make_samples(const TempDir& dir, int n) {
    std::vector<InstructionSample> out;
    for (int i = 0; i < n; ++i) {
        InstructionSample s;
        s.sample_id = "polyp/img" + std::to_string(i) + ".png#polyp#CountOnly";
        s.image.image_id = "polyp/img" + std::to_string(i) + ".png";
        s.image.uri = dir.file("img" + std::to_string(i) + ".png");
        s.image.eval_width = 640;
        s.image.eval_height = 480;
        s.task = TaskKind::CountOnly;
        s.instruction = "Count the polyps, please. (#" + std::to_string(i) + ")";
        s.target = "{\"counts\": 1, \"label\": \"polyp\"}";
        s.label = "polyp";
        testsupport::write_fake_png(s.image.uri, "client" + std::to_string(i));
        out.push_back(std::move(s));
    }
    return out;
}

EndpointConfig config_for(const MockEndpoint& mock) {
    EndpointConfig cfg;
    cfg.base_url = mock.base_url();
    cfg.model = "test-model";
    cfg.backoff_base_s = 0.0;  // keep retry tests fast
    cfg.timeout_s = 5;
    return cfg;
}

void script_answers(MockEndpoint& mock, const std::vector<InstructionSample>& samples) {
    for (const auto& s : samples) {
        mock.set_answer(testsupport::answer_key_for(s),
                        "{\"counts\": 2, \"label\": \"polyp\"}");
    }
}

}  // namespace

TEST_CASE("fingerprints react to every identity input") {
    std::string base = request_fingerprint("instr", "digest", "model", 0.0, 512);
    CHECK(base == request_fingerprint("instr", "digest", "model", 0.0, 512));
    CHECK(base != request_fingerprint("instr2", "digest", "model", 0.0, 512));
    CHECK(base != request_fingerprint("instr", "digest2", "model", 0.0, 512));
    CHECK(base != request_fingerprint("instr", "digest", "model2", 0.0, 512));
    CHECK(base != request_fingerprint("instr", "digest", "model", 0.5, 512));
    CHECK(base != request_fingerprint("instr", "digest", "model", 0.0, 256));
    // Field boundaries matter: shifting a character across the separator
    // must change the value.
    CHECK(request_fingerprint("ab", "c", "m", 0, 1) != request_fingerprint("a", "bc", "m", 0, 1));
}

TEST_CASE("requests encode the OpenAI chat shape") {
    TempDir dir;
    auto samples = make_samples(dir, 1);
    EndpointConfig cfg;
    cfg.model = "test-model";
    EncodedRequest req = encode_request(samples[0], cfg);
    REQUIRE(req.ok);
    CHECK(req.body["model"] == "test-model");
    CHECK(req.body["temperature"] == 0.0);
    CHECK(req.body["max_tokens"] == 512);
    const auto& content = req.body["messages"][0]["content"];
    REQUIRE(content.size() == 2);
    CHECK(content[0]["type"] == "image_url");
    std::string url = content[0]["image_url"]["url"];
    CHECK(url.rfind("data:image/png;base64,", 0) == 0);
    CHECK(content[1]["type"] == "text");
    CHECK(content[1]["text"] == samples[0].instruction);
    CHECK_FALSE(req.fingerprint.empty());
}

TEST_CASE("an unreadable image yields a failed encoding, not an exception") {
    TempDir dir;
    auto samples = make_samples(dir, 1);
    samples[0].image.uri = dir.file("missing.png");
    EndpointConfig cfg;
    cfg.model = "m";
    EncodedRequest req = encode_request(samples[0], cfg);
    CHECK_FALSE(req.ok);
    CHECK(req.image_digest == "unreadable");
    CHECK_FALSE(req.error.empty());
}

TEST_CASE("a full run logs one ok entry per sample") {
    TempDir dir;
    MockEndpoint mock;
    auto samples = make_samples(dir, 6);
    script_answers(mock, samples);

    std::string log_path = dir.file("responses.jsonl");
    RunStats stats = run_inference(samples, config_for(mock), log_path, {"responses", "cfg1", 0});
    CHECK(stats.total == 6);
    CHECK(stats.skipped == 0);
    CHECK(stats.attempted == 6);
    CHECK(stats.succeeded == 6);
    CHECK(stats.failed == 0);
    CHECK(mock.posts() == 6);
    CHECK(mock.model_gets() == 1);

    ResponseLog log = load_response_log(log_path);
    CHECK(log.meta.format == "responses");
    CHECK(log.meta.config_digest == "cfg1");
    CHECK(log.model == "test-model");
    CHECK(log.max_tokens == 512);
    REQUIRE(log.entries.size() == 6);
    for (const auto& e : log.entries) {
        CHECK(e.status == "ok");
        CHECK(e.http_status == 200);
        CHECK(e.attempts == 1);
        CHECK(e.raw_text == "{\"counts\": 2, \"label\": \"polyp\"}");
        CHECK_FALSE(e.fingerprint.empty());
        CHECK_FALSE(e.timestamp.empty());
    }
}

TEST_CASE("a finished run resumes as a no-op") {
    TempDir dir;
    MockEndpoint mock;
    auto samples = make_samples(dir, 4);
    script_answers(mock, samples);
    std::string log_path = dir.file("responses.jsonl");

    run_inference(samples, config_for(mock), log_path, {"responses", "cfg1", 0});
    int posts_after_first = mock.posts();

    RunStats again = run_inference(samples, config_for(mock), log_path, {"responses", "cfg1", 0});
    CHECK(again.total == 4);
    CHECK(again.skipped == 4);
    CHECK(again.attempted == 0);
    CHECK(mock.posts() == posts_after_first);

    ResponseLog log = load_response_log(log_path);
    CHECK(log.entries.size() == 4);
}

TEST_CASE("an interrupted run issues exactly the missing requests") {
    TempDir dir;
    MockEndpoint mock;
    auto samples = make_samples(dir, 8);
    script_answers(mock, samples);
    std::string log_path = dir.file("responses.jsonl");

    std::vector<InstructionSample> first_half(samples.begin(), samples.begin() + 5);
    run_inference(first_half, config_for(mock), log_path, {"responses", "cfg1", 0});
    CHECK(mock.posts() == 5);

    RunStats stats = run_inference(samples, config_for(mock), log_path, {"responses", "cfg1", 0});
    CHECK(stats.skipped == 5);
    CHECK(stats.attempted == 3);
    CHECK(mock.posts() == 8);

    ResponseLog log = load_response_log(log_path);
    CHECK(log.entries.size() == 8);
}

TEST_CASE("resume under different decoding settings is refused") {
    TempDir dir;
    MockEndpoint mock;
    auto samples = make_samples(dir, 2);
    script_answers(mock, samples);
    std::string log_path = dir.file("responses.jsonl");
    run_inference(samples, config_for(mock), log_path, {"responses", "cfg1", 0});

    EndpointConfig other = config_for(mock);
    other.model = "different-model";
    CHECK_THROWS_AS(run_inference(samples, other, log_path, {"responses", "cfg1", 0}),
                    UsageError);
}

TEST_CASE("transient server errors retry with capped attempts") {
    TempDir dir;
    MockEndpoint mock;
    auto samples = make_samples(dir, 1);
    script_answers(mock, samples);
    mock.fail_first(2, 500);

    std::string log_path = dir.file("responses.jsonl");
    RunStats stats = run_inference(samples, config_for(mock), log_path, {"responses", "c", 0});
    CHECK(stats.succeeded == 1);
    ResponseLog log = load_response_log(log_path);
    REQUIRE(log.entries.size() == 1);
    CHECK(log.entries[0].attempts == 3);
    CHECK(log.entries[0].status == "ok");
}

TEST_CASE("persistent server errors exhaust retries and fail") {
    TempDir dir;
    MockEndpoint mock;
    auto samples = make_samples(dir, 1);
    script_answers(mock, samples);
    mock.fail_first(100, 503);

    EndpointConfig cfg = config_for(mock);
    cfg.max_retries = 2;
    std::string log_path = dir.file("responses.jsonl");
    RunStats stats = run_inference(samples, cfg, log_path, {"responses", "c", 0});
    CHECK(stats.failed == 1);
    ResponseLog log = load_response_log(log_path);
    REQUIRE(log.entries.size() == 1);
    CHECK(log.entries[0].status == "failed");
    CHECK(log.entries[0].attempts == 3);  // initial try + 2 retries
    CHECK(log.entries[0].http_status == 503);
}

TEST_CASE("client errors are terminal on the first attempt") {
    TempDir dir;
    MockEndpoint mock;
    auto samples = make_samples(dir, 1);
    script_answers(mock, samples);
    mock.fail_first(1, 400);

    std::string log_path = dir.file("responses.jsonl");
    RunStats stats = run_inference(samples, config_for(mock), log_path, {"responses", "c", 0});
    CHECK(stats.failed == 1);
    ResponseLog log = load_response_log(log_path);
    REQUIRE(log.entries.size() == 1);
    CHECK(log.entries[0].attempts == 1);
    CHECK(log.entries[0].http_status == 400);
}

TEST_CASE("a malformed success body is a terminal failure") {
    TempDir dir;
    MockEndpoint mock;
    mock.set_raw_body("this is not the chat schema");
    auto samples = make_samples(dir, 1);

    std::string log_path = dir.file("responses.jsonl");
    RunStats stats = run_inference(samples, config_for(mock), log_path, {"responses", "c", 0});
    CHECK(stats.failed == 1);
    ResponseLog log = load_response_log(log_path);
    REQUIRE(log.entries.size() == 1);
    CHECK(log.entries[0].status == "failed");
    CHECK(log.entries[0].attempts == 1);
    CHECK(log.entries[0].error.find("malformed") != std::string::npos);
}

TEST_CASE("unreadable images fail without touching the endpoint") {
    TempDir dir;
    MockEndpoint mock;
    auto samples = make_samples(dir, 2);
    script_answers(mock, samples);
    std::filesystem::remove(samples[1].image.uri);

    std::string log_path = dir.file("responses.jsonl");
    RunStats stats = run_inference(samples, config_for(mock), log_path, {"responses", "c", 0});
    CHECK(stats.succeeded == 1);
    CHECK(stats.failed == 1);
    CHECK(mock.posts() == 1);

    ResponseLog log = load_response_log(log_path);
    REQUIRE(log.entries.size() == 2);
    for (const auto& e : log.entries) {
        if (e.status == "failed") {
            CHECK(e.http_status == 0);
            CHECK(e.attempts == 0);
        }
    }
}

TEST_CASE("the API key travels as a bearer header when configured") {
    TempDir dir;
    MockEndpoint mock;
    auto samples = make_samples(dir, 1);
    script_answers(mock, samples);
    setenv("MEDBENCH_TEST_KEY", "sk-test-123", 1);

    EndpointConfig cfg = config_for(mock);
    cfg.api_key_env = "MEDBENCH_TEST_KEY";
    run_inference(samples, cfg, dir.file("r.jsonl"), {"responses", "c", 0});
    CHECK(mock.last_auth() == "Bearer sk-test-123");
    unsetenv("MEDBENCH_TEST_KEY");
}

TEST_CASE("an unreachable endpoint raises an endpoint error") {
    TempDir dir;
    auto samples = make_samples(dir, 1);
    EndpointConfig cfg;
    cfg.base_url = "http://127.0.0.1:1/v1";  // nothing listens here
    cfg.model = "m";
    cfg.timeout_s = 2;
    CHECK_THROWS_AS(run_inference(samples, cfg, dir.file("r.jsonl"), {"responses", "c", 0}),
                    EndpointError);
}

TEST_CASE("a truncated final log line is tolerated, a mid-file one is not") {
    TempDir dir;
    MockEndpoint mock;
    auto samples = make_samples(dir, 3);
    script_answers(mock, samples);
    std::string log_path = dir.file("responses.jsonl");
    run_inference(samples, config_for(mock), log_path, {"responses", "cfg1", 0});

    std::string text = read_file(log_path);
    std::string truncated = text.substr(0, text.size() - 25);
    std::string trunc_path = dir.file("truncated.jsonl");
    write_file(trunc_path, truncated);
    ResponseLog log = load_response_log(trunc_path);
    CHECK(log.entries.size() == 2);

    // The interrupted run picks up only the lost sample.
    RunStats stats = run_inference(samples, config_for(mock), trunc_path, {"responses", "cfg1", 0});
    CHECK(stats.skipped == 2);
    CHECK(stats.attempted == 1);

    size_t first_nl = text.find('\n');
    size_t second_nl = text.find('\n', first_nl + 1);
    std::string corrupted = text.substr(0, second_nl - 20) + "\n" + text.substr(second_nl + 1);
    std::string bad_path = dir.file("corrupted.jsonl");
    write_file(bad_path, corrupted);
    CHECK_THROWS_AS(load_response_log(bad_path), DataError);
}

TEST_CASE("log entries survive a JSON round trip") {
    ResponseLogEntry e;
    e.sample_id = "s1";
    e.fingerprint = "fp";
    e.status = "failed";
    e.http_status = 429;
    e.attempts = 4;
    e.latency_ms = 123;
    e.timestamp = "2026-01-01T00:00:00Z";
    e.raw_text = "body";
    e.error = "rate limited";
    ResponseLogEntry back = log_entry_from_json(log_entry_to_json(e));
    CHECK(back.sample_id == e.sample_id);
    CHECK(back.fingerprint == e.fingerprint);
    CHECK(back.status == e.status);
    CHECK(back.http_status == e.http_status);
    CHECK(back.attempts == e.attempts);
    CHECK(back.raw_text == e.raw_text);
    CHECK(back.error == e.error);
}

TEST_CASE("replay pairs log entries with their samples in order") {
    TempDir dir;
    MockEndpoint mock;
    auto samples = make_samples(dir, 3);
    script_answers(mock, samples);
    std::string log_path = dir.file("responses.jsonl");
    run_inference(samples, config_for(mock), log_path, {"responses", "cfg1", 0});

    ResponseLog log = load_response_log(log_path);
    auto rows = replay_log(log, samples);
    REQUIRE(rows.size() == 3);
    for (size_t i = 0; i < rows.size(); ++i) {
        CHECK(rows[i].first == samples[i].sample_id);
        CHECK(rows[i].second == "{\"counts\": 2, \"label\": \"polyp\"}");
    }

    auto extra = make_samples(dir, 4);
    CHECK_THROWS_AS(replay_log(log, extra), DataError);

    ResponseLog renamed = log;
    renamed.model = "other-model";
    CHECK_THROWS_AS(replay_log(renamed, samples), DataError);
}

TEST_CASE("invalid configurations are refused up front") {
    TempDir dir;
    auto samples = make_samples(dir, 1);
    EndpointConfig cfg;
    cfg.model = "m";
    cfg.base_url = "127.0.0.1/v1";  // no scheme
    CHECK_THROWS_AS(run_inference(samples, cfg, dir.file("r.jsonl"), {"responses", "c", 0}),
                    UsageError);

    EndpointConfig zero;
    zero.base_url = "http://127.0.0.1:9/v1";
    zero.model = "m";
    zero.max_in_flight = 0;
    CHECK_THROWS_AS(run_inference(samples, zero, dir.file("r2.jsonl"), {"responses", "c", 0}),
                    UsageError);
}
