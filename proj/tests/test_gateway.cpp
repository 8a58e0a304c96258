#include <catch2/catch_amalgamated.hpp>

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "redgame/gateway.hpp"

using namespace redgame;
using nlohmann::json;

namespace {

constexpr const char* kKeyVar = "REDGAME_TEST_API_KEY";
constexpr const char* kKey = "sk-test-sekret-123";

// One mock endpoint per test case: handlers are installed on a fresh server
// bound to an ephemeral localhost port.
struct MockServer {
  httplib::Server server;
  int port = 0;
  std::thread thread;

  MockServer() {
    port = server.bind_to_any_port("127.0.0.1");
    REQUIRE(port > 0);
  }

  void start() {
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }

  std::string url() const { return "http://127.0.0.1:" + std::to_string(port); }

  ~MockServer() {
    server.stop();
    if (thread.joinable()) thread.join();
  }
};

EndpointConfig test_config(const std::string& url) {
  EndpointConfig cfg;
  cfg.base_url = url;
  cfg.model_name = "toy-model";
  cfg.api_key_env = kKeyVar;
  cfg.timeout_seconds = 5.0;
  cfg.max_retries = 2;
  cfg.backoff_base_ms = 1;
  return cfg;
}

std::string chat_body(const std::string& content) {
  return json{{"choices", json::array({json{{"message", json{{"content", content}}}}})}}.dump();
}

}  // namespace

TEST_CASE("endpoint config validation rejects nonsense") {
  EndpointConfig cfg = test_config("http://localhost:1");
  CHECK_NOTHROW(validate(cfg));
  auto expect_config_error = [](EndpointConfig bad) {
    try {
      validate(bad);
      FAIL("expected config error");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::config);
    }
  };
  EndpointConfig bad = cfg;
  bad.base_url.clear();
  expect_config_error(bad);
  bad = cfg;
  bad.timeout_seconds = 0.0;
  expect_config_error(bad);
  bad = cfg;
  bad.max_in_flight = 0;
  expect_config_error(bad);
  bad = cfg;
  bad.max_retries = -1;
  expect_config_error(bad);
  bad = cfg;
  bad.classify_truncate_tokens = 0;
  expect_config_error(bad);
}

TEST_CASE("chat completion round-trips with auth header and prefill") {
  setenv(kKeyVar, kKey, 1);
  MockServer mock;
  std::string seen_auth;
  json seen_body;
  mock.server.Post("/v1/chat/completions", [&](const httplib::Request& req,
                                               httplib::Response& res) {
    seen_auth = req.get_header_value("Authorization");
    seen_body = json::parse(req.body);
    res.set_content(chat_body(" the rest</think><answer>ok</answer>"), "application/json");
  });
  mock.start();

  GatewayClient client(test_config(mock.url()));
  std::string text = client.chat_complete("system prompt", "user prompt", "<think>");

  CHECK(text == "<think> the rest</think><answer>ok</answer>");
  CHECK(seen_auth == std::string("Bearer ") + kKey);
  CHECK(seen_body["model"] == "toy-model");
  REQUIRE(seen_body["messages"].size() == 3);
  CHECK(seen_body["messages"][0]["role"] == "system");
  CHECK(seen_body["messages"][1]["content"] == "user prompt");
  CHECK(seen_body["messages"][2] == json({{"role", "assistant"}, {"content", "<think>"}}));
  CHECK(seen_body["temperature"] == 1.0);

  // Without a prefill no assistant message is sent.
  client.chat_complete("s", "u");
  CHECK(seen_body["messages"].size() == 2);
}

TEST_CASE("transient failures retry with a cap, terminal ones do not") {
  setenv(kKeyVar, kKey, 1);
  MockServer mock;
  std::atomic<int> calls{0};
  int fail_first = 2;
  int status_code = 500;
  mock.server.Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    if (calls.fetch_add(1) < fail_first) {
      res.status = status_code;
      res.set_content("busy", "text/plain");
    } else {
      res.set_content(chat_body("hello"), "application/json");
    }
  });
  mock.start();

  SECTION("recovers within the retry budget") {
    GatewayClient client(test_config(mock.url()));
    CHECK(client.chat_complete("s", "u") == "hello");
    CHECK(calls.load() == 3);
  }

  SECTION("429 is transient too") {
    status_code = 429;
    GatewayClient client(test_config(mock.url()));
    CHECK(client.chat_complete("s", "u") == "hello");
    CHECK(calls.load() == 3);
  }

  SECTION("budget exhausted surfaces a remote error") {
    fail_first = 1000;
    EndpointConfig cfg = test_config(mock.url());
    cfg.max_retries = 1;
    GatewayClient client(cfg);
    try {
      client.chat_complete("s", "u");
      FAIL("expected remote error");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::remote);
    }
    CHECK(calls.load() == 2);
  }

  SECTION("auth rejection is terminal") {
    fail_first = 1000;
    status_code = 401;
    GatewayClient client(test_config(mock.url()));
    try {
      client.chat_complete("s", "u");
      FAIL("expected auth error");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::remote_auth);
    }
    CHECK(calls.load() == 1);
  }

  SECTION("other 4xx is terminal") {
    fail_first = 1000;
    status_code = 404;
    GatewayClient client(test_config(mock.url()));
    try {
      client.chat_complete("s", "u");
      FAIL("expected remote error");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::remote);
    }
    CHECK(calls.load() == 1);
  }
}

TEST_CASE("a configured but unset api key fails before any request") {
  unsetenv(kKeyVar);
  MockServer mock;
  std::atomic<int> calls{0};
  mock.server.Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    ++calls;
    res.set_content(chat_body("x"), "application/json");
  });
  mock.start();

  GatewayClient client(test_config(mock.url()));
  try {
    client.chat_complete("s", "u");
    FAIL("expected auth error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::remote_auth);
  }
  CHECK(calls.load() == 0);

  // An empty env var name means an unauthenticated endpoint: no header sent.
  EndpointConfig open = test_config(mock.url());
  open.api_key_env.clear();
  GatewayClient anon(open);
  CHECK(anon.chat_complete("s", "u") == "x");
}

TEST_CASE("a connection refused endpoint raises remote after retries") {
  setenv(kKeyVar, kKey, 1);
  EndpointConfig cfg = test_config("http://127.0.0.1:1");  // nothing listens there
  cfg.max_retries = 1;
  GatewayClient client(cfg);
  try {
    client.chat_complete("s", "u");
    FAIL("expected remote error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::remote);
  }
}

TEST_CASE("a stalled reply surfaces as a timeout") {
  setenv(kKeyVar, kKey, 1);
  MockServer mock;
  mock.server.Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    std::this_thread::sleep_for(std::chrono::milliseconds(300));
    res.set_content(chat_body("late"), "application/json");
  });
  mock.start();

  EndpointConfig cfg = test_config(mock.url());
  cfg.timeout_seconds = 0.05;
  cfg.max_retries = 0;
  GatewayClient client(cfg);
  try {
    client.chat_complete("s", "u");
    FAIL("expected timeout");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::remote_timeout);
  }
}

TEST_CASE("concurrent callers never exceed the in-flight limit") {
  setenv(kKeyVar, kKey, 1);
  MockServer mock;
  std::atomic<int> active{0}, peak{0}, total{0};
  mock.server.Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    int now = ++active;
    int prev = peak.load();
    while (now > prev && !peak.compare_exchange_weak(prev, now)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(25));
    --active;
    ++total;
    res.set_content(chat_body("ok"), "application/json");
  });
  mock.start();

  EndpointConfig cfg = test_config(mock.url());
  cfg.max_in_flight = 2;
  GatewayClient client(cfg);
  std::vector<std::thread> callers;
  for (int i = 0; i < 8; ++i)
    callers.emplace_back([&client] { client.chat_complete("s", "u"); });
  for (std::thread& t : callers) t.join();

  CHECK(total.load() == 8);
  CHECK(peak.load() <= 2);
  CHECK(peak.load() >= 1);
}

TEST_CASE("structured judge replies map to verdicts, malformed ones fail closed") {
  setenv(kKeyVar, kKey, 1);
  MockServer mock;
  std::string reply = R"({"prompt_harmful": true, "response_harmful": false,
                          "response_refusal": true})";
  mock.server.Post("/classify", [&](const httplib::Request&, httplib::Response& res) {
    res.set_content(reply, "application/json");
  });
  mock.start();
  GatewayClient client(test_config(mock.url()));

  CHECK(client.classify("p", "r") == JudgeVerdict{true, false, true});

  auto expect_parse_error = [&] {
    try {
      client.classify("p", "r");
      FAIL("expected parse error");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::parse);
    }
  };
  reply = R"({"prompt_harmful": true, "response_harmful": false})";
  expect_parse_error();  // missing field, never a default label
  reply = R"({"prompt_harmful": "yes", "response_harmful": false, "response_refusal": true})";
  expect_parse_error();  // labels must be booleans
  reply = "classifier temporarily confused";
  expect_parse_error();  // free text without verdict lines
}

TEST_CASE("text-style judge replies parse through the fallback on the wire") {
  setenv(kKeyVar, kKey, 1);
  MockServer mock;
  mock.server.Post("/classify", [&](const httplib::Request&, httplib::Response& res) {
    res.set_content("Harmful request: yes\nResponse refusal: yes\nHarmful response: no",
                    "text/plain");
  });
  mock.start();
  GatewayClient client(test_config(mock.url()));
  CHECK(client.classify("p", "r") == JudgeVerdict{true, false, true});
}

TEST_CASE("golden table for text-style verdicts") {
  struct Case {
    const char* body;
    JudgeVerdict want;  // ignored when fails
    bool fails;
  };
  const Case cases[12] = {
      {"Harmful request: no\nResponse refusal: no\nHarmful response: no",
       {false, false, false}, false},
      {"Harmful request: yes\nResponse refusal: yes\nHarmful response: no",
       {true, false, true}, false},
      {"Harmful response: yes\nHarmful request: yes\nResponse refusal: no",
       {true, true, false}, false},
      {"HARMFUL REQUEST: NO\nRESPONSE REFUSAL: NO\nHARMFUL RESPONSE: YES",
       {false, true, false}, false},
      {"Harmful request:  yes.\n Response refusal : yes\nHarmful response: yes.",
       {true, true, true}, false},
      {"Assessment follows\nHarmful request: no\nResponse refusal: yes\nHarmful response: no\n"
       "Thank you for using the classifier",
       {false, false, true}, false},
      {"harmful Request: Yes\nresponse Refusal: no\nharmful Response: no",
       {true, false, false}, false},
      {"Harmful request: no\r\nResponse refusal: yes\r\nHarmful response: yes\r\n",
       {false, true, true}, false},
      {"Harmful request: yes\nResponse refusal: yes", {}, true},        // label missing
      {"Harmful request: maybe\nResponse refusal: no\nHarmful response: no", {}, true},
      {"Harmful request: yes\nHarmful request: no\nResponse refusal: no\nHarmful response: no",
       {}, true},                                                       // ambiguous repeat
      {"", {}, true},
  };
  for (const Case& c : cases) {
    CAPTURE(c.body);
    if (c.fails) {
      try {
        parse_judge_text(c.body);
        FAIL("expected parse error");
      } catch (const Error& e) {
        CHECK(e.code() == Errc::parse);
      }
    } else {
      CHECK(parse_judge_text(c.body) == c.want);
    }
  }
}

TEST_CASE("classification truncates the response to the configured token cap") {
  setenv(kKeyVar, kKey, 1);
  MockServer mock;
  std::string seen_response;
  mock.server.Post("/classify", [&](const httplib::Request& req, httplib::Response& res) {
    seen_response = json::parse(req.body)["response"].get<std::string>();
    res.set_content(R"({"prompt_harmful": false, "response_harmful": false,
                        "response_refusal": false})",
                    "application/json");
  });
  mock.start();

  EndpointConfig cfg = test_config(mock.url());
  cfg.classify_truncate_tokens = 512;
  GatewayClient client(cfg);
  std::string text;
  for (int i = 0; i < 600; ++i) text += "w" + std::to_string(i) + " ";
  client.classify("p", text);

  int tokens = 0;
  std::istringstream in(seen_response);
  std::string tok;
  while (in >> tok) ++tokens;
  CHECK(tokens == 512);
  CHECK(seen_response.substr(0, 6) == "w0 w1 ");
}

TEST_CASE("token truncation keeps spacing and short texts intact") {
  CHECK(truncate_tokens("a b c", 5) == "a b c");
  CHECK(truncate_tokens("a b c", 3) == "a b c");
  CHECK(truncate_tokens("a b c d", 3) == "a b c");
  CHECK(truncate_tokens("  a   b\tc\nd", 2) == "  a   b");
  CHECK(truncate_tokens("", 4).empty());
}

TEST_CASE("embeddings come back unit-length and dimension drift is caught") {
  setenv(kKeyVar, kKey, 1);
  MockServer mock;
  json vec = json::array({3.0, 4.0});
  mock.server.Post("/v1/embeddings", [&](const httplib::Request&, httplib::Response& res) {
    res.set_content(json{{"data", json::array({json{{"embedding", vec}}})}}.dump(),
                    "application/json");
  });
  mock.start();
  GatewayClient client(test_config(mock.url()));

  std::vector<double> v = client.embed("some text");
  REQUIRE(v.size() == 2);
  CHECK(v[0] == Catch::Approx(0.6));
  CHECK(v[1] == Catch::Approx(0.8));
  double norm = std::sqrt(v[0] * v[0] + v[1] * v[1]);
  CHECK(std::abs(norm - 1.0) < 1e-6);

  vec = json::array({1.0, 2.0, 2.0});
  try {
    client.embed("other text");
    FAIL("expected dimension drift");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::dimension_drift);
  }

  try {
    client.embed("");
    FAIL("expected empty input error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::empty_input);
  }

  vec = json::array({0.0, 0.0});
  GatewayClient fresh(test_config(mock.url()));
  try {
    fresh.embed("zero");
    FAIL("expected non-finite error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::non_finite);
  }
}

TEST_CASE("secrets never leave the client") {
  CHECK(scrub_secrets("Bearer sk-123 end", {"sk-123"}) == "Bearer [redacted] end");
  CHECK(scrub_secrets("sk-123 mid sk-123", {"sk-123"}) == "[redacted] mid [redacted]");
  CHECK(scrub_secrets("nothing here", {"sk-123"}) == "nothing here");
  CHECK(scrub_secrets("keep", {""}) == "keep");

  setenv(kKeyVar, kKey, 1);
  MockServer mock;
  mock.server.Post("/v1/chat/completions", [&](const httplib::Request& req,
                                               httplib::Response& res) {
    // A misbehaving server that echoes credentials back in an error body.
    res.status = 404;
    res.set_content("cannot serve " + req.get_header_value("Authorization"), "text/plain");
  });
  mock.start();

  EndpointConfig cfg = test_config(mock.url());
  GatewayClient client(cfg);
  std::vector<std::string> wire;
  client.set_wire_log([&wire](const std::string& line) { wire.push_back(line); });

  try {
    client.chat_complete("system", "user");
    FAIL("expected remote error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find(kKey) == std::string::npos);
  }
  REQUIRE(!wire.empty());
  bool redacted_something = false;
  for (const std::string& line : wire) {
    CHECK(line.find(kKey) == std::string::npos);
    if (line.find("[redacted]") != std::string::npos) redacted_something = true;
  }
  CHECK(redacted_something);
}

TEST_CASE("remote chat policy generates but refuses to score") {
  setenv(kKeyVar, kKey, 1);
  MockServer mock;
  mock.server.Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    res.set_content(chat_body("generated answer"), "application/json");
  });
  mock.start();
  GatewayClient client(test_config(mock.url()));
  RemoteChatPolicy policy(client, "be helpful");

  Rng rng = Rng::stream(1, {0});
  TokenSample s = policy.sample("revise this request", rng);
  REQUIRE(s.tokens.size() == 1);
  CHECK(s.tokens[0] == "generated answer");
  CHECK(s.logprobs.empty());
  CHECK(s.context_id == "revise this request");

  try {
    policy.logprob("ctx", {"tok"});
    FAIL("expected unsupported");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::unsupported);
  }
}

TEST_CASE("remote judge maps transport exhaustion to unavailability") {
  setenv(kKeyVar, kKey, 1);
  MockServer mock;
  int status = 503;
  mock.server.Post("/classify", [&](const httplib::Request&, httplib::Response& res) {
    res.status = status;
    res.set_content("no labels here", "text/plain");
  });
  mock.start();

  EndpointConfig cfg = test_config(mock.url());
  cfg.max_retries = 1;
  GatewayClient client(cfg);
  RemoteJudge judge(client);

  try {
    judge.judge("attack", "defense");
    FAIL("expected judge_unavailable");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::judge_unavailable);
  }

  // Parse failures are not availability problems; they stay fail-closed.
  status = 200;
  try {
    judge.judge("attack", "defense");
    FAIL("expected parse error");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::parse);
  }
}
