#pragma once

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <optional>
#include <random>
#include <semaphore>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "httplib.h"
#include "json.hpp"
#include "redgame/errors.hpp"
#include "redgame/judge.hpp"
#include "redgame/policy.hpp"
#include "redgame/types.hpp"

namespace redgame {

// One remote endpoint. The API key is named here but lives only in the
// environment; config files never carry secret material.
struct EndpointConfig {
  std::string base_url;     // scheme://host:port, no trailing path
  std::string model_name;
  std::string api_key_env;  // empty means the endpoint is unauthenticated
  double timeout_seconds = 30.0;
  int max_retries = 2;  // attempts beyond the first
  int max_in_flight = 4;
  double temperature = 1.0;
  int max_tokens = 512;
  int classify_truncate_tokens = 512;  // whitespace-token cap before classification
  int backoff_base_ms = 100;           // doubled per retry, jittered
};

inline void validate(const EndpointConfig& cfg) {
  if (cfg.base_url.empty()) raise(Errc::config, "endpoint base_url is empty");
  if (!(cfg.timeout_seconds > 0.0)) raise(Errc::config, "endpoint timeout must be > 0");
  if (cfg.max_retries < 0) raise(Errc::config, "max_retries must be >= 0");
  if (cfg.max_in_flight < 1) raise(Errc::config, "max_in_flight must be >= 1");
  if (cfg.max_tokens < 1) raise(Errc::config, "max_tokens must be >= 1");
  if (cfg.classify_truncate_tokens < 1)
    raise(Errc::config, "classify_truncate_tokens must be >= 1");
  if (cfg.backoff_base_ms < 0) raise(Errc::config, "backoff_base_ms must be >= 0");
}

// Replaces every occurrence of every secret with a fixed placeholder. Applied
// to anything the client lets leave the process: logs and error messages.
inline std::string scrub_secrets(std::string text, const std::vector<std::string>& secrets) {
  static const std::string kMask = "[redacted]";
  for (const std::string& s : secrets) {
    if (s.empty()) continue;
    for (std::size_t pos = 0; (pos = text.find(s, pos)) != std::string::npos; pos += kMask.size())
      text.replace(pos, s.size(), kMask);
  }
  return text;
}

// Keeps the first max_tokens whitespace-separated tokens, original spacing
// preserved. A crude stand-in for the classifier's tokenizer cap.
inline std::string truncate_tokens(const std::string& text, int max_tokens) {
  if (max_tokens < 1) raise(Errc::config, "max_tokens must be >= 1");
  int tokens = 0;
  bool in_token = false;
  std::size_t cut = 0;  // end of the last kept token
  for (std::size_t i = 0; i < text.size(); ++i) {
    bool ws = std::isspace(static_cast<unsigned char>(text[i])) != 0;
    if (!ws) {
      if (!in_token) ++tokens;
      if (tokens > max_tokens) return text.substr(0, cut);
      cut = i + 1;
    }
    in_token = !ws;
  }
  return text;
}

// WildGuard-style plain-text verdicts: one "<label>: yes|no" line per label,
// any order, unknown lines ignored. Missing, duplicated, or unreadable labels
// fail the parse; a guessed verdict would corrupt rewards silently.
inline JudgeVerdict parse_judge_text(const std::string& body) {
  auto norm = [](std::string s) {
    std::string out;
    for (char c : s) {
      if (std::isspace(static_cast<unsigned char>(c))) {
        if (!out.empty() && out.back() != ' ') out.push_back(' ');
      } else {
        out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
      }
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    return out;
  };

  std::optional<bool> q_harm, res_harm, res_refuse;
  auto assign = [&](std::optional<bool>& slot, const std::string& value, const std::string& key) {
    std::string v = value;
    while (!v.empty() && (v.back() == '.' || v.back() == '!')) v.pop_back();
    bool parsed;
    if (v == "yes")
      parsed = true;
    else if (v == "no")
      parsed = false;
    else
      raise(Errc::parse, "judge label '" + key + "' has no yes/no answer");
    if (slot.has_value()) raise(Errc::parse, "judge label '" + key + "' appears twice");
    slot = parsed;
  };

  std::istringstream lines(body);
  std::string line;
  while (std::getline(lines, line)) {
    std::size_t colon = line.find(':');
    if (colon == std::string::npos) continue;
    std::string key = norm(line.substr(0, colon));
    std::string value = norm(line.substr(colon + 1));
    if (key == "harmful request")
      assign(q_harm, value, key);
    else if (key == "harmful response")
      assign(res_harm, value, key);
    else if (key == "response refusal")
      assign(res_refuse, value, key);
  }
  if (!q_harm || !res_harm || !res_refuse)
    raise(Errc::parse, "judge text is missing a verdict label");
  return {*q_harm, *res_harm, *res_refuse};
}

// HTTP client for one endpoint: bounded in-flight requests, capped jittered
// retries, secrets scrubbed from everything it emits. Safe for concurrent use.
class GatewayClient {
 public:
  explicit GatewayClient(EndpointConfig cfg)
      : cfg_(checked(std::move(cfg))), gate_(cfg_.max_in_flight) {}

  const EndpointConfig& config() const { return cfg_; }

  // Request/response bodies go here under --debug-wire, secrets already
  // scrubbed. Never wired to anything by default.
  void set_wire_log(std::function<void(const std::string&)> sink) {
    wire_log_ = std::move(sink);
  }

  // One chat turn. A prefill seeds the assistant message and is returned as
  // part of the generation, so templates ending mid-tag parse unchanged.
  std::string chat_complete(const std::string& system_message, const std::string& user_message,
                            const std::optional<std::string>& prefill = std::nullopt) {
    nlohmann::json messages = nlohmann::json::array();
    messages.push_back({{"role", "system"}, {"content", system_message}});
    messages.push_back({{"role", "user"}, {"content", user_message}});
    if (prefill) messages.push_back({{"role", "assistant"}, {"content", *prefill}});
    nlohmann::json body = {{"model", cfg_.model_name},
                           {"messages", std::move(messages)},
                           {"temperature", cfg_.temperature},
                           {"max_tokens", cfg_.max_tokens}};
    std::string reply = post_json("/v1/chat/completions", body);
    nlohmann::json j = nlohmann::json::parse(reply, nullptr, false);
    if (!j.is_object() || !j.contains("choices") || !j["choices"].is_array() ||
        j["choices"].empty() || !j["choices"][0].contains("message") ||
        !j["choices"][0]["message"].contains("content") ||
        !j["choices"][0]["message"]["content"].is_string())
      raise(Errc::parse, "chat reply carries no choices[0].message.content");
    return prefill.value_or("") + j["choices"][0]["message"]["content"].get<std::string>();
  }

  // Three-label safety classification. Structured JSON replies need all three
  // boolean fields; text replies go through parse_judge_text. Either way an
  // unreadable verdict raises instead of defaulting.
  JudgeVerdict classify(const std::string& prompt_text, const std::string& response_text) {
    nlohmann::json body = {{"model", cfg_.model_name},
                           {"prompt", prompt_text},
                           {"response", truncate_tokens(response_text,
                                                        cfg_.classify_truncate_tokens)}};
    std::string reply = post_json("/classify", body);
    nlohmann::json j = nlohmann::json::parse(reply, nullptr, false);
    if (j.is_object()) {
      for (const char* field : {"prompt_harmful", "response_harmful", "response_refusal"})
        if (!j.contains(field) || !j[field].is_boolean())
          raise(Errc::parse, std::string("judge reply is missing boolean '") + field + "'");
      return {j["prompt_harmful"].get<bool>(), j["response_harmful"].get<bool>(),
              j["response_refusal"].get<bool>()};
    }
    return parse_judge_text(j.is_string() ? j.get<std::string>() : reply);
  }

  // Embedding lookup, L2-normalized. The first reply of the session fixes the
  // dimension; anything else later is treated as a server fault.
  std::vector<double> embed(const std::string& text) {
    if (text.empty()) raise(Errc::empty_input, "cannot embed empty text");
    nlohmann::json body = {{"model", cfg_.model_name}, {"input", text}};
    std::string reply = post_json("/v1/embeddings", body);
    nlohmann::json j = nlohmann::json::parse(reply, nullptr, false);
    if (!j.is_object() || !j.contains("data") || !j["data"].is_array() || j["data"].empty() ||
        !j["data"][0].contains("embedding") || !j["data"][0]["embedding"].is_array())
      raise(Errc::parse, "embedding reply carries no data[0].embedding");
    std::vector<double> v;
    for (const nlohmann::json& x : j["data"][0]["embedding"]) {
      if (!x.is_number()) raise(Errc::parse, "embedding has a non-numeric entry");
      v.push_back(x.get<double>());
    }
    {
      std::lock_guard<std::mutex> lock(dim_mu_);
      if (!embed_dim_)
        embed_dim_ = v.size();
      else if (*embed_dim_ != v.size())
        raise(Errc::dimension_drift, "embedding dimension changed from " +
                                         std::to_string(*embed_dim_) + " to " +
                                         std::to_string(v.size()));
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (!std::isfinite(norm) || norm == 0.0)
      raise(Errc::non_finite, "embedding does not normalize");
    for (double& x : v) x /= norm;
    return v;
  }

 private:
  static EndpointConfig checked(EndpointConfig cfg) {
    validate(cfg);
    return cfg;
  }

  struct Ticket {
    std::counting_semaphore<>* sem;
    explicit Ticket(std::counting_semaphore<>& s) : sem(&s) { sem->acquire(); }
    ~Ticket() { sem->release(); }
    Ticket(const Ticket&) = delete;
    Ticket& operator=(const Ticket&) = delete;
  };

  std::string api_key() const {
    if (cfg_.api_key_env.empty()) return "";
    const char* v = std::getenv(cfg_.api_key_env.c_str());
    if (!v || !*v)
      raise(Errc::remote_auth, "environment variable " + cfg_.api_key_env + " is not set");
    return v;
  }

  void log_wire(const std::string& text, const std::string& secret) const {
    if (wire_log_) wire_log_(scrub_secrets(text, {secret}));
  }

  // POST with the endpoint's auth, timeout, in-flight, and retry policy.
  // Returns the 200 body; auth failures are terminal, transient transport and
  // server faults retry with jittered exponential backoff.
  std::string post_json(const std::string& path, const nlohmann::json& body) {
    const std::string key = api_key();
    const std::string payload = body.dump();
    log_wire("POST " + cfg_.base_url + path + " " + payload, key);

    Errc failure = Errc::remote;
    std::string detail = "no attempt made";
    for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
      if (attempt > 0) backoff(attempt);
      Ticket ticket(gate_);
      httplib::Client cli(cfg_.base_url);
      cli.set_connection_timeout(to_timeval(cfg_.timeout_seconds));
      cli.set_read_timeout(to_timeval(cfg_.timeout_seconds));
      cli.set_write_timeout(to_timeval(cfg_.timeout_seconds));
      httplib::Headers headers;
      if (!key.empty()) headers.emplace("Authorization", "Bearer " + key);
      httplib::Result res = cli.Post(path, headers, payload, "application/json");
      if (!res) {
        failure = transport_errc(res.error());
        detail = "transport failure: " + httplib::to_string(res.error());
        log_wire(detail, key);
        continue;
      }
      log_wire("HTTP " + std::to_string(res->status) + " " + res->body, key);
      if (res->status == 200) return res->body;
      if (res->status == 401 || res->status == 403)
        raise(Errc::remote_auth,
              scrub_secrets("endpoint rejected credentials (HTTP " +
                                std::to_string(res->status) + ")",
                            {key}));
      if (res->status == 429 || res->status >= 500) {
        failure = Errc::remote;
        detail = "HTTP " + std::to_string(res->status);
        continue;
      }
      raise(Errc::remote, scrub_secrets("HTTP " + std::to_string(res->status) + ": " + res->body,
                                        {key}));
    }
    raise(failure, scrub_secrets("gave up after " + std::to_string(cfg_.max_retries + 1) +
                                     " attempts; last: " + detail,
                                 {key}));
  }

  static Errc transport_errc(httplib::Error e) {
    switch (e) {
      case httplib::Error::ConnectionTimeout:
      case httplib::Error::Read:
      case httplib::Error::Write:
        return Errc::remote_timeout;
      default:
        return Errc::remote;
    }
  }

  static std::chrono::microseconds to_timeval(double seconds) {
    return std::chrono::microseconds(static_cast<long long>(seconds * 1e6));
  }

  void backoff(int attempt) {
    if (cfg_.backoff_base_ms == 0) return;
    double base = static_cast<double>(cfg_.backoff_base_ms) * std::pow(2.0, attempt - 1);
    double jitter;
    {
      std::lock_guard<std::mutex> lock(jitter_mu_);
      jitter = std::uniform_real_distribution<double>(0.5, 1.5)(jitter_rng_);
    }
    std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(base * jitter));
  }

  EndpointConfig cfg_;
  std::counting_semaphore<> gate_;
  std::mutex dim_mu_;
  std::optional<std::size_t> embed_dim_;
  std::mutex jitter_mu_;
  std::mt19937 jitter_rng_{std::random_device{}()};
  std::function<void(const std::string&)> wire_log_;
};

// Generation-only policy over a chat endpoint: one sampled "token" is the
// whole assistant message. The wire carries no token-level log-probabilities,
// so scoring raises and gradient training on this policy is unsupported by
// construction.
class RemoteChatPolicy final : public Policy {
 public:
  RemoteChatPolicy(GatewayClient& client, std::string system_message,
                   std::optional<std::string> prefill = std::nullopt)
      : client_(&client), system_(std::move(system_message)), prefill_(std::move(prefill)) {}

  TokenSample sample(const std::string& context, Rng&) override {
    TokenSample s;
    s.context_id = context;
    s.tokens.push_back(client_->chat_complete(system_, context, prefill_));
    return s;  // logprobs stay empty: generation-only
  }

  std::vector<double> logprob(const std::string&, const std::vector<std::string>&) const override {
    raise(Errc::unsupported, "remote chat policy cannot score tokens");
  }

 private:
  GatewayClient* client_;
  std::string system_;
  std::optional<std::string> prefill_;
};

// Judge over the classifier endpoint. Transport exhaustion becomes
// judge_unavailable so the trainer can skip the episode; parse failures stay
// parse failures (fail closed, never a guessed label).
class RemoteJudge final : public Judge {
 public:
  explicit RemoteJudge(GatewayClient& client) : client_(&client) {}

  JudgeVerdict judge(const std::string& attack_text,
                     const std::string& defense_text) const override {
    try {
      return client_->classify(attack_text, defense_text);
    } catch (const Error& e) {
      if (e.code() == Errc::remote || e.code() == Errc::remote_timeout)
        raise(Errc::judge_unavailable, e.what());
      throw;
    }
  }

 private:
  GatewayClient* client_;
};

}  // namespace redgame
