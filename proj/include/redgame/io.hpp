#pragma once

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "redgame/episode.hpp"
#include "redgame/errors.hpp"
#include "redgame/gateway.hpp"
#include "redgame/trainer.hpp"
#include "redgame/types.hpp"

namespace redgame {

// Version stamp on every persistent artifact. Readers accept any minor
// revision of the current major and reject anything newer-major.
inline constexpr int kSchemaMajor = 1;
inline constexpr int kSchemaMinor = 0;

inline std::string schema_version_string() {
  return std::to_string(kSchemaMajor) + "." + std::to_string(kSchemaMinor);
}

inline void check_schema_version(const nlohmann::json& doc, const std::string& where) {
  if (!doc.contains("schema_version") || !doc["schema_version"].is_string())
    raise(Errc::version, where + ": missing schema_version");
  const std::string v = doc["schema_version"].get<std::string>();
  int major = 0;
  try {
    major = std::stoi(v.substr(0, v.find('.')));
  } catch (const std::exception&) {
    raise(Errc::version, where + ": unreadable schema_version '" + v + "'");
  }
  if (major > kSchemaMajor)
    raise(Errc::version, where + ": schema_version " + v + " is newer than this reader (" +
                             schema_version_string() + ")");
}

namespace iod {

inline void require_object(const nlohmann::json& j, const std::string& where) {
  if (!j.is_object()) raise(Errc::config, where + " must be a JSON object");
}

// Typos and stale keys fail loudly instead of silently configuring nothing.
inline void reject_unknown_keys(const nlohmann::json& j,
                                std::initializer_list<const char*> known,
                                const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known) ok = ok || key == k;
    if (!ok) raise(Errc::config, where + ": unknown key '" + key + "'");
  }
}

inline const nlohmann::json& require_key(const nlohmann::json& j, const char* key,
                                         const std::string& where) {
  if (!j.contains(key)) raise(Errc::config, where + ": missing key '" + key + "'");
  return j[key];
}

inline double get_number(const nlohmann::json& j, const char* key, const std::string& where) {
  const nlohmann::json& v = require_key(j, key, where);
  if (!v.is_number()) raise(Errc::config, where + ": '" + key + "' must be a number");
  return v.get<double>();
}

inline std::uint64_t get_count(const nlohmann::json& j, const char* key,
                               const std::string& where) {
  const nlohmann::json& v = require_key(j, key, where);
  if (v.is_number_unsigned()) return v.get<std::uint64_t>();
  if (v.is_number_integer() && v.get<std::int64_t>() >= 0)
    return static_cast<std::uint64_t>(v.get<std::int64_t>());
  raise(Errc::config, where + ": '" + key + "' must be a non-negative integer");
}

inline bool get_bool(const nlohmann::json& j, const char* key, const std::string& where) {
  const nlohmann::json& v = require_key(j, key, where);
  if (!v.is_boolean()) raise(Errc::config, where + ": '" + key + "' must be a boolean");
  return v.get<bool>();
}

inline std::string get_string(const nlohmann::json& j, const char* key,
                              const std::string& where) {
  const nlohmann::json& v = require_key(j, key, where);
  if (!v.is_string()) raise(Errc::config, where + ": '" + key + "' must be a string");
  return v.get<std::string>();
}

}  // namespace iod

inline nlohmann::json to_json(const RewardConfig& r) {
  return {{"r_harm", r.r_harm},
          {"r_refusal", r.r_refusal},
          {"r_format", r.r_format},
          {"r_revision", r.r_revision}};
}

inline RewardConfig reward_config_from_json(const nlohmann::json& j) {
  const std::string where = "rewards";
  iod::require_object(j, where);
  iod::reject_unknown_keys(j, {"r_harm", "r_refusal", "r_format", "r_revision"}, where);
  RewardConfig r;
  r.r_harm = iod::get_number(j, "r_harm", where);
  r.r_refusal = iod::get_number(j, "r_refusal", where);
  r.r_format = iod::get_number(j, "r_format", where);
  r.r_revision = iod::get_number(j, "r_revision", where);
  return r;
}

inline nlohmann::json to_json(const RLHyperparams& rl) {
  return {{"beta", rl.beta},
          {"epsilon_clip", rl.epsilon_clip},
          {"epsilon_std", rl.epsilon_std},
          {"lr_start", rl.lr_start},
          {"lr_end", rl.lr_end},
          {"total_steps", rl.total_steps},
          {"early_stop_step", rl.early_stop_step},
          {"sft_weight", rl.sft_weight}};
}

inline RLHyperparams rl_hyperparams_from_json(const nlohmann::json& j) {
  const std::string where = "rl";
  iod::require_object(j, where);
  iod::reject_unknown_keys(j,
                           {"beta", "epsilon_clip", "epsilon_std", "lr_start", "lr_end",
                            "total_steps", "early_stop_step", "sft_weight"},
                           where);
  RLHyperparams rl;
  rl.beta = iod::get_number(j, "beta", where);
  rl.epsilon_clip = iod::get_number(j, "epsilon_clip", where);
  rl.epsilon_std = iod::get_number(j, "epsilon_std", where);
  rl.lr_start = iod::get_number(j, "lr_start", where);
  rl.lr_end = iod::get_number(j, "lr_end", where);
  rl.total_steps = iod::get_count(j, "total_steps", where);
  rl.early_stop_step = iod::get_count(j, "early_stop_step", where);
  rl.sft_weight = iod::get_number(j, "sft_weight", where);
  return rl;
}

inline nlohmann::json to_json(const ArenaSpec& a) {
  nlohmann::json styles = nlohmann::json::array();
  for (const ArenaStyle& s : a.styles) styles.push_back(s.obfuscation);
  return {{"topics", a.topics}, {"style_obfuscations", styles}, {"rng_seed", a.rng_seed}};
}

inline ArenaSpec arena_spec_from_json(const nlohmann::json& j) {
  const std::string where = "arena";
  iod::require_object(j, where);
  iod::reject_unknown_keys(j, {"topics", "style_obfuscations", "rng_seed"}, where);
  ArenaSpec a;
  a.topics = iod::get_count(j, "topics", where);
  a.rng_seed = iod::get_count(j, "rng_seed", where);
  const nlohmann::json& styles = iod::require_key(j, "style_obfuscations", where);
  if (!styles.is_array()) raise(Errc::config, where + ": 'style_obfuscations' must be an array");
  a.styles.clear();
  for (const nlohmann::json& s : styles) {
    if (!s.is_number())
      raise(Errc::config, where + ": 'style_obfuscations' entries must be numbers");
    a.styles.push_back({s.get<double>()});
  }
  return a;
}

inline nlohmann::json to_json(const CotTemplateConfig& c) {
  return {{"think_open", c.think_open},     {"think_close", c.think_close},
          {"answer_open", c.answer_open},   {"answer_close", c.answer_close},
          {"prefill_think", c.prefill_think}, {"strict", c.strict}};
}

inline CotTemplateConfig cot_config_from_json(const nlohmann::json& j) {
  const std::string where = "cot";
  iod::require_object(j, where);
  iod::reject_unknown_keys(
      j, {"think_open", "think_close", "answer_open", "answer_close", "prefill_think", "strict"},
      where);
  CotTemplateConfig c;
  c.think_open = iod::get_string(j, "think_open", where);
  c.think_close = iod::get_string(j, "think_close", where);
  c.answer_open = iod::get_string(j, "answer_open", where);
  c.answer_close = iod::get_string(j, "answer_close", where);
  c.prefill_think = iod::get_bool(j, "prefill_think", where);
  c.strict = iod::get_bool(j, "strict", where);
  return c;
}

// The api key never appears here: endpoints name the environment variable
// that holds it and nothing else.
inline nlohmann::json to_json(const EndpointConfig& e) {
  return {{"base_url", e.base_url},
          {"model_name", e.model_name},
          {"api_key_env", e.api_key_env},
          {"timeout_seconds", e.timeout_seconds},
          {"max_retries", e.max_retries},
          {"max_in_flight", e.max_in_flight},
          {"temperature", e.temperature},
          {"max_tokens", e.max_tokens},
          {"classify_truncate_tokens", e.classify_truncate_tokens},
          {"backoff_base_ms", e.backoff_base_ms}};
}

inline EndpointConfig endpoint_config_from_json(const nlohmann::json& j,
                                                const std::string& where) {
  iod::require_object(j, where);
  iod::reject_unknown_keys(j,
                           {"base_url", "model_name", "api_key_env", "timeout_seconds",
                            "max_retries", "max_in_flight", "temperature", "max_tokens",
                            "classify_truncate_tokens", "backoff_base_ms"},
                           where);
  EndpointConfig e;
  e.base_url = iod::get_string(j, "base_url", where);
  e.model_name = iod::get_string(j, "model_name", where);
  e.api_key_env = iod::get_string(j, "api_key_env", where);
  e.timeout_seconds = iod::get_number(j, "timeout_seconds", where);
  e.max_retries = static_cast<int>(iod::get_count(j, "max_retries", where));
  e.max_in_flight = static_cast<int>(iod::get_count(j, "max_in_flight", where));
  e.temperature = iod::get_number(j, "temperature", where);
  e.max_tokens = static_cast<int>(iod::get_count(j, "max_tokens", where));
  e.classify_truncate_tokens =
      static_cast<int>(iod::get_count(j, "classify_truncate_tokens", where));
  e.backoff_base_ms = static_cast<int>(iod::get_count(j, "backoff_base_ms", where));
  validate(e);
  return e;
}

// A full run description: the trainer config plus the artifact-level knobs
// (determinism, remote endpoints, file locations).
struct RunConfig {
  TrainRunConfig train;
  bool deterministic = false;
  std::optional<EndpointConfig> chat_endpoint;
  std::optional<EndpointConfig> judge_endpoint;
  std::optional<EndpointConfig> embedding_endpoint;
  std::string seeds_path;  // optional external seed pool, JSONL
  std::string out_dir = "runs";
};

inline nlohmann::json to_json(const RunConfig& cfg) {
  nlohmann::json j = {{"schema_version", schema_version_string()},
                      {"mode", to_string(cfg.train.mode)},
                      {"conditioning", to_string(cfg.train.conditioning)},
                      {"deterministic", cfg.deterministic},
                      {"rng_seed", cfg.train.rng_seed},
                      {"cot_enabled", cfg.train.cot_enabled},
                      {"sft_enabled", cfg.train.sft_enabled},
                      {"exact_kl", cfg.train.exact_kl},
                      {"rollout_batch", cfg.train.rollout_batch},
                      {"minibatch", cfg.train.minibatch},
                      {"accumulation_steps", cfg.train.accumulation_steps},
                      {"eval_every", cfg.train.eval_every},
                      {"eval_rollouts_per_seed", cfg.train.eval_rollouts_per_seed},
                      {"train_seeds_per_cell", cfg.train.train_seeds_per_cell},
                      {"holdout_seeds_per_cell", cfg.train.holdout_seeds_per_cell},
                      {"rewards", to_json(cfg.train.rewards)},
                      {"rl", to_json(cfg.train.rl)},
                      {"arena", to_json(cfg.train.arena)},
                      {"cot", to_json(cfg.train.cot)},
                      {"paths", {{"seeds", cfg.seeds_path}, {"out_dir", cfg.out_dir}}}};
  if (cfg.chat_endpoint || cfg.judge_endpoint || cfg.embedding_endpoint) {
    nlohmann::json eps = nlohmann::json::object();
    if (cfg.chat_endpoint) eps["chat"] = to_json(*cfg.chat_endpoint);
    if (cfg.judge_endpoint) eps["judge"] = to_json(*cfg.judge_endpoint);
    if (cfg.embedding_endpoint) eps["embedding"] = to_json(*cfg.embedding_endpoint);
    j["endpoints"] = std::move(eps);
  }
  return j;
}

inline RunConfig run_config_from_json(const nlohmann::json& j) {
  const std::string where = "run config";
  iod::require_object(j, where);
  check_schema_version(j, where);
  iod::reject_unknown_keys(
      j, {"schema_version", "mode",          "conditioning",       "deterministic",
          "rng_seed",       "cot_enabled",   "sft_enabled",        "exact_kl",
          "rollout_batch",  "minibatch",     "accumulation_steps", "eval_every",
          "eval_rollouts_per_seed",          "train_seeds_per_cell",
          "holdout_seeds_per_cell",          "rewards",            "rl",
          "arena",          "cot",           "paths",              "endpoints"},
      where);

  RunConfig cfg;
  cfg.train.mode = training_mode_from_string(iod::get_string(j, "mode", where));
  cfg.train.conditioning =
      j.contains("conditioning")
          ? role_conditioning_from_string(iod::get_string(j, "conditioning", where))
          : (cfg.train.mode == TrainingMode::self_play ? RoleConditioning::shared
                                                       : RoleConditioning::per_role);
  cfg.train.rng_seed = iod::get_count(j, "rng_seed", where);
  if (j.contains("deterministic")) cfg.deterministic = iod::get_bool(j, "deterministic", where);
  if (j.contains("cot_enabled")) cfg.train.cot_enabled = iod::get_bool(j, "cot_enabled", where);
  if (j.contains("sft_enabled")) cfg.train.sft_enabled = iod::get_bool(j, "sft_enabled", where);
  if (j.contains("exact_kl")) cfg.train.exact_kl = iod::get_bool(j, "exact_kl", where);
  if (j.contains("rollout_batch"))
    cfg.train.rollout_batch = iod::get_count(j, "rollout_batch", where);
  if (j.contains("minibatch")) cfg.train.minibatch = iod::get_count(j, "minibatch", where);
  if (j.contains("accumulation_steps"))
    cfg.train.accumulation_steps = iod::get_count(j, "accumulation_steps", where);
  if (j.contains("eval_every")) cfg.train.eval_every = iod::get_count(j, "eval_every", where);
  if (j.contains("eval_rollouts_per_seed"))
    cfg.train.eval_rollouts_per_seed = iod::get_count(j, "eval_rollouts_per_seed", where);
  if (j.contains("train_seeds_per_cell"))
    cfg.train.train_seeds_per_cell = iod::get_count(j, "train_seeds_per_cell", where);
  if (j.contains("holdout_seeds_per_cell"))
    cfg.train.holdout_seeds_per_cell = iod::get_count(j, "holdout_seeds_per_cell", where);
  if (j.contains("rewards")) cfg.train.rewards = reward_config_from_json(j["rewards"]);
  if (j.contains("rl")) cfg.train.rl = rl_hyperparams_from_json(j["rl"]);
  if (j.contains("arena")) cfg.train.arena = arena_spec_from_json(j["arena"]);
  if (j.contains("cot")) cfg.train.cot = cot_config_from_json(j["cot"]);
  if (j.contains("paths")) {
    const nlohmann::json& p = j["paths"];
    iod::require_object(p, "paths");
    iod::reject_unknown_keys(p, {"seeds", "out_dir"}, "paths");
    if (p.contains("seeds")) cfg.seeds_path = iod::get_string(p, "seeds", "paths");
    if (p.contains("out_dir")) cfg.out_dir = iod::get_string(p, "out_dir", "paths");
  }
  if (j.contains("endpoints")) {
    const nlohmann::json& eps = j["endpoints"];
    iod::require_object(eps, "endpoints");
    iod::reject_unknown_keys(eps, {"chat", "judge", "embedding"}, "endpoints");
    if (eps.contains("chat"))
      cfg.chat_endpoint = endpoint_config_from_json(eps["chat"], "endpoints.chat");
    if (eps.contains("judge"))
      cfg.judge_endpoint = endpoint_config_from_json(eps["judge"], "endpoints.judge");
    if (eps.contains("embedding"))
      cfg.embedding_endpoint = endpoint_config_from_json(eps["embedding"], "endpoints.embedding");
  }
  cfg.train.validate();
  if (cfg.deterministic && (cfg.chat_endpoint || cfg.judge_endpoint || cfg.embedding_endpoint))
    raise(Errc::config, "deterministic runs cannot use remote endpoints");
  return cfg;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(Errc::io, "cannot read config " + path);
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) raise(Errc::config, "config " + path + " is not valid JSON");
  return run_config_from_json(j);
}

inline nlohmann::json to_json(const MetricsRecord& m) {
  nlohmann::json j = {{"schema_version", schema_version_string()},
                      {"step", m.step},
                      {"learning_rate", m.learning_rate},
                      {"episodes", m.episodes},
                      {"attack_success_rate", m.attack_success_rate},
                      {"response_harmlessness", m.response_harmlessness},
                      {"defender_refusal_winrate", m.defender_refusal_winrate},
                      {"attacker_refusal_winrate", m.attacker_refusal_winrate},
                      {"cot_violation_rate", m.cot_violation_rate},
                      {"mean_defender_reward", m.mean_defender_reward}};
  auto put = [&j](const char* key, const std::optional<double>& v) {
    if (v) j[key] = *v;
  };
  put("revision_faithfulness", m.revision_faithfulness);
  put("self_bleu", m.self_bleu);
  put("mean_pairwise_similarity", m.mean_pairwise_similarity);
  put("diversity", m.diversity);
  put("mean_attacker_reward", m.mean_attacker_reward);
  return j;
}

inline nlohmann::json to_json(const RewardBreakdown& r) {
  return {{"res_harm", r.res_harm},
          {"res_refusal", r.res_refusal},
          {"format", r.format},
          {"revision", r.revision},
          {"total", r.total}};
}

inline nlohmann::json to_json(const Move& m) {
  nlohmann::json j = {{"answer", m.answer}, {"format_ok", m.format_ok}};
  j["cot"] = m.cot ? nlohmann::json(*m.cot) : nlohmann::json(nullptr);
  return j;
}

// One episode per JSONL line. CoT spans are persisted: they are hidden from
// the opponent during play, not from whoever reads the run afterwards.
inline nlohmann::json to_json(const GameTranscript& t) {
  nlohmann::json j = {{"schema_version", schema_version_string()},
                      {"episode_id", t.episode_id},
                      {"step", t.step},
                      {"seed",
                       {{"id", t.seed.id},
                        {"text", t.seed.text},
                        {"label", to_string(t.seed.label)},
                        {"mode", to_string(t.seed.mode)}}},
                      {"defender", to_json(t.defender_move)},
                      {"verdict",
                       {{"q_harm", t.verdict.q_harm},
                        {"res_harm", t.verdict.res_harm},
                        {"res_refuse", t.verdict.res_refuse}}},
                      {"ts", t.created_at}};
  if (t.attacker_move) j["attacker"] = to_json(*t.attacker_move);
  nlohmann::json rewards = {{"defender", to_json(t.rewards.defender)}};
  if (t.rewards.attacker) rewards["attacker"] = to_json(*t.rewards.attacker);
  j["rewards"] = std::move(rewards);
  return j;
}

// Newline-delimited JSON sink. nlohmann::json orders keys, so a fixed record
// sequence serializes to identical bytes run over run.
class JsonlWriter {
 public:
  explicit JsonlWriter(const std::string& path) : path_(path), out_(path, std::ios::trunc) {
    if (!out_) raise(Errc::io, "cannot write " + path);
  }

  void write(const nlohmann::json& j) {
    out_ << j.dump() << '\n';
    if (!out_) raise(Errc::io, "write failed: " + path_);
  }

  void close() {
    if (out_.is_open() && !out_.flush()) raise(Errc::io, "flush failed: " + path_);
    out_.close();
  }

 private:
  std::string path_;
  std::ofstream out_;
};

// Seed pools are JSONL, one {"text", "label"} object per line. Errors name
// the offending line.
inline std::vector<SeedPrompt> load_seed_prompts(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(Errc::io, "cannot read seeds " + path);
  std::vector<SeedPrompt> seeds;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const std::string where = "seeds line " + std::to_string(lineno);
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) raise(Errc::data, where + ": not valid JSON");
    if (!j.is_object()) raise(Errc::data, where + ": expected an object");
    for (const auto& [key, value] : j.items())
      if (key != "text" && key != "label") raise(Errc::data, where + ": unknown key '" + key + "'");
    if (!j.contains("text") || !j["text"].is_string())
      raise(Errc::data, where + ": missing string 'text'");
    if (!j.contains("label") || !j["label"].is_string())
      raise(Errc::data, where + ": missing string 'label'");
    SeedPrompt s;
    s.id = "seed-" + std::to_string(lineno);
    s.text = j["text"].get<std::string>();
    if (s.text.empty()) raise(Errc::data, where + ": empty text");
    try {
      s.label = label_from_string(j["label"].get<std::string>());
    } catch (const Error& e) {
      raise(Errc::data, where + ": " + e.what());
    }
    seeds.push_back(std::move(s));
  }
  if (seeds.empty()) raise(Errc::empty_input, "seeds file " + path + " has no entries");
  return seeds;
}

}  // namespace redgame
