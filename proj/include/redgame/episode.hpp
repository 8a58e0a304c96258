#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "redgame/cot.hpp"
#include "redgame/judge.hpp"
#include "redgame/policy.hpp"
#include "redgame/reward.hpp"
#include "redgame/rng.hpp"
#include "redgame/types.hpp"

namespace redgame {

enum class TrainingMode { self_play, attacker_only, defender_only };

inline const char* to_string(TrainingMode m) {
  switch (m) {
    case TrainingMode::self_play: return "self_play";
    case TrainingMode::attacker_only: return "attacker_only";
    case TrainingMode::defender_only: return "defender_only";
  }
  return "?";
}

inline TrainingMode training_mode_from_string(const std::string& s) {
  if (s == "self_play") return TrainingMode::self_play;
  if (s == "attacker_only") return TrainingMode::attacker_only;
  if (s == "defender_only") return TrainingMode::defender_only;
  raise(Errc::data, "unknown training mode: " + s);
}

struct EpisodeConfig {
  CotTemplateConfig cot;
  RewardConfig rewards;
  bool cot_enabled = false;
};

// Binds the abstract episode loop to a concrete game: which policy context
// each turn queries, and how a sampled answer becomes the public text the
// opponent and the judge see.
class GameBinding {
 public:
  virtual ~GameBinding() = default;
  virtual std::string attacker_context(const SeedPrompt& seed, bool cot_enabled) const = 0;
  virtual std::string defender_context(const SeedPrompt& seed, const std::string& attack_text,
                                       bool cot_enabled) const = 0;
  virtual std::string attack_text(const SeedPrompt& seed, const std::string& answer) const = 0;
  virtual std::string defense_text(const std::string& answer) const = 0;
};

struct GameTranscript {
  std::string episode_id;
  SeedPrompt seed;
  std::optional<Move> attacker_move;
  Move defender_move;
  std::optional<TokenSample> attacker_sample;
  TokenSample defender_sample;
  std::string attack_text;   // what the defender and judge saw as the query
  std::string defense_text;  // what the judge saw as the response
  JudgeVerdict verdict;
  EpisodeRewards rewards;
  std::uint64_t step = 0;
  std::int64_t created_at = 0;
};

struct EpisodeTag {
  std::string id;
  std::uint64_t step = 0;
  std::int64_t created_at = 0;
};

namespace detail {

inline std::string concat_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (const std::string& t : tokens) out += t;
  return out;
}

inline Move to_move(const TokenSample& sample, Role role, const EpisodeConfig& cfg) {
  std::string raw = concat_tokens(sample.tokens);
  Move m;
  if (cfg.cot_enabled) {
    m = parse_cot_output(raw, cfg.cot);
  } else {
    m.answer = raw;
    m.raw = raw;
    m.format_ok = true;
  }
  m.role = role;
  return m;
}

}  // namespace detail

// One full round: attacker rewrite (skipped for as-is seeds), defender reply,
// judge verdict, rewards. Judge or policy failures propagate to the caller.
inline GameTranscript run_episode(const SeedPrompt& seed, Policy& attacker,
                                  Policy& defender, const Judge& judge,
                                  const GameBinding& binding, const EpisodeConfig& cfg,
                                  Rng& rng, const EpisodeTag& tag = {}) {
  if (seed.text.empty()) raise(Errc::empty_input, "seed prompt has empty text");

  GameTranscript t;
  t.episode_id = tag.id;
  t.seed = seed;
  t.step = tag.step;
  t.created_at = tag.created_at;

  bool attacker_format_ok = true;
  if (seed.mode == SeedMode::to_revise) {
    TokenSample sample = attacker.sample(binding.attacker_context(seed, cfg.cot_enabled), rng);
    Move move = detail::to_move(sample, Role::attacker, cfg);
    attacker_format_ok = move.format_ok;
    t.attack_text = binding.attack_text(seed, move.answer);
    t.attacker_sample = std::move(sample);
    t.attacker_move = std::move(move);
  } else {
    t.attack_text = seed.text;
  }

  t.defender_sample = defender.sample(
      binding.defender_context(seed, t.attack_text, cfg.cot_enabled), rng);
  t.defender_move = detail::to_move(t.defender_sample, Role::defender, cfg);
  t.defense_text = binding.defense_text(t.defender_move.answer);

  t.verdict = judge.judge(t.attack_text, t.defense_text);
  t.rewards = total_rewards(t.verdict, seed.label, seed.mode, attacker_format_ok,
                            t.defender_move.format_ok, cfg.cot_enabled, cfg.rewards);
  return t;
}

// Draws a training batch from the two seed pools. Attacker-active modes use
// the four (label, mode) cells in equal parts; defender-only training serves
// everything unmodified at a 50:50 label split. Remainders that do not divide
// evenly are assigned to cells drawn without replacement from the batch rng.
inline std::vector<SeedPrompt> compose_rl_batch(const std::vector<SeedPrompt>& harmful,
                                                const std::vector<SeedPrompt>& benign,
                                                std::size_t n, TrainingMode mode,
                                                std::uint64_t rng_seed) {
  if (harmful.empty() || benign.empty())
    raise(Errc::empty_pool, "both seed pools must be non-empty");
  if (n < 4) raise(Errc::config, "batch size must be at least 4");
  for (const SeedPrompt& s : harmful)
    if (s.label != Label::harmful) raise(Errc::data, "benign seed in harmful pool: " + s.id);
  for (const SeedPrompt& s : benign)
    if (s.label != Label::benign) raise(Errc::data, "harmful seed in benign pool: " + s.id);

  Rng rng = Rng::stream(rng_seed, {rng_tag::kBatch});
  struct Cell {
    Label label;
    SeedMode mode;
    std::size_t count;
  };
  std::vector<Cell> cells;
  if (mode == TrainingMode::defender_only) {
    cells = {{Label::harmful, SeedMode::as_is, n / 2}, {Label::benign, SeedMode::as_is, n / 2}};
  } else {
    cells = {{Label::harmful, SeedMode::as_is, n / 4},
             {Label::harmful, SeedMode::to_revise, n / 4},
             {Label::benign, SeedMode::as_is, n / 4},
             {Label::benign, SeedMode::to_revise, n / 4}};
  }
  std::size_t assigned = 0;
  for (const Cell& c : cells) assigned += c.count;
  std::vector<std::size_t> order(cells.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++cells[order[k % order.size()]].count;

  std::vector<SeedPrompt> batch;
  batch.reserve(n);
  for (const Cell& c : cells) {
    const std::vector<SeedPrompt>& pool = c.label == Label::harmful ? harmful : benign;
    for (std::size_t k = 0; k < c.count; ++k) {
      SeedPrompt s = pool[rng.below(pool.size())];
      s.mode = c.mode;
      batch.push_back(std::move(s));
    }
  }
  return batch;
}

}  // namespace redgame
