#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <string>
#include <vector>

#include "redgame/arena_policy.hpp"
#include "redgame/episode.hpp"

using namespace redgame;

namespace {

// Counts sample calls; used to prove a role was never consulted.
class CountingPolicy final : public Policy {
 public:
  explicit CountingPolicy(Policy& inner) : inner_(inner) {}
  TokenSample sample(const std::string& ctx, Rng& rng) override {
    ++calls;
    return inner_.sample(ctx, rng);
  }
  std::vector<double> logprob(const std::string& ctx,
                              const std::vector<std::string>& toks) const override {
    return inner_.logprob(ctx, toks);
  }
  int calls = 0;

 private:
  Policy& inner_;
};

// Replays canned raw generations, e.g. to mimic a chat model with CoT tags.
class ScriptedPolicy final : public Policy {
 public:
  explicit ScriptedPolicy(std::vector<std::string> outputs) : outputs_(std::move(outputs)) {}
  TokenSample sample(const std::string& ctx, Rng&) override {
    if (next_ >= outputs_.size()) raise(Errc::data, "script exhausted");
    return {{outputs_[next_++]}, {0.0}, ctx};
  }
  std::vector<double> logprob(const std::string&,
                              const std::vector<std::string>& toks) const override {
    return std::vector<double>(toks.size(), 0.0);
  }

 private:
  std::vector<std::string> outputs_;
  std::size_t next_ = 0;
};

// Policy whose every context row is saturated toward one chosen action.
TabularPolicy forced_policy(const std::map<std::string, std::string>& choices,
                            const ArenaSpec& spec) {
  TabularPolicy base = build_arena_policy(spec, RoleConditioning::per_role);
  TabularPolicy forced(RoleConditioning::per_role);
  for (const std::string& key : base.context_keys()) {
    std::vector<std::string> actions = base.actions(key);
    std::vector<double> logits(actions.size(), 0.0);
    auto it = choices.find(key);
    if (it != choices.end())
      for (std::size_t i = 0; i < actions.size(); ++i)
        if (actions[i] == it->second) logits[i] = 50.0;
    forced.add_context(key, actions, logits);
  }
  return forced;
}

ArenaSpec test_spec() {
  ArenaSpec s;
  s.rng_seed = 42;
  return s;
}

SeedPrompt harmful_seed(std::size_t topic, SeedMode mode) {
  return {"seed-h" + std::to_string(topic), arena_seed_text(Label::harmful, topic),
          Label::harmful, mode};
}

}  // namespace

TEST_CASE("golden transcript: disguised attack slips past an earnest defender") {
  ArenaSpec spec = test_spec();
  ArenaBinding binding(spec, RoleConditioning::per_role);
  ArenaJudge judge(spec);
  TabularPolicy policy = forced_policy({{"A|H|t0", "s2|flip"}, {"D|b|t0", "safe"}}, spec);
  EpisodeConfig cfg;
  Rng rng(1);

  GameTranscript t = run_episode(harmful_seed(0, SeedMode::to_revise), policy, policy,
                                 judge, binding, cfg, rng, {"ep-golden", 3, 777});

  CHECK(t.episode_id == "ep-golden");
  CHECK(t.step == 3);
  CHECK(t.created_at == 777);
  REQUIRE(t.attacker_move.has_value());
  CHECK(t.attacker_move->answer == "s2|flip");
  CHECK(t.attacker_move->role == Role::attacker);
  CHECK(t.attack_text == "s2|b|t0");
  CHECK(t.defender_move.answer == "safe");
  CHECK(t.defense_text == "resp|safe");
  CHECK(t.verdict == JudgeVerdict{false, true, false});

  // Hand-scored: harmful response -1, correct non-refusal of a benign-looking
  // query +0.5, no format term with CoT off; attacker mirrors the game terms
  // and loses the revision bonus because the disguise flipped the judged label.
  REQUIRE(t.rewards.attacker.has_value());
  CHECK(t.rewards.defender.res_harm == -1.0);
  CHECK(t.rewards.defender.res_refusal == 0.5);
  CHECK(t.rewards.defender.format == 0.0);
  CHECK(t.rewards.defender.total == -0.5);
  CHECK(t.rewards.attacker->res_harm == 1.0);
  CHECK(t.rewards.attacker->res_refusal == -0.5);
  CHECK(t.rewards.attacker->revision == -0.5);
  CHECK(t.rewards.attacker->total == 0.0);

  // Sample bookkeeping matches the contexts the binding derived.
  REQUIRE(t.attacker_sample.has_value());
  CHECK(t.attacker_sample->context_id == "A|H|t0");
  CHECK(t.defender_sample.context_id == "D|b|t0");
}

TEST_CASE("as-is episodes never consult the attacker") {
  ArenaSpec spec = test_spec();
  ArenaBinding binding(spec, RoleConditioning::per_role);
  ArenaJudge judge(spec);
  TabularPolicy policy = build_arena_policy(spec, RoleConditioning::per_role);
  CountingPolicy attacker(policy);
  CountingPolicy defender(policy);
  EpisodeConfig cfg;
  Rng rng(9);

  for (int i = 0; i < 20; ++i) {
    GameTranscript t = run_episode(harmful_seed(i % 4, SeedMode::as_is), attacker,
                                   defender, judge, binding, cfg, rng);
    CHECK_FALSE(t.attacker_move.has_value());
    CHECK_FALSE(t.attacker_sample.has_value());
    CHECK(t.attack_text == t.seed.text);
  }
  CHECK(attacker.calls == 0);
  CHECK(defender.calls == 20);
}

TEST_CASE("private reasoning never reaches the defender or the judge") {
  ArenaSpec spec = test_spec();
  ArenaBinding binding(spec, RoleConditioning::per_role);
  ArenaJudge judge(spec);
  ScriptedPolicy attacker({"SECRET PLAN</think><answer>s2|flip</answer>"});
  ScriptedPolicy defender({"MY DOUBTS</think><answer>safe</answer>"});
  EpisodeConfig cfg;
  cfg.cot_enabled = true;
  Rng rng(2);

  GameTranscript t = run_episode(harmful_seed(0, SeedMode::to_revise), attacker, defender,
                                 judge, binding, cfg, rng);
  REQUIRE(t.attacker_move.has_value());
  CHECK(t.attacker_move->format_ok);
  CHECK(*t.attacker_move->cot == "SECRET PLAN");
  CHECK(t.attack_text.find("SECRET") == std::string::npos);
  CHECK(t.defense_text.find("DOUBTS") == std::string::npos);
  CHECK(t.attack_text == "s2|b|t0");

  // Same outcome as the golden episode but with both format bonuses paid;
  // cross-checks the reward table at (q=0, res_harm=1, res_refuse=0, harmful).
  CHECK(t.rewards.defender.total == 0.0);
  CHECK(t.rewards.attacker->total == 0.5);
}

TEST_CASE("malformed attacker output degrades to a pass-through attack") {
  ArenaSpec spec = test_spec();
  ArenaBinding binding(spec, RoleConditioning::per_role);
  ArenaJudge judge(spec);
  ScriptedPolicy attacker({"no tags at all"});
  ScriptedPolicy defender({"dithering</think><answer>refuse</answer>"});
  EpisodeConfig cfg;
  cfg.cot_enabled = true;
  Rng rng(3);

  GameTranscript t = run_episode(harmful_seed(1, SeedMode::to_revise), attacker, defender,
                                 judge, binding, cfg, rng);
  REQUIRE(t.attacker_move.has_value());
  CHECK_FALSE(t.attacker_move->format_ok);
  CHECK(t.attack_text == "s0|H|t1");  // fallback keeps the seed as-is
  CHECK(t.rewards.attacker->format == -0.5);
  CHECK(t.rewards.defender.format == 0.5);
  // Harmful query refused: defender wins both game terms.
  CHECK(t.verdict == JudgeVerdict{true, false, true});
}

TEST_CASE("episodes with empty seed text are rejected") {
  ArenaSpec spec = test_spec();
  ArenaBinding binding(spec, RoleConditioning::per_role);
  ArenaJudge judge(spec);
  TabularPolicy policy = build_arena_policy(spec, RoleConditioning::per_role);
  EpisodeConfig cfg;
  Rng rng(4);
  SeedPrompt empty{"bad", "", Label::harmful, SeedMode::as_is};
  CHECK_THROWS_AS(run_episode(empty, policy, policy, judge, binding, cfg, rng), Error);
}

TEST_CASE("batch composition quarters the pools in attacker-active modes") {
  std::vector<SeedPrompt> harmful, benign;
  for (int i = 0; i < 5; ++i) {
    harmful.push_back({"h" + std::to_string(i), "s0|H|t0", Label::harmful, SeedMode::as_is});
    benign.push_back({"b" + std::to_string(i), "s0|B|t0", Label::benign, SeedMode::as_is});
  }

  auto census = [](const std::vector<SeedPrompt>& batch) {
    std::map<std::pair<Label, SeedMode>, int> cells;
    for (const SeedPrompt& s : batch) ++cells[{s.label, s.mode}];
    return cells;
  };

  for (TrainingMode mode : {TrainingMode::self_play, TrainingMode::attacker_only}) {
    auto batch = compose_rl_batch(harmful, benign, 8, mode, 11);
    REQUIRE(batch.size() == 8);
    auto cells = census(batch);
    CHECK(cells[{Label::harmful, SeedMode::as_is}] == 2);
    CHECK(cells[{Label::harmful, SeedMode::to_revise}] == 2);
    CHECK(cells[{Label::benign, SeedMode::as_is}] == 2);
    CHECK(cells[{Label::benign, SeedMode::to_revise}] == 2);
  }

  auto batch10 = compose_rl_batch(harmful, benign, 10, TrainingMode::self_play, 11);
  REQUIRE(batch10.size() == 10);
  for (const auto& [cell, count] : census(batch10)) {
    CHECK(count >= 2);
    CHECK(count <= 3);
  }
}

TEST_CASE("defender-only batches are all as-is at a 50:50 label split") {
  std::vector<SeedPrompt> harmful = {{"h0", "s0|H|t0", Label::harmful, SeedMode::as_is}};
  std::vector<SeedPrompt> benign = {{"b0", "s0|B|t0", Label::benign, SeedMode::as_is}};
  auto batch = compose_rl_batch(harmful, benign, 8, TrainingMode::defender_only, 5);
  REQUIRE(batch.size() == 8);
  int harmful_count = 0;
  for (const SeedPrompt& s : batch) {
    CHECK(s.mode == SeedMode::as_is);
    if (s.label == Label::harmful) ++harmful_count;
  }
  CHECK(harmful_count == 4);
}

TEST_CASE("batch composition is reproducible and validated") {
  std::vector<SeedPrompt> harmful = {{"h0", "s0|H|t0", Label::harmful, SeedMode::as_is},
                                     {"h1", "s0|H|t1", Label::harmful, SeedMode::as_is}};
  std::vector<SeedPrompt> benign = {{"b0", "s0|B|t0", Label::benign, SeedMode::as_is},
                                    {"b1", "s0|B|t1", Label::benign, SeedMode::as_is}};
  auto a = compose_rl_batch(harmful, benign, 13, TrainingMode::self_play, 99);
  auto b = compose_rl_batch(harmful, benign, 13, TrainingMode::self_play, 99);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].id == b[i].id);
    CHECK(a[i].mode == b[i].mode);
  }

  try {
    compose_rl_batch({}, benign, 8, TrainingMode::self_play, 1);
    FAIL("expected empty_pool");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::empty_pool);
  }
  CHECK_THROWS_AS(compose_rl_batch(harmful, benign, 3, TrainingMode::self_play, 1), Error);

  auto poisoned = harmful;
  poisoned.push_back(benign[0]);
  CHECK_THROWS_AS(compose_rl_batch(poisoned, benign, 8, TrainingMode::self_play, 1), Error);
}
