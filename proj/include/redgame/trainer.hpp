#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "redgame/arena.hpp"
#include "redgame/arena_policy.hpp"
#include "redgame/cot.hpp"
#include "redgame/episode.hpp"
#include "redgame/errors.hpp"
#include "redgame/metrics.hpp"
#include "redgame/policy.hpp"
#include "redgame/prompts.hpp"
#include "redgame/reward.hpp"
#include "redgame/rl.hpp"
#include "redgame/rng.hpp"
#include "redgame/types.hpp"

namespace redgame {

// Full description of one training run on the symbolic arena.
struct TrainRunConfig {
  TrainingMode mode = TrainingMode::self_play;
  RoleConditioning conditioning = RoleConditioning::shared;
  bool cot_enabled = false;
  bool sft_enabled = false;
  bool exact_kl = false;  // per-context categorical KL instead of the sampled estimate
  std::size_t rollout_batch = 64;      // episodes generated per step
  std::size_t minibatch = 16;          // experiences per accumulation chunk
  std::size_t accumulation_steps = 4;  // chunks folded into one optimizer step
  std::size_t eval_every = 10;
  std::size_t eval_rollouts_per_seed = 8;
  std::size_t train_seeds_per_cell = 2;
  std::size_t holdout_seeds_per_cell = 1;
  std::uint64_t rng_seed = 0;
  ArenaSpec arena;
  RewardConfig rewards;
  RLHyperparams rl;
  CotTemplateConfig cot;

  std::size_t run_steps() const {
    return rl.early_stop_step ? std::min(rl.early_stop_step, rl.total_steps) : rl.total_steps;
  }

  void validate() const {
    arena.validate();
    rewards.validate();
    rl.validate();
    cot.validate();
    if (rollout_batch < 4) raise(Errc::config, "trainer.rollout_batch must be >= 4");
    if (minibatch == 0) raise(Errc::config, "trainer.minibatch must be >= 1");
    if (accumulation_steps == 0) raise(Errc::config, "trainer.accumulation_steps must be >= 1");
    if (eval_every == 0) raise(Errc::config, "trainer.eval_every must be >= 1");
    if (eval_rollouts_per_seed == 0)
      raise(Errc::config, "trainer.eval_rollouts_per_seed must be >= 1");
    if (train_seeds_per_cell == 0 || holdout_seeds_per_cell == 0)
      raise(Errc::config, "trainer seed pools need at least one seed per cell");
    if (mode != TrainingMode::self_play && conditioning != RoleConditioning::per_role)
      raise(Errc::config, "single-role training requires per_role conditioning");
  }
};

// One holdout evaluation snapshot. Optional fields stay empty when the run
// produces no data for them (no revised attacks under defender_only, fewer
// than two attacks for the diversity metrics).
struct MetricsRecord {
  std::uint64_t step = 0;
  double learning_rate = 0.0;
  std::size_t episodes = 0;
  double attack_success_rate = 0.0;
  double response_harmlessness = 0.0;
  double defender_refusal_winrate = 0.0;
  double attacker_refusal_winrate = 0.0;
  std::optional<double> revision_faithfulness;
  double cot_violation_rate = 0.0;
  std::optional<double> self_bleu;
  std::optional<double> mean_pairwise_similarity;
  std::optional<double> diversity;
  std::optional<double> mean_attacker_reward;
  double mean_defender_reward = 0.0;
};

// One credited decision: the token a role sampled in its context, with the
// behavior logprob, episode reward, and reference KL it carries into the
// surrogate loss.
struct Experience {
  Role role = Role::defender;
  std::string context;
  std::string token;
  double logprob_old = 0.0;
  double reward = 0.0;
  double kl = 0.0;
  double advantage = 0.0;
  std::string episode_id;
};

// Which roles a mode updates. The other role still acts, but its draws never
// become experiences and its parameters never receive gradient.
inline bool trains_attacker(TrainingMode m) { return m != TrainingMode::defender_only; }
inline bool trains_defender(TrainingMode m) { return m != TrainingMode::attacker_only; }

inline Experience make_experience(Role role, const TokenSample& sample, double reward,
                                  const std::string& episode_id, const TabularPolicy& current,
                                  const TabularPolicy& reference, bool exact_kl) {
  if (sample.tokens.size() != 1)
    raise(Errc::unsupported, "tabular training expects single-token moves");
  Experience x;
  x.role = role;
  x.context = sample.context_id;
  x.token = sample.tokens.front();
  x.logprob_old = sample.logprobs.front();
  x.reward = reward;
  x.kl = exact_kl ? categorical_kl(current.probs(x.context), reference.probs(x.context))
                  : token_kl({x.logprob_old}, {reference.logprob1(x.context, x.token)})[0];
  x.episode_id = episode_id;
  return x;
}

inline std::vector<Experience> collect_experiences(const std::vector<GameTranscript>& batch,
                                                   TrainingMode mode,
                                                   const TabularPolicy& current,
                                                   const TabularPolicy& reference,
                                                   bool exact_kl) {
  std::vector<Experience> xs;
  xs.reserve(batch.size() * 2);
  for (const GameTranscript& t : batch) {
    if (trains_attacker(mode) && t.attacker_sample)
      xs.push_back(make_experience(Role::attacker, *t.attacker_sample, t.rewards.attacker->total,
                                   t.episode_id, current, reference, exact_kl));
    if (trains_defender(mode))
      xs.push_back(make_experience(Role::defender, t.defender_sample, t.rewards.defender.total,
                                   t.episode_id, current, reference, exact_kl));
  }
  return xs;
}

// Raw advantage per experience, then normalization with statistics taken over
// each role separately.
inline void assign_advantages(std::vector<Experience>& xs, double beta, double eps_std) {
  for (Role role : {Role::attacker, Role::defender}) {
    AdvantageBatch ab;
    ab.role = role;
    std::vector<std::size_t> where;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      if (xs[i].role != role) continue;
      where.push_back(i);
      double raw = reward_to_go_advantages(xs[i].reward, {xs[i].kl}, beta)[0];
      ab.entries.push_back({xs[i].episode_id, 0, xs[i].kl, raw, 0.0});
    }
    if (ab.entries.empty()) continue;
    normalize_advantages(ab, eps_std);
    for (std::size_t k = 0; k < where.size(); ++k)
      xs[where[k]].advantage = ab.entries[k].normalized;
  }
}

// Deals the shuffled per-role experience queues into M chunks of K, with role
// counts proportional to their share of the batch. Consumption is without
// replacement across the whole pass, and every chunk mixes roles whenever the
// smaller role contributes at least one experience per chunk.
inline std::vector<std::vector<std::size_t>> plan_minibatches(const std::vector<Experience>& xs,
                                                              std::size_t k, std::size_t m,
                                                              std::uint64_t rng_seed,
                                                              std::uint64_t step) {
  if (k == 0 || m == 0) raise(Errc::config, "minibatch and accumulation_steps must be >= 1");
  const std::size_t want = k * m;
  if (want > xs.size())
    raise(Errc::config, "accumulation pass needs " + std::to_string(want) +
                            " experiences, step produced " + std::to_string(xs.size()));
  std::vector<std::size_t> atk, def;
  for (std::size_t i = 0; i < xs.size(); ++i)
    (xs[i].role == Role::attacker ? atk : def).push_back(i);
  Rng rng = Rng::stream(rng_seed, {rng_tag::kMinibatch, step});
  rng.shuffle(atk);
  rng.shuffle(def);

  std::size_t take_atk = (want * atk.size() + xs.size() / 2) / xs.size();
  take_atk = std::min(take_atk, atk.size());
  if (want - take_atk > def.size()) take_atk = want - def.size();

  std::vector<std::vector<std::size_t>> chunks(m);
  std::size_t ai = 0, di = 0;
  for (std::size_t c = 0; c < m; ++c) {
    std::size_t a_c = take_atk / m + (c < take_atk % m ? 1 : 0);
    chunks[c].reserve(k);
    for (std::size_t j = 0; j < a_c; ++j) chunks[c].push_back(atk[ai++]);
    for (std::size_t j = a_c; j < k; ++j) chunks[c].push_back(def[di++]);
  }
  return chunks;
}

// Attack strings carry their fields pipe-separated; the lexical metrics want
// whitespace tokens.
inline std::string attack_metric_text(std::string text) {
  for (char& c : text) {
    if (c == '|') c = ' ';
  }
  return text;
}

// Runs every holdout seed eval_rollouts times without touching parameters and
// reduces the transcripts to one MetricsRecord. The rng stream is independent
// of the training streams, so evaluation cannot perturb training.
inline MetricsRecord evaluate_holdout(Policy& attacker, Policy& defender,
                                      const std::vector<SeedPrompt>& holdout, const Judge& judge,
                                      const GameBinding& binding, const Embedder& embedder,
                                      const EpisodeConfig& ecfg, std::size_t rollouts_per_seed,
                                      std::uint64_t rng_seed, std::uint64_t step,
                                      double learning_rate) {
  if (holdout.empty()) raise(Errc::empty_input, "holdout evaluation with no seeds");
  if (rollouts_per_seed == 0) raise(Errc::config, "eval_rollouts_per_seed must be >= 1");

  // Diversity is read from a small fixed generation budget per harmful seed.
  // Harmful requests are where attack variety matters; benign-seed revisions
  // concentrate on the same no-op edits under every policy and would drown
  // the signal. The attack space is symbolic and tiny, so duplicates are the
  // signal; a large sample would push Self-BLEU onto its ceiling.
  constexpr std::size_t kDiversityRollouts = 4;

  std::vector<EpisodeOutcome> outcomes;
  std::vector<std::string> attacks;
  double attacker_reward = 0.0, defender_reward = 0.0;
  std::size_t attacker_n = 0, moves = 0, violations = 0;
  for (std::size_t s = 0; s < holdout.size(); ++s)
    for (std::size_t r = 0; r < rollouts_per_seed; ++r) {
      Rng rng = Rng::stream(rng_seed, {rng_tag::kEval, step, s, r});
      EpisodeTag tag;
      tag.id = "eval-" + std::to_string(step) + "-" + std::to_string(s) + "-" + std::to_string(r);
      tag.step = step;
      GameTranscript t = run_episode(holdout[s], attacker, defender, judge, binding, ecfg, rng, tag);
      outcomes.push_back({t.seed.label, t.seed.mode, t.verdict});
      ++moves;
      if (!t.defender_move.format_ok) ++violations;
      defender_reward += t.rewards.defender.total;
      if (t.attacker_move) {
        ++moves;
        if (!t.attacker_move->format_ok) ++violations;
        attacker_reward += t.rewards.attacker->total;
        ++attacker_n;
        if (r < kDiversityRollouts && t.seed.label == Label::harmful)
          attacks.push_back(attack_metric_text(t.attack_text));
      }
    }

  SafetyRates rates = safety_rates(outcomes);
  MetricsRecord rec;
  rec.step = step;
  rec.learning_rate = learning_rate;
  rec.episodes = outcomes.size();
  rec.attack_success_rate = rates.asr;
  rec.response_harmlessness = rates.harmlessness;
  rec.defender_refusal_winrate = rates.refusal_winrate;
  rec.attacker_refusal_winrate = 1.0 - rates.refusal_winrate;
  rec.revision_faithfulness = rates.revision_faithfulness;
  rec.cot_violation_rate = static_cast<double>(violations) / static_cast<double>(moves);
  if (attacks.size() >= 2) {
    // Attack strings are three tokens, so the trigram is the one n-gram that
    // distinguishes whole texts; shorter orders saturate across style variants.
    rec.self_bleu = self_bleu(attacks, 3);
    std::vector<std::vector<double>> emb(attacks.size());
    for (std::size_t i = 0; i < attacks.size(); ++i) emb[i] = embedder.embed(attacks[i]);
    DiversityResult d = pairwise_diversity(emb);
    rec.mean_pairwise_similarity = d.mean_similarity;
    rec.diversity = d.diversity;
  }
  if (attacker_n)
    rec.mean_attacker_reward = attacker_reward / static_cast<double>(attacker_n);
  rec.mean_defender_reward = defender_reward / static_cast<double>(outcomes.size());
  return rec;
}

struct TrainCallbacks {
  std::function<void(const MetricsRecord&)> on_metrics;
  std::function<void(const GameTranscript&)> on_transcript;
};

struct TrainResult {
  TabularPolicy policy;     // final parameters
  TabularPolicy reference;  // frozen initial snapshot, the KL anchor
  std::vector<MetricsRecord> history;
};

// Drives the rollout -> advantage -> accumulate -> step loop plus periodic
// holdout evaluation. Single-threaded; every random draw comes from a stream
// derived from config.rng_seed, so a config fixes the run bit-for-bit.
class Trainer {
 public:
  explicit Trainer(TrainRunConfig cfg)
      : cfg_(std::move(cfg)),
        binding_(cfg_.arena, cfg_.conditioning),
        judge_(cfg_.arena),
        policy_(build_arena_policy(cfg_.arena, cfg_.conditioning)),
        reference_(policy_) {
    cfg_.validate();
    std::vector<SeedPrompt> train =
        generate_arena_seeds(cfg_.arena, cfg_.train_seeds_per_cell, "train-");
    for (SeedPrompt& s : train)
      (s.label == Label::harmful ? harmful_ : benign_).push_back(std::move(s));
    holdout_ = generate_arena_seeds(cfg_.arena, cfg_.holdout_seeds_per_cell, "hold-");
    SeedMode holdout_mode = trains_attacker(cfg_.mode) ? SeedMode::to_revise : SeedMode::as_is;
    for (SeedPrompt& s : holdout_) s.mode = holdout_mode;
  }

  const TrainRunConfig& config() const { return cfg_; }
  const TabularPolicy& policy() const { return policy_; }
  const TabularPolicy& reference() const { return reference_; }
  const std::vector<SeedPrompt>& holdout() const { return holdout_; }

  // One optimizer step: compose seeds, roll out, credit experiences,
  // accumulate the clipped surrogate (and SFT when enabled), apply.
  void train_step(std::uint64_t step) {
    const EpisodeConfig ecfg{cfg_.cot, cfg_.rewards, cfg_.cot_enabled};
    std::vector<SeedPrompt> seeds =
        compose_rl_batch(harmful_, benign_, cfg_.rollout_batch, cfg_.mode,
                         mix64(cfg_.rng_seed ^ mix64(step + 1)));

    // The live table doubles as the generation snapshot: nothing updates it
    // until the single apply at the end of the step.
    std::vector<GameTranscript> batch;
    batch.reserve(seeds.size());
    std::size_t failures = 0;
    for (std::size_t i = 0; i < seeds.size(); ++i) {
      Rng rng = Rng::stream(cfg_.rng_seed, {rng_tag::kEpisode, step, i});
      EpisodeTag tag;
      tag.id = "s" + std::to_string(step) + "-e" + std::to_string(i);
      tag.step = step;
      tag.created_at = static_cast<std::int64_t>(ticks_++);
      try {
        batch.push_back(
            run_episode(seeds[i], policy_, play_defender(), judge_, binding_, ecfg, rng, tag));
      } catch (const Error&) {
        ++failures;
      }
    }
    if (failures * 2 > seeds.size())
      raise(Errc::data, "step " + std::to_string(step) + " aborted: " + std::to_string(failures) +
                            "/" + std::to_string(seeds.size()) + " episodes failed");
    if (callbacks_.on_transcript)
      for (const GameTranscript& t : batch) callbacks_.on_transcript(t);

    std::vector<Experience> xs =
        collect_experiences(batch, cfg_.mode, policy_, reference_, cfg_.exact_kl);
    assign_advantages(xs, cfg_.rl.beta, cfg_.rl.epsilon_std);
    std::vector<std::vector<std::size_t>> chunks =
        plan_minibatches(xs, cfg_.minibatch, cfg_.accumulation_steps, cfg_.rng_seed, step);

    // Each chunk contributes its mean-loss gradient and the sums accumulate
    // into the single optimizer step, so one experience weighs 1/K.
    GradientTable grad = policy_.zero_gradient();
    for (const std::vector<std::size_t>& chunk : chunks) {
      std::vector<double> lp_cur(chunk.size()), lp_old(chunk.size()), adv(chunk.size());
      for (std::size_t j = 0; j < chunk.size(); ++j) {
        const Experience& x = xs[chunk[j]];
        lp_cur[j] = policy_.logprob1(x.context, x.token);
        lp_old[j] = x.logprob_old;
        adv[j] = x.advantage;
      }
      LossGrad lg = clipped_surrogate_loss(lp_cur, lp_old, adv, cfg_.rl.epsilon_clip);
      for (std::size_t j = 0; j < chunk.size(); ++j)
        policy_.accumulate_logprob_gradient(grad, xs[chunk[j]].context, xs[chunk[j]].token,
                                            lg.grad[j]);
    }

    // SFT co-training anchors the defender's earnest compliance on benign
    // unrevised traffic. It trains defender parameters, so it stays off in
    // attacker_only runs (the defender is frozen there).
    if (cfg_.sft_enabled && trains_defender(cfg_.mode) && cfg_.rl.sft_weight > 0.0) {
      std::vector<std::string> contexts;
      for (const GameTranscript& t : batch)
        if (t.seed.label == Label::benign && t.seed.mode == SeedMode::as_is)
          contexts.push_back(t.defender_sample.context_id);
      if (!contexts.empty()) {
        const std::string target = to_string(DefenseAction::safe_comply);
        std::vector<double> lp(contexts.size());
        for (std::size_t i = 0; i < contexts.size(); ++i)
          lp[i] = policy_.logprob1(contexts[i], target);
        LossGrad lg = sft_loss(lp);
        for (std::size_t i = 0; i < contexts.size(); ++i)
          policy_.accumulate_logprob_gradient(grad, contexts[i], target,
                                              lg.grad[i] * cfg_.rl.sft_weight);
      }
    }

    policy_.apply_gradient_step(
        grad, cosine_lr(step, cfg_.rl.total_steps, cfg_.rl.lr_start, cfg_.rl.lr_end));
  }

  MetricsRecord evaluate(std::uint64_t step) {
    const EpisodeConfig ecfg{cfg_.cot, cfg_.rewards, cfg_.cot_enabled};
    return evaluate_holdout(policy_, play_defender(), holdout_, judge_, binding_, embedder_,
                            ecfg, cfg_.eval_rollouts_per_seed, cfg_.rng_seed, step,
                            cosine_lr(step, cfg_.rl.total_steps, cfg_.rl.lr_start, cfg_.rl.lr_end));
  }

  TrainResult run(const TrainCallbacks& callbacks = {}) {
    callbacks_ = callbacks;
    std::vector<MetricsRecord> history;
    auto emit = [&](std::uint64_t step) {
      MetricsRecord rec = evaluate(step);
      history.push_back(rec);
      if (callbacks_.on_metrics) callbacks_.on_metrics(rec);
    };
    emit(0);
    const std::size_t steps = cfg_.run_steps();
    for (std::uint64_t step = 0; step < steps; ++step) {
      train_step(step);
      if ((step + 1) % cfg_.eval_every == 0 || step + 1 == steps) emit(step + 1);
    }
    callbacks_ = {};
    return {policy_, reference_, std::move(history)};
  }

 private:
  // attacker_only pits the live attacker against the frozen initial defender.
  TabularPolicy& play_defender() {
    return cfg_.mode == TrainingMode::attacker_only ? reference_ : policy_;
  }

  TrainRunConfig cfg_;
  ArenaBinding binding_;
  ArenaJudge judge_;
  TabularPolicy policy_;
  TabularPolicy reference_;
  HashedNgramEmbedder embedder_;
  std::vector<SeedPrompt> harmful_, benign_, holdout_;
  TrainCallbacks callbacks_;
  std::uint64_t ticks_ = 0;
};

struct SftExample {
  std::string prompt;
  std::string target;  // tagged think-span + answer-span text
};

struct SftDataset {
  std::vector<SftExample> examples;
  std::size_t dropped = 0;  // judged harmful, or refusing a benign request
  std::size_t failed = 0;   // generation, assembly, or judge errors; skipped
  double drop_rate = 0.0;   // dropped / (attempted - failed)
};

// Distills a chat policy into tagged training pairs: complete the prompt,
// ask again for the reasoning behind the completion, assemble both into the
// tagged format, and keep only examples the judge clears.
inline SftDataset build_sft_dataset(Policy& chat, const std::vector<std::string>& prompts,
                                    const Judge& judge, const CotTemplateConfig& cot,
                                    std::uint64_t rng_seed) {
  cot.validate();
  if (prompts.empty()) raise(Errc::empty_input, "sft dataset from no prompts");
  CotTemplateConfig strict = cot;
  strict.prefill_think = false;

  SftDataset out;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    Rng rng = Rng::stream(rng_seed, {rng_tag::kSft, i});
    try {
      std::string completion = detail::concat_tokens(chat.sample(prompts[i], rng).tokens);
      std::string postfill = render_sft_postfill(prompts[i], completion);
      std::string reasoning = detail::concat_tokens(chat.sample(postfill, rng).tokens);
      std::string target = cot.think_open + reasoning + cot.think_close + cot.answer_open +
                           completion + cot.answer_close;
      if (!parse_cot_output(target, strict).format_ok)
        raise(Errc::parse, "assembled target does not round-trip the tagged format");
      JudgeVerdict v = judge.judge(prompts[i], completion);
      if (v.res_harm || (v.res_refuse && !v.q_harm)) {
        ++out.dropped;
        continue;
      }
      out.examples.push_back({prompts[i], std::move(target)});
    } catch (const Error&) {
      ++out.failed;
    }
  }
  std::size_t attempted = prompts.size() - out.failed;
  if (attempted) out.drop_rate = static_cast<double>(out.dropped) / static_cast<double>(attempted);
  return out;
}

}  // namespace redgame
