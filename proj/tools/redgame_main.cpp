// Command-line front end. `train` drives the optimizer loop and writes run
// artifacts, `verify-nash` fuzzes the safety guarantee on random finite games,
// and `eval` scores a saved checkpoint on fresh holdout rollouts.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "redgame/arena.hpp"
#include "redgame/arena_policy.hpp"
#include "redgame/equilibrium.hpp"
#include "redgame/gateway.hpp"
#include "redgame/io.hpp"
#include "redgame/trainer.hpp"

namespace fs = std::filesystem;
using namespace redgame;

namespace {

// Errors exit with one of four operator-facing statuses: 2 config, 3 data,
// 4 remote, 5 numeric.
int exit_status(Errc c) {
  switch (c) {
    case Errc::config:
    case Errc::version:
    case Errc::unsupported:
      return 2;
    case Errc::remote:
    case Errc::remote_auth:
    case Errc::remote_timeout:
    case Errc::judge_unavailable:
      return 4;
    case Errc::non_finite:
    case Errc::shape_mismatch:
    case Errc::dimension_drift:
      return 5;
    default:
      return 3;
  }
}

const char* category_name(int status) {
  switch (status) {
    case 2: return "config";
    case 4: return "remote";
    case 5: return "numeric";
    default: return "data";
  }
}

// `--config` takes a path or a bare name that resolves under configs/.
std::string resolve_config_path(const std::string& arg) {
  if (fs::exists(arg)) return arg;
  for (const std::string& probe : {arg + ".json", "configs/" + arg + ".json"})
    if (fs::exists(probe)) return probe;
  raise(Errc::config, "config not found: " + arg);
}

// Flags accept hyphenated spellings ("defender-only") alongside the config
// file's underscores.
std::string underscored(std::string s) {
  for (char& c : s)
    if (c == '-') c = '_';
  return s;
}

void apply_mode_override(RunConfig& cfg, const std::string& mode) {
  cfg.train.mode = training_mode_from_string(underscored(mode));
  if (cfg.train.mode != TrainingMode::self_play)
    cfg.train.conditioning = RoleConditioning::per_role;
}

std::function<void(const std::string&)> wire_sink() {
  return [](const std::string& line) { std::cerr << line << '\n'; };
}

struct TrainOpts {
  std::string config;
  std::string mode;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::uint64_t steps = 0;
  bool steps_set = false;
  std::uint64_t eval_every = 0;
  bool eval_every_set = false;
  bool deterministic = false;
  bool no_transcripts = false;
};

int cmd_train(const TrainOpts& o) {
  RunConfig cfg = load_run_config(resolve_config_path(o.config));
  if (o.seed_set) cfg.train.rng_seed = o.seed;
  if (!o.mode.empty()) apply_mode_override(cfg, o.mode);
  if (o.steps_set) cfg.train.rl.total_steps = o.steps;
  if (o.eval_every_set) cfg.train.eval_every = o.eval_every;
  if (o.deterministic) cfg.deterministic = true;
  if (!o.out_dir.empty()) cfg.out_dir = o.out_dir;
  if (cfg.chat_endpoint || cfg.judge_endpoint || cfg.embedding_endpoint)
    raise(Errc::unsupported, "training runs on the local arena; endpoints apply to eval only");
  if (!cfg.seeds_path.empty())
    raise(Errc::unsupported, "training seeds come from the arena; paths.seeds applies to eval only");
  cfg.train.validate();

  fs::create_directories(cfg.out_dir);
  {
    std::ofstream out(fs::path(cfg.out_dir) / "config.json");
    out << to_json(cfg).dump(2) << '\n';
    if (!out) raise(Errc::io, "cannot write resolved config in " + cfg.out_dir);
  }
  JsonlWriter metrics((fs::path(cfg.out_dir) / "metrics.jsonl").string());
  std::optional<JsonlWriter> transcripts;
  if (!o.no_transcripts)
    transcripts.emplace((fs::path(cfg.out_dir) / "transcripts.jsonl").string());

  Trainer trainer(cfg.train);
  TrainCallbacks callbacks;
  callbacks.on_metrics = [&](const MetricsRecord& m) {
    metrics.write(to_json(m));
    std::cerr << "step " << m.step << "  asr " << std::fixed << std::setprecision(3)
              << m.attack_success_rate << "  harmless " << m.response_harmlessness
              << "  winrate " << m.defender_refusal_winrate << std::defaultfloat << '\n';
  };
  if (transcripts)
    callbacks.on_transcript = [&](const GameTranscript& t) { transcripts->write(to_json(t)); };

  TrainResult result = trainer.run(callbacks);
  metrics.close();
  if (transcripts) transcripts->close();
  save_policy(result.policy, (fs::path(cfg.out_dir) / "policy.ckpt").string());
  save_policy(result.reference, (fs::path(cfg.out_dir) / "reference.ckpt").string());
  std::cerr << "train: " << cfg.train.run_steps() << " steps, " << result.history.size()
            << " evals, artifacts in " << cfg.out_dir << '\n';
  return 0;
}

struct NashOpts {
  std::size_t games = 200;
  std::size_t max_prompts = 20;
  std::size_t max_responses = 10;
  double unsafe_density = 0.5;
  std::uint64_t seed = 42;
  bool no_refusal = false;
};

// Caps the failure list in the report; every failure still counts.
constexpr std::size_t kMaxWitnesses = 25;

int cmd_verify_nash(const NashOpts& o) {
  if (o.games == 0) raise(Errc::config, "verify-nash needs at least one game");
  if (o.max_prompts == 0 || o.max_responses == 0)
    raise(Errc::config, "games need at least one prompt and response");
  if (!(o.unsafe_density >= 0.0 && o.unsafe_density <= 1.0))
    raise(Errc::config, "unsafe-density must lie in [0, 1]");

  std::size_t passed = 0, support_safe = 0;
  nlohmann::json failures = nlohmann::json::array();
  for (std::size_t i = 0; i < o.games; ++i) {
    Rng rng = Rng::stream(o.seed, {rng_tag::kGame, i});
    std::size_t n = 1 + rng.below(o.max_prompts);
    std::size_t m = 1 + rng.below(o.max_responses);
    GameMatrix game = random_safety_game(n, m, o.unsafe_density, !o.no_refusal, rng);
    EquilibriumSolution sol = solve_exact(game);
    TheoremReport rep = verify_theorem1(game, sol);
    if (rep.holds) {
      ++passed;
    } else if (failures.size() < kMaxWitnesses) {
      std::size_t w = *rep.witness;
      failures.push_back({{"game", i},
                          {"prompts", n},
                          {"responses", m},
                          {"witness_prompt", w},
                          {"witness_value", sol.per_prompt_values[w]},
                          {"game_value", sol.game_value}});
    }
    if (rep.support_safe) ++support_safe;
  }

  nlohmann::json report = {{"schema_version", schema_version_string()},
                           {"games", o.games},
                           {"passed", passed},
                           {"failed", o.games - passed},
                           {"support_safe", support_safe},
                           {"refusal_available", !o.no_refusal},
                           {"max_prompts", o.max_prompts},
                           {"max_responses", o.max_responses},
                           {"unsafe_density", o.unsafe_density},
                           {"rng_seed", o.seed},
                           {"failures", failures}};
  std::cout << report.dump(2) << '\n';
  std::cerr << "verify-nash: " << passed << "/" << o.games << " games safe"
            << (o.no_refusal ? " (refusal disabled; failures are the expected counterexamples)"
                             : "")
            << '\n';
  // Without a refusal action counterexamples are the point of the run.
  return (!o.no_refusal && passed != o.games) ? 1 : 0;
}

struct EvalOpts {
  std::string checkpoint;
  std::string config;
  std::string seeds;
  std::string mode;
  std::string emit_embeddings;
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool debug_wire = false;
};

int cmd_eval(const EvalOpts& o) {
  RunConfig cfg;
  if (!o.config.empty()) cfg = load_run_config(resolve_config_path(o.config));
  if (o.seed_set) cfg.train.rng_seed = o.seed;
  if (!o.mode.empty()) apply_mode_override(cfg, o.mode);
  const TrainRunConfig& t = cfg.train;

  TabularPolicy policy = load_policy(o.checkpoint);
  ArenaBinding binding(t.arena, t.conditioning);
  ArenaJudge rule_judge(t.arena);
  std::optional<GatewayClient> judge_client;
  std::optional<RemoteJudge> remote_judge;
  if (cfg.judge_endpoint) {
    judge_client.emplace(*cfg.judge_endpoint);
    if (o.debug_wire) judge_client->set_wire_log(wire_sink());
    remote_judge.emplace(*judge_client);
  }
  const Judge& judge = remote_judge ? static_cast<const Judge&>(*remote_judge) : rule_judge;

  std::vector<SeedPrompt> holdout;
  if (!o.seeds.empty())
    holdout = load_seed_prompts(o.seeds);
  else if (!cfg.seeds_path.empty())
    holdout = load_seed_prompts(cfg.seeds_path);
  else
    holdout = generate_arena_seeds(t.arena, t.holdout_seeds_per_cell, "hold-");
  SeedMode seed_mode = trains_attacker(t.mode) ? SeedMode::to_revise : SeedMode::as_is;
  for (SeedPrompt& s : holdout) s.mode = seed_mode;

  HashedNgramEmbedder embedder;
  const EpisodeConfig ecfg{t.cot, t.rewards, t.cot_enabled};
  MetricsRecord rec = evaluate_holdout(policy, policy, holdout, judge, binding, embedder, ecfg,
                                       t.eval_rollouts_per_seed, t.rng_seed, 0, 0.0);
  std::cout << to_json(rec).dump(2) << '\n';

  if (!o.emit_embeddings.empty()) {
    std::optional<GatewayClient> embed_client;
    if (cfg.embedding_endpoint) {
      embed_client.emplace(*cfg.embedding_endpoint);
      if (o.debug_wire) embed_client->set_wire_log(wire_sink());
    }
    // Replays the evaluation streams, so rows line up with the metrics above.
    JsonlWriter out(o.emit_embeddings);
    for (std::size_t s = 0; s < holdout.size(); ++s)
      for (std::size_t r = 0; r < t.eval_rollouts_per_seed; ++r) {
        Rng rng = Rng::stream(t.rng_seed, {rng_tag::kEval, 0, s, r});
        EpisodeTag tag;
        tag.id = "eval-0-" + std::to_string(s) + "-" + std::to_string(r);
        GameTranscript tr = run_episode(holdout[s], policy, policy, judge, binding, ecfg, rng, tag);
        if (!tr.attacker_move) continue;
        std::vector<double> emb =
            embed_client ? embed_client->embed(tr.attack_text) : embedder.embed(tr.attack_text);
        out.write({{"schema_version", schema_version_string()},
                   {"episode_id", tr.episode_id},
                   {"seed_id", tr.seed.id},
                   {"attack", tr.attack_text},
                   {"embedding", emb}});
      }
    out.close();
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial self-play arena: train policies, audit equilibria, score checkpoints"};
  app.require_subcommand(1);

  TrainOpts to;
  CLI::App* train = app.add_subcommand("train", "Run a training loop and write run artifacts");
  train->add_option("--config", to.config, "run config (path, or bare name under configs/)")
      ->required();
  CLI::Option* to_seed = train->add_option("--seed", to.seed, "override the run rng seed");
  train->add_option("--mode", to.mode, "override the training mode");
  CLI::Option* to_steps = train->add_option("--steps", to.steps, "override the optimizer budget");
  CLI::Option* to_eval =
      train->add_option("--eval-every", to.eval_every, "override the evaluation period");
  train->add_option("--out-dir", to.out_dir, "override the artifact directory");
  train->add_flag("--deterministic", to.deterministic,
                  "force bit-reproducible execution (rejects remote endpoints)");
  train->add_flag("--no-transcripts", to.no_transcripts, "skip the per-episode transcript log");

  NashOpts no;
  CLI::App* nash = app.add_subcommand(
      "verify-nash", "Fuzz random safety games and check the equilibrium defender stays safe");
  nash->add_option("--games", no.games, "number of games to fuzz");
  nash->add_option("--max-prompts", no.max_prompts, "largest prompt count per game");
  nash->add_option("--max-responses", no.max_responses, "largest response count per game");
  nash->add_option("--unsafe-density", no.unsafe_density, "probability a response entry is unsafe");
  nash->add_option("--seed", no.seed, "fuzzing rng seed");
  nash->add_flag("--no-refusal", no.no_refusal,
                 "drop the refusal action and report the resulting counterexamples");

  EvalOpts eo;
  CLI::App* eval = app.add_subcommand(
      "eval", "Score a saved checkpoint on holdout rollouts and print a metrics document");
  eval->add_option("--checkpoint", eo.checkpoint, "policy checkpoint to score")->required();
  eval->add_option("--config", eo.config, "run config supplying arena, rewards, and endpoints");
  eval->add_option("--seeds", eo.seeds, "JSONL seed pool replacing the generated holdout");
  eval->add_option("--mode", eo.mode, "override the training mode the checkpoint came from");
  CLI::Option* eo_seed = eval->add_option("--seed", eo.seed, "override the evaluation rng seed");
  eval->add_option("--emit-embeddings", eo.emit_embeddings,
                   "write one embedding row per generated attack to this JSONL file");
  eval->add_flag("--debug-wire", eo.debug_wire,
                 "log remote request/response bodies (secrets redacted) to stderr");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }
  to.seed_set = to_seed->count() > 0;
  to.steps_set = to_steps->count() > 0;
  to.eval_every_set = to_eval->count() > 0;
  eo.seed_set = eo_seed->count() > 0;

  try {
    if (*train) return cmd_train(to);
    if (*nash) return cmd_verify_nash(no);
    return cmd_eval(eo);
  } catch (const Error& e) {
    int status = exit_status(e.code());
    std::cerr << "redgame: " << category_name(status) << " error: " << e.what() << '\n';
    return status;
  } catch (const std::exception& e) {
    std::cerr << "redgame: error: " << e.what() << '\n';
    return 1;
  }
}
