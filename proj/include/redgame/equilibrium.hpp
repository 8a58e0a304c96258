#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <vector>

#include "redgame/errors.hpp"
#include "redgame/rng.hpp"

namespace redgame {

// Finite zero-sum prompt/response game from the defender's point of view:
// rewards[i][j] is the defender's payoff when prompt i draws response j.
// Unsafe responses pay exactly -1, safe ones lie in [0, 1], and an optional
// refusal column pays 0 on every prompt.
struct GameMatrix {
  std::vector<std::vector<double>> rewards;
  std::optional<std::size_t> refusal_column;
  bool safety_structure = false;

  std::size_t prompts() const { return rewards.size(); }
  std::size_t responses() const { return rewards.empty() ? 0 : rewards[0].size(); }

  void validate() const {
    if (rewards.empty() || rewards[0].empty())
      raise(Errc::malformed_game, "game has no prompts or no responses");
    const std::size_t m = rewards[0].size();
    for (const auto& row : rewards) {
      if (row.size() != m) raise(Errc::malformed_game, "ragged reward matrix");
      for (double v : row) {
        if (!std::isfinite(v) || v < -1.0 || v > 1.0)
          raise(Errc::malformed_game, "reward outside [-1, 1]");
        if (safety_structure && v > -1.0 && v < 0.0)
          raise(Errc::malformed_game, "safety structure forbids rewards in (-1, 0)");
      }
    }
    if (refusal_column) {
      if (*refusal_column >= m) raise(Errc::malformed_game, "refusal column out of range");
      for (const auto& row : rewards)
        if (row[*refusal_column] != 0.0)
          raise(Errc::malformed_game, "refusal column must be all zero");
    }
  }
};

struct EquilibriumSolution {
  std::vector<double> attacker_strategy;               // over prompts
  std::vector<std::vector<double>> defender_strategy;  // per prompt, over responses
  double game_value = 0.0;
  std::vector<double> per_prompt_values;
  double exploitability = 0.0;
};

// The defender observes the prompt, so the game decomposes: best-respond per
// prompt (ties to the lowest index), then the attacker mixes uniformly over
// the prompts with the smallest best-response value.
inline EquilibriumSolution solve_exact(const GameMatrix& game) {
  game.validate();
  const std::size_t n = game.prompts();
  const std::size_t m = game.responses();
  EquilibriumSolution s;
  s.defender_strategy.assign(n, std::vector<double>(m, 0.0));
  s.per_prompt_values.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < m; ++j)
      if (game.rewards[i][j] > game.rewards[i][best]) best = j;
    s.defender_strategy[i][best] = 1.0;
    s.per_prompt_values[i] = game.rewards[i][best];
  }
  s.game_value = *std::min_element(s.per_prompt_values.begin(), s.per_prompt_values.end());
  std::size_t ties = 0;
  for (double v : s.per_prompt_values)
    if (v == s.game_value) ++ties;
  s.attacker_strategy.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    if (s.per_prompt_values[i] == s.game_value)
      s.attacker_strategy[i] = 1.0 / static_cast<double>(ties);
  s.exploitability = 0.0;
  return s;
}

struct TheoremReport {
  bool holds = false;                  // expected per-prompt reward >= 0 everywhere
  std::optional<std::size_t> witness;  // first prompt that violates it
  bool support_safe = false;           // no -1 response carries positive mass
};

// Checks the safety guarantee of the equilibrium defender: on every prompt,
// its expected reward is non-negative. The stronger support condition is
// reported alongside but not asserted.
inline TheoremReport verify_theorem1(const GameMatrix& game,
                                     const EquilibriumSolution& solution,
                                     double tolerance = 1e-9) {
  game.validate();
  if (solution.exploitability > tolerance)
    raise(Errc::stale_solution, "solution exploitability exceeds tolerance");
  if (solution.defender_strategy.size() != game.prompts())
    raise(Errc::shape_mismatch, "defender strategy does not match game");
  TheoremReport report;
  report.holds = true;
  report.support_safe = true;
  for (std::size_t i = 0; i < game.prompts(); ++i) {
    const auto& mix = solution.defender_strategy[i];
    if (mix.size() != game.responses())
      raise(Errc::shape_mismatch, "defender strategy does not match game");
    double expected = 0.0;
    for (std::size_t j = 0; j < mix.size(); ++j) {
      expected += mix[j] * game.rewards[i][j];
      if (mix[j] > 0.0 && game.rewards[i][j] == -1.0) report.support_safe = false;
    }
    if (expected < -tolerance && report.holds) {
      report.holds = false;
      report.witness = i;
    }
  }
  return report;
}

// Fictitious play on the sequential game: each iteration the attacker
// best-responds to the defender's empirical per-prompt averages (uniform
// where a prompt was never defended), then the defender patches the attacked
// prompt with its best response. Returns averaged strategies; exploitability
// is the gap between the two sides' best-response values against them.
inline EquilibriumSolution fictitious_play(const GameMatrix& game,
                                           std::size_t iterations) {
  game.validate();
  if (iterations < 1) raise(Errc::config, "fictitious play needs >= 1 iteration");
  const std::size_t n = game.prompts();
  const std::size_t m = game.responses();

  std::vector<std::size_t> attack_counts(n, 0);
  std::vector<std::vector<std::size_t>> defend_counts(n, std::vector<std::size_t>(m, 0));
  std::vector<std::size_t> defend_totals(n, 0);

  auto empirical_row = [&](std::size_t i) {
    std::vector<double> q(m, 1.0 / static_cast<double>(m));
    if (defend_totals[i]) {
      for (std::size_t j = 0; j < m; ++j)
        q[j] = static_cast<double>(defend_counts[i][j]) /
               static_cast<double>(defend_totals[i]);
    }
    return q;
  };
  auto expected_at = [&](std::size_t i) {
    std::vector<double> q = empirical_row(i);
    double e = 0.0;
    for (std::size_t j = 0; j < m; ++j) e += q[j] * game.rewards[i][j];
    return e;
  };

  for (std::size_t t = 0; t < iterations; ++t) {
    std::size_t target = 0;
    double lowest = expected_at(0);
    for (std::size_t i = 1; i < n; ++i) {
      double e = expected_at(i);
      if (e < lowest) {
        lowest = e;
        target = i;
      }
    }
    ++attack_counts[target];
    std::size_t best = 0;
    for (std::size_t j = 1; j < m; ++j)
      if (game.rewards[target][j] > game.rewards[target][best]) best = j;
    ++defend_counts[target][best];
    ++defend_totals[target];
  }

  EquilibriumSolution s;
  s.attacker_strategy.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    s.attacker_strategy[i] =
        static_cast<double>(attack_counts[i]) / static_cast<double>(iterations);
  for (std::size_t i = 0; i < n; ++i) s.defender_strategy.push_back(empirical_row(i));
  s.per_prompt_values.resize(n);
  double pair_value = 0.0;
  double defender_br = 0.0;
  double attacker_br = expected_at(0);
  for (std::size_t i = 0; i < n; ++i) {
    double e = expected_at(i);
    s.per_prompt_values[i] = e;
    pair_value += s.attacker_strategy[i] * e;
    double row_max = *std::max_element(game.rewards[i].begin(), game.rewards[i].end());
    defender_br += s.attacker_strategy[i] * row_max;
    attacker_br = std::min(attacker_br, e);
  }
  s.game_value = pair_value;
  s.exploitability = defender_br - attacker_br;
  return s;
}

inline GameMatrix random_safety_game(std::size_t n, std::size_t m,
                                     double unsafe_density, bool include_refusal,
                                     Rng& rng) {
  if (n < 1 || m < 1) raise(Errc::config, "game needs at least one prompt and response");
  if (!(unsafe_density >= 0.0 && unsafe_density <= 1.0))
    raise(Errc::config, "unsafe_density must lie in [0, 1]");
  GameMatrix g;
  g.safety_structure = true;
  g.rewards.assign(n, std::vector<double>(include_refusal ? m + 1 : m, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      g.rewards[i][j] = rng.bernoulli(unsafe_density) ? -1.0 : rng.uniform01();
  if (include_refusal) g.refusal_column = m;
  g.validate();
  return g;
}

}  // namespace redgame
