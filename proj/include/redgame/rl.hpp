#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "redgame/errors.hpp"
#include "redgame/types.hpp"

namespace redgame {

struct RLHyperparams {
  double beta = 0.01;          // weight on the reference-policy KL penalty
  double epsilon_clip = 0.2;   // ratio clip half-width
  double epsilon_std = 1e-8;   // added to the std in advantage normalization
  double lr_start = 0.05;
  double lr_end = 0.005;
  std::size_t total_steps = 2000;
  std::size_t early_stop_step = 0;  // 0 = run all total_steps
  double sft_weight = 1.0;

  void validate() const {
    if (!(std::isfinite(beta) && beta >= 0.0)) raise(Errc::config, "rl.beta must be >= 0");
    if (!(epsilon_clip > 0.0 && epsilon_clip < 1.0))
      raise(Errc::config, "rl.epsilon_clip must be in (0, 1)");
    if (!(epsilon_std > 0.0)) raise(Errc::config, "rl.epsilon_std must be > 0");
    if (!(std::isfinite(lr_start) && lr_start > 0.0)) raise(Errc::config, "rl.lr_start must be > 0");
    if (!(std::isfinite(lr_end) && lr_end > 0.0)) raise(Errc::config, "rl.lr_end must be > 0");
    if (lr_end > lr_start) raise(Errc::config, "rl.lr_end must not exceed rl.lr_start");
    if (total_steps == 0) raise(Errc::config, "rl.total_steps must be >= 1");
    if (early_stop_step > total_steps)
      raise(Errc::config, "rl.early_stop_step must not exceed rl.total_steps");
    if (!(std::isfinite(sft_weight) && sft_weight >= 0.0))
      raise(Errc::config, "rl.sft_weight must be >= 0");
  }
};

inline void require_finite(const std::vector<double>& v, const char* what) {
  for (double x : v)
    if (!std::isfinite(x)) raise(Errc::non_finite, std::string(what) + " contains a non-finite value");
}

// Sampled per-token KL estimate against the frozen reference policy:
// log pi(token) - log pi_ref(token) at each sampled token.
inline std::vector<double> token_kl(const std::vector<double>& logprobs_current,
                                    const std::vector<double>& logprobs_ref) {
  if (logprobs_current.size() != logprobs_ref.size())
    raise(Errc::shape_mismatch, "token_kl: sequences differ in length");
  if (logprobs_current.empty()) raise(Errc::empty_input, "token_kl: empty sequences");
  require_finite(logprobs_current, "token_kl current");
  require_finite(logprobs_ref, "token_kl ref");
  std::vector<double> out(logprobs_current.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = logprobs_current[i] - logprobs_ref[i];
  return out;
}

// Exact KL(p || q) between two categorical distributions; the tabular-policy
// alternative to the sampled estimator.
inline double categorical_kl(const std::vector<double>& p, const std::vector<double>& q) {
  if (p.size() != q.size()) raise(Errc::shape_mismatch, "categorical_kl: size mismatch");
  if (p.empty()) raise(Errc::empty_input, "categorical_kl: empty distributions");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] < 0.0 || q[i] < 0.0) raise(Errc::non_finite, "categorical_kl: negative probability");
    if (p[i] == 0.0) continue;
    if (q[i] == 0.0) raise(Errc::non_finite, "categorical_kl: support mismatch");
    kl += p[i] * (std::log(p[i]) - std::log(q[i]));
  }
  return kl;
}

// Sequence-reward advantage with a KL suffix penalty:
// A_t = R - beta * sum_{i=t..T} kl_i, computed with a running suffix sum.
inline std::vector<double> reward_to_go_advantages(double episode_reward,
                                                   const std::vector<double>& kl, double beta) {
  if (kl.empty()) raise(Errc::empty_input, "reward_to_go_advantages: empty kl sequence");
  if (!std::isfinite(episode_reward))
    raise(Errc::non_finite, "reward_to_go_advantages: non-finite reward");
  require_finite(kl, "reward_to_go_advantages kl");
  std::vector<double> adv(kl.size());
  double suffix = 0.0;
  for (std::size_t i = kl.size(); i-- > 0;) {
    suffix += kl[i];
    adv[i] = episode_reward - beta * suffix;
  }
  return adv;
}

// One advantage entry per sampled token, tagged with its episode for audits.
struct AdvantageEntry {
  std::string episode_id;
  std::size_t token_index = 0;
  double kl = 0.0;
  double raw = 0.0;
  double normalized = 0.0;
};

struct AdvantageBatch {
  Role role = Role::attacker;
  std::vector<AdvantageEntry> entries;
};

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population std
};

inline MeanStd mean_std(const std::vector<double>& v) {
  if (v.empty()) raise(Errc::empty_input, "mean_std: empty input");
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= static_cast<double>(v.size());
  return {mean, std::sqrt(var)};
}

// Batch normalization of raw advantages: (a - mean) / (std + eps).
inline std::vector<double> normalize_values(const std::vector<double>& raw, double eps_std) {
  require_finite(raw, "normalize_values");
  MeanStd ms = mean_std(raw);
  std::vector<double> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = (raw[i] - ms.mean) / (ms.std + eps_std);
  return out;
}

// Normalizes one role's batch in place. Statistics are taken over exactly the
// entries passed in, so per-role batches stay statistically disjoint.
inline void normalize_advantages(AdvantageBatch& batch, double eps_std) {
  if (batch.entries.empty()) raise(Errc::empty_input, "normalize_advantages: empty batch");
  std::vector<double> raw(batch.entries.size());
  for (std::size_t i = 0; i < raw.size(); ++i) raw[i] = batch.entries[i].raw;
  std::vector<double> norm = normalize_values(raw, eps_std);
  for (std::size_t i = 0; i < norm.size(); ++i) batch.entries[i].normalized = norm[i];
}

struct LossGrad {
  double loss = 0.0;
  std::vector<double> grad;  // d loss / d logprobs_current, entrywise
};

// Clipped-ratio policy surrogate. Ratios are exp(lp_current - lp_old); the
// objective term per entry is min(ratio*A, clip(ratio)*A) and the loss is the
// negated mean. Gradient flows through the selected branch only.
inline LossGrad clipped_surrogate_loss(const std::vector<double>& logprobs_current,
                                       const std::vector<double>& logprobs_old,
                                       const std::vector<double>& advantages,
                                       double epsilon_clip) {
  if (!(epsilon_clip > 0.0 && epsilon_clip < 1.0))
    raise(Errc::config, "clipped_surrogate_loss: epsilon_clip must be in (0, 1)");
  std::size_t n = logprobs_current.size();
  if (logprobs_old.size() != n || advantages.size() != n)
    raise(Errc::shape_mismatch, "clipped_surrogate_loss: input lengths differ");
  if (n == 0) raise(Errc::empty_input, "clipped_surrogate_loss: empty batch");
  require_finite(logprobs_current, "surrogate logprobs_current");
  require_finite(logprobs_old, "surrogate logprobs_old");
  require_finite(advantages, "surrogate advantages");

  LossGrad out;
  out.grad.assign(n, 0.0);
  double lo = 1.0 - epsilon_clip, hi = 1.0 + epsilon_clip;
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double ratio = std::exp(logprobs_current[i] - logprobs_old[i]);
    if (!(ratio > 0.0) || !std::isfinite(ratio))
      raise(Errc::non_finite, "clipped_surrogate_loss: degenerate ratio");
    double clipped = std::min(std::max(ratio, lo), hi);
    double a = advantages[i];
    double unclipped_term = ratio * a;
    double clipped_term = clipped * a;
    if (unclipped_term <= clipped_term) {
      acc += unclipped_term;
      out.grad[i] = -(ratio * a) / static_cast<double>(n);  // d(ratio)/d(lp) = ratio
    } else {
      acc += clipped_term;
      // Selected branch is the clipped term; it is constant in lp whenever the
      // clip is active, and identical to the unclipped term otherwise.
      out.grad[i] = (ratio > lo && ratio < hi) ? -(ratio * a) / static_cast<double>(n) : 0.0;
    }
  }
  out.loss = -acc / static_cast<double>(n);
  return out;
}

// Negative log-likelihood over target tokens, mean per token.
inline LossGrad sft_loss(const std::vector<double>& target_logprobs) {
  if (target_logprobs.empty()) raise(Errc::empty_input, "sft_loss: empty batch");
  require_finite(target_logprobs, "sft target logprobs");
  LossGrad out;
  std::size_t n = target_logprobs.size();
  out.grad.assign(n, -1.0 / static_cast<double>(n));
  double acc = 0.0;
  for (double lp : target_logprobs) acc += lp;
  out.loss = -acc / static_cast<double>(n);
  return out;
}

// Cosine decay from lr_start to lr_end across total_steps; flat afterwards.
inline double cosine_lr(std::size_t step, std::size_t total_steps, double lr_start, double lr_end) {
  if (total_steps == 0) raise(Errc::config, "cosine_lr: total_steps must be >= 1");
  if (step >= total_steps) return lr_end;
  double frac = static_cast<double>(step) / static_cast<double>(total_steps);
  return lr_end + 0.5 * (lr_start - lr_end) * (1.0 + std::cos(frac * 3.14159265358979323846));
}

}  // namespace redgame
