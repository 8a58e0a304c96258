#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "redgame/errors.hpp"
#include "redgame/rng.hpp"

namespace redgame {

struct TokenSample {
  std::vector<std::string> tokens;
  std::vector<double> logprobs;  // under the sampling policy, one per token
  std::string context_id;
};

// Generation/scoring contract shared by the tabular policy and the remote
// chat adapter. Snapshots are plain value copies of the concrete type.
class Policy {
 public:
  virtual ~Policy() = default;
  virtual TokenSample sample(const std::string& context, Rng& rng) = 0;
  virtual std::vector<double> logprob(const std::string& context,
                                      const std::vector<std::string>& tokens) const = 0;
};

enum class RoleConditioning { shared, per_role };

inline std::string to_string(RoleConditioning rc) {
  return rc == RoleConditioning::shared ? "shared" : "per_role";
}

inline RoleConditioning role_conditioning_from_string(const std::string& s) {
  if (s == "shared") return RoleConditioning::shared;
  if (s == "per_role") return RoleConditioning::per_role;
  raise(Errc::data, "unknown role conditioning: " + s);
}

// Gradient accumulator shaped like a policy's logit table.
using GradientTable = std::map<std::string, std::vector<double>>;

// Exact softmax policy over finite per-context action alphabets. Single
// writer; reads are const and snapshots are independent copies.
class TabularPolicy final : public Policy {
 public:
  explicit TabularPolicy(RoleConditioning rc = RoleConditioning::shared) : rc_(rc) {}

  RoleConditioning role_conditioning() const { return rc_; }

  void add_context(const std::string& key, std::vector<std::string> actions,
                   std::vector<double> logits) {
    if (key.empty()) raise(Errc::config, "empty context key");
    if (key.find_first_of("\t\n") != std::string::npos)
      raise(Errc::config, "context key may not contain tabs or newlines: " + key);
    if (actions.empty()) raise(Errc::config, "context has no actions: " + key);
    if (actions.size() != logits.size())
      raise(Errc::shape_mismatch, "actions/logits size mismatch for " + key);
    if (rows_.count(key)) raise(Errc::config, "duplicate context: " + key);
    Row row;
    for (std::size_t i = 0; i < actions.size(); ++i) {
      const std::string& a = actions[i];
      if (a.empty() || a.find_first_of("\t\n") != std::string::npos)
        raise(Errc::config, "bad action name in context " + key);
      if (!row.index.emplace(a, i).second)
        raise(Errc::config, "duplicate action '" + a + "' in context " + key);
      if (!std::isfinite(logits[i]))
        raise(Errc::non_finite, "non-finite initial logit in context " + key);
    }
    row.actions = std::move(actions);
    row.logits = std::move(logits);
    rows_.emplace(key, std::move(row));
  }

  bool has_context(const std::string& key) const { return rows_.count(key) != 0; }
  std::size_t context_count() const { return rows_.size(); }

  std::vector<std::string> context_keys() const {
    std::vector<std::string> keys;
    keys.reserve(rows_.size());
    for (const auto& [k, _] : rows_) keys.push_back(k);
    return keys;
  }

  const std::vector<std::string>& actions(const std::string& key) const {
    return row(key).actions;
  }
  const std::vector<double>& logits(const std::string& key) const {
    return row(key).logits;
  }

  std::vector<double> probs(const std::string& key) const {
    return softmax(row(key).logits);
  }

  TokenSample sample(const std::string& context, Rng& rng) override {
    const Row& r = row(context);
    std::vector<double> p = softmax(r.logits);
    std::size_t i = rng.categorical(p);
    return {{r.actions[i]}, {std::log(p[i])}, context};
  }

  std::vector<double> logprob(const std::string& context,
                              const std::vector<std::string>& tokens) const override {
    const Row& r = row(context);
    std::vector<double> p = softmax(r.logits);
    std::vector<double> out;
    out.reserve(tokens.size());
    for (const std::string& t : tokens) out.push_back(std::log(p[r.action_index(context, t)]));
    return out;
  }

  double logprob1(const std::string& context, const std::string& token) const {
    return logprob(context, {token})[0];
  }

  TabularPolicy snapshot() const { return *this; }

  GradientTable zero_gradient() const {
    GradientTable g;
    for (const auto& [k, r] : rows_) g.emplace(k, std::vector<double>(r.logits.size(), 0.0));
    return g;
  }

  // Adds coeff * d log pi(action | context) / d logits to the accumulator,
  // where coeff is the loss derivative w.r.t. that log-probability.
  void accumulate_logprob_gradient(GradientTable& grad, const std::string& context,
                                   const std::string& action, double coeff) const {
    const Row& r = row(context);
    auto it = grad.find(context);
    if (it == grad.end() || it->second.size() != r.logits.size())
      raise(Errc::shape_mismatch, "gradient table does not match policy shape at " + context);
    if (!std::isfinite(coeff)) raise(Errc::non_finite, "non-finite gradient coefficient");
    std::size_t a = r.action_index(context, action);
    std::vector<double> p = softmax(r.logits);
    for (std::size_t b = 0; b < p.size(); ++b)
      it->second[b] += coeff * ((b == a ? 1.0 : 0.0) - p[b]);
  }

  // Plain gradient descent: logits <- logits - lr * grad.
  void apply_gradient_step(const GradientTable& grad, double learning_rate) {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
      raise(Errc::config, "learning rate must be finite and >= 0");
    if (grad.size() != rows_.size())
      raise(Errc::shape_mismatch, "gradient table has wrong context count");
    for (auto& [k, r] : rows_) {
      auto it = grad.find(k);
      if (it == grad.end() || it->second.size() != r.logits.size())
        raise(Errc::shape_mismatch, "gradient table does not match policy shape at " + k);
      for (double g : it->second)
        if (!std::isfinite(g)) raise(Errc::non_finite, "non-finite gradient at " + k);
    }
    for (auto& [k, r] : rows_) {
      const std::vector<double>& g = grad.at(k);
      for (std::size_t i = 0; i < g.size(); ++i) r.logits[i] -= learning_rate * g[i];
    }
  }

  bool operator==(const TabularPolicy& o) const {
    if (rc_ != o.rc_ || rows_.size() != o.rows_.size()) return false;
    for (const auto& [k, r] : rows_) {
      auto it = o.rows_.find(k);
      if (it == o.rows_.end() || it->second.actions != r.actions ||
          it->second.logits != r.logits)
        return false;
    }
    return true;
  }

 private:
  struct Row {
    std::vector<std::string> actions;
    std::vector<double> logits;
    std::map<std::string, std::size_t> index;

    std::size_t action_index(const std::string& context, const std::string& a) const {
      auto it = index.find(a);
      if (it == index.end())
        raise(Errc::unknown_action, "action '" + a + "' not in context " + context);
      return it->second;
    }
  };

  const Row& row(const std::string& key) const {
    auto it = rows_.find(key);
    if (it == rows_.end()) raise(Errc::unknown_context, "unknown context: " + key);
    return it->second;
  }

  static std::vector<double> softmax(const std::vector<double>& logits) {
    double m = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) z += p[i] = std::exp(logits[i] - m);
    for (double& x : p) x /= z;
    return p;
  }

  RoleConditioning rc_;
  std::map<std::string, Row> rows_;
};

// exp(-mean per-token log-probability) of `tokens` in `context`.
inline double perplexity(const Policy& policy, const std::string& context,
                         const std::vector<std::string>& tokens) {
  if (tokens.empty()) raise(Errc::empty_input, "perplexity of an empty sequence");
  std::vector<double> lp = policy.logprob(context, tokens);
  double sum = 0.0;
  for (double v : lp) sum += v;
  return std::exp(-sum / static_cast<double>(lp.size()));
}

inline constexpr std::string_view kPolicyFileMagic = "redgame-policy";
inline constexpr int kPolicyFileVersion = 1;

// Checkpoint format: one header line, then one tab-separated
// (context, action, logit) triple per line. %.17g round-trips doubles.
inline void save_policy(const TabularPolicy& policy, const std::string& path) {
  std::ofstream out(path);
  if (!out) raise(Errc::io, "cannot write " + path);
  out << kPolicyFileMagic << ' ' << kPolicyFileVersion << ' '
      << to_string(policy.role_conditioning()) << '\n';
  char buf[64];
  for (const std::string& key : policy.context_keys()) {
    const auto& actions = policy.actions(key);
    const auto& logits = policy.logits(key);
    for (std::size_t i = 0; i < actions.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", logits[i]);
      out << key << '\t' << actions[i] << '\t' << buf << '\n';
    }
  }
  if (!out.flush()) raise(Errc::io, "write failed: " + path);
}

inline TabularPolicy load_policy(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(Errc::io, "cannot read " + path);
  std::string header;
  if (!std::getline(in, header)) raise(Errc::parse, "empty policy file: " + path);
  std::istringstream hs(header);
  std::string magic, mode;
  int version = 0;
  if (!(hs >> magic >> version >> mode) || magic != kPolicyFileMagic)
    raise(Errc::parse, "not a policy file: " + path);
  if (version != kPolicyFileVersion)
    raise(Errc::version,
          "policy file version " + std::to_string(version) + " unsupported");

  TabularPolicy policy(role_conditioning_from_string(mode));
  std::string line;
  std::string current_key;
  std::vector<std::string> actions;
  std::vector<double> logits;
  auto flush_row = [&] {
    if (!current_key.empty()) policy.add_context(current_key, actions, logits);
    actions.clear();
    logits.clear();
  };
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::size_t t1 = line.find('\t');
    std::size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) raise(Errc::parse, "bad policy line: " + line);
    std::string key = line.substr(0, t1);
    std::string action = line.substr(t1 + 1, t2 - t1 - 1);
    const char* num = line.c_str() + t2 + 1;
    char* end = nullptr;
    double logit = std::strtod(num, &end);
    if (end == num || *end != '\0' || !std::isfinite(logit))
      raise(Errc::parse, "bad logit in policy line: " + line);
    if (key != current_key) {
      flush_row();
      current_key = key;
    }
    actions.push_back(std::move(action));
    logits.push_back(logit);
  }
  flush_row();
  if (policy.context_count() == 0) raise(Errc::parse, "policy file has no rows: " + path);
  return policy;
}

}  // namespace redgame
