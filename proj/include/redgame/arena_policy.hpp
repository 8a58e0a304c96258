#pragma once

#include <optional>
#include <string>
#include <vector>

#include "redgame/arena.hpp"
#include "redgame/episode.hpp"
#include "redgame/policy.hpp"

namespace redgame {

// Context keys carry what each role can read: the attacker its seed's true
// label and topic, the defender the observed marker and topic of the attack
// in front of it. A held disguise keeps its lowercase texture, so a defender
// can learn to distrust that tell even while the judge stays deceived; a
// failed disguise exposes the plain truthful marker. In shared mode seed
// labels and truthful markers spell the same key, so one row serves both
// roles; per-role mode prefixes the role and splits the table.

inline std::string arena_context_suffix(Label label, std::size_t topic) {
  return std::string(label == Label::harmful ? "H|t" : "B|t") + std::to_string(topic);
}

inline std::string attacker_context(RoleConditioning rc, Label seed_label,
                                    std::size_t topic) {
  std::string suffix = arena_context_suffix(seed_label, topic);
  return rc == RoleConditioning::shared ? suffix : "A|" + suffix;
}

inline std::string defender_context(RoleConditioning rc, char marker, std::size_t topic) {
  std::string suffix = std::string(1, marker) + "|t" + std::to_string(topic);
  return rc == RoleConditioning::shared ? suffix : "D|" + suffix;
}

inline std::string attack_action_token(const AttackAction& a) {
  return "s" + std::to_string(a.style) + (a.flip ? "|flip" : "|keep");
}

inline std::string defense_action_token(DefenseAction a) { return to_string(a); }

inline std::optional<AttackAction> parse_attack_action_token(const std::string& t) {
  if (t.size() < 7 || t[0] != 's') return std::nullopt;
  std::size_t bar = t.find('|');
  if (bar == std::string::npos || bar < 2) return std::nullopt;
  std::size_t style = 0;
  for (std::size_t i = 1; i < bar; ++i) {
    if (t[i] < '0' || t[i] > '9') return std::nullopt;
    style = style * 10 + static_cast<std::size_t>(t[i] - '0');
  }
  std::string verb = t.substr(bar + 1);
  if (verb == "keep") return AttackAction{style, false};
  if (verb == "flip") return AttackAction{style, true};
  return std::nullopt;
}

inline std::optional<DefenseAction> parse_defense_action_token(const std::string& t) {
  if (t == "safe") return DefenseAction::safe_comply;
  if (t == "unsafe") return DefenseAction::unsafe_comply;
  if (t == "refuse") return DefenseAction::refuse;
  return std::nullopt;
}

inline std::vector<std::string> arena_attack_tokens(const ArenaSpec& spec) {
  std::vector<std::string> out;
  for (std::size_t j = 0; j < spec.styles.size(); ++j) {
    out.push_back(attack_action_token({j, false}));
    out.push_back(attack_action_token({j, true}));
  }
  return out;
}

inline std::vector<std::string> arena_defense_tokens() {
  return {"safe", "unsafe", "refuse"};
}

inline std::vector<char> arena_defense_markers() { return {'H', 'B', 'h', 'b'}; }

// Starting defense profile mimics an aligned chat model: mostly refuse what
// reads as harmful, mostly comply in earnest with what reads as benign. It
// takes the marker at face value; the case tell is invisible until training
// discovers it.
inline std::vector<double> arena_defense_logits(char marker) {
  if (marker == 'H' || marker == 'h') return {0.0, -0.9, 0.95};
  if (marker == 'B' || marker == 'b') return {0.9, 0.1, -0.9};
  raise(Errc::unknown_context, std::string("not an arena marker: ") + marker);
}

inline TabularPolicy build_arena_policy(const ArenaSpec& spec, RoleConditioning rc) {
  spec.validate();
  TabularPolicy policy(rc);
  std::vector<std::string> attack = arena_attack_tokens(spec);
  std::vector<std::string> defense = arena_defense_tokens();
  for (std::size_t topic = 0; topic < spec.topics; ++topic) {
    if (rc == RoleConditioning::per_role) {
      for (Label label : {Label::harmful, Label::benign})
        policy.add_context(attacker_context(rc, label, topic), attack,
                           std::vector<double>(attack.size(), 0.0));
      for (char m : arena_defense_markers())
        policy.add_context(defender_context(rc, m, topic), defense, arena_defense_logits(m));
    } else {
      // Truthful markers share their keys with the attacker's seed labels;
      // those rows carry both alphabets and couple the roles. Disguise
      // markers get defense-only rows the attacker never queries.
      for (char m : {'H', 'B'}) {
        std::vector<std::string> actions = attack;
        actions.insert(actions.end(), defense.begin(), defense.end());
        std::vector<double> defense_logits = arena_defense_logits(m);
        std::vector<double> logits(attack.size(), 0.0);
        logits.insert(logits.end(), defense_logits.begin(), defense_logits.end());
        policy.add_context(defender_context(rc, m, topic), std::move(actions),
                           std::move(logits));
      }
      for (char m : {'h', 'b'})
        policy.add_context(defender_context(rc, m, topic), defense, arena_defense_logits(m));
    }
  }
  return policy;
}

// Shared rows expose both alphabets, so a role can draw the other role's
// token. The move then falls back to the mildest in-role behavior; training
// still credits the raw sampled token.
inline AttackAction interpret_attack_token(const std::string& token) {
  if (auto a = parse_attack_action_token(token)) return *a;
  return AttackAction{0, false};
}

inline DefenseAction interpret_defense_token(const std::string& token) {
  if (auto a = parse_defense_action_token(token)) return *a;
  return DefenseAction::refuse;
}

class ArenaBinding final : public GameBinding {
 public:
  ArenaBinding(ArenaSpec spec, RoleConditioning rc) : spec_(std::move(spec)), rc_(rc) {
    spec_.validate();
  }

  const ArenaSpec& spec() const { return spec_; }

  std::string attacker_context(const SeedPrompt& seed, bool) const override {
    ParsedAttack a = arena_decode_attack(spec_, seed.text);
    if (a.truth != seed.label)
      raise(Errc::data, "seed label disagrees with its text: " + seed.id);
    return redgame::attacker_context(rc_, seed.label, a.topic);
  }

  std::string defender_context(const SeedPrompt&, const std::string& attack_text,
                               bool) const override {
    ParsedAttack a = arena_decode_attack(spec_, attack_text);
    return redgame::defender_context(rc_, arena_observed_marker(spec_, attack_text), a.topic);
  }

  std::string attack_text(const SeedPrompt& seed, const std::string& answer) const override {
    ParsedAttack a = arena_decode_attack(spec_, seed.text);
    return arena_render_attack(spec_, seed.label, a.topic, interpret_attack_token(answer));
  }

  std::string defense_text(const std::string& answer) const override {
    return arena_render_defense(interpret_defense_token(answer));
  }

 private:
  ArenaSpec spec_;
  RoleConditioning rc_;
};

}  // namespace redgame
