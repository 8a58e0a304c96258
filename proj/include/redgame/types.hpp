#pragma once

#include <optional>
#include <string>

#include "redgame/errors.hpp"

namespace redgame {

enum class Label { harmful, benign };
enum class SeedMode { as_is, to_revise };
enum class Role { attacker, defender };

inline const char* to_string(Label l) { return l == Label::harmful ? "harmful" : "benign"; }
inline const char* to_string(SeedMode m) { return m == SeedMode::as_is ? "as_is" : "to_revise"; }
inline const char* to_string(Role r) { return r == Role::attacker ? "attacker" : "defender"; }

inline Label label_from_string(const std::string& s) {
  if (s == "harmful") return Label::harmful;
  if (s == "benign") return Label::benign;
  raise(Errc::data, "unknown label '" + s + "' (expected \"harmful\" or \"benign\")");
}

inline SeedMode seed_mode_from_string(const std::string& s) {
  if (s == "as_is") return SeedMode::as_is;
  if (s == "to_revise") return SeedMode::to_revise;
  raise(Errc::data, "unknown seed mode '" + s + "' (expected \"as_is\" or \"to_revise\")");
}

// A seed prompt drawn from the harmful or benign pool. `mode` says whether the
// attacker rewrites it this episode or it is served to the defender as-is.
struct SeedPrompt {
  std::string id;
  std::string text;
  Label label = Label::benign;
  SeedMode mode = SeedMode::as_is;
};

// Judge verdict on one episode: was the (possibly revised) prompt harmful, was
// the response harmful, and was the response a refusal.
struct JudgeVerdict {
  bool q_harm = false;
  bool res_harm = false;
  bool res_refuse = false;

  bool operator==(const JudgeVerdict&) const = default;
};

// One public move: hidden reasoning (if any), the public answer, and whether
// the raw output followed the required tag format. Only `answer` is ever
// shown to the opponent or the judge.
struct Move {
  std::optional<std::string> cot;
  std::string answer;
  bool format_ok = true;
  Role role = Role::defender;
  std::string raw;
};

}  // namespace redgame
