#pragma once

#include <string>

#include "redgame/errors.hpp"
#include "redgame/prompt_templates.hpp"
#include "redgame/types.hpp"

namespace redgame {

struct ChatPrompt {
  std::string system;  // empty = use the endpoint's default system prompt
  std::string user;
};

namespace detail {

// Single-pass placeholder substitution; inserted text is never re-scanned.
inline std::string substitute(const std::string& tmpl, const std::string& placeholder,
                              const std::string& value) {
  std::string out;
  out.reserve(tmpl.size() + value.size());
  std::size_t pos = 0;
  while (true) {
    std::size_t hit = tmpl.find(placeholder, pos);
    if (hit == std::string::npos) {
      out.append(tmpl, pos, std::string::npos);
      return out;
    }
    out.append(tmpl, pos, hit - pos);
    out.append(value);
    pos = hit + placeholder.size();
  }
}

}  // namespace detail

inline ChatPrompt build_attacker_prompt(const SeedPrompt& seed, bool cot_enabled) {
  if (seed.text.empty()) raise(Errc::empty_input, "attacker prompt needs a non-empty seed text");
  const char* tmpl = seed.label == Label::harmful
                         ? (cot_enabled ? templates::kAttackerHarmfulCot
                                        : templates::kAttackerHarmfulPlain)
                         : (cot_enabled ? templates::kAttackerBenignCot
                                        : templates::kAttackerBenignPlain);
  return {templates::kAttackerSystem, detail::substitute(tmpl, "{vanilla_prompt}", seed.text)};
}

inline ChatPrompt build_defender_prompt(const std::string& attack_text, bool cot_enabled) {
  if (attack_text.empty()) raise(Errc::empty_input, "defender prompt needs a non-empty query");
  const char* tmpl = cot_enabled ? templates::kDefenderCot : templates::kDefenderPlain;
  // The defender keeps the serving model's default system prompt.
  return {"", detail::substitute(tmpl, "{user_query}", attack_text)};
}

inline std::string render_sft_postfill(const std::string& prompt, const std::string& response) {
  if (prompt.empty() || response.empty())
    raise(Errc::empty_input, "postfill rendering needs non-empty prompt and response");
  std::string out = detail::substitute(templates::kSftPostfill, "{prompt}", prompt);
  return detail::substitute(out, "{response}", response);
}

}  // namespace redgame
