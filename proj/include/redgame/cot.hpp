#pragma once

#include <cctype>
#include <string>
#include <vector>

#include "redgame/errors.hpp"
#include "redgame/types.hpp"

namespace redgame {

struct CotTemplateConfig {
  std::string think_open = "<think>";
  std::string think_close = "</think>";
  std::string answer_open = "<answer>";
  std::string answer_close = "</answer>";
  bool prefill_think = true;  // generation starts inside the think span
  bool strict = true;

  void validate() const {
    const std::string* tags[4] = {&think_open, &think_close, &answer_open, &answer_close};
    for (int i = 0; i < 4; ++i) {
      if (tags[i]->empty()) raise(Errc::config, "cot tags must be non-empty");
      for (int j = i + 1; j < 4; ++j)
        if (*tags[i] == *tags[j]) raise(Errc::config, "cot tags must be pairwise distinct");
    }
  }
};

namespace detail {

inline std::size_t count_occurrences(const std::string& s, const std::string& needle) {
  std::size_t n = 0;
  for (std::size_t pos = s.find(needle); pos != std::string::npos;
       pos = s.find(needle, pos + needle.size()))
    ++n;
  return n;
}

inline bool whitespace_only(const std::string& s, std::size_t from) {
  for (std::size_t i = from; i < s.size(); ++i)
    if (!std::isspace(static_cast<unsigned char>(s[i]))) return false;
  return true;
}

inline std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

// Replaces every tag occurrence with a space, then collapses whitespace runs.
inline std::string strip_tags(std::string s, const CotTemplateConfig& cfg) {
  for (const std::string& tag :
       {cfg.think_open, cfg.think_close, cfg.answer_open, cfg.answer_close}) {
    std::string out;
    out.reserve(s.size());
    std::size_t pos = 0;
    while (true) {
      std::size_t hit = s.find(tag, pos);
      if (hit == std::string::npos) {
        out.append(s, pos, std::string::npos);
        break;
      }
      out.append(s, pos, hit - pos);
      out.push_back(' ');
      pos = hit + tag.size();
    }
    s = std::move(out);
  }
  std::string collapsed;
  collapsed.reserve(s.size());
  bool in_ws = false;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      in_ws = true;
      continue;
    }
    if (in_ws && !collapsed.empty()) collapsed.push_back(' ');
    in_ws = false;
    collapsed.push_back(c);
  }
  return collapsed;
}

}  // namespace detail

// Splits a raw model output into hidden reasoning and public answer. On any
// format violation the move degrades to format_ok=false with all recognized
// tags stripped out of the answer, so a malformed episode still produces a
// public move to play and judge.
inline Move parse_cot_output(const std::string& raw, const CotTemplateConfig& cfg) {
  cfg.validate();
  const std::string effective = cfg.prefill_think ? cfg.think_open + raw : raw;

  auto fallback = [&] {
    Move m;
    m.cot.reset();
    m.answer = detail::strip_tags(effective, cfg);
    m.format_ok = false;
    m.raw = raw;
    return m;
  };

  std::size_t to = effective.find(cfg.think_open);
  if (to == std::string::npos) return fallback();
  std::size_t tc = effective.find(cfg.think_close, to + cfg.think_open.size());
  if (tc == std::string::npos) return fallback();
  std::size_t ao = effective.find(cfg.answer_open, tc + cfg.think_close.size());
  if (ao == std::string::npos) return fallback();
  std::size_t ac = effective.find(cfg.answer_close, ao + cfg.answer_open.size());
  if (ac == std::string::npos) return fallback();

  if (cfg.strict) {
    bool exactly_once = detail::count_occurrences(effective, cfg.think_open) == 1 &&
                        detail::count_occurrences(effective, cfg.think_close) == 1 &&
                        detail::count_occurrences(effective, cfg.answer_open) == 1 &&
                        detail::count_occurrences(effective, cfg.answer_close) == 1;
    if (!exactly_once) return fallback();
    if (!detail::whitespace_only(effective, ac + cfg.answer_close.size())) return fallback();
  }

  Move m;
  m.cot = detail::trim(effective.substr(to + cfg.think_open.size(), tc - to - cfg.think_open.size()));
  m.answer =
      detail::trim(effective.substr(ao + cfg.answer_open.size(), ac - ao - cfg.answer_open.size()));
  m.format_ok = true;
  m.raw = raw;
  return m;
}

}  // namespace redgame
