#pragma once

#include <stdexcept>
#include <string>

namespace redgame {

// Error categories. Exit codes and tests key off these rather than message text.
enum class Errc {
  config,
  data,
  parse,
  remote,
  remote_auth,
  remote_timeout,
  judge_unavailable,
  unknown_context,
  unknown_action,
  unsupported,
  shape_mismatch,
  non_finite,
  empty_input,
  dimension_drift,
  malformed_game,
  stale_solution,
  empty_pool,
  io,
  version,
};

inline const char* errc_name(Errc c) {
  switch (c) {
    case Errc::config: return "config";
    case Errc::data: return "data";
    case Errc::parse: return "parse";
    case Errc::remote: return "remote";
    case Errc::remote_auth: return "remote_auth";
    case Errc::remote_timeout: return "remote_timeout";
    case Errc::judge_unavailable: return "judge_unavailable";
    case Errc::unknown_context: return "unknown_context";
    case Errc::unknown_action: return "unknown_action";
    case Errc::unsupported: return "unsupported";
    case Errc::shape_mismatch: return "shape_mismatch";
    case Errc::non_finite: return "non_finite";
    case Errc::empty_input: return "empty_input";
    case Errc::dimension_drift: return "dimension_drift";
    case Errc::malformed_game: return "malformed_game";
    case Errc::stale_solution: return "stale_solution";
    case Errc::empty_pool: return "empty_pool";
    case Errc::io: return "io";
    case Errc::version: return "version";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}
  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void raise(Errc code, const std::string& msg) { throw Error(code, msg); }

}  // namespace redgame
