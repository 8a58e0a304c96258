#pragma once

#include <string>

#include "redgame/types.hpp"

namespace redgame {

// Adjudicates one episode from the two public texts alone.
class Judge {
 public:
  virtual ~Judge() = default;
  virtual JudgeVerdict judge(const std::string& attack_text,
                             const std::string& defense_text) const = 0;
};

}  // namespace redgame
