#pragma once

#include <optional>
#include <string>

#include "ergo/entropy.hpp"

namespace ergo {

enum class Role { System, User, Assistant };

std::string to_string(Role role);

/// One chat message. turn_index pairs user/assistant messages of the same
/// conversational turn; a system preamble sits at turn 0. Assistant messages
/// produced through a backend carry the entropy stats of their generation.
struct Message {
  Role role = Role::User;
  std::string content;
  int turn_index = 1;
  std::optional<entropy::TurnStats> stats;
};

}  // namespace ergo
