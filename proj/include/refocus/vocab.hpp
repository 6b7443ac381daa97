#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace refocus {

using Token = int32_t;
using TokenSequence = std::vector<Token>;

enum class Role { observation, action, feedback, control };

// Token alphabet. Ids are dense in [0, V); each id has exactly one role.
// The first eight ids are shared by every environment.
class Vocab {
 public:
  static constexpr Token kPad = 0;        // control
  static constexpr Token kEos = 1;        // control, terminates every action
  static constexpr Token kFbBegin = 2;    // control, opens a feedback block
  static constexpr Token kFbEnd = 3;      // control, closes a feedback block
  static constexpr Token kErr = 4;        // control, error-class marker in observations
  static constexpr Token kOk = 5;         // observation
  static constexpr Token kCorrectIs = 6;  // feedback, prefixes an oracle correction
  static constexpr Token kFbNote = 7;     // feedback, generic fallback content

  // Vocab with only the shared ids; environments append their own.
  static Vocab base();

  Token add(const std::string& name, Role role);

  int size() const { return static_cast<int>(roles_.size()); }
  Role role(Token id) const;
  const std::string& name(Token id) const;
  bool valid(Token id) const { return id >= 0 && id < size(); }

  // Ids the policy may emit: every action-role token plus EOS.
  const std::vector<Token>& legal_actions() const { return legal_actions_; }

 private:
  std::vector<Role> roles_;
  std::vector<std::string> names_;
  std::vector<Token> legal_actions_;
};

}  // namespace refocus
