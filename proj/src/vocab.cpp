#include "refocus/vocab.hpp"

#include <stdexcept>

namespace refocus {

Vocab Vocab::base() {
  Vocab v;
  v.add("<pad>", Role::control);
  v.add("<eos>", Role::control);
  v.add("<fb>", Role::control);
  v.add("</fb>", Role::control);
  v.add("ERR", Role::control);
  v.add("OK", Role::observation);
  v.add("correct-is", Role::feedback);
  v.add("note", Role::feedback);
  return v;
}

Token Vocab::add(const std::string& name, Role role) {
  Token id = static_cast<Token>(roles_.size());
  roles_.push_back(role);
  names_.push_back(name);
  if (role == Role::action || id == kEos) legal_actions_.push_back(id);
  return id;
}

Role Vocab::role(Token id) const {
  if (!valid(id)) throw std::out_of_range("Vocab::role: bad token id");
  return roles_[id];
}

const std::string& Vocab::name(Token id) const {
  if (!valid(id)) throw std::out_of_range("Vocab::name: bad token id");
  return names_[id];
}

}  // namespace refocus
