#include "wallet/api/auth.hpp"

#include <set>

#include "wallet/error.hpp"

namespace wallet::api {

std::string_view to_string(Role r) {
  switch (r) {
    case Role::viewer: return "viewer";
    case Role::controller: return "controller";
    case Role::admin: return "admin";
  }
  return "?";
}

Role parse_role(std::string_view s) {
  if (s == "viewer") return Role::viewer;
  if (s == "controller") return Role::controller;
  if (s == "admin") return Role::admin;
  throw Error(Errc::validation_error, "role");
}

nlohmann::json to_json(const User& u) { return {{"id", u.id}, {"name", u.name}, {"role", to_string(u.role)}}; }

std::vector<User> users_from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw Error(Errc::validation_error, "users");
  std::vector<User> out;
  for (const auto& e : j) {
    if (!e.is_object()) throw Error(Errc::validation_error, "users");
    for (auto key : {"id", "role", "token"})
      if (!e.contains(key) || !e[key].is_string()) throw Error(Errc::validation_error, std::string("users.") + key);
    User u;
    u.id = e["id"].get<std::string>();
    u.name = e.value("name", u.id);
    u.role = parse_role(e["role"].get<std::string>());
    u.token = e["token"].get<std::string>();
    out.push_back(std::move(u));
  }
  return out;
}

UserDirectory::UserDirectory(std::vector<User> users) : users_(std::move(users)) {
  std::set<std::string> ids;
  for (std::size_t i = 0; i < users_.size(); ++i) {
    const auto& u = users_[i];
    if (u.id.empty() || !ids.insert(u.id).second) throw Error(Errc::validation_error, "duplicate or empty user id");
    if (u.token.empty() || !by_token_.emplace(u.token, i).second)
      throw Error(Errc::validation_error, "duplicate or empty token");
  }
}

const User* UserDirectory::authenticate(std::string_view header) const {
  constexpr std::string_view prefix = "Bearer ";
  if (!header.starts_with(prefix)) return nullptr;
  auto it = by_token_.find(header.substr(prefix.size()));
  return it == by_token_.end() ? nullptr : &users_[it->second];
}

const User* UserDirectory::find(std::string_view id) const {
  for (const auto& u : users_)
    if (u.id == id) return &u;
  return nullptr;
}

}  // namespace wallet::api
