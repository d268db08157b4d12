#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace wallet::api {

enum class Role { viewer, controller, admin };

std::string_view to_string(Role r);
/// Throws ValidationError.
Role parse_role(std::string_view s);

struct User {
  std::string id;
  std::string name;
  Role role = Role::viewer;
  std::string token;
};

/// Without the token.
nlohmann::json to_json(const User& u);
/// `[{"id","name","role","token"}, ...]`; throws ValidationError.
std::vector<User> users_from_json(const nlohmann::json& j);

class UserDirectory {
 public:
  UserDirectory() = default;
  /// Ids and tokens must be unique and non-empty.
  explicit UserDirectory(std::vector<User> users);

  /// Takes the full Authorization header value; nullptr unless it is
  /// `Bearer <known token>`.
  const User* authenticate(std::string_view header) const;
  const User* find(std::string_view id) const;
  const std::vector<User>& users() const { return users_; }

 private:
  std::vector<User> users_;
  std::map<std::string, std::size_t, std::less<>> by_token_;
};

}  // namespace wallet::api
