#pragma once

#include <memory>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "wallet/api/service.hpp"
#include "wallet/error.hpp"

namespace httplib {
class Server;
}

namespace wallet::api {

/// One row of the authorization matrix. `path` uses `{param}` segments.
/// Public endpoints need no token; the others answer 401 without a valid
/// token and 403 for a role outside `roles`.
struct EndpointPolicy {
  std::string method;
  std::string path;
  bool is_public = false;
  std::vector<Role> roles;
};

const std::vector<EndpointPolicy>& endpoint_policies();
bool allowed(const EndpointPolicy& p, Role r);

int http_status(Errc code);
/// `{"error": {"code": "<Errc name>", "message": ...}}`
nlohmann::json error_body(Errc code, std::string_view message);

class HttpServer {
 public:
  /// Binds immediately; port 0 picks a free port. Throws SourceUnavailable.
  HttpServer(Wallet& wallet, const std::string& host, std::uint16_t port);
  ~HttpServer();

  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  void start();
  void stop();
  /// Serves on the calling thread until stop().
  void run();
  std::uint16_t port() const { return port_; }

 private:
  void install_routes();

  Wallet& wallet_;
  std::unique_ptr<httplib::Server> server_;
  std::uint16_t port_ = 0;
  std::thread thread_;
};

}  // namespace wallet::api
