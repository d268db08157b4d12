#include "wallet/api/server.hpp"

#include <algorithm>
#include <charconv>
#include <functional>

#include <httplib.h>
#include <spdlog/spdlog.h>

namespace wallet::api {

namespace {

using nlohmann::json;

constexpr Role V = Role::viewer, C = Role::controller, A = Role::admin;

struct Reply {
  int status = 200;
  json body;
};

struct Ctx {
  const User* user;  // null on public endpoints
  const httplib::Request& req;
};

using Handler = std::function<Reply(const Ctx&)>;

std::string param(const httplib::Request& req, const std::string& name) {
  auto it = req.path_params.find(name);
  return it == req.path_params.end() ? std::string() : it->second;
}

std::optional<std::string> query(const httplib::Request& req, const char* key) {
  if (!req.has_param(key)) return std::nullopt;
  return req.get_param_value(key);
}

Timestamp time_param(const httplib::Request& req, const char* key, Timestamp fallback) {
  auto v = query(req, key);
  return v ? parse_rfc3339(*v) : fallback;
}

std::int64_t int_param(const httplib::Request& req, const char* key, std::int64_t fallback) {
  auto v = query(req, key);
  if (!v) return fallback;
  std::int64_t out = 0;
  auto [ptr, ec] = std::from_chars(v->data(), v->data() + v->size(), out);
  if (ec != std::errc() || ptr != v->data() + v->size()) throw Error(Errc::validation_error, key);
  return out;
}

json body_json(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  try {
    return json::parse(req.body);
  } catch (const json::exception& e) {
    throw Error(Errc::malformed_json, e.what());
  }
}

std::string to_route(const std::string& path) {
  std::string out;
  for (std::size_t i = 0; i < path.size(); ++i) {
    if (path[i] == '{') {
      auto end = path.find('}', i);
      out += ':' + path.substr(i + 1, end - i - 1);
      i = end;
    } else {
      out += path[i];
    }
  }
  return out;
}

std::uint64_t id_param(const httplib::Request& req) {
  auto s = param(req, "id");
  std::uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw Error(Errc::not_found, s);
  return v;
}

void write_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

const char* kPlaceholderUi =
    "<!doctype html><html><head><meta charset=\"utf-8\"><title>wallet</title></head>"
    "<body><h1>wallet</h1><p>No dashboard bundle is configured. Set <code>server.ui_dir</code> to serve one.</p>"
    "</body></html>";

}  // namespace

const std::vector<EndpointPolicy>& endpoint_policies() {
  static const std::vector<EndpointPolicy> table{
      {"GET", "/healthz", true, {}},
      {"GET", "/api/meta", true, {}},
      {"GET", "/api/me", false, {V, C, A}},
      {"GET", "/api/sensors", false, {V, C, A}},
      {"POST", "/api/sensors", false, {A}},
      {"GET", "/api/sensors/{id}", false, {V, C, A}},
      {"GET", "/api/sensors/{id}/readings", false, {V, C, A}},
      {"GET", "/api/sensors/{id}/predictions", false, {V, C, A}},
      {"GET", "/api/sensors/{id}/forecast", false, {V, C, A}},
      {"GET", "/api/sensors/{id}/downlink", false, {V, C, A}},
      {"POST", "/api/sensors/{id}/downlink", false, {C, A}},
      {"GET", "/api/downlinks/{id}", false, {V, C, A}},
      {"GET", "/api/rules", false, {V, C, A}},
      {"POST", "/api/rules", false, {V, C, A}},
      {"PATCH", "/api/rules/{id}", false, {V, C, A}},
      {"DELETE", "/api/rules/{id}", false, {V, C, A}},
      {"GET", "/api/notifications", false, {V, C, A}},
      {"GET", "/api/models", false, {V, C, A}},
      {"POST", "/api/models/train", false, {A}},
      {"GET", "/api/models/train/{id}", false, {V, C, A}},
      {"GET", "/api/models/{version}/history", false, {V, C, A}},
  };
  return table;
}

bool allowed(const EndpointPolicy& p, Role r) {
  return p.is_public || std::find(p.roles.begin(), p.roles.end(), r) != p.roles.end();
}

int http_status(Errc code) {
  switch (code) {
    case Errc::malformed_json:
    case Errc::bad_timestamp:
    case Errc::invalid_range: return 400;
    case Errc::unauthorized: return 401;
    case Errc::forbidden: return 403;
    case Errc::not_found: return 404;
    case Errc::conflict:
    case Errc::no_model:
    case Errc::insufficient_history:
    case Errc::missing_metric:
    case Errc::too_few_rows:
    case Errc::too_short:
    case Errc::stats_mismatch:
    case Errc::invalid_transition: return 409;
    case Errc::payload_too_large: return 413;
    case Errc::missing_field:
    case Errc::invalid_field:
    case Errc::validation_error:
    case Errc::constant_feature:
    case Errc::unknown_kind:
    case Errc::bad_value:
    case Errc::domain_error:
    case Errc::length_mismatch: return 422;
    case Errc::sink_unavailable: return 502;
    case Errc::store_closed:
    case Errc::source_unavailable: return 503;
    case Errc::io_failure:
    case Errc::corruption:
    case Errc::shape_mismatch: return 500;
  }
  return 500;
}

json error_body(Errc code, std::string_view message) {
  return {{"error", {{"code", std::string(to_string(code))}, {"message", std::string(message)}}}};
}

HttpServer::HttpServer(Wallet& wallet, const std::string& host, std::uint16_t port)
    : wallet_(wallet), server_(std::make_unique<httplib::Server>()) {
  install_routes();
  int bound = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
  if (bound <= 0) throw Error(Errc::source_unavailable, "cannot bind " + host + ":" + std::to_string(port));
  port_ = static_cast<std::uint16_t>(bound);
}

HttpServer::~HttpServer() { stop(); }

void HttpServer::start() {
  if (thread_.joinable()) return;
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
}

void HttpServer::run() { server_->listen_after_bind(); }

void HttpServer::stop() {
  server_->stop();
  if (thread_.joinable()) thread_.join();
}

void HttpServer::install_routes() {
  Wallet& w = wallet_;
  std::map<std::pair<std::string, std::string>, Handler> h;

  h[{"GET", "/healthz"}] = [&w](const Ctx&) {
    return Reply{200, {{"status", "ok"}, {"model", w.registry().current_version().value_or("")}}};
  };
  h[{"GET", "/api/meta"}] = [&w](const Ctx&) {
    json m = w.meta();
    m["endpoints"] = json::array();
    for (const auto& p : endpoint_policies()) {
      json roles = json::array();
      for (auto r : p.roles) roles.push_back(to_string(r));
      m["endpoints"].push_back({{"method", p.method}, {"path", p.path}, {"public", p.is_public}, {"roles", roles}});
    }
    return Reply{200, m};
  };
  h[{"GET", "/api/me"}] = [](const Ctx& c) { return Reply{200, to_json(*c.user)}; };

  h[{"GET", "/api/sensors"}] = [&w](const Ctx&) {
    json out = json::array();
    for (const auto& s : w.sensors()) out.push_back(to_json(s));
    for (const auto& d : w.unregistered_devices()) {
      json metrics = json::array();
      for (const auto& m : w.store().metrics(d)) metrics.push_back({{"name", m}, {"unit", ""}});
      out.push_back({{"device_id", d}, {"registered", false}, {"metrics", metrics}});
    }
    return Reply{200, {{"sensors", out}}};
  };
  h[{"POST", "/api/sensors"}] = [&w](const Ctx& c) {
    return Reply{201, to_json(w.register_sensor(*c.user, sensor_from_json(body_json(c.req))))};
  };
  h[{"GET", "/api/sensors/{id}"}] = [&w](const Ctx& c) {
    auto id = param(c.req, "id");
    if (auto s = w.sensor(id)) return Reply{200, to_json(*s)};
    if (!w.known_device(id)) throw Error(Errc::not_found, id);
    json metrics = json::array();
    for (const auto& m : w.store().metrics(id)) metrics.push_back({{"name", m}, {"unit", ""}});
    return Reply{200, {{"device_id", id}, {"registered", false}, {"metrics", metrics}}};
  };
  h[{"GET", "/api/sensors/{id}/readings"}] = [&w](const Ctx& c) {
    auto id = param(c.req, "id");
    auto metric = query(c.req, "metric");
    if (!metric) throw Error(Errc::validation_error, "metric");
    auto limit = int_param(c.req, "limit", 1000);
    if (limit <= 0) throw Error(Errc::validation_error, "limit");
    auto page = w.readings(id, *metric, time_param(c.req, "from", Timestamp::min()),
                           time_param(c.req, "to", Timestamp::max()), static_cast<std::size_t>(limit),
                           query(c.req, "page_token"));
    json rows = json::array();
    for (const auto& p : page.points) rows.push_back({{"timestamp", format_rfc3339(p.timestamp)}, {"value", p.value}});
    json out{{"device_id", id}, {"metric", *metric}, {"readings", rows}, {"next_page_token", nullptr}};
    if (page.next_token) out["next_page_token"] = *page.next_token;
    return Reply{200, out};
  };
  h[{"GET", "/api/sensors/{id}/predictions"}] = [&w](const Ctx& c) {
    return Reply{200, w.predictions(param(c.req, "id"), time_param(c.req, "from", Timestamp::min()),
                                    time_param(c.req, "to", Timestamp::max()))};
  };
  h[{"GET", "/api/sensors/{id}/forecast"}] = [&w](const Ctx& c) {
    auto steps = int_param(c.req, "steps", 1);
    if (steps < 1 || steps > INT32_MAX) throw Error(Errc::validation_error, "steps");
    json out = json::array();
    for (const auto& r : w.forecast(param(c.req, "id"), static_cast<int>(steps))) out.push_back(forecast::to_json(r));
    return Reply{200, {{"device_id", param(c.req, "id")}, {"forecast", out}}};
  };
  h[{"GET", "/api/sensors/{id}/downlink"}] = [&w](const Ctx& c) {
    auto id = param(c.req, "id");
    if (!w.known_device(id)) throw Error(Errc::not_found, id);
    json out = json::array();
    for (const auto& d : w.downlinks().list(id)) out.push_back(to_json(d));
    return Reply{200, {{"downlinks", out}}};
  };
  h[{"POST", "/api/sensors/{id}/downlink"}] = [&w](const Ctx& c) {
    return Reply{202, to_json(w.enqueue_downlink(param(c.req, "id"), body_json(c.req)))};
  };
  h[{"GET", "/api/downlinks/{id}"}] = [&w](const Ctx& c) {
    auto d = w.downlinks().get(id_param(c.req));
    if (!d) throw Error(Errc::not_found, param(c.req, "id"));
    return Reply{200, to_json(*d)};
  };

  h[{"GET", "/api/rules"}] = [&w](const Ctx& c) {
    json out = json::array();
    for (const auto& r : w.list_rules(*c.user)) out.push_back(rules::to_json(r));
    return Reply{200, {{"rules", out}}};
  };
  h[{"POST", "/api/rules"}] = [&w](const Ctx& c) {
    return Reply{201, rules::to_json(w.create_rule(*c.user, body_json(c.req)))};
  };
  h[{"PATCH", "/api/rules/{id}"}] = [&w](const Ctx& c) {
    auto body = body_json(c.req);
    if (!body.contains("enabled") || !body["enabled"].is_boolean()) throw Error(Errc::validation_error, "enabled");
    return Reply{200, rules::to_json(w.set_rule_enabled(*c.user, param(c.req, "id"), body["enabled"].get<bool>()))};
  };
  h[{"DELETE", "/api/rules/{id}"}] = [&w](const Ctx& c) {
    w.delete_rule(*c.user, param(c.req, "id"));
    return Reply{204, nullptr};
  };
  h[{"GET", "/api/notifications"}] = [&w](const Ctx& c) {
    rules::NotificationQuery q;
    q.device_id = query(c.req, "device_id");
    q.rule_id = query(c.req, "rule_id");
    if (c.req.has_param("after_id")) q.after_id = static_cast<std::uint64_t>(int_param(c.req, "after_id", 0));
    auto limit = int_param(c.req, "limit", 100);
    if (limit <= 0) throw Error(Errc::validation_error, "limit");
    q.limit = static_cast<std::size_t>(limit);
    json out = json::array();
    for (const auto& n : w.notifications(*c.user, q)) out.push_back(rules::to_json(n));
    return Reply{200, {{"notifications", out}}};
  };

  h[{"GET", "/api/models"}] = [&w](const Ctx&) { return Reply{200, w.models()}; };
  h[{"POST", "/api/models/train"}] = [&w](const Ctx& c) {
    return Reply{202, to_json(w.start_training(train_request_from_json(body_json(c.req)), *c.user))};
  };
  h[{"GET", "/api/models/train/{id}"}] = [&w](const Ctx& c) {
    auto j = w.training_job(id_param(c.req));
    if (!j) throw Error(Errc::not_found, param(c.req, "id"));
    return Reply{200, to_json(*j)};
  };
  h[{"GET", "/api/models/{version}/history"}] = [&w](const Ctx& c) {
    auto version = param(c.req, "version");
    auto model = query(c.req, "model").value_or("ffnn");
    if (model != "ffnn" && model != "lstm") throw Error(Errc::validation_error, "model");
    auto versions = w.registry().versions();
    if (std::find(versions.begin(), versions.end(), version) == versions.end()) throw Error(Errc::not_found, version);
    json epochs = json::array();
    for (const auto& e : w.registry().history(version, model))
      epochs.push_back(
          {{"epoch", e.epoch}, {"train_msle", e.train_msle}, {"val_msle", e.val_msle}, {"val_mae", e.val_mae}});
    return Reply{200, {{"version", version}, {"model", model}, {"epochs", epochs}}};
  };

  for (const auto& policy : endpoint_policies()) {
    auto it = h.find({policy.method, policy.path});
    if (it == h.end()) throw Error(Errc::validation_error, "no handler for " + policy.method + " " + policy.path);
    auto wrapped = [&w, policy, handler = it->second](const httplib::Request& req, httplib::Response& res) {
      try {
        const User* user = nullptr;
        if (!policy.is_public) {
          user = w.users().authenticate(req.get_header_value("Authorization"));
          if (!user) throw Error(Errc::unauthorized, "missing or unknown bearer token");
          if (!allowed(policy, user->role))
            throw Error(Errc::forbidden, std::string(to_string(user->role)) + " may not " + policy.method + " " +
                                             policy.path);
        }
        auto reply = handler(Ctx{user, req});
        if (reply.status == 204) {
          res.status = 204;
        } else {
          write_json(res, reply.status, reply.body);
        }
      } catch (const Error& e) {
        write_json(res, http_status(e.code()), error_body(e.code(), e.what()));
      } catch (const std::exception& e) {
        spdlog::error("{} {}: {}", req.method, req.path, e.what());
        res.status = 500;
        res.set_content(json{{"error", {{"code", "InternalError"}, {"message", e.what()}}}}.dump(), "application/json");
      }
    };
    const auto route = to_route(policy.path);
    if (policy.method == "GET") server_->Get(route, wrapped);
    else if (policy.method == "POST") server_->Post(route, wrapped);
    else if (policy.method == "PATCH") server_->Patch(route, wrapped);
    else if (policy.method == "DELETE") server_->Delete(route, wrapped);
  }

  const auto& ui = w.config().server.ui_dir;
  if (!ui.empty() && std::filesystem::is_directory(ui)) {
    server_->set_mount_point("/ui", ui.string());
  } else {
    server_->Get("/ui/?", [](const httplib::Request&, httplib::Response& res) {
      res.set_content(kPlaceholderUi, "text/html; charset=utf-8");
    });
  }
  server_->set_error_handler([](const httplib::Request& req, httplib::Response& res) {
    if (!res.body.empty()) return;
    if (res.status == 404) write_json(res, 404, error_body(Errc::not_found, "no route for " + req.method + " " + req.path));
  });
  server_->set_logger([](const httplib::Request& req, const httplib::Response& res) {
    spdlog::debug("{} {} -> {}", req.method, req.path, res.status);
  });
}

}  // namespace wallet::api
