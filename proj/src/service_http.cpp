// Keep above httplib.h (<resolv.h> defines _res).
#include "keyflow/service.hpp"

#include <httplib.h>

namespace keyflow::svc {

namespace {

void send(httplib::Response& res, const Response& r) {
  res.status = r.status;
  if (r.bytes) {
    res.set_content(*r.bytes, "application/octet-stream");
  } else {
    res.set_content(r.body.dump(), "application/json");
  }
}

// Empty bodies read as {}; malformed JSON becomes a 400 before reaching the service.
bool parse_body(const httplib::Request& req, httplib::Response& res, nlohmann::json& out) {
  if (req.body.empty()) {
    out = nlohmann::json::object();
    return true;
  }
  out = nlohmann::json::parse(req.body, nullptr, false);
  if (out.is_discarded()) {
    res.status = 400;
    res.set_content(nlohmann::json{{"error", "BadRequest"}, {"detail", "body is not valid JSON"}}.dump(),
                    "application/json");
    return false;
  }
  return true;
}

}  // namespace

void mount(httplib::Server& server, Service& service) {
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"},
                              {"Access-Control-Allow-Headers", "Content-Type"}});
  server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  server.Get("/health", [&](const httplib::Request&, httplib::Response& res) { send(res, service.health()); });
  server.Get("/skeleton", [&](const httplib::Request&, httplib::Response& res) { send(res, service.skeleton()); });

  server.Post("/session", [&](const httplib::Request& req, httplib::Response& res) {
    nlohmann::json body;
    if (parse_body(req, res, body)) send(res, service.create_session(body));
  });
  server.Get(R"(/session/([A-Za-z0-9]+))", [&](const httplib::Request& req, httplib::Response& res) {
    send(res, service.get_session(req.matches[1]));
  });
  server.Post(R"(/session/([A-Za-z0-9]+)/anchors)", [&](const httplib::Request& req, httplib::Response& res) {
    nlohmann::json body;
    if (parse_body(req, res, body)) send(res, service.edit_anchors(req.matches[1], body));
  });
  server.Post(R"(/session/([A-Za-z0-9]+)/generate)", [&](const httplib::Request& req, httplib::Response& res) {
    nlohmann::json body;
    if (parse_body(req, res, body)) send(res, service.generate(req.matches[1], body));
  });
  server.Get(R"(/session/([A-Za-z0-9]+)/export/([A-Za-z0-9]+))",
             [&](const httplib::Request& req, httplib::Response& res) {
               send(res, service.export_generation(req.matches[1], req.matches[2]));
             });
}

}  // namespace keyflow::svc
