#include "dialfuse/service_http.hpp"

#include <thread>

#include "dialfuse/error.hpp"
#include "httplib.h"

namespace dialfuse {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

void reply(httplib::Response& res, int status, const ordered_json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void reply_error(httplib::Response& res, int status, std::string_view code, const std::string& message) {
  reply(res, status, ordered_json{{"code", code}, {"message", message}});
}

json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return json::object();
  try {
    json j = json::parse(req.body);
    if (!j.is_object()) throw ValidationError("request body must be a JSON object");
    return j;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed JSON body: ") + e.what());
  }
}

std::string rater_of(const httplib::Request& req, const json& body) {
  if (body.contains("rater_id") && body["rater_id"].is_string()) return body["rater_id"].get<std::string>();
  return req.get_header_value("X-Rater-Id");
}

// Maps the library's error classes onto HTTP statuses.
template <typename F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const NotFound& e) {
      reply_error(res, 404, "not_found", e.what());
    } catch (const Conflict& e) {
      reply_error(res, 409, "conflict", e.what());
    } catch (const ValidationError& e) {
      reply_error(res, 400, "validation", e.what());
    } catch (const ParseError& e) {
      reply_error(res, 400, "validation", e.what());
    } catch (const TransportError& e) {
      reply_error(res, 502, "backend_unavailable", e.what());
    } catch (const ProviderError& e) {
      reply_error(res, 502, "backend_refused", e.what());
    } catch (const std::exception& e) {
      reply_error(res, 500, "internal", e.what());
    }
  };
}

}  // namespace

struct HttpFrontend::Impl {
  EvalService& service;
  httplib::Server server;
  std::thread thread;

  explicit Impl(EvalService& s) : service(s) {
    server.Post("/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
      json body = parse_body(req);
      if (!body.contains("model") || !body["model"].is_string()) throw ValidationError("'model' is required");
      reply(res, 201, session_to_json(service.create_session(body["model"].get<std::string>())));
    }));
    server.Get(R"(/sessions/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
      reply(res, 200, session_to_json(service.get_session(req.matches[1])));
    }));
    server.Post(R"(/sessions/([^/]+)/messages)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      json body = parse_body(req);
      if (!body.contains("text") || !body["text"].is_string()) throw ValidationError("'text' is required");
      MessageReply r = service.post_message(req.matches[1], body["text"].get<std::string>());
      reply(res, 200,
            ordered_json{{"schema_version", kServiceSchemaVersion},
                         {"session_id", std::string(req.matches[1])},
                         {"turn_index", r.turn_index},
                         {"response", r.response},
                         {"state", encode_state(r.outcome.state)},
                         {"knowledge", knowledge_to_json(r.outcome.knowledge)},
                         {"fallback", r.outcome.fallback}});
    }));
    server.Post(R"(/sessions/([^/]+)/rating)", guarded([this](const httplib::Request& req, httplib::Response& res) {
      json body = parse_body(req);
      Rating r = rating_from_json(body);
      r.session_id = req.matches[1];
      r.rater_id = rater_of(req, body);
      service.submit_rating(r);
      reply(res, 201, ordered_json{{"schema_version", kServiceSchemaVersion}, {"rating", rating_to_json(r)}});
    }));
    server.Post("/pairwise", guarded([this](const httplib::Request& req, httplib::Response& res) {
      json body = parse_body(req);
      PairwiseJudgment j = judgment_from_json(body);
      j.rater_id = rater_of(req, body);
      service.submit_pairwise(j);
      reply(res, 201, ordered_json{{"schema_version", kServiceSchemaVersion}, {"judgment", judgment_to_json(j)}});
    }));
    server.Get("/aggregates", guarded([this](const httplib::Request&, httplib::Response& res) {
      reply(res, 200, tables_to_json(service.aggregates()));
    }));
    server.Get("/models", guarded([this](const httplib::Request&, httplib::Response& res) {
      reply(res, 200, ordered_json{{"schema_version", kServiceSchemaVersion}, {"models", service.models()}});
    }));
    server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (res.body.empty()) reply_error(res, res.status, res.status == 404 ? "not_found" : "error", "no such route");
    });
  }
};

HttpFrontend::HttpFrontend(EvalService& service) : impl_(std::make_unique<Impl>(service)) {}

HttpFrontend::~HttpFrontend() { stop(); }

int HttpFrontend::bind(const std::string& host, int port) {
  if (port == 0) {
    int p = impl_->server.bind_to_any_port(host);
    if (p < 0) throw IoError("cannot bind " + host);
    return p;
  }
  if (!impl_->server.bind_to_port(host, port)) throw IoError("cannot bind " + host + ":" + std::to_string(port));
  return port;
}

void HttpFrontend::serve() { impl_->server.listen_after_bind(); }

int HttpFrontend::start(const std::string& host, int port) {
  int p = bind(host, port);
  impl_->thread = std::thread([this] { serve(); });
  impl_->server.wait_until_ready();
  return p;
}

void HttpFrontend::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace dialfuse
