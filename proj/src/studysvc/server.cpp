#include <thread>

#include "etiobench/studysvc.hpp"
#include "httplib.h"

namespace etio::studysvc {

namespace {

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::unknown_dataset:
    case ErrorCode::unknown_session:
      return 404;
    case ErrorCode::bad_request:
    case ErrorCode::invalid_mode:
    case ErrorCode::unknown_label:
      return 400;
    default:
      return 409;
  }
}

void send_json(httplib::Response& res, int status, const nlohmann::ordered_json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, ErrorCode code, const std::string& message) {
  send_json(res, http_status(code), {{"error", {{"code", code_name(code)}, {"message", message}}}});
}

// Runs a handler and maps every failure onto a structured error body.
template <typename Fn>
httplib::Server::Handler guarded(Fn fn) {
  return [fn](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const StudyError& e) {
      send_error(res, e.code(), e.what());
    } catch (const nlohmann::json::exception& e) {
      send_error(res, ErrorCode::bad_request, std::string("malformed JSON body: ") + e.what());
    } catch (const std::exception& e) {
      send_json(res, 500, {{"error", {{"code", "internal"}, {"message", e.what()}}}});
    }
  };
}

nlohmann::json body_of(const httplib::Request& req) {
  auto j = nlohmann::json::parse(req.body);
  if (!j.is_object()) throw StudyError(ErrorCode::bad_request, "request body must be a JSON object");
  return j;
}

template <typename T>
T query_number(const httplib::Request& req, const char* key, T fallback) {
  if (!req.has_param(key)) return fallback;
  try {
    return static_cast<T>(std::stoull(req.get_param_value(key)));
  } catch (const std::exception&) {
    throw StudyError(ErrorCode::bad_request, std::string("query parameter '") + key + "' must be a non-negative integer");
  }
}

}  // namespace

struct StudyServer::Impl {
  StudyService& service;
  httplib::Server server;
  std::thread thread;

  explicit Impl(StudyService& s) : service(s) {
    server.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
    server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type");
      res.status = 204;
    });

    server.Post("/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto j = body_of(req);
      const auto s = service.create_session(j.at("rater_id").get<std::string>(),
                                            parse_mode(j.at("task_mode").get<std::string>()),
                                            j.at("dataset_id").get<std::string>(), j.value("seed", std::uint64_t{0}));
      send_json(res, 201, session_json(s));
    }));

    server.Get("/sessions/:id/case", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto& id = req.path_params.at("id");
      const auto index = query_number<std::size_t>(req, "index", service.session(id).cursor);
      send_json(res, 200, service.case_payload(id, index));
    }));

    server.Post("/sessions/:id/response", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const auto j = body_of(req);
      send_json(res, 200,
                service.submit_response(req.path_params.at("id"), j.at("case_id").get<std::string>(),
                                        j.at("label").get<std::string>()));
    }));

    server.Post("/sessions/:id/finalize", guarded([this](const httplib::Request& req, httplib::Response& res) {
      send_json(res, 200, session_json(service.finalize(req.path_params.at("id"))));
    }));

    server.Get("/reports/:dataset_id", guarded([this](const httplib::Request& req, httplib::Response& res) {
      const int replicates = query_number<int>(req, "replicates", diagstats::kDefaultBootstrapReplicates);
      const auto seed = query_number<std::uint64_t>(req, "seed", 0);
      send_json(res, 200, service.report(req.path_params.at("dataset_id"), replicates, seed));
    }));
  }
};

StudyServer::StudyServer(StudyService& service) : impl_(std::make_unique<Impl>(service)) {}

StudyServer::~StudyServer() { stop(); }

int StudyServer::start(const std::string& host, int port) {
  const int bound = port == 0 ? impl_->server.bind_to_any_port(host) : impl_->server.bind_to_port(host, port) ? port : -1;
  if (bound < 0) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  impl_->thread = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

bool StudyServer::listen(const std::string& host, int port) { return impl_->server.listen(host, port); }

void StudyServer::stop() {
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace etio::studysvc
