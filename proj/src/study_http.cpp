#include "gma/study_http.hpp"

#include <fstream>
#include <iterator>

#include <fmt/format.h>
#include <httplib.h>

#include "gma/errors.hpp"

namespace gma::study {

using nlohmann::json;

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, std::string_view kind, std::string_view message) {
  send_json(res, status, {{"error", kind}, {"message", message}});
}

template <typename Fn>
void guarded(httplib::Response& res, Fn&& fn) {
  try {
    fn();
  } catch (const UnknownStudy& e) {
    send_error(res, 404, "UnknownStudy", e.what());
  } catch (const UnknownSession& e) {
    send_error(res, 404, "UnknownSession", e.what());
  } catch (const OutOfOrder& e) {
    send_error(res, 409, "OutOfOrder", e.what());
  } catch (const AlreadyLabelled& e) {
    send_error(res, 409, "AlreadyLabelled", e.what());
  } catch (const StudyExists& e) {
    send_error(res, 409, "StudyExists", e.what());
  } catch (const InvalidLabel& e) {
    send_error(res, 400, "InvalidLabel", e.what());
  } catch (const PoolTooSmall& e) {
    send_error(res, 400, "PoolTooSmall", e.what());
  } catch (const json::exception& e) {
    send_error(res, 400, "BadRequest", e.what());
  } catch (const ConfigError& e) {
    send_error(res, 400, "BadRequest", e.what());
  } catch (const DataError& e) {
    send_error(res, 400, "BadRequest", e.what());
  }
}

json parse_body(const httplib::Request& req) {
  json body = json::parse(req.body, nullptr, false);
  if (body.is_discarded() || !body.is_object()) throw ConfigError("request body must be a JSON object");
  return body;
}

json item_json(const NextItem& item) {
  if (std::holds_alternative<Completed>(item)) return {{"completed", true}};
  const auto& v = std::get<ItemView>(item);
  return {{"completed", false},
          {"snippet_id", v.snippet_id},
          {"media", v.media_url},
          {"position", v.position},
          {"total", v.total},
          {"subset", v.subset}};
}

json session_json(const Session& s) {
  return {{"session_id", s.session_id},
          {"study_id", s.study_id},
          {"assessor", s.assessor},
          {"position", s.cursor},
          {"state", s.state == SessionState::Completed ? "completed" : "active"}};
}

std::string content_type_for(const std::filesystem::path& p) {
  const auto ext = p.extension().string();
  if (ext == ".mp4") return "video/mp4";
  if (ext == ".zip") return "application/zip";
  if (ext == ".tar") return "application/x-tar";
  if (ext == ".png") return "image/png";
  return "application/octet-stream";
}

}  // namespace

HttpServer::HttpServer(StudyService& service, std::filesystem::path media_root)
    : service_(service), media_root_(std::move(media_root)), server_(std::make_unique<httplib::Server>()) {
  routes();
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) return server_->bind_to_any_port(host);
  return server_->bind_to_port(host, port) ? port : -1;
}

void HttpServer::serve() { server_->listen_after_bind(); }

void HttpServer::stop() {
  if (server_) server_->stop();
}

bool HttpServer::running() const { return server_->is_running(); }

void HttpServer::routes() {
  auto& s = *server_;

  s.Post("/studies", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const json body = parse_body(req);
      PlanRequest r;
      r.study_id = body.at("study_id").get<std::string>();
      for (const auto& e : body.at("pool")) {
        if (e.is_string()) {
          r.pool.push_back({e.get<std::string>(), ""});
        } else {
          r.pool.push_back({e.at("snippet_id").get<std::string>(), e.value("media", "")});
        }
      }
      r.count = body.value("count", 3);
      r.size = body.value("size", 280);
      r.seed = body.value("seed", std::uint64_t{0});
      r.condition = agree::parse_condition(body.value("condition", "face-blurred"));
      const auto plan = service_.create_study(r);
      send_json(res, 201,
                {{"study_id", plan.study_id},
                 {"condition", agree::to_string(plan.condition)},
                 {"subsets", plan.subsets}});
    });
  });

  s.Post(R"(/studies/([^/]+)/sessions)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const json body = parse_body(req);
      const auto session = service_.create_session(req.matches[1], body.at("assessor").get<std::string>());
      send_json(res, 200, session_json(session));
    });
  });

  s.Get(R"(/sessions/([^/]+)/next)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { send_json(res, 200, item_json(service_.next_item(req.matches[1]))); });
  });

  s.Post(R"(/sessions/([^/]+)/labels)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const json body = parse_body(req);
      if (!body.contains("label") || !body["label"].is_string()) throw InvalidLabel("label must be a string");
      agree::RatingLabel label;
      label.value = agree::parse_label_value(body["label"].get<std::string>());
      if (body.contains("reason") && !body["reason"].is_null()) {
        if (!body["reason"].is_string()) throw InvalidLabel("reason must be a string");
        label.reason = agree::parse_na_reason(body["reason"].get<std::string>());
      }
      const auto session = service_.submit_label(req.matches[1], body.at("snippet_id").get<std::string>(), label);
      send_json(res, 200, {{"accepted", true}, {"position", session.cursor}});
    });
  });

  s.Get(R"(/studies/([^/]+)/export\.csv)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const auto ex = service_.export_labels(req.matches[1]);
      res.set_header("X-Export-Complete", ex.complete ? "true" : "false");
      res.set_content(ex.csv, "text/csv");
    });
  });

  s.Get(R"(/media/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    const auto media = service_.media_for(req.matches[1]);
    if (!media || media->empty()) {
      send_error(res, 404, "UnknownMedia", fmt::format("no media for {}", std::string(req.matches[1])));
      return;
    }
    std::error_code ec;
    const auto root = std::filesystem::weakly_canonical(media_root_, ec);
    const auto file = std::filesystem::weakly_canonical(media_root_ / *media, ec);
    const auto rel = file.lexically_relative(root);
    if (ec || rel.empty() || rel.native().starts_with("..") || !std::filesystem::is_regular_file(file)) {
      send_error(res, 404, "UnknownMedia", fmt::format("media file for {} is unavailable", std::string(req.matches[1])));
      return;
    }
    std::ifstream in(file, std::ios::binary);
    std::string bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    res.set_content(std::move(bytes), content_type_for(file));
  });
}

}  // namespace gma::study
