#pragma once

#include <filesystem>
#include <memory>
#include <string>

#include "gma/study.hpp"

namespace httplib {
class Server;
}

namespace gma::study {

/// JSON-over-HTTP front end for a StudyService.
///
///   POST /studies                    {study_id, pool, count, size, seed, condition}
///   POST /studies/{id}/sessions      {assessor}
///   GET  /sessions/{id}/next
///   POST /sessions/{id}/labels       {snippet_id, label, reason?}
///   GET  /studies/{id}/export.csv    (X-Export-Complete: true|false)
///   GET  /media/{snippet_id}
///
/// Errors come back as {"error": <kind>, "message": ...} with 400, 404 or 409.
class HttpServer {
 public:
  HttpServer(StudyService& service, std::filesystem::path media_root);
  ~HttpServer();

  /// Binds; port 0 picks a free port. Returns the bound port or -1.
  int bind(const std::string& host, int port);
  /// Blocks until stop().
  void serve();
  void stop();
  bool running() const;

 private:
  void routes();

  StudyService& service_;
  std::filesystem::path media_root_;
  std::unique_ptr<httplib::Server> server_;
};

}  // namespace gma::study
