#pragma once

// HTTP + WebSocket front end over the gateway, evaluator and store.
//
//   POST /sessions                 {"user_id"?}         -> {"session_id"}
//   GET  /sessions/{id}                                 -> {"session_id","user_id","state"}
//   POST /sessions/{id}/events     event                -> [reply, ...]
//   GET  /sessions/{id}/stream     WebSocket; every reply for the session is
//                                  pushed as a text frame, and text frames
//                                  received are handled as events
//   GET  /jobs                                          -> ["job id", ...]
//   GET  /jobs/{id}                                     -> job
//   GET  /models                                        -> ["model", ...]
//   POST /reports                  {"models","criteria"} -> report
//   GET  /healthz                                       -> {"status":"ok"}
//
// Errors are {"error": <code>, "message": <text>} with 400/404/405/500.

#include <chrono>
#include <memory>
#include <string>
#include <string_view>

#include "evalverse/database.hpp"
#include "evalverse/evaluator.hpp"
#include "evalverse/gateway.hpp"
#include "evalverse/serialization.hpp"

namespace evalverse {

struct ServerOptions {
  std::string host = "127.0.0.1";
  unsigned short port = 0;  // 0 picks a free port
  int io_threads = 2;
  // How often watched jobs are checked for completion.
  std::chrono::milliseconds notify_interval{1000};
};

struct ApiResponse {
  unsigned status = 200;
  Json body;
};

// Transport-independent request handling; the server calls this for every
// HTTP request.
class Api {
 public:
  Api(Gateway& gateway, const Evaluator& evaluator, const Database& db);

  ApiResponse handle(std::string_view method, std::string_view target, std::string_view body);

 private:
  Gateway& gateway_;
  const Evaluator& evaluator_;
  const Database& db_;
};

class Server {
 public:
  Server(Gateway& gateway, const Evaluator& evaluator, const Database& db,
         ServerOptions options = {});
  ~Server();

  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  // Binds and starts serving. Throws AddressInUse, InvalidArgument.
  void start();
  // Closes the listener and all connections; idempotent.
  void stop();
  // Blocks until stop() is called from another thread.
  void wait();

  unsigned short port() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace evalverse
