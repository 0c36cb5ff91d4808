#include "evalverse/server.hpp"

#include <algorithm>
#include <condition_variable>
#include <deque>
#include <map>
#include <mutex>
#include <set>
#include <thread>
#include <vector>

#include <boost/asio.hpp>
#include <boost/beast.hpp>

#include "evalverse/error.hpp"
#include "evalverse/reporter.hpp"

namespace evalverse {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;

namespace {

std::vector<std::string_view> split_path(std::string_view target) {
  if (const auto q = target.find('?'); q != std::string_view::npos) target = target.substr(0, q);
  std::vector<std::string_view> parts;
  std::size_t pos = 0;
  while (pos < target.size()) {
    const auto slash = target.find('/', pos);
    const auto end = slash == std::string_view::npos ? target.size() : slash;
    if (end > pos) parts.push_back(target.substr(pos, end - pos));
    pos = end + 1;
  }
  return parts;
}

ApiResponse error_response(unsigned status, std::string_view code, std::string_view message) {
  Json body = Json::object();
  body["error"] = code;
  body["message"] = message;
  return {status, std::move(body)};
}

unsigned status_for(Errc code) {
  switch (code) {
    case Errc::UnknownSession:
    case Errc::UnknownJob:
    case Errc::NoData:
    case Errc::ModelNotFound:
      return 404;
    case Errc::IOFailure:
      return 500;
    default:
      return 400;
  }
}

Json parse_body(std::string_view body) {
  if (body.empty()) return Json::object();
  try {
    return Json::parse(body);
  } catch (const Json::parse_error& e) {
    throw Error(Errc::MalformedInput, e.what());
  }
}

std::vector<std::string> string_list(const Json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_array()) {
    throw Error(Errc::MalformedInput, std::string("'") + key + "' must be an array of strings");
  }
  std::vector<std::string> out;
  for (const auto& v : j.at(key)) {
    if (!v.is_string()) throw Error(Errc::MalformedInput, std::string("'") + key + "' must hold strings");
    out.push_back(v.get<std::string>());
  }
  return out;
}

Json strings_to_json(const std::vector<std::string>& v) {
  Json out = Json::array();
  for (const auto& s : v) out.push_back(s);
  return out;
}

}  // namespace

Api::Api(Gateway& gateway, const Evaluator& evaluator, const Database& db)
    : gateway_(gateway), evaluator_(evaluator), db_(db) {}

ApiResponse Api::handle(std::string_view method, std::string_view target, std::string_view body) {
  const auto parts = split_path(target);
  const auto not_allowed = [&] {
    return error_response(405, "MethodNotAllowed", std::string(method) + " " + std::string(target));
  };
  try {
    if (parts.size() == 1 && parts[0] == "healthz") {
      if (method != "GET") return not_allowed();
      return {200, Json{{"status", "ok"}}};
    }
    if (!parts.empty() && parts[0] == "sessions") {
      if (parts.size() == 1) {
        if (method != "POST") return not_allowed();
        const auto req = parse_body(body);
        std::string user;
        if (req.contains("user_id")) {
          if (!req.at("user_id").is_string()) throw Error(Errc::MalformedInput, "'user_id' must be a string");
          user = req.at("user_id").get<std::string>();
        }
        Json out = Json::object();
        out["session_id"] = gateway_.open_session(user);
        return {200, std::move(out)};
      }
      const std::string id(parts[1]);
      if (parts.size() == 2) {
        if (method != "GET") return not_allowed();
        const auto s = gateway_.session(id);
        Json out = Json::object();
        out["session_id"] = s.session_id;
        out["user_id"] = s.user_id;
        out["state"] = session_state_name(s.state);
        return {200, std::move(out)};
      }
      if (parts.size() == 3 && parts[2] == "events") {
        if (method != "POST") return not_allowed();
        if (!gateway_.has_session(id)) throw Error(Errc::UnknownSession, id);
        const auto event = event_from_json(parse_body(body));
        Json out = Json::array();
        for (const auto& r : gateway_.handle_event(id, event)) out.push_back(reply_to_json(r));
        return {200, std::move(out)};
      }
    }
    if (!parts.empty() && parts[0] == "jobs") {
      if (method != "GET") return not_allowed();
      if (parts.size() == 1) return {200, strings_to_json(evaluator_.job_ids())};
      if (parts.size() == 2) return {200, job_to_json(evaluator_.job_status(std::string(parts[1])))};
    }
    if (parts.size() == 1 && parts[0] == "models") {
      if (method != "GET") return not_allowed();
      return {200, strings_to_json(db_.list_models())};
    }
    if (parts.size() == 1 && parts[0] == "reports") {
      if (method != "POST") return not_allowed();
      const auto req = parse_body(body);
      if (!req.is_object()) throw Error(Errc::MalformedInput, "request body must be an object");
      const auto models = string_list(req, "models");
      std::vector<Criterion> criteria;
      for (const auto& name : string_list(req, "criteria")) {
        const auto c = parse_criterion(name);
        if (!c) throw Error(Errc::UnknownCriterion, name);
        criteria.push_back(*c);
      }
      return {200, report_to_json(build_report(models, criteria, db_))};
    }
    return error_response(404, "NotFound", std::string(target));
  } catch (const Error& e) {
    return error_response(status_for(e.code()), errc_name(e.code()), e.what());
  } catch (const std::exception& e) {
    return error_response(500, "Internal", e.what());
  }
}

namespace {

class WsSession;

// Routes gateway replies to the sockets watching each session.
class Hub {
 public:
  void add(const std::string& session_id, const std::shared_ptr<WsSession>& ws) {
    std::lock_guard lock(mutex_);
    subscribers_[session_id].push_back(ws);
  }
  void remove(const std::string& session_id, const WsSession* ws) {
    std::lock_guard lock(mutex_);
    auto it = subscribers_.find(session_id);
    if (it == subscribers_.end()) return;
    std::erase_if(it->second, [&](const auto& w) {
      auto p = w.lock();
      return !p || p.get() == ws;
    });
    if (it->second.empty()) subscribers_.erase(it);
  }
  std::vector<std::shared_ptr<WsSession>> subscribers(const std::string& session_id) {
    std::lock_guard lock(mutex_);
    std::vector<std::shared_ptr<WsSession>> out;
    if (auto it = subscribers_.find(session_id); it != subscribers_.end()) {
      for (const auto& w : it->second) {
        if (auto p = w.lock()) out.push_back(std::move(p));
      }
    }
    return out;
  }
  std::vector<std::shared_ptr<WsSession>> all() {
    std::lock_guard lock(mutex_);
    std::vector<std::shared_ptr<WsSession>> out;
    for (const auto& [id, list] : subscribers_) {
      for (const auto& w : list) {
        if (auto p = w.lock()) out.push_back(std::move(p));
      }
    }
    return out;
  }

 private:
  std::mutex mutex_;
  std::map<std::string, std::vector<std::weak_ptr<WsSession>>> subscribers_;
};

class WsSession : public std::enable_shared_from_this<WsSession> {
 public:
  WsSession(tcp::socket socket, Gateway& gateway, Hub& hub, std::string session_id)
      : ws_(std::move(socket)), gateway_(gateway), hub_(hub), session_id_(std::move(session_id)) {}

  void accept(http::request<http::string_body> req) {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept(req, beast::bind_front_handler(&WsSession::on_accept, shared_from_this()));
  }

  void send(std::string text) {
    asio::post(ws_.get_executor(), [self = shared_from_this(), text = std::move(text)]() mutable {
      if (self->closed_) return;
      self->outbox_.push_back(std::move(text));
      if (self->outbox_.size() == 1) self->write_next();
    });
  }

  void close() {
    asio::post(ws_.get_executor(), [self = shared_from_this()] {
      if (self->closed_) return;
      self->closed_ = true;
      beast::error_code ec;
      beast::get_lowest_layer(self->ws_).socket().shutdown(tcp::socket::shutdown_both, ec);
      beast::get_lowest_layer(self->ws_).socket().close(ec);
    });
  }

 private:
  void on_accept(beast::error_code ec) {
    if (ec) return;
    hub_.add(session_id_, shared_from_this());
    read_next();
  }

  void read_next() {
    ws_.async_read(buffer_, beast::bind_front_handler(&WsSession::on_read, shared_from_this()));
  }

  void on_read(beast::error_code ec, std::size_t) {
    if (ec) {
      closed_ = true;
      hub_.remove(session_id_, this);
      return;
    }
    const auto text = beast::buffers_to_string(buffer_.data());
    buffer_.consume(buffer_.size());
    // Replies reach this socket through the gateway sink; only input errors
    // are answered here.
    try {
      gateway_.handle_event(session_id_, event_from_json(Json::parse(text)));
    } catch (const std::exception& e) {
      GatewayReply r;
      r.kind = GatewayReply::Kind::Error;
      r.text = e.what();
      send(reply_to_json(r).dump());
    }
    read_next();
  }

  void write_next() {
    ws_.text(true);
    ws_.async_write(asio::buffer(outbox_.front()),
                    beast::bind_front_handler(&WsSession::on_write, shared_from_this()));
  }

  void on_write(beast::error_code ec, std::size_t) {
    if (ec) {
      closed_ = true;
      outbox_.clear();
      hub_.remove(session_id_, this);
      return;
    }
    outbox_.pop_front();
    if (!outbox_.empty()) write_next();
  }

  websocket::stream<beast::tcp_stream> ws_;
  Gateway& gateway_;
  Hub& hub_;
  std::string session_id_;
  beast::flat_buffer buffer_;
  std::deque<std::string> outbox_;
  bool closed_ = false;
};

class HttpSession : public std::enable_shared_from_this<HttpSession> {
 public:
  HttpSession(tcp::socket socket, Api& api, Gateway& gateway, Hub& hub)
      : stream_(std::move(socket)), api_(api), gateway_(gateway), hub_(hub) {}

  void run() {
    asio::dispatch(stream_.get_executor(),
                   beast::bind_front_handler(&HttpSession::read_next, shared_from_this()));
  }

 private:
  void read_next() {
    req_ = {};
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buffer_, req_,
                     beast::bind_front_handler(&HttpSession::on_read, shared_from_this()));
  }

  void on_read(beast::error_code ec, std::size_t) {
    if (ec) {
      beast::error_code ignored;
      stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
      return;
    }
    if (websocket::is_upgrade(req_)) {
      const auto parts = split_path(std::string_view(req_.target().data(), req_.target().size()));
      if (parts.size() == 3 && parts[0] == "sessions" && parts[2] == "stream" &&
          gateway_.has_session(std::string(parts[1]))) {
        stream_.expires_never();
        std::make_shared<WsSession>(stream_.release_socket(), gateway_, hub_, std::string(parts[1]))
            ->accept(std::move(req_));
        return;
      }
      write(error_response(404, "UnknownSession", std::string(req_.target())), false);
      return;
    }
    const auto res = api_.handle(std::string_view(req_.method_string().data(), req_.method_string().size()),
                                 std::string_view(req_.target().data(), req_.target().size()),
                                 req_.body());
    write(res, req_.keep_alive());
  }

  void write(const ApiResponse& api_res, bool keep_alive) {
    auto res = std::make_shared<http::response<http::string_body>>(
        static_cast<http::status>(api_res.status), req_.version());
    res->set(http::field::content_type, "application/json");
    res->keep_alive(keep_alive);
    res->body() = api_res.body.dump();
    res->prepare_payload();
    http::async_write(stream_, *res,
                      [self = shared_from_this(), res](beast::error_code ec, std::size_t) {
                        if (ec || !res->keep_alive()) {
                          beast::error_code ignored;
                          self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
                          return;
                        }
                        self->read_next();
                      });
  }

  beast::tcp_stream stream_;
  Api& api_;
  Gateway& gateway_;
  Hub& hub_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> req_;
};

}  // namespace

struct Server::Impl {
  Impl(Gateway& g, const Evaluator& e, const Database& d, ServerOptions o)
      : gateway(g), api(g, e, d), options(std::move(o)), acceptor(ioc) {}

  void accept_next() {
    acceptor.async_accept(asio::make_strand(ioc), [this](beast::error_code ec, tcp::socket socket) {
      if (ec) return;  // acceptor closed
      std::make_shared<HttpSession>(std::move(socket), api, gateway, hub)->run();
      accept_next();
    });
  }

  void notify_loop() {
    std::unique_lock lock(mutex);
    while (!stopping) {
      cv.wait_for(lock, options.notify_interval, [this] { return stopping; });
      if (stopping) break;
      lock.unlock();
      gateway.notify_completions();
      lock.lock();
    }
  }

  Gateway& gateway;
  Api api;
  ServerOptions options;
  Hub hub;
  asio::io_context ioc;
  tcp::acceptor acceptor;
  std::optional<asio::executor_work_guard<asio::io_context::executor_type>> work;
  std::vector<std::thread> threads;
  std::thread notifier;

  std::mutex mutex;
  std::condition_variable cv;
  bool started = false;
  unsigned short bound_port = 0;
  bool stopping = false;
};

Server::Server(Gateway& gateway, const Evaluator& evaluator, const Database& db, ServerOptions options)
    : impl_(std::make_unique<Impl>(gateway, evaluator, db, std::move(options))) {}

Server::~Server() { stop(); }

void Server::start() {
  auto& s = *impl_;
  if (s.options.io_threads < 1) throw Error(Errc::InvalidArgument, "io_threads must be >= 1");
  beast::error_code ec;
  const auto address = asio::ip::make_address(s.options.host, ec);
  if (ec) throw Error(Errc::InvalidArgument, "bad listen host '" + s.options.host + "'");
  const tcp::endpoint endpoint(address, s.options.port);

  s.acceptor.open(endpoint.protocol(), ec);
  if (!ec) s.acceptor.set_option(asio::socket_base::reuse_address(true), ec);
  if (!ec) s.acceptor.bind(endpoint, ec);
  if (!ec) s.acceptor.listen(asio::socket_base::max_listen_connections, ec);
  if (ec) {
    beast::error_code ignored;
    s.acceptor.close(ignored);
    throw Error(Errc::AddressInUse, s.options.host + ":" + std::to_string(s.options.port) + ": " +
                                        ec.message());
  }

  s.gateway.set_sink([&s](const std::string& session_id, const GatewayReply& reply) {
    const auto text = reply_to_json(reply).dump();
    for (const auto& ws : s.hub.subscribers(session_id)) ws->send(text);
  });

  s.bound_port = s.acceptor.local_endpoint().port();
  s.work.emplace(s.ioc.get_executor());
  s.accept_next();
  for (int i = 0; i < s.options.io_threads; ++i) s.threads.emplace_back([&s] { s.ioc.run(); });
  s.notifier = std::thread([&s] { s.notify_loop(); });
  std::lock_guard lock(s.mutex);
  s.started = true;
}

void Server::stop() {
  auto& s = *impl_;
  {
    std::lock_guard lock(s.mutex);
    if (!s.started || s.stopping) {
      s.stopping = true;
      s.cv.notify_all();
      return;
    }
    s.stopping = true;
  }
  s.cv.notify_all();
  if (s.notifier.joinable()) s.notifier.join();
  s.gateway.set_sink(nullptr);

  asio::post(s.ioc, [&s] {
    beast::error_code ignored;
    s.acceptor.close(ignored);
  });
  for (const auto& ws : s.hub.all()) ws->close();
  s.work.reset();
  // Give open connections a moment to wind down, then force the loop out.
  asio::steady_timer timer(s.ioc, std::chrono::milliseconds(200));
  timer.async_wait([&s](beast::error_code) { s.ioc.stop(); });
  for (auto& t : s.threads) t.join();
  s.threads.clear();
}

void Server::wait() {
  auto& s = *impl_;
  std::unique_lock lock(s.mutex);
  s.cv.wait(lock, [&s] { return s.stopping; });
}

unsigned short Server::port() const {
  return impl_->bound_port;
}

}  // namespace evalverse
