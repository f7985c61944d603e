#include "gaia/server.hpp"

#include <atomic>
#include <condition_variable>
#include <functional>
#include <map>
#include <mutex>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast.hpp>
#include <boost/beast/websocket.hpp>
#include <spdlog/spdlog.h>

#include "gaia/api.hpp"
#include "gaia/error.hpp"

namespace gaia::service {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;
using asio::awaitable;
using asio::use_awaitable;
using nlohmann::json;

namespace {

constexpr std::uint64_t kBodyLimit = 64ull << 20;

http::response<http::string_body> make_response(const http::request<http::string_body>& req,
                                                const HttpResponse& r) {
  http::response<http::string_body> res{static_cast<http::status>(r.status), req.version()};
  res.set(http::field::server, "gaia");
  res.set(http::field::content_type, r.content_type);
  res.set(http::field::access_control_allow_origin, "*");
  res.keep_alive(req.keep_alive());
  res.body() = r.body;
  res.prepare_payload();
  return res;
}

}  // namespace

struct Server::Impl {
  Impl(Platform& platform, ServerOptions options)
      : platform(platform), api(platform), options(std::move(options)),
        ioc(std::max(1, this->options.threads)), acceptor(asio::make_strand(ioc)) {}

  Platform& platform;
  Api api;
  ServerOptions options;
  asio::io_context ioc;
  tcp::acceptor acceptor;
  std::vector<std::thread> threads;
  std::atomic<bool> stopping{false};
  bool started = false;
  bool stopped = false;
  std::mutex stop_mutex;

  std::mutex active_mutex;
  std::condition_variable active_cv;
  int active = 0;  // requests being handled plus open WebSockets

  // Connections still open when the drain timeout runs out get closed from
  // here; a stopped io_context would otherwise leave their sockets dangling.
  std::mutex conn_mutex;
  std::uint64_t next_conn = 0;
  std::map<std::uint64_t, std::function<void()>> closers;

  struct ConnGuard {
    Impl* impl;
    std::uint64_t id;
    ConnGuard(Impl* i, std::function<void()> closer) : impl(i) {
      std::lock_guard lock(impl->conn_mutex);
      id = impl->next_conn++;
      impl->closers.emplace(id, std::move(closer));
    }
    ~ConnGuard() {
      std::lock_guard lock(impl->conn_mutex);
      impl->closers.erase(id);
    }
  };

  void close_connections() {
    std::lock_guard lock(conn_mutex);
    for (auto& [id, close] : closers) close();
  }

  struct ActiveGuard {
    Impl* impl;
    explicit ActiveGuard(Impl* i) : impl(i) {
      std::lock_guard lock(impl->active_mutex);
      ++impl->active;
    }
    ~ActiveGuard() {
      std::lock_guard lock(impl->active_mutex);
      --impl->active;
      impl->active_cv.notify_all();
    }
  };

  awaitable<void> accept_loop() {
    while (!stopping) {
      beast::error_code ec;
      tcp::socket socket = co_await acceptor.async_accept(
          asio::make_strand(ioc), asio::redirect_error(use_awaitable, ec));
      if (ec) {
        if (stopping || ec == asio::error::operation_aborted) break;
        spdlog::warn("accept failed: {}", ec.message());
        continue;
      }
      // Small responses would otherwise wait on delayed ACKs.
      socket.set_option(tcp::no_delay(true), ec);
      asio::co_spawn(socket.get_executor(), session(std::move(socket)), asio::detached);
    }
  }

  awaitable<void> session(tcp::socket socket) {
    beast::tcp_stream stream(std::move(socket));
    beast::flat_buffer buffer;
    auto ex = stream.get_executor();
    auto* raw = &stream.socket();
    // Both the session and the posted close run on the connection's strand.
    auto alive = std::make_shared<bool>(true);
    struct Dead {
      std::shared_ptr<bool> flag;
      ~Dead() { *flag = false; }
    } dead{alive};
    ConnGuard conn(this, [ex, raw, alive] {
      asio::post(ex, [raw, alive] {
        if (!*alive) return;
        beast::error_code ec;
        raw->shutdown(tcp::socket::shutdown_both, ec);
        raw->close(ec);
      });
    });
    try {
      while (!stopping) {
        http::request_parser<http::string_body> parser;
        parser.body_limit(kBodyLimit);
        stream.expires_after(std::chrono::seconds(60));
        co_await http::async_read(stream, buffer, parser, use_awaitable);
        http::request<http::string_body> req = parser.release();
        const std::string target(req.target());

        if (websocket::is_upgrade(req)) {
          if (target == "/ws/notifications" || target.starts_with("/ws/notifications?")) {
            co_await websocket_session(std::move(stream), std::move(req));
            co_return;
          }
          auto res = make_response(req, {404, "application/json",
                                         error_body(Error(Errc::not_found, "no such channel"))});
          res.keep_alive(false);
          co_await http::async_write(stream, res, use_awaitable);
          break;
        }

        http::response<http::string_body> res;
        if (req.method() == http::verb::options) {
          res = make_response(req, {204, "text/plain", ""});
          res.set(http::field::access_control_allow_methods, "GET, POST, PUT, DELETE, OPTIONS");
          res.set(http::field::access_control_allow_headers, "Authorization, Content-Type");
        } else {
          ActiveGuard guard(this);
          HttpRequest r{std::string(req.method_string()), target,
                        std::string(req[http::field::authorization]), std::move(req.body())};
          res = make_response(req, api.handle(r));
        }
        if (stopping) res.keep_alive(false);
        const bool keep = res.keep_alive();
        co_await http::async_write(stream, res, use_awaitable);
        if (!keep) break;
      }
    } catch (const boost::system::system_error& e) {
      if (e.code() != http::error::end_of_stream && e.code() != beast::error::timeout &&
          e.code() != asio::error::operation_aborted && e.code() != asio::error::eof) {
        spdlog::debug("connection closed: {}", e.code().message());
      }
    }
    beast::error_code ec;
    stream.socket().shutdown(tcp::socket::shutdown_send, ec);
  }

  awaitable<void> websocket_session(beast::tcp_stream stream, http::request<http::string_body> req) {
    const ParsedTarget parsed = parse_target(std::string_view(req.target().data(), req.target().size()));
    auto param = [&](const char* key) -> std::string {
      auto it = parsed.query.find(key);
      return it == parsed.query.end() ? std::string{} : it->second;
    };
    // Browsers cannot set headers on a WebSocket handshake, so the token may
    // also come as a query parameter.
    std::optional<std::string> token = bearer_token(std::string(req[http::field::authorization]));
    if (!token && !param("token").empty()) token = param("token");

    std::shared_ptr<notify::Subscription> sub;
    HttpResponse refusal;
    if (!token || !platform.user(*token)) {
      refusal = {401, "application/json",
                 json{{"error", {{"code", "Unauthorized"}, {"message", "missing or unknown user"}}}}.dump()};
    } else {
      try {
        std::optional<std::set<rules::Category>> categories;
        if (const auto csv = param("categories"); !csv.empty()) {
          categories.emplace();
          std::size_t start = 0;
          while (start <= csv.size()) {
            auto comma = csv.find(',', start);
            if (comma == std::string::npos) comma = csv.size();
            const auto name = csv.substr(start, comma - start);
            auto c = rules::parse_category(name);
            if (!c) throw Error(Errc::validation_failed, "unknown category '" + name + "'");
            categories->insert(*c);
            start = comma + 1;
          }
        }
        sub = platform.notifier().subscribe(*token, param("scope"), categories);
      } catch (const Error& e) {
        refusal = {http_status(e.code()), "application/json", error_body(e)};
      }
    }
    if (!sub) {
      auto res = make_response(req, refusal);
      res.keep_alive(false);
      co_await http::async_write(stream, res, use_awaitable);
      co_return;
    }

    ActiveGuard guard(this);
    auto ex = co_await asio::this_coro::executor;
    auto ws = std::make_shared<websocket::stream<beast::tcp_stream>>(std::move(stream));
    std::weak_ptr<websocket::stream<beast::tcp_stream>> weak_ws = ws;
    ConnGuard conn(this, [ex, weak_ws] {
      asio::post(ex, [weak_ws] {
        if (auto w = weak_ws.lock()) {
          beast::error_code ec;
          beast::get_lowest_layer(*w).socket().shutdown(tcp::socket::shutdown_both, ec);
          beast::get_lowest_layer(*w).socket().close(ec);
        }
      });
    });
    auto signal = std::make_shared<asio::steady_timer>(ex);
    auto peer_gone = std::make_shared<bool>(false);
    std::weak_ptr<asio::steady_timer> weak_signal = signal;
    sub->set_listener([ex, weak_signal] {
      asio::post(ex, [weak_signal] {
        if (auto s = weak_signal.lock()) s->cancel();
      });
    });

    try {
      beast::get_lowest_layer(*ws).expires_never();
      ws->set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
      co_await ws->async_accept(req, use_awaitable);

      asio::co_spawn(
          ex,
          [ws, signal, peer_gone]() -> awaitable<void> {
            beast::flat_buffer in;
            beast::error_code ec;
            // Incoming frames are ignored; reading keeps pings and the close
            // handshake flowing.
            while (!ec) {
              co_await ws->async_read(in, asio::redirect_error(use_awaitable, ec));
              in.consume(in.size());
            }
            *peer_gone = true;
            signal->cancel();
          },
          asio::detached);

      while (true) {
        while (auto n = sub->try_next()) {
          ws->text(true);
          co_await ws->async_write(asio::buffer(notify::to_json(*n).dump()), use_awaitable);
        }
        if (*peer_gone) break;
        if (sub->closed()) {
          const auto code = stopping ? websocket::close_code::going_away
                                     : websocket::close_code::try_again_later;
          co_await ws->async_close(code, use_awaitable);
          break;
        }
        signal->expires_at(asio::steady_timer::time_point::max());
        beast::error_code ec;
        co_await signal->async_wait(asio::redirect_error(use_awaitable, ec));
      }
    } catch (const boost::system::system_error& e) {
      spdlog::debug("websocket {} ended: {}", sub->client(), e.code().message());
    }
    sub->set_listener({});
    platform.notifier().unsubscribe(sub);
  }
};

Server::Server(Platform& platform, ServerOptions options)
    : impl_(std::make_unique<Impl>(platform, std::move(options))) {}

Server::~Server() { stop(); }

void Server::start() {
  auto& i = *impl_;
  if (i.started) return;
  beast::error_code ec;
  const auto address = asio::ip::make_address(i.options.host, ec);
  if (ec) throw Error(Errc::bind_error, "bad listen address '" + i.options.host + "'");
  const tcp::endpoint endpoint(address, i.options.port);
  i.acceptor.open(endpoint.protocol(), ec);
  if (!ec) i.acceptor.set_option(asio::socket_base::reuse_address(true), ec);
  if (!ec) i.acceptor.bind(endpoint, ec);
  if (!ec) i.acceptor.listen(asio::socket_base::max_listen_connections, ec);
  if (ec) {
    throw Error(Errc::bind_error, "cannot listen on " + i.options.host + ":" +
                                      std::to_string(i.options.port) + ": " + ec.message());
  }
  asio::co_spawn(i.acceptor.get_executor(), i.accept_loop(), asio::detached);
  for (int t = 0; t < std::max(1, i.options.threads); ++t) {
    i.threads.emplace_back([&i] { i.ioc.run(); });
  }
  i.started = true;
  spdlog::info("listening on {}:{}", i.options.host, port());
}

std::uint16_t Server::port() const {
  beast::error_code ec;
  const auto ep = impl_->acceptor.local_endpoint(ec);
  return ec ? 0 : ep.port();
}

void Server::stop() {
  auto& i = *impl_;
  std::lock_guard lock(i.stop_mutex);
  if (!i.started || i.stopped) return;
  i.stopped = true;
  i.stopping = true;
  asio::post(i.acceptor.get_executor(), [&i] {
    beast::error_code ec;
    i.acceptor.close(ec);
  });
  // Closing the subscriptions makes every WebSocket send its close frame.
  i.platform.notifier().close_all();
  {
    std::unique_lock active(i.active_mutex);
    i.active_cv.wait_for(active, i.options.drain_timeout, [&i] { return i.active == 0; });
  }
  i.close_connections();
  {
    std::unique_lock active(i.active_mutex);
    i.active_cv.wait_for(active, std::chrono::milliseconds(200), [&i] { return i.active == 0; });
  }
  i.ioc.stop();
  for (auto& t : i.threads) {
    if (t.joinable()) t.join();
  }
  spdlog::info("server stopped");
}

}  // namespace gaia::service
