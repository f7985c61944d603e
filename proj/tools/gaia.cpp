// gaia: service entry point and command-line client.
#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <httplib.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "gaia/config.hpp"
#include "gaia/platform.hpp"
#include "gaia/server.hpp"
#include "gaia/sim.hpp"

using nlohmann::json;
namespace svc = gaia::service;

namespace {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string url_encode(const std::string& s) {
  static const char* hex = "0123456789ABCDEF";
  std::string out;
  for (unsigned char c : s) {
    if (std::isalnum(c) || c == '-' || c == '_' || c == '.' || c == '~' || c == '/') {
      out.push_back(static_cast<char>(c));
    } else {
      out.push_back('%');
      out.push_back(hex[c >> 4]);
      out.push_back(hex[c & 15]);
    }
  }
  return out;
}

struct Remote {
  std::string url = "http://127.0.0.1:8080";
  std::string token;

  httplib::Client client() const {
    httplib::Client c(url);
    c.set_connection_timeout(5);
    c.set_tcp_nodelay(true);
    c.set_read_timeout(60);
    return c;
  }
  httplib::Headers headers() const {
    httplib::Headers h;
    if (!token.empty()) h.emplace("Authorization", "Bearer " + token);
    return h;
  }
};

// Prints the body and maps the HTTP status onto the exit code.
int report(const httplib::Result& res) {
  if (!res) {
    std::cerr << "request failed: " << httplib::to_string(res.error()) << "\n";
    return 2;
  }
  try {
    std::cout << json::parse(res->body).dump(2) << "\n";
  } catch (const json::exception&) {
    std::cout << res->body << "\n";
  }
  return res->status >= 200 && res->status < 300 ? 0 : 1;
}

int serve(const std::string& config_path) {
  std::string path = config_path;
  if (path.empty()) {
    if (const char* env = std::getenv("GAIA_CONFIG")) path = env;
  }
  if (path.empty()) {
    std::cerr << "no configuration: pass --config or set GAIA_CONFIG\n";
    return 2;
  }
  svc::ServiceConfig cfg;
  try {
    cfg = svc::load_config(path);
  } catch (const svc::ConfigError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  }
  spdlog::set_level(spdlog::level::from_str(cfg.log_level));

  // Block the stop signals before any thread starts so only sigwait sees them.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  try {
    auto platform = svc::Platform::from_config(cfg);
    svc::Server server(*platform, svc::ServerOptions{cfg.host, cfg.port});
    server.start();
    std::cout << "listening on " << cfg.host << ":" << server.port() << std::endl;
    int sig = 0;
    sigwait(&signals, &sig);
    spdlog::info("signal {} received, stopping", sig);
    server.stop();
  } catch (const gaia::Error& e) {
    std::cerr << gaia::to_string(e.code()) << ": " << e.what() << "\n";
    return 1;
  }
  return 0;
}

int simulate(const std::string& config_path, const std::string& from, const std::string& to,
             const std::string& out, const std::string& post, const Remote& remote) {
  const auto cfg = gaia::sim::sim_config_from_json(json::parse(read_file(config_path)));
  const auto readings =
      gaia::sim::simulate(cfg, gaia::parse_instant(from), gaia::parse_instant(to));
  if (!post.empty()) {
    Remote target = remote;
    target.url = post;
    auto client = target.client();
    constexpr std::size_t batch = 500;
    for (std::size_t i = 0; i < readings.size(); i += batch) {
      json body = json::array();
      for (std::size_t j = i; j < std::min(readings.size(), i + batch); ++j) {
        body.push_back(gaia::ingest::to_json(readings[j]));
      }
      auto res = client.Post("/api/v1/readings", target.headers(), body.dump(), "application/json");
      if (!res || res->status != 200) return report(res) == 0 ? 1 : report(res);
    }
    std::cerr << "posted " << readings.size() << " readings\n";
    return 0;
  }
  const std::string csv = gaia::sim::to_csv(readings);
  if (out.empty() || out == "-") {
    std::cout << csv;
  } else {
    std::ofstream file(out, std::ios::binary);
    file << csv;
    if (!file) throw std::runtime_error("cannot write " + out);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Building energy telemetry and recommendation service"};
  app.require_subcommand(1);
  Remote remote;
  if (const char* env = std::getenv("GAIA_URL")) remote.url = env;
  if (const char* env = std::getenv("GAIA_TOKEN")) remote.token = env;

  std::string config_path;
  auto* serve_cmd = app.add_subcommand("serve", "run the HTTP/WebSocket service");
  serve_cmd->add_option("--config", config_path, "service configuration (JSON)");

  std::string sim_config, sim_from, sim_to, sim_out, sim_post;
  auto* sim_cmd = app.add_subcommand("sim", "generate simulated sensor readings");
  sim_cmd->add_option("--config", sim_config, "simulator configuration (JSON)")->required();
  sim_cmd->add_option("--from", sim_from, "start instant, e.g. 2017-01-16T00:00:00Z")->required();
  sim_cmd->add_option("--to", sim_to, "end instant (exclusive)")->required();
  auto* out_opt = sim_cmd->add_option("--out", sim_out, "CSV output file ('-' for stdout)");
  sim_cmd->add_option("--post", sim_post, "service base URL to post readings to")->excludes(out_opt);
  sim_cmd->add_option("--token", remote.token, "bearer token");

  auto* rules_cmd = app.add_subcommand("rules", "list, create or delete rules on a running service");
  rules_cmd->require_subcommand(1);
  std::string rule_path, rule_id, rule_file;
  auto add_remote = [&](CLI::App* cmd) {
    cmd->add_option("--url", remote.url, "service base URL")->envname("GAIA_URL");
    cmd->add_option("--token", remote.token, "bearer token (user id)")->envname("GAIA_TOKEN");
  };
  auto* list_cmd = rules_cmd->add_subcommand("list", "rules on a resource, inherited ones included");
  list_cmd->add_option("--path", rule_path, "resource path")->required();
  add_remote(list_cmd);
  auto* put_cmd = rules_cmd->add_subcommand("put", "create or replace a rule");
  put_cmd->add_option("--path", rule_path, "resource path")->required();
  put_cmd->add_option("--id", rule_id, "rule id")->required();
  put_cmd->add_option("--file", rule_file, "rule body (JSON)")->required();
  add_remote(put_cmd);
  auto* delete_cmd = rules_cmd->add_subcommand("delete", "delete a rule");
  delete_cmd->add_option("--path", rule_path, "resource path")->required();
  delete_cmd->add_option("--id", rule_id, "rule id")->required();
  add_remote(delete_cmd);

  std::string upload_series, upload_file, upload_resource, upload_kind;
  int upload_interval = 0;
  auto* upload_cmd = app.add_subcommand("upload", "upload a timestamp,value CSV file");
  upload_cmd->add_option("--series", upload_series, "series id")->required();
  upload_cmd->add_option("--file", upload_file, "CSV file")->required();
  upload_cmd->add_option("--resource", upload_resource, "resource path for a new series");
  upload_cmd->add_option("--kind", upload_kind, "sensor kind for a new series");
  upload_cmd->add_option("--interval", upload_interval, "interval in seconds (900 or 3600)");
  add_remote(upload_cmd);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*serve_cmd) return serve(config_path);
    if (*sim_cmd) return simulate(sim_config, sim_from, sim_to, sim_out, sim_post, remote);
    if (*rules_cmd) {
      auto client = remote.client();
      const std::string base = "/api/v1/resources/" + url_encode(rule_path) + "/rules";
      if (*list_cmd) return report(client.Get(base, remote.headers()));
      if (*put_cmd) {
        return report(client.Put(base + "/" + url_encode(rule_id), remote.headers(),
                                 read_file(rule_file), "application/json"));
      }
      return report(client.Delete(base + "/" + url_encode(rule_id), remote.headers()));
    }
    if (*upload_cmd) {
      std::string target = "/api/v1/uploads/" + url_encode(upload_series);
      std::string sep = "?";
      auto add = [&](const std::string& key, const std::string& value) {
        if (value.empty()) return;
        target += sep + key + "=" + url_encode(value);
        sep = "&";
      };
      add("resource", upload_resource);
      add("kind", upload_kind);
      if (upload_interval > 0) add("interval_s", std::to_string(upload_interval));
      auto client = remote.client();
      return report(client.Post(target, remote.headers(), read_file(upload_file), "text/csv"));
    }
  } catch (const gaia::Error& e) {
    std::cerr << gaia::to_string(e.code()) << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
