#pragma once

#include <httplib.h>
// <resolv.h> (pulled in by httplib) defines _res, which collides with Eigen.
#ifdef _res
#undef _res
#endif
#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdlib>
#include <string>
#include <thread>
#include <utility>

#include "iclb/error.hpp"

namespace iclb::http {

struct RetryPolicy {
  int max_attempts = 3;
  double backoff_seconds = 0.5;  // doubled after each transient failure
};

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path prefix without trailing slash
};

inline Endpoint split_endpoint(const std::string& url) {
  const auto scheme = url.find("://");
  require(scheme != std::string::npos, ErrorCode::config, "endpoint '" + url + "' lacks a scheme");
  const auto slash = url.find('/', scheme + 3);
  Endpoint e;
  if (slash == std::string::npos) {
    e.origin = url;
  } else {
    e.origin = url.substr(0, slash);
    e.prefix = url.substr(slash);
    while (!e.prefix.empty() && e.prefix.back() == '/') e.prefix.pop_back();
  }
  return e;
}

inline bool transient_status(int status) { return status == 429 || status >= 500; }

/// POSTs a JSON body, retrying connection failures and 429/5xx with
/// exponential backoff. Other non-200 replies are protocol errors.
inline nlohmann::json post_json(const std::string& endpoint, const std::string& path,
                                const nlohmann::json& body, const RetryPolicy& retry,
                                const httplib::Headers& headers = {},
                                std::chrono::seconds timeout = std::chrono::seconds(120)) {
  const Endpoint ep = split_endpoint(endpoint);
  const std::string payload = body.dump();
  double wait = retry.backoff_seconds;
  std::string last_error = "no attempt made";
  for (int attempt = 1; attempt <= std::max(retry.max_attempts, 1); ++attempt) {
    httplib::Client cli(ep.origin);
    cli.set_connection_timeout(std::chrono::seconds(10));
    cli.set_read_timeout(timeout);
    cli.set_write_timeout(timeout);
    auto res = cli.Post(ep.prefix + path, headers, payload, "application/json");
    if (res && res->status == 200) {
      try {
        return nlohmann::json::parse(res->body);
      } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::protocol, std::string("response is not JSON: ") + e.what());
      }
    }
    if (res && !transient_status(res->status)) {
      fail(ErrorCode::protocol, "HTTP " + std::to_string(res->status) + ": " + res->body);
    }
    last_error = res ? "HTTP " + std::to_string(res->status) : httplib::to_string(res.error());
    if (attempt < retry.max_attempts) {
      std::this_thread::sleep_for(std::chrono::duration<double>(wait));
      wait *= 2.0;
    }
  }
  fail(ErrorCode::backend_unavailable, endpoint + path + " failed after " +
                                           std::to_string(retry.max_attempts) + " attempts: " + last_error);
}

inline httplib::Headers bearer_from_env(const std::string& env_var) {
  httplib::Headers h;
  if (env_var.empty()) return h;
  if (const char* key = std::getenv(env_var.c_str()); key && *key) {
    h.emplace("Authorization", std::string("Bearer ") + key);
  }
  return h;
}

}  // namespace iclb::http
