// SPDX-License-Identifier: Apache-2.0
//
// Minimal JSON-over-HTTP POST helper shared by the remote judge and the
// remote generator.

#pragma once

#include <chrono>
#include <string>
#include <string_view>
#include <utility>

#include <httplib.h>
#include <json.hpp>

#include "gradekit/errors.hpp"

namespace gradekit::http {

struct Endpoint {
  std::string origin;  // scheme://host[:port]
  std::string path;    // path prefix without trailing '/'
};

/// Splits "http://host:8000/v1/" into {"http://host:8000", "/v1"}.
inline Endpoint split_url(std::string_view url) {
  const std::size_t scheme_end = url.find("://");
  if (scheme_end == std::string_view::npos) {
    throw UsageError("endpoint URL must start with http:// or https://: " + std::string(url));
  }
  const std::size_t path_begin = url.find('/', scheme_end + 3);
  Endpoint e;
  e.origin = std::string(url.substr(0, path_begin));
  if (path_begin != std::string_view::npos) e.path = std::string(url.substr(path_begin));
  while (!e.path.empty() && e.path.back() == '/') e.path.pop_back();
  return e;
}

struct Response {
  int status = 0;
  std::string body;
};

/// Connection-level failure (refused, timed out, TLS). HTTP error statuses are
/// not transport errors; callers inspect Response::status.
class TransportError : public Error {
 public:
  using Error::Error;
};

inline Response post_json(const std::string& url, const std::string& route,
                          const nlohmann::json& body, const std::string& bearer_token,
                          std::chrono::milliseconds timeout) {
  const Endpoint ep = split_url(url);
  httplib::Client client(ep.origin);
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout);
  const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout - secs);
  client.set_connection_timeout(secs.count(), usecs.count());
  client.set_read_timeout(secs.count(), usecs.count());
  client.set_write_timeout(secs.count(), usecs.count());
  httplib::Headers headers;
  if (!bearer_token.empty()) headers.emplace("Authorization", "Bearer " + bearer_token);
  auto res = client.Post(ep.path + route, headers, body.dump(), "application/json");
  if (!res) {
    throw TransportError("POST " + url + route + " failed: " + httplib::to_string(res.error()));
  }
  return Response{res->status, res->body};
}

}  // namespace gradekit::http
