#pragma once

// Private helpers shared by the HTTP clients and servers.

#include <httplib.h>

#include <chrono>
#include <memory>
#include <string>

namespace convo::detail {

// `scheme://host[:port]` plus an optional path prefix, so services can sit
// behind a reverse proxy at e.g. `http://host/bots/markov`.
struct Endpoint {
  std::string origin;
  std::string prefix;  // empty or starts with '/', never ends with '/'
};

inline Endpoint split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  const auto host_start = scheme_end == std::string::npos ? 0 : scheme_end + 3;
  const auto slash = url.find('/', host_start);
  Endpoint e;
  e.origin = url.substr(0, slash);
  if (slash != std::string::npos) e.prefix = url.substr(slash);
  while (!e.prefix.empty() && e.prefix.back() == '/') e.prefix.pop_back();
  return e;
}

inline std::unique_ptr<httplib::Client> make_client(const std::string& origin,
                                                    std::chrono::milliseconds timeout) {
  auto client = std::make_unique<httplib::Client>(origin);
  client->set_connection_timeout(timeout);
  client->set_read_timeout(timeout);
  client->set_write_timeout(timeout);
  return client;
}

// httplib's defaults include SO_REUSEPORT, which lets a second server bind a
// port that is already serving. Keep SO_REUSEADDR only so that is an error.
inline void exclusive_bind(httplib::Server& server) {
  server.set_socket_options([](socket_t sock) {
    int yes = 1;
    setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
  });
}

}  // namespace convo::detail
