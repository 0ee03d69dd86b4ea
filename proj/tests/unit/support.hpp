#pragma once

#include <doctest.h>
#include <httplib.h>

#include <map>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "convo/domain.hpp"
#include "convo/embeddings.hpp"
#include "convo/error.hpp"

namespace convo::test {

// Runs `fn` and returns the code of the convo::Error it throws.
template <typename Fn>
ErrorCode code_of(Fn&& fn) {
  try {
    std::forward<Fn>(fn)();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected convo::Error");
  return ErrorCode::InvalidArgument;
}

// Alternating A/B conversation from plain texts.
inline Conversation make_conversation(std::string id, const std::vector<std::string>& turns,
                                      BotId bot = {}, Origin origin = Origin::Corpus) {
  std::vector<std::pair<Speaker, std::string>> parts;
  for (std::size_t i = 0; i < turns.size(); ++i) {
    parts.emplace_back(i % 2 == 0 ? Speaker::A : Speaker::B, turns[i]);
  }
  return Conversation::from_parts(std::move(id), std::move(bot), origin, parts);
}

// Provider backed by an explicit text -> vector map; unknown texts throw
// MissingEntry.
class FixedProvider final : public EmbeddingProvider {
 public:
  FixedProvider(EmbeddingKind kind, std::map<std::string, Vector> entries)
      : kind_(kind), entries_(std::move(entries)) {}

  EmbeddingKind kind() const override { return kind_; }
  EmbeddingSource source() const override { return EmbeddingSource::File; }
  Vector embed(std::string_view text) const override {
    auto it = entries_.find(std::string(text));
    if (it == entries_.end()) throw Error(ErrorCode::MissingEntry, std::string(text));
    return it->second;
  }

 private:
  EmbeddingKind kind_;
  std::map<std::string, Vector> entries_;
};

// 64-dim distribution with the given leading entries and zeros elsewhere.
inline Vector emotion(std::initializer_list<double> head) {
  Vector v(kEmotionDim, 0.0);
  std::size_t i = 0;
  for (double x : head) v[i++] = x;
  return v;
}

// An httplib server on an ephemeral loopback port, stopped on destruction.
class LocalServer {
 public:
  httplib::Server server;

  void start() {
    port_ = server.bind_to_any_port("127.0.0.1");
    REQUIRE(port_ > 0);
    thread_ = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~LocalServer() {
    server.stop();
    if (thread_.joinable()) thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

 private:
  int port_{0};
  std::thread thread_;
};

}  // namespace convo::test
