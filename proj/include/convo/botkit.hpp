#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "convo/corpus.hpp"
#include "convo/domain.hpp"
#include "convo/embeddings.hpp"
#include "convo/random.hpp"

namespace httplib {
class Server;
}

namespace convo {

/// Maps a conversation history to the next utterance. Implementations are
/// stateless between calls and safe to call concurrently; all randomness comes
/// from the caller's Rng.
class Bot {
 public:
  virtual ~Bot() = default;

  virtual BotId id() const = 0;
  /// `history` is non-empty and alternates A, B, ... from A.
  virtual std::string respond(std::span<const Utterance> history, double temperature,
                              Rng& rng) const = 0;
};

enum class Transport { InProcess, Remote };

/// A bot plus the sampling temperature it is driven at.
class BotHandle {
 public:
  BotHandle() = default;
  BotHandle(std::shared_ptr<const Bot> bot, double temperature = 0.0);

  BotId id() const { return bot_->id(); }
  double temperature() const noexcept { return temperature_; }
  Transport transport() const noexcept;
  const Bot& bot() const noexcept { return *bot_; }

  /// Throws InvalidArgument on an empty history.
  std::string respond(std::span<const Utterance> history, Rng& rng) const;
  std::string respond(const Conversation& history, Rng& rng) const;

 private:
  std::shared_ptr<const Bot> bot_;
  double temperature_{0.0};
};

/// Repeats the last utterance.
class EchoBot final : public Bot {
 public:
  explicit EchoBot(BotId id = {"echo", "none", "builtin"}) : id_(std::move(id)) {}

  BotId id() const override { return id_; }
  std::string respond(std::span<const Utterance> history, double temperature,
                      Rng& rng) const override;

 private:
  BotId id_;
};

inline constexpr std::string_view kStartToken = "<s>";
inline constexpr std::string_view kEndToken = "</s>";
inline constexpr std::size_t kMaxGeneratedTokens = 30;

/// Token-level Markov chain. Contexts are the previous `order` tokens, padded
/// with `<s>` at the start of an utterance; the all-`<s>` context is kept
/// separately as `start_counts`.
struct MarkovModel {
  std::size_t order{1};
  std::map<std::vector<std::string>, std::map<std::string, std::size_t>> transitions;
  std::map<std::string, std::size_t> start_counts;

  friend bool operator==(const MarkovModel&, const MarkovModel&) = default;
};

/// Counts transitions over every utterance of every conversation. Throws
/// InvalidArgument for order 0 and EmptyCorpus when no utterance has tokens.
MarkovModel train_markov(const Corpus& corpus, std::size_t order);
MarkovModel train_markov(std::span<const std::string> utterances, std::size_t order);

/// Generates from `<s>` until `</s>` or 30 tokens. Temperature 0 takes the
/// most frequent continuation, ties going to the lexicographically smallest
/// token; otherwise samples with weights count^(1/temperature). Ignores the
/// conversation history.
std::string markov_respond(const MarkovModel& model, double temperature, Rng& rng);

nlohmann::json to_json(const MarkovModel& model);
MarkovModel markov_from_json(const nlohmann::json& j);

inline constexpr std::string_view kDegradedUtterance = "i don't know .";

/// Markov baseline with a quality knob: with probability `degrade` the reply is
/// the fixed utterance kDegradedUtterance instead of a sampled one.
class MarkovBot final : public Bot {
 public:
  MarkovBot(BotId id, std::shared_ptr<const MarkovModel> model, double degrade = 0.0);

  BotId id() const override { return id_; }
  std::string respond(std::span<const Utterance> history, double temperature,
                      Rng& rng) const override;
  double degrade() const noexcept { return degrade_; }

 private:
  BotId id_;
  std::shared_ptr<const MarkovModel> model_;
  double degrade_;
};

/// Returns the stored response whose context is closest, by embedding-average
/// cosine, to the last utterance. Ties go to the lower pair index.
class RetrievalBot final : public Bot {
 public:
  /// Every consecutive utterance pair of every corpus conversation becomes a
  /// (context, response) entry. Contexts without a usable embedding are never
  /// returned. Throws EmptyCorpus when no pair exists.
  RetrievalBot(BotId id, const Corpus& corpus, std::shared_ptr<const WordVectorTable> table);

  BotId id() const override { return id_; }
  /// Throws NoVectorTokens when the last utterance has no in-vocabulary token.
  std::string respond(std::span<const Utterance> history, double temperature,
                      Rng& rng) const override;
  std::size_t size() const noexcept { return responses_.size(); }

 private:
  BotId id_;
  std::shared_ptr<const WordVectorTable> table_;
  std::vector<std::optional<Vector>> contexts_;
  std::vector<std::string> responses_;
};

/// Client side of the wire protocol.
///  - connection failure, 503 and other 5xx -> BotUnavailable
///  - read timeout and 504 -> BotTimeout
///  - unparseable body, missing or blank `text`, other statuses -> ProtocolError
class RemoteBot final : public Bot {
 public:
  /// Queries `GET /info` for the bot id.
  static std::shared_ptr<RemoteBot> connect(std::string base_url,
                                            std::chrono::milliseconds timeout = std::chrono::seconds(30));
  RemoteBot(BotId id, std::string base_url,
            std::chrono::milliseconds timeout = std::chrono::seconds(30));

  BotId id() const override { return id_; }
  std::string respond(std::span<const Utterance> history, double temperature,
                      Rng& rng) const override;
  const std::string& base_url() const noexcept { return base_url_; }

 private:
  BotId id_;
  std::string base_url_;
  std::chrono::milliseconds timeout_;
};

nlohmann::json respond_request(std::span<const Utterance> history, double temperature);

/// Server side of the wire protocol: `GET /info`, `POST /respond`. Each
/// request gets an Rng seeded from the server seed and a hash of the body, so
/// identical requests get identical replies.
class BotServer {
 public:
  BotServer(std::shared_ptr<const Bot> bot, std::uint64_t seed = 0);
  ~BotServer();
  BotServer(const BotServer&) = delete;
  BotServer& operator=(const BotServer&) = delete;

  /// Binds and serves on a background thread. Port 0 picks a free port.
  /// Throws BindError.
  void start(const std::string& host, int port);
  /// Binds and serves on the calling thread until stop().
  void run(const std::string& host, int port);
  /// Blocks until a server started with start() stops.
  void wait();
  void stop();
  int port() const noexcept { return port_; }
  std::string url() const;

 private:
  void install_routes();

  std::shared_ptr<const Bot> bot_;
  std::uint64_t seed_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  std::string host_;
  int port_{0};
};

struct BuiltinOptions {
  std::shared_ptr<const MarkovModel> markov;
  std::shared_ptr<const Corpus> corpus;
  std::shared_ptr<const WordVectorTable> words;
  std::string dataset{"builtin"};
};

/// `echo`, `markov`, `markov:D` (degrade D), `retrieval`. Markov and
/// retrieval bots need the corresponding options.
std::shared_ptr<const Bot> make_builtin_bot(std::string_view name, const BuiltinOptions& options);

/// `builtin:NAME` or an http(s) base URL.
std::shared_ptr<const Bot> make_bot(std::string_view spec, const BuiltinOptions& options,
                                    std::chrono::milliseconds timeout = std::chrono::seconds(30));

}  // namespace convo
