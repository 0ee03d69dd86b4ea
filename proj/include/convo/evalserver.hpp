#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "convo/botkit.hpp"
#include "convo/domain.hpp"
#include "convo/error.hpp"

namespace httplib {
class Server;
}

namespace convo {

enum class SessionState { Open, Rated };

std::string_view to_string(SessionState s);

inline constexpr std::size_t kMinBotTurnsForRating = 3;

struct Session {
  std::string id;
  BotId bot_id;
  std::string annotator_id;
  std::string created_at;
  SessionState state{SessionState::Open};
  Conversation conversation;
  bool pending{false};  // the last user message still awaits a reply
};

nlohmann::json to_json(const Session& session);

using Clock = std::function<std::string()>;

/// Current UTC time as `YYYY-MM-DDTHH:MM:SSZ`.
std::string utc_now();

/// Event-sourced evaluation sessions. Every state change is one JSON event,
/// appended to the log before it becomes visible; replaying the log
/// reconstructs the store exactly. Event types: session_opened,
/// message_pair (reply null while the bot is unavailable; user null when a
/// retry answers the pending message), vote, rating_submitted.
///
/// Thread safety: all members may be called concurrently. Calls on one
/// session are serialized, including the bot call.
class EvalStore {
 public:
  /// Replays `log_path` when it exists, then appends to it. An empty path
  /// keeps the log in memory only.
  explicit EvalStore(std::vector<BotHandle> bots, std::string log_path = {},
                     Clock clock = utc_now, std::uint64_t seed = 0);
  ~EvalStore();
  EvalStore(const EvalStore&) = delete;
  EvalStore& operator=(const EvalStore&) = delete;

  /// Rebuilds a store from a log stream without calling any bot.
  void replay(std::istream& log);

  /// Round-robin over registered bots (ordered by id) when `bot_id` is
  /// omitted. Throws UnknownBot.
  Session create_session(const std::optional<BotId>& bot_id, const std::string& annotator_id);

  struct Reply {
    std::string text;
    std::size_t index{0};
  };

  /// Throws UnknownSession, SessionClosed, PendingReply, EmptyUtterance. When
  /// the bot fails, the user message is kept as pending and BotUnavailable is
  /// thrown.
  Reply post_message(const std::string& session_id, const std::string& text);
  /// Asks the bot again for the pending message.
  Reply retry(const std::string& session_id);
  /// Last vote per utterance wins. Throws UnknownIndex, NotABotUtterance.
  void vote(const std::string& session_id, std::size_t index, VoteDirection direction);
  /// Throws SessionClosed, TooFewTurns, OutOfRange.
  RatingRecord submit_rating(const std::string& session_id, const std::array<int, 5>& scores);

  Session session(const std::string& session_id) const;
  std::vector<BotId> bots() const;
  std::vector<Conversation> conversations() const;  // session order, non-empty only
  std::vector<RatingRecord> ratings() const;        // submission order
  std::vector<nlohmann::json> events() const;

  std::string export_conversations() const;
  std::string export_ratings() const;

 private:
  struct Slot {
    std::mutex mutex;  // serializes calls on this session
    Session session;
  };

  Slot& slot(const std::string& session_id) const;
  void commit_locked(nlohmann::json event);  // caller holds mutex_
  void apply(const nlohmann::json& event);
  Reply ask_bot(Slot& slot, const Conversation& history);

  std::map<BotId, BotHandle> bots_;
  Clock clock_;
  std::uint64_t seed_;

  mutable std::mutex mutex_;  // guards everything below
  std::map<std::string, std::unique_ptr<Slot>> sessions_;
  std::vector<std::string> order_;
  std::vector<RatingRecord> ratings_;
  std::vector<nlohmann::json> events_;
  std::size_t round_robin_{0};
  std::ofstream log_;
};

/// REST front end for EvalStore plus a static mount for the web UI.
class EvalServer {
 public:
  explicit EvalServer(EvalStore& store, std::string static_dir = {});
  ~EvalServer();
  EvalServer(const EvalServer&) = delete;
  EvalServer& operator=(const EvalServer&) = delete;

  void start(const std::string& host, int port);  // background thread; BindError
  void run(const std::string& host, int port);    // blocks until stop()
  void stop();
  int port() const noexcept { return port_; }
  std::string url() const;

 private:
  void install_routes();
  int bind(const std::string& host, int port);

  EvalStore& store_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  std::string host_;
  int port_{0};
};

/// HTTP status used for an error code in the REST API.
int http_status(ErrorCode code);

}  // namespace convo
