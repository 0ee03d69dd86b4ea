#include "convo/evalserver.hpp"

#include <ctime>
#include <filesystem>
#include <istream>
#include <sstream>

#include <httplib.h>

#include "convo/random.hpp"
#include "http_util.hpp"

namespace convo {

std::string_view to_string(SessionState s) { return s == SessionState::Open ? "open" : "rated"; }

nlohmann::json to_json(const Session& session) {
  const auto bot_turns = session.conversation.bot_turns();
  return {{"id", session.id},
          {"bot_id", session.bot_id.str()},
          {"annotator_id", session.annotator_id},
          {"created_at", session.created_at},
          {"state", std::string(to_string(session.state))},
          {"pending", session.pending},
          {"bot_turns", bot_turns},
          {"can_rate", session.state == SessionState::Open && bot_turns >= kMinBotTurnsForRating},
          {"conversation", to_json(session.conversation)}};
}

std::string utc_now() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

EvalStore::EvalStore(std::vector<BotHandle> bots, std::string log_path, Clock clock,
                     std::uint64_t seed)
    : clock_(std::move(clock)), seed_(seed) {
  for (auto& b : bots) bots_.emplace(b.id(), std::move(b));
  if (log_path.empty()) return;
  if (std::filesystem::exists(log_path)) {
    std::ifstream in(log_path);
    if (!in) throw Error(ErrorCode::IoError, "cannot read '" + log_path + "'");
    replay(in);
  }
  log_.open(log_path, std::ios::app);
  if (!log_) throw Error(ErrorCode::IoError, "cannot append to '" + log_path + "'");
}

EvalStore::~EvalStore() = default;

void EvalStore::replay(std::istream& log) {
  std::lock_guard lock(mutex_);
  std::size_t line_no = 0;
  for (std::string line; std::getline(log, line);) {
    ++line_no;
    if (is_blank(line)) continue;
    try {
      auto event = nlohmann::json::parse(line);
      apply(event);
      events_.push_back(std::move(event));
    } catch (const std::exception& e) {
      throw Error(ErrorCode::ParseError,
                  "event log line " + std::to_string(line_no) + ": " + e.what());
    }
  }
}

void EvalStore::apply(const nlohmann::json& event) {
  const auto type = event.at("type").get<std::string>();
  const auto id = event.at("session").get<std::string>();
  if (type == "session_opened") {
    if (sessions_.contains(id)) throw Error(ErrorCode::ParseError, "session " + id + " reopened");
    auto s = std::make_unique<Slot>();
    s->session.id = id;
    s->session.bot_id = BotId::parse(event.at("bot_id").get<std::string>());
    s->session.annotator_id = event.at("annotator_id").get<std::string>();
    s->session.created_at = event.at("at").get<std::string>();
    s->session.conversation = Conversation(id, s->session.bot_id, Origin::Interactive);
    sessions_.emplace(id, std::move(s));
    order_.push_back(id);
    if (event.at("assignment") == "round_robin") ++round_robin_;
    return;
  }

  const auto it = sessions_.find(id);
  if (it == sessions_.end()) throw Error(ErrorCode::UnknownSession, "unknown session " + id);
  Session& s = it->second->session;
  if (type == "message_pair") {
    const auto& user = event.at("user");
    const auto& reply = event.at("reply");
    if (!user.is_null()) {
      s.conversation = append_utterance(s.conversation, Speaker::A, user.get<std::string>());
    }
    if (reply.is_null()) {
      s.pending = true;
    } else {
      s.conversation = append_utterance(s.conversation, Speaker::B, reply.get<std::string>());
      s.pending = false;
    }
  } else if (type == "vote") {
    s.conversation = s.conversation.with_vote(event.at("index").get<std::size_t>(),
                                              parse_vote(event.at("direction").get<std::string>()));
  } else if (type == "rating_submitted") {
    ratings_.push_back(rating_from_json(event.at("rating")));
    s.state = SessionState::Rated;
  } else {
    throw Error(ErrorCode::ParseError, "unknown event type '" + type + "'");
  }
}

void EvalStore::commit_locked(nlohmann::json event) {
  event["at"] = clock_();
  if (log_.is_open()) {
    log_ << event.dump() << '\n';
    log_.flush();
    if (!log_) throw Error(ErrorCode::IoError, "event log write failed");
  }
  apply(event);
  events_.push_back(std::move(event));
}

EvalStore::Slot& EvalStore::slot(const std::string& session_id) const {
  std::lock_guard lock(mutex_);
  const auto it = sessions_.find(session_id);
  if (it == sessions_.end()) {
    throw Error(ErrorCode::UnknownSession, "unknown session '" + session_id + "'");
  }
  return *it->second;
}

Session EvalStore::create_session(const std::optional<BotId>& bot_id,
                                  const std::string& annotator_id) {
  std::lock_guard lock(mutex_);
  BotId chosen;
  if (bot_id) {
    if (!bots_.contains(*bot_id)) throw Error(ErrorCode::UnknownBot, "unknown bot " + bot_id->str());
    chosen = *bot_id;
  } else {
    if (bots_.empty()) throw Error(ErrorCode::UnknownBot, "no bots registered");
    chosen = std::next(bots_.begin(), static_cast<long>(round_robin_ % bots_.size()))->first;
  }
  const std::string id = "s" + std::to_string(order_.size() + 1);
  commit_locked({{"type", "session_opened"},
                 {"session", id},
                 {"bot_id", chosen.str()},
                 {"annotator_id", annotator_id},
                 {"assignment", bot_id ? "explicit" : "round_robin"}});
  return sessions_.at(id)->session;
}

EvalStore::Reply EvalStore::ask_bot(Slot& s, const Conversation& history) {
  const auto it = bots_.find(s.session.bot_id);
  if (it == bots_.end()) {
    throw Error(ErrorCode::BotUnavailable, "bot " + s.session.bot_id.str() + " is not registered");
  }
  Rng rng(derive_seed(seed_, stable_hash(s.session.id + "#" + std::to_string(history.size()))));
  std::string text;
  try {
    text = it->second.respond(history, rng);
  } catch (const Error& e) {
    throw Error(ErrorCode::BotUnavailable, e.what());
  }
  if (is_blank(text)) throw Error(ErrorCode::BotUnavailable, "bot returned a blank reply");
  return {std::move(text), history.size()};
}

EvalStore::Reply EvalStore::post_message(const std::string& session_id, const std::string& text) {
  Slot& s = slot(session_id);
  std::lock_guard session_lock(s.mutex);
  if (s.session.state != SessionState::Open) {
    throw Error(ErrorCode::SessionClosed, "session " + session_id + " is closed");
  }
  if (s.session.pending) {
    throw Error(ErrorCode::PendingReply, "session " + session_id + " awaits a reply; retry first");
  }
  const auto history = append_utterance(s.session.conversation, Speaker::A, text);
  try {
    auto reply = ask_bot(s, history);
    std::lock_guard lock(mutex_);
    commit_locked({{"type", "message_pair"},
                   {"session", session_id},
                   {"user", text},
                   {"reply", reply.text}});
    return reply;
  } catch (const Error& e) {
    if (e.code() != ErrorCode::BotUnavailable) throw;
    std::lock_guard lock(mutex_);
    commit_locked({{"type", "message_pair"},
                   {"session", session_id},
                   {"user", text},
                   {"reply", nullptr}});
    throw;
  }
}

EvalStore::Reply EvalStore::retry(const std::string& session_id) {
  Slot& s = slot(session_id);
  std::lock_guard session_lock(s.mutex);
  if (s.session.state != SessionState::Open) {
    throw Error(ErrorCode::SessionClosed, "session " + session_id + " is closed");
  }
  if (!s.session.pending) {
    throw Error(ErrorCode::InvalidArgument, "session " + session_id + " has no pending message");
  }
  auto reply = ask_bot(s, s.session.conversation);
  std::lock_guard lock(mutex_);
  commit_locked(
      {{"type", "message_pair"}, {"session", session_id}, {"user", nullptr}, {"reply", reply.text}});
  return reply;
}

void EvalStore::vote(const std::string& session_id, std::size_t index, VoteDirection direction) {
  Slot& s = slot(session_id);
  std::lock_guard session_lock(s.mutex);
  (void)s.session.conversation.with_vote(index, direction);  // validates
  std::lock_guard lock(mutex_);
  commit_locked({{"type", "vote"},
                 {"session", session_id},
                 {"index", index},
                 {"direction", std::string(to_string(direction))}});
}

RatingRecord EvalStore::submit_rating(const std::string& session_id,
                                      const std::array<int, 5>& scores) {
  Slot& s = slot(session_id);
  std::lock_guard session_lock(s.mutex);
  if (s.session.state != SessionState::Open) {
    throw Error(ErrorCode::SessionClosed, "session " + session_id + " is already rated");
  }
  const auto turns = s.session.conversation.bot_turns();
  if (turns < kMinBotTurnsForRating) {
    throw Error(ErrorCode::TooFewTurns, "rating needs " + std::to_string(kMinBotTurnsForRating) +
                                            " bot responses, session has " + std::to_string(turns));
  }
  RatingRecord rating{session_id, s.session.annotator_id, scores};
  rating.validate();
  std::lock_guard lock(mutex_);
  commit_locked({{"type", "rating_submitted"}, {"session", session_id}, {"rating", to_json(rating)}});
  return rating;
}

Session EvalStore::session(const std::string& session_id) const {
  std::lock_guard lock(mutex_);
  const auto it = sessions_.find(session_id);
  if (it == sessions_.end()) {
    throw Error(ErrorCode::UnknownSession, "unknown session '" + session_id + "'");
  }
  return it->second->session;
}

std::vector<BotId> EvalStore::bots() const {
  std::vector<BotId> out;
  for (const auto& [id, handle] : bots_) out.push_back(id);
  return out;
}

std::vector<Conversation> EvalStore::conversations() const {
  std::lock_guard lock(mutex_);
  std::vector<Conversation> out;
  for (const auto& id : order_) {
    const auto& c = sessions_.at(id)->session.conversation;
    if (!c.empty()) out.push_back(c);
  }
  return out;
}

std::vector<RatingRecord> EvalStore::ratings() const {
  std::lock_guard lock(mutex_);
  return ratings_;
}

std::vector<nlohmann::json> EvalStore::events() const {
  std::lock_guard lock(mutex_);
  return events_;
}

std::string EvalStore::export_conversations() const {
  std::ostringstream os;
  write_conversations(os, conversations());
  return os.str();
}

std::string EvalStore::export_ratings() const {
  std::ostringstream os;
  write_ratings(os, ratings());
  return os.str();
}

// ---------------------------------------------------------------------------
// REST
// ---------------------------------------------------------------------------

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnknownSession:
    case ErrorCode::UnknownBot:
      return 404;
    case ErrorCode::SessionClosed:
    case ErrorCode::PendingReply:
    case ErrorCode::TooFewTurns:
      return 409;
    case ErrorCode::BotUnavailable:
    case ErrorCode::IoError:
      return 503;
    case ErrorCode::BotTimeout:
      return 504;
    default:
      return 400;
  }
}

namespace {

void send_json(httplib::Response& res, const nlohmann::json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, const Error& e) {
  send_json(res, {{"error", e.what()}, {"code", std::string(to_string(e.code()))}},
            http_status(e.code()));
}

template <typename F>
httplib::Server::Handler guarded(F&& f) {
  return [f = std::forward<F>(f)](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const Error& e) {
      send_error(res, e);
    } catch (const nlohmann::json::exception& e) {
      send_error(res, Error(ErrorCode::ParseError, e.what()));
    }
  };
}

nlohmann::json body_of(const httplib::Request& req) {
  if (req.body.empty()) return nlohmann::json::object();
  auto j = nlohmann::json::parse(req.body);
  if (!j.is_object()) throw Error(ErrorCode::ParseError, "request body must be a JSON object");
  return j;
}

}  // namespace

EvalServer::EvalServer(EvalStore& store, std::string static_dir)
    : store_(store), server_(std::make_unique<httplib::Server>()) {
  detail::exclusive_bind(*server_);
  install_routes();
  if (!static_dir.empty() && !server_->set_mount_point("/", static_dir)) {
    throw Error(ErrorCode::IoError, "cannot serve static files from '" + static_dir + "'");
  }
}

EvalServer::~EvalServer() { stop(); }

void EvalServer::install_routes() {
  server_->Get("/bots", guarded([this](const httplib::Request&, httplib::Response& res) {
    nlohmann::json bots = nlohmann::json::array();
    for (const auto& b : store_.bots()) bots.push_back(b.str());
    send_json(res, {{"bots", bots}});
  }));

  server_->Post("/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
    const auto body = body_of(req);
    std::optional<BotId> bot;
    if (body.contains("bot_id") && !body.at("bot_id").is_null()) {
      bot = BotId::parse(body.at("bot_id").get<std::string>());
    }
    const auto annotator = body.at("annotator_id").get<std::string>();
    send_json(res, to_json(store_.create_session(bot, annotator)), 201);
  }));

  server_->Get(R"(/sessions/([^/]+))",
               guarded([this](const httplib::Request& req, httplib::Response& res) {
                 send_json(res, to_json(store_.session(req.matches[1])));
               }));

  server_->Post(R"(/sessions/([^/]+)/messages)",
                guarded([this](const httplib::Request& req, httplib::Response& res) {
                  const auto body = body_of(req);
                  const auto reply =
                      store_.post_message(req.matches[1], body.at("text").get<std::string>());
                  send_json(res, {{"reply", reply.text}, {"index", reply.index}});
                }));

  server_->Post(R"(/sessions/([^/]+)/retry)",
                guarded([this](const httplib::Request& req, httplib::Response& res) {
                  const auto reply = store_.retry(req.matches[1]);
                  send_json(res, {{"reply", reply.text}, {"index", reply.index}});
                }));

  server_->Post(R"(/sessions/([^/]+)/votes)",
                guarded([this](const httplib::Request& req, httplib::Response& res) {
                  const auto body = body_of(req);
                  const auto index = body.at("index").get<std::int64_t>();
                  if (index < 0) throw Error(ErrorCode::UnknownIndex, "negative utterance index");
                  const auto direction = parse_vote(body.at("direction").get<std::string>());
                  store_.vote(req.matches[1], static_cast<std::size_t>(index), direction);
                  send_json(res, {{"ok", true}});
                }));

  server_->Post(R"(/sessions/([^/]+)/rating)",
                guarded([this](const httplib::Request& req, httplib::Response& res) {
                  const auto body = body_of(req);
                  std::array<int, 5> scores{};
                  for (std::size_t d = 0; d < kRatingDimensions.size(); ++d) {
                    scores[d] = body.at(std::string(kRatingDimensions[d])).get<int>();
                  }
                  send_json(res, to_json(store_.submit_rating(req.matches[1], scores)));
                }));

  server_->Get("/export/ratings", guarded([this](const httplib::Request&, httplib::Response& res) {
    res.set_content(store_.export_ratings(), "application/x-ndjson");
  }));

  server_->Get("/export/conversations",
               guarded([this](const httplib::Request&, httplib::Response& res) {
                 res.set_content(store_.export_conversations(), "application/x-ndjson");
               }));
}

int EvalServer::bind(const std::string& host, int port) {
  host_ = host;
  port_ = port == 0 ? server_->bind_to_any_port(host)
                    : (server_->bind_to_port(host, port) ? port : -1);
  if (port_ < 0) {
    throw Error(ErrorCode::BindError, "cannot bind " + host + ":" + std::to_string(port));
  }
  return port_;
}

void EvalServer::start(const std::string& host, int port) {
  bind(host, port);
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
}

void EvalServer::run(const std::string& host, int port) {
  bind(host, port);
  server_->listen_after_bind();
}

void EvalServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

std::string EvalServer::url() const { return "http://" + host_ + ":" + std::to_string(port_); }

}  // namespace convo
