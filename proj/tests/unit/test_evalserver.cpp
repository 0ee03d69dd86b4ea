#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "convo/evalserver.hpp"
#include "support.hpp"

using namespace convo;
using convo::test::code_of;

namespace {

const BotId kEcho{"echo", "none", "builtin"};
const BotId kParrot{"parrot", "none", "builtin"};

// Replies "re: <last>" and can be switched into failure.
class SwitchBot final : public Bot {
 public:
  BotId id() const override { return kParrot; }
  std::string respond(std::span<const Utterance> history, double, Rng&) const override {
    if (failing) throw Error(ErrorCode::BotTimeout, "switched off");
    return "re: " + history.back().text;
  }
  mutable std::atomic<bool> failing{false};
};

Clock counter_clock() {
  auto n = std::make_shared<int>(0);
  return [n] { return "t" + std::to_string((*n)++); };
}

std::vector<BotHandle> echo_and_parrot(std::shared_ptr<SwitchBot> parrot) {
  return {BotHandle(std::make_shared<EchoBot>()), BotHandle(std::move(parrot))};
}

// Runs a full rated session: three exchanges, one vote, one rating.
void rated_session(EvalStore& store, const BotId& bot, const std::string& annotator) {
  const auto s = store.create_session(bot, annotator);
  for (const char* text : {"hello", "how are you", "bye now"}) store.post_message(s.id, text);
  store.vote(s.id, 1, VoteDirection::Up);
  store.submit_rating(s.id, {4, 5, 3, 4, 4});
}

struct TempDir {
  std::filesystem::path path;
  TempDir() {
    path = std::filesystem::temp_directory_path() /
           ("convo-eval-" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace

TEST_CASE("create_session") {
  EvalStore store(echo_and_parrot(std::make_shared<SwitchBot>()), {}, counter_clock());
  const auto s = store.create_session(kEcho, "ann");
  CHECK(s.state == SessionState::Open);
  CHECK(s.conversation.empty());
  CHECK(s.bot_id == kEcho);
  CHECK(s.created_at == "t0");
  CHECK(code_of([&] { (void)store.create_session(BotId{"ghost", "x", "y"}, "ann"); }) ==
        ErrorCode::UnknownBot);

  // Round robin over bots ordered by id: echo < parrot.
  std::vector<BotId> assigned;
  for (int i = 0; i < 4; ++i) assigned.push_back(store.create_session(std::nullopt, "ann").bot_id);
  CHECK(assigned == std::vector<BotId>{kEcho, kParrot, kEcho, kParrot});
}

TEST_CASE("post_message, retry and closed sessions") {
  const auto parrot = std::make_shared<SwitchBot>();
  EvalStore store(echo_and_parrot(parrot), {}, counter_clock());
  const auto echo = store.create_session(kEcho, "ann");
  const auto reply = store.post_message(echo.id, "hi");
  CHECK(reply.text == "hi");
  CHECK(reply.index == 1);
  CHECK(store.session(echo.id).conversation.size() == 2);
  CHECK(code_of([&] { (void)store.post_message(echo.id, "  "); }) == ErrorCode::EmptyUtterance);
  CHECK(code_of([&] { (void)store.post_message("nope", "hi"); }) == ErrorCode::UnknownSession);

  const auto s = store.create_session(kParrot, "bob");
  parrot->failing = true;
  CHECK(code_of([&] { (void)store.post_message(s.id, "anyone?"); }) == ErrorCode::BotUnavailable);
  auto pending = store.session(s.id);
  CHECK(pending.pending);
  REQUIRE(pending.conversation.size() == 1);
  CHECK(pending.conversation[0].text == "anyone?");
  CHECK(code_of([&] { (void)store.post_message(s.id, "hello?"); }) == ErrorCode::PendingReply);
  CHECK(code_of([&] { (void)store.retry(s.id); }) == ErrorCode::BotUnavailable);

  parrot->failing = false;
  const auto late = store.retry(s.id);
  CHECK(late.text == "re: anyone?");
  CHECK(late.index == 1);
  CHECK_FALSE(store.session(s.id).pending);
  CHECK(code_of([&] { (void)store.retry(s.id); }) == ErrorCode::InvalidArgument);

  rated_session(store, kEcho, "cat");
  const auto rated = store.conversations().back().id();
  CHECK(store.session(rated).state == SessionState::Rated);
  CHECK(code_of([&] { (void)store.post_message(rated, "more"); }) == ErrorCode::SessionClosed);
  CHECK(code_of([&] { (void)store.submit_rating(rated, {4, 4, 4, 4, 4}); }) ==
        ErrorCode::SessionClosed);
  // Votes remain allowed after rating.
  store.vote(rated, 3, VoteDirection::Down);
  CHECK(store.session(rated).conversation.votes().at(3) == VoteDirection::Down);
}

TEST_CASE("votes") {
  EvalStore store(echo_and_parrot(std::make_shared<SwitchBot>()));
  const auto s = store.create_session(kEcho, "ann");
  store.post_message(s.id, "hi");
  store.vote(s.id, 1, VoteDirection::Up);
  CHECK(store.session(s.id).conversation.votes().at(1) == VoteDirection::Up);
  store.vote(s.id, 1, VoteDirection::Down);
  CHECK(store.session(s.id).conversation.votes().at(1) == VoteDirection::Down);
  CHECK(code_of([&] { store.vote(s.id, 0, VoteDirection::Up); }) == ErrorCode::NotABotUtterance);
  CHECK(code_of([&] { store.vote(s.id, 5, VoteDirection::Up); }) == ErrorCode::UnknownIndex);
}

TEST_CASE("rating needs three bot responses") {
  EvalStore store(echo_and_parrot(std::make_shared<SwitchBot>()));
  const auto s = store.create_session(kEcho, "ann");
  store.post_message(s.id, "one");
  store.post_message(s.id, "two");
  CHECK(code_of([&] { (void)store.submit_rating(s.id, {4, 5, 3, 4, 4}); }) ==
        ErrorCode::TooFewTurns);
  CHECK(store.ratings().empty());
  CHECK_FALSE(to_json(store.session(s.id)).at("can_rate").get<bool>());

  store.post_message(s.id, "three");
  CHECK(to_json(store.session(s.id)).at("can_rate").get<bool>());
  CHECK(code_of([&] { (void)store.submit_rating(s.id, {4, 8, 3, 4, 4}); }) == ErrorCode::OutOfRange);
  CHECK(code_of([&] { (void)store.submit_rating(s.id, {0, 4, 3, 4, 4}); }) == ErrorCode::OutOfRange);
  const auto r = store.submit_rating(s.id, {4, 5, 3, 4, 4});
  CHECK(r == RatingRecord{s.id, "ann", {4, 5, 3, 4, 4}});
  CHECK(store.session(s.id).state == SessionState::Rated);
}

TEST_CASE("exports") {
  EvalStore store(echo_and_parrot(std::make_shared<SwitchBot>()));
  CHECK(store.export_conversations().empty());
  CHECK(store.export_ratings().empty());

  store.create_session(kEcho, "idle");  // empty sessions are not exported
  rated_session(store, kParrot, "ann");
  std::istringstream convs(store.export_conversations());
  std::istringstream ratings(store.export_ratings());
  const auto c = read_conversations(convs);
  const auto r = read_ratings(ratings);
  REQUIRE(c.size() == 1);
  REQUIRE(r.size() == 1);
  CHECK(c[0] == store.conversations()[0]);
  CHECK(c[0].origin() == Origin::Interactive);
  CHECK(c[0].bot_id() == kParrot);
  CHECK(c[0][1].text == "re: hello");
  CHECK(r[0].conversation_id == c[0].id());
}

TEST_CASE("event log replay reproduces exports bitwise") {
  TempDir dir;
  const auto log = (dir.path / "events.jsonl").string();
  const auto parrot = std::make_shared<SwitchBot>();
  std::string conversations;
  std::string ratings;
  {
    EvalStore live(echo_and_parrot(parrot), log, counter_clock());
    rated_session(live, kEcho, "ann");
    const auto s = live.create_session(kParrot, "bob");
    live.post_message(s.id, "first");
    parrot->failing = true;
    CHECK(code_of([&] { (void)live.post_message(s.id, "second"); }) == ErrorCode::BotUnavailable);
    parrot->failing = false;
    live.retry(s.id);
    live.vote(s.id, 1, VoteDirection::Down);
    rated_session(live, kParrot, "cat");
    conversations = live.export_conversations();
    ratings = live.export_ratings();
  }

  // Reopening the log replays it without calling any bot.
  parrot->failing = true;
  EvalStore reopened(echo_and_parrot(parrot), log, counter_clock());
  CHECK(reopened.export_conversations() == conversations);
  CHECK(reopened.export_ratings() == ratings);
  CHECK(reopened.session("s2").conversation.votes().at(1) == VoteDirection::Down);

  EvalStore fresh({});
  std::ifstream in(log);
  fresh.replay(in);
  CHECK(fresh.export_conversations() == conversations);
  CHECK(fresh.export_ratings() == ratings);
  CHECK(fresh.events() == reopened.events());

  // New sessions continue the id sequence after a replay.
  parrot->failing = false;
  CHECK(reopened.create_session(kEcho, "dan").id == "s4");

  std::istringstream garbage("{\"type\":\"session_opened\"}\n");
  CHECK(code_of([&] { EvalStore(std::vector<BotHandle>{}).replay(garbage); }) ==
        ErrorCode::ParseError);
}

TEST_CASE("concurrent sessions never interleave") {
  EvalStore store(echo_and_parrot(std::make_shared<SwitchBot>()));
  constexpr int kSessions = 50;
  constexpr int kMessages = 5;
  std::vector<std::string> ids(kSessions);
  std::vector<std::thread> threads;
  for (int i = 0; i < kSessions; ++i) {
    threads.emplace_back([&, i] {
      ids[i] = store.create_session(kParrot, "a" + std::to_string(i)).id;
      for (int m = 0; m < kMessages; ++m) {
        store.post_message(ids[i], "u" + std::to_string(i) + "." + std::to_string(m));
      }
    });
  }
  for (auto& t : threads) t.join();

  for (int i = 0; i < kSessions; ++i) {
    const auto c = store.session(ids[i]).conversation;
    REQUIRE(c.size() == 2 * kMessages);
    for (int m = 0; m < kMessages; ++m) {
      const auto user = "u" + std::to_string(i) + "." + std::to_string(m);
      CHECK(c[2 * m].speaker == Speaker::A);
      CHECK(c[2 * m].text == user);
      CHECK(c[2 * m + 1].speaker == Speaker::B);
      CHECK(c[2 * m + 1].text == "re: " + user);
    }
  }
  CHECK(store.events().size() == kSessions * (1 + kMessages));
}

TEST_CASE("REST API") {
  const auto parrot = std::make_shared<SwitchBot>();
  EvalStore store(echo_and_parrot(parrot));
  EvalServer server(store);
  server.start("127.0.0.1", 0);
  httplib::Client client("127.0.0.1", server.port());
  const auto post = [&](const std::string& path, const nlohmann::json& body) {
    auto res = client.Post(path, body.dump(), "application/json");
    REQUIRE(res);
    return std::make_pair(res->status, nlohmann::json::parse(res->body));
  };

  const auto bots = client.Get("/bots");
  REQUIRE(bots);
  CHECK(nlohmann::json::parse(bots->body).at("bots") ==
        nlohmann::json{"echo@none/builtin", "parrot@none/builtin"});

  auto [status, session] = post("/sessions", {{"bot_id", "parrot@none/builtin"}, {"annotator_id", "ann"}});
  CHECK(status == 201);
  const auto id = session.at("id").get<std::string>();
  CHECK(session.at("state") == "open");

  auto [unknown_status, unknown] = post("/sessions", {{"bot_id", "ghost@x/y"}, {"annotator_id", "ann"}});
  CHECK(unknown_status == 404);
  CHECK(unknown.at("code") == "UnknownBot");
  CHECK(unknown.contains("error"));

  auto [msg_status, msg] = post("/sessions/" + id + "/messages", {{"text", "hello"}});
  CHECK(msg_status == 200);
  CHECK(msg == nlohmann::json{{"reply", "re: hello"}, {"index", 1}});

  CHECK(post("/sessions/nope/messages", {{"text", "x"}}).first == 404);
  CHECK(post("/sessions/" + id + "/votes", {{"index", 1}, {"direction", "up"}}).first == 200);
  CHECK(post("/sessions/" + id + "/votes", {{"index", 0}, {"direction", "up"}}).first == 400);
  CHECK(post("/sessions/" + id + "/votes", {{"index", -1}, {"direction", "up"}}).first == 400);

  const nlohmann::json scores{{"quality", 4}, {"fluency", 5}, {"diversity", 3},
                              {"relatedness", 4}, {"empathy", 4}};
  auto [early_status, early] = post("/sessions/" + id + "/rating", scores);
  CHECK(early_status == 409);
  CHECK(early.at("code") == "TooFewTurns");

  parrot->failing = true;
  CHECK(post("/sessions/" + id + "/messages", {{"text", "again"}}).first == 503);
  CHECK(post("/sessions/" + id + "/messages", {{"text", "more"}}).first == 409);
  parrot->failing = false;
  auto [retry_status, retried] = post("/sessions/" + id + "/retry", nlohmann::json::object());
  CHECK(retry_status == 200);
  CHECK(retried.at("reply") == "re: again");
  post("/sessions/" + id + "/messages", {{"text", "last"}});

  auto bad = scores;
  bad["empathy"] = 8;
  CHECK(post("/sessions/" + id + "/rating", bad).first == 400);
  auto [rated_status, rated] = post("/sessions/" + id + "/rating", scores);
  CHECK(rated_status == 200);
  CHECK(rated.at("conversation_id") == id);
  CHECK(post("/sessions/" + id + "/rating", scores).first == 409);

  const auto got = client.Get("/sessions/" + id);
  REQUIRE(got);
  CHECK(nlohmann::json::parse(got->body).at("state") == "rated");
  CHECK(client.Get("/export/ratings")->body == store.export_ratings());
  CHECK(client.Get("/export/conversations")->body == store.export_conversations());

  const auto garbage = client.Post("/sessions", "{not json", "application/json");
  REQUIRE(garbage);
  CHECK(garbage->status == 400);
  CHECK(post("/sessions", {{"bot_id", "echo@none/builtin"}}).first == 400);  // no annotator

  EvalServer clash(store);
  CHECK(code_of([&] { clash.start("127.0.0.1", server.port()); }) == ErrorCode::BindError);
}

TEST_CASE("http status mapping") {
  CHECK(http_status(ErrorCode::UnknownSession) == 404);
  CHECK(http_status(ErrorCode::TooFewTurns) == 409);
  CHECK(http_status(ErrorCode::BotUnavailable) == 503);
  CHECK(http_status(ErrorCode::BotTimeout) == 504);
  CHECK(http_status(ErrorCode::OutOfRange) == 400);
}
