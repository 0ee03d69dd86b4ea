#include <doctest.h>

#include <nlohmann/json.hpp>

#include "convo/botkit.hpp"
#include "convo/error.hpp"
#include "support.hpp"

using namespace convo;
using convo::test::code_of;
using Counts = std::map<std::string, std::size_t>;

namespace {

std::vector<Utterance> history(const std::vector<std::string>& turns) {
  return test::make_conversation("h", turns).utterances();
}

}  // namespace

TEST_CASE("echo bot repeats the last utterance") {
  const BotHandle echo(std::make_shared<EchoBot>());
  Rng rng(0);
  CHECK(echo.respond(history({"hi", "there", "hello"}), rng) == "hello");
  CHECK(echo.transport() == Transport::InProcess);
  CHECK(code_of([&] { (void)echo.respond(std::vector<Utterance>{}, rng); }) ==
        ErrorCode::InvalidArgument);
}

TEST_CASE("train_markov counts transitions with sentinels") {
  const std::vector<std::string> corpus{"a b a b"};
  const auto m = train_markov(corpus, 1);
  CHECK(m.order == 1);
  CHECK(m.start_counts == Counts{{"a", 1}});
  REQUIRE(m.transitions.size() == 2);
  CHECK(m.transitions.at({"a"}) == Counts{{"b", 2}});
  CHECK(m.transitions.at({"b"}) == Counts{{"a", 1}, {"</s>", 1}});

  const std::vector<std::string> twice{"a b a b", "a b a b"};
  const auto d = train_markov(twice, 1);
  CHECK(d.transitions.at({"a"}) == Counts{{"b", 4}});
  CHECK(d.transitions.at({"b"}) == Counts{{"a", 2}, {"</s>", 2}});
  CHECK(d.start_counts == Counts{{"a", 2}});

  CHECK(code_of([&] { (void)train_markov(corpus, 0); }) == ErrorCode::InvalidArgument);
  CHECK(code_of([] { (void)train_markov(std::vector<std::string>{"  "}, 1); }) ==
        ErrorCode::EmptyCorpus);

  const auto order2 = train_markov(corpus, 2);
  CHECK(order2.transitions.at({"<s>", "a"}) == Counts{{"b", 1}});
  CHECK(order2.transitions.at({"a", "b"}) == Counts{{"a", 1}, {"</s>", 1}});
  CHECK(order2.transitions.at({"b", "a"}) == Counts{{"b", 1}});
}

TEST_CASE("markov_respond") {
  const auto m = train_markov(std::vector<std::string>{"a b a b"}, 1);
  Rng rng(1);
  // Argmax: <s> -> a, a -> b, b -> {a:1, </s>:1} ties break to "</s>".
  CHECK(markov_respond(m, 0.0, rng) == "a b");
  CHECK(markov_respond(m, 0.0, rng) == markov_respond(m, 0.0, rng));

  Rng r1(77);
  Rng r2(77);
  for (int i = 0; i < 5; ++i) CHECK(markov_respond(m, 1.0, r1) == markov_respond(m, 1.0, r2));

  // A loop with no end token stops at the length cap.
  std::string xs = "x";
  for (int i = 0; i < 40; ++i) xs += " x";
  const auto loop = train_markov(std::vector<std::string>{xs}, 1);
  Rng r3(0);
  const auto long_reply = markov_respond(loop, 0.0, r3);
  CHECK(long_reply.size() == 2 * kMaxGeneratedTokens - 1);

  CHECK(markov_from_json(to_json(m)) == m);
}

TEST_CASE("markov bot degrade knob") {
  const auto model = std::make_shared<MarkovModel>(train_markov(std::vector<std::string>{"a b a b"}, 1));
  const MarkovBot always(BotId{"m", "x", "degrade-1"}, model, 1.0);
  const MarkovBot never(BotId{"m", "x", "degrade-0"}, model, 0.0);
  Rng rng(3);
  const auto h = history({"hello"});
  for (int i = 0; i < 10; ++i) {
    CHECK(always.respond(h, 0.0, rng) == kDegradedUtterance);
    CHECK(never.respond(h, 0.0, rng) == "a b");
  }
  const MarkovBot half(BotId{"m", "x", "degrade-0.5"}, model, 0.5);
  int degraded = 0;
  for (int i = 0; i < 1000; ++i) degraded += half.respond(h, 0.0, rng) == kDegradedUtterance;
  CHECK(degraded > 400);
  CHECK(degraded < 600);
}

TEST_CASE("retrieval bot") {
  WordVectorTable words(2);
  words.insert("cat", {1.0, 0.0});
  words.insert("dog", {0.0, 1.0});
  const auto table = std::make_shared<const WordVectorTable>(std::move(words));
  const auto corpus = make_corpus(
      "c", {test::make_conversation("1", {"cat", "meow", "dog", "woof"}),
            test::make_conversation("2", {"dog", "bark"})});
  const RetrievalBot bot(BotId{"r", "c", "retrieval"}, corpus, table);
  CHECK(bot.size() == 4);
  Rng rng(0);
  CHECK(bot.respond(history({"cat"}), 0.0, rng) == "meow");
  // "dog" ties between pair 2 ("dog" -> "woof") and pair 3 ("dog" -> "bark");
  // the context "meow" has no vector and is never a candidate.
  CHECK(bot.respond(history({"dog"}), 0.0, rng) == "woof");
  CHECK(code_of([&] { (void)bot.respond(history({"zebra"}), 0.0, rng); }) ==
        ErrorCode::NoVectorTokens);
  CHECK(code_of([&] { RetrievalBot empty(BotId{}, make_corpus("e", {}), table); }) ==
        ErrorCode::EmptyCorpus);
}

TEST_CASE("bot server and remote client round-trip") {
  const auto model = std::make_shared<MarkovModel>(
      train_markov(std::vector<std::string>{"the cat sat", "the dog ran far", "a cat ran"}, 1));
  const auto local = std::make_shared<MarkovBot>(BotId{"markov", "toy", "baseline"}, model, 0.0);
  BotServer server(local, 5);
  server.start("127.0.0.1", 0);
  REQUIRE(server.port() > 0);

  httplib::Client client("127.0.0.1", server.port());
  const auto info = client.Get("/info");
  REQUIRE(info);
  CHECK(info->status == 200);
  CHECK(nlohmann::json::parse(info->body) ==
        nlohmann::json{{"name", "markov"}, {"dataset", "toy"}, {"variant", "baseline"}});

  const auto one = client.Post("/respond", respond_request(history({"hi"}), 0.0).dump(),
                               "application/json");
  REQUIRE(one);
  CHECK(one->status == 200);
  CHECK(!nlohmann::json::parse(one->body).at("text").get<std::string>().empty());

  const auto empty = client.Post("/respond", R"({"utterances":[],"temperature":0})",
                                 "application/json");
  REQUIRE(empty);
  CHECK(empty->status == 400);
  CHECK(nlohmann::json::parse(empty->body).contains("error"));
  const auto garbage = client.Post("/respond", "not json", "application/json");
  REQUIRE(garbage);
  CHECK(garbage->status == 400);

  const auto remote = RemoteBot::connect(server.url());
  CHECK(remote->id() == local->id());
  const BotHandle remote_handle(remote, 0.0);
  const BotHandle local_handle(local, 0.0);
  CHECK(remote_handle.transport() == Transport::Remote);
  Rng a(0);
  Rng b(0);
  for (const auto& h : {history({"hi"}), history({"hi", "yo", "what"})}) {
    CHECK(remote_handle.respond(h, a) == local_handle.respond(h, b));
  }

  // Identical requests get identical replies even when sampling.
  const BotHandle warm(remote, 1.0);
  CHECK(warm.respond(history({"hi"}), a) == warm.respond(history({"hi"}), b));

  server.stop();
  CHECK(code_of([&] { (void)remote_handle.respond(history({"hi"}), a); }) ==
        ErrorCode::BotUnavailable);
}

TEST_CASE("remote client maps failures to error codes") {
  test::LocalServer fake;
  fake.server.Post("/ok/respond", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"text":"hi"})", "application/json");
  });
  fake.server.Post("/crash/respond", [](const httplib::Request&, httplib::Response& res) {
    res.status = 500;
    res.set_content(R"({"error":"boom"})", "application/json");
  });
  fake.server.Post("/slow/respond", [](const httplib::Request&, httplib::Response& res) {
    res.status = 504;
    res.set_content(R"({"error":"timeout"})", "application/json");
  });
  fake.server.Post("/hang/respond", [](const httplib::Request&, httplib::Response& res) {
    std::this_thread::sleep_for(std::chrono::milliseconds(600));
    res.set_content(R"({"text":"late"})", "application/json");
  });
  fake.server.Post("/garbled/respond", [](const httplib::Request&, httplib::Response& res) {
    res.set_content("<html>", "text/html");
  });
  fake.server.Post("/blank/respond", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"text":"  "})", "application/json");
  });
  fake.server.Post("/teapot/respond", [](const httplib::Request&, httplib::Response& res) {
    res.status = 418;
  });
  fake.server.Get("/ok/info", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"name":"fake","dataset":"d","variant":"v"})", "application/json");
  });
  fake.start();

  const auto h = history({"hello"});
  Rng rng(0);
  const auto respond = [&](const std::string& path, int timeout_ms = 5000) {
    const RemoteBot bot(BotId{"f", "d", "v"}, fake.url() + path,
                        std::chrono::milliseconds(timeout_ms));
    return bot.respond(h, 0.0, rng);
  };
  CHECK(respond("/ok") == "hi");
  CHECK(code_of([&] { (void)respond("/crash"); }) == ErrorCode::BotUnavailable);
  CHECK(code_of([&] { (void)respond("/slow"); }) == ErrorCode::BotTimeout);
  CHECK(code_of([&] { (void)respond("/hang", 200); }) == ErrorCode::BotTimeout);
  CHECK(code_of([&] { (void)respond("/garbled"); }) == ErrorCode::ProtocolError);
  CHECK(code_of([&] { (void)respond("/blank"); }) == ErrorCode::ProtocolError);
  CHECK(code_of([&] { (void)respond("/teapot"); }) == ErrorCode::ProtocolError);
  CHECK(RemoteBot::connect(fake.url() + "/ok")->id() == BotId{"fake", "d", "v"});
}

TEST_CASE("wire request format") {
  const auto j = respond_request(history({"hi", "yo"}), 0.7);
  CHECK(j == nlohmann::json::parse(
                 R"({"utterances":[{"speaker":"A","text":"hi"},{"speaker":"B","text":"yo"}],"temperature":0.7})"));
}

TEST_CASE("bot specs") {
  BuiltinOptions opts;
  opts.markov = std::make_shared<MarkovModel>(train_markov(std::vector<std::string>{"a b"}, 1));
  CHECK(make_bot("builtin:echo", opts)->id().name == "echo");
  const auto degraded = make_builtin_bot("markov:0.3", opts);
  CHECK(degraded->id().variant == "degrade-0.3");
  CHECK(dynamic_cast<const MarkovBot&>(*degraded).degrade() == doctest::Approx(0.3));
  CHECK(code_of([&] { (void)make_builtin_bot("retrieval", opts); }) == ErrorCode::InvalidArgument);
  CHECK(code_of([&] { (void)make_bot("ftp://nowhere", opts); }) == ErrorCode::InvalidArgument);
  CHECK(code_of([&] { (void)make_builtin_bot("markov:2", opts); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("bot server reports bind failures") {
  BotServer first(std::make_shared<EchoBot>());
  first.start("127.0.0.1", 0);
  BotServer second(std::make_shared<EchoBot>());
  CHECK(code_of([&] { second.start("127.0.0.1", first.port()); }) == ErrorCode::BindError);
}
