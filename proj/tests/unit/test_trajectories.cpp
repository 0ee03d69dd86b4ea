#include <doctest.h>

#include <cmath>
#include <sstream>

#include "convo/trajectories.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace convo;

namespace {

// Two-sided 90% Student t quantiles, df = 1 and 2.
constexpr double kT90Df1 = 6.313751514800932;
constexpr double kT90Df2 = 2.919985580355516;

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream ls(line);
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    rows.push_back(cells);
  }
  return rows;
}

struct Expected {
  double mean;
  double half_width;
};

Expected interval(const std::vector<double>& xs, double t) {
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  const double sd = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  return {mean, t * sd / std::sqrt(static_cast<double>(xs.size()))};
}

void check_cells(const std::vector<std::string>& row, std::size_t first, const Expected& e) {
  CHECK(std::fabs(std::stod(row[first]) - e.mean) < 1e-9);
  CHECK(std::fabs(std::stod(row[first + 1]) - (e.mean - e.half_width)) < 1e-9);
  CHECK(std::fabs(std::stod(row[first + 2]) - (e.mean + e.half_width)) < 1e-9);
}

Conversation voted(Conversation c, std::initializer_list<std::pair<std::size_t, VoteDirection>> votes) {
  for (const auto& [i, d] : votes) c = c.with_vote(i, d);
  return c;
}

}  // namespace

TEST_CASE("trajectory groups") {
  std::vector<Conversation> convs;
  for (const char* id : {"a", "b", "c", "d", "e"}) {
    const std::string variant = std::string(id) == "b" || std::string(id) == "d" ? "ei" : "baseline";
    convs.push_back(test::make_conversation(id, {"x", "y"}, BotId{"bot", "data", variant}));
  }
  const std::map<std::string, double> quality{{"a", 3.0}, {"b", 6.0}, {"c", 3.0}, {"d", 1.0}};
  const auto groups = trajectory_groups(convs, quality, 2, 2);
  REQUIRE(groups.size() == 4);
  const auto ids = [](const TrajectoryGroup& g) {
    std::vector<std::string> out;
    for (const auto& c : g.conversations) out.push_back(c.id());
    return out;
  };
  CHECK(groups[0].name == "top");
  CHECK(ids(groups[0]) == std::vector<std::string>{"b", "a"});  // tie on 3.0 breaks by id
  CHECK(groups[1].name == "bottom");
  CHECK(ids(groups[1]) == std::vector<std::string>{"d", "a"});
  CHECK(ids(groups[2]) == std::vector<std::string>{"b", "d"});
  CHECK(ids(groups[3]) == std::vector<std::string>{"a", "c", "e"});
}

TEST_CASE("trajectory CSV matches an independent computation") {
  const oracle::Table table{{"hi", {1.0, 0.0}}, {"hello", {1.0, 1.0}}, {"cat", {1.0, 0.0}},
                            {"dog", {0.0, 1.0}}};
  WordVectorTable words(2);
  for (const auto& [w, v] : table) words.insert(w, v);

  // Sentiment with weights (+1, -1, 0, ...) is p0 - p1.
  std::array<double, kEmotionDim> w{};
  w[0] = 1.0;
  w[1] = -1.0;
  const test::FixedProvider emotion(
      EmbeddingKind::Emotion, {{"hi there", test::emotion({0.6, 0.4})},
                               {"cat dog", test::emotion({1.0})},
                               {"one two three", test::emotion({0.0, 1.0})},
                               {"ok then", test::emotion({0.5, 0.5})},
                               {"what", test::emotion({0.25, 0.75})}});
  MetricContext ctx;
  ctx.emotion = &emotion;
  ctx.words = &words;
  ctx.weights = EmojiWeights(w);

  TrajectoryGroup group{"g", {}};
  group.conversations.push_back(
      voted(test::make_conversation("1", {"hi there", "hello friend", "ok then", "sure"}),
            {{1, VoteDirection::Up}, {3, VoteDirection::Down}}));
  group.conversations.push_back(voted(test::make_conversation("2", {"cat dog", "dog", "what", "yes"}),
                                      {{1, VoteDirection::Down}}));
  group.conversations.push_back(test::make_conversation("3", {"one two three", "x"}));

  const auto rows = parse_csv(trajectory_csv(group, ctx));
  REQUIRE(rows.size() == 3);
  std::vector<std::string> header{"turn", "n"};
  for (const auto name : kTrajectoryMetricNames) {
    for (const char* suffix : {"_mean", "_ci_low", "_ci_high"}) header.push_back(std::string(name) + suffix);
  }
  CHECK(rows[0] == header);
  for (std::size_t r = 1; r < rows.size(); ++r) REQUIRE(rows[r].size() == header.size());

  const auto& t0 = rows[1];
  CHECK(t0[0] == "0");
  CHECK(t0[1] == "3");
  check_cells(t0, 2, interval({1.0, -1.0, 0.0}, kT90Df2));                 // votes
  check_cells(t0, 5, interval({2.0, 2.0, 3.0}, kT90Df2));                  // n_words
  check_cells(t0, 8, interval({0.2, 1.0, -1.0}, kT90Df2));                 // sentiment
  check_cells(t0, 11, interval({0.0, 0.0, 0.0}, kT90Df2));                 // laughter
  const double coh1 = oracle::cos(*oracle::average({"hi", "there"}, table, 2),
                                  *oracle::average({"hello", "friend"}, table, 2));
  const double coh2 = oracle::cos(*oracle::average({"cat", "dog"}, table, 2),
                                  *oracle::average({"dog"}, table, 2));
  check_cells(t0, 14, interval({coh1, coh2}, kT90Df1));  // "one two three" has no vectors

  const auto& t1 = rows[2];
  CHECK(t1[0] == "1");
  CHECK(t1[1] == "2");
  check_cells(t1, 2, interval({-1.0, 0.0}, kT90Df1));
  check_cells(t1, 5, interval({2.0, 1.0}, kT90Df1));
  check_cells(t1, 8, interval({0.0, -0.5}, kT90Df1));
  CHECK(t1[14].empty());
  CHECK(t1[15].empty());
  CHECK(t1[16].empty());
}

TEST_CASE("turn values without providers or replies") {
  const auto c = test::make_conversation("1", {"haha", "ok", "last one"});
  const auto rows = turn_values(c, MetricContext{});
  REQUIRE(rows.size() == 2);
  CHECK(rows[0][0] == 0.0);  // reply present, no vote
  CHECK(rows[0][1] == 1.0);
  CHECK_FALSE(rows[0][2].has_value());
  CHECK_FALSE(rows[0][4].has_value());
  CHECK_FALSE(rows[1][0].has_value());  // no reply yet
  CHECK(rows[1][1] == 2.0);

  // A single value gives a mean with empty interval cells.
  const TrajectoryGroup single{"one", {c}};
  const auto csv = parse_csv(trajectory_csv(single, MetricContext{}));
  REQUIRE(csv.size() == 3);
  CHECK(csv[1][5] == "1");
  CHECK(csv[1][6].empty());
  CHECK(csv[1][7].empty());
}
