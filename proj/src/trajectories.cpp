#include "convo/trajectories.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

#include "convo/error.hpp"
#include "convo/stats.hpp"

namespace convo {

std::vector<TrajectoryGroup> trajectory_groups(std::span<const Conversation> conversations,
                                               const std::map<std::string, double>& quality,
                                               std::size_t top_n, std::size_t bottom_n) {
  std::vector<std::pair<double, const Conversation*>> rated;
  for (const auto& c : conversations) {
    if (const auto it = quality.find(c.id()); it != quality.end()) rated.emplace_back(it->second, &c);
  }
  const auto by_id = [](const Conversation* a, const Conversation* b) { return a->id() < b->id(); };

  std::vector<TrajectoryGroup> groups{{"top", {}}, {"bottom", {}}, {"ei", {}}, {"baseline", {}}};
  std::sort(rated.begin(), rated.end(), [&](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : by_id(a.second, b.second);
  });
  for (std::size_t i = 0; i < std::min(top_n, rated.size()); ++i) {
    groups[0].conversations.push_back(*rated[i].second);
  }
  std::sort(rated.begin(), rated.end(), [&](const auto& a, const auto& b) {
    return a.first != b.first ? a.first < b.first : by_id(a.second, b.second);
  });
  for (std::size_t i = 0; i < std::min(bottom_n, rated.size()); ++i) {
    groups[1].conversations.push_back(*rated[i].second);
  }
  for (const auto& c : conversations) {
    groups[c.bot_id().variant == "ei" ? 2 : 3].conversations.push_back(c);
  }
  return groups;
}

std::vector<std::array<std::optional<double>, 5>> turn_values(const Conversation& conversation,
                                                              const MetricContext& context) {
  std::vector<std::array<std::optional<double>, 5>> out;
  for (std::size_t a = 0; a < conversation.size(); a += 2) {
    const auto& user = conversation[a].text;
    const bool has_reply = a + 1 < conversation.size();
    std::array<std::optional<double>, 5> row{};
    if (has_reply) {
      const auto& votes = conversation.votes();
      const auto v = votes.find(a + 1);
      row[0] = v == votes.end() ? 0.0 : (v->second == VoteDirection::Up ? 1.0 : -1.0);
    }
    row[1] = static_cast<double>(word_count(user));
    if (context.emotion != nullptr) {
      row[2] = sentiment_score(embed_emotion(*context.emotion, user), context.weights);
    }
    row[3] = static_cast<double>(laughter(user));
    if (context.words != nullptr && has_reply) {
      try {
        row[4] = word_coherence(ReferenceKind::Average, user, conversation[a + 1].text,
                                *context.words);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::NoVectorTokens && e.code() != ErrorCode::ZeroSum) throw;
      }
    }
    out.push_back(row);
  }
  return out;
}

std::string trajectory_csv(const TrajectoryGroup& group, const MetricContext& context,
                           double level) {
  // columns[turn][metric] = values across conversations
  std::vector<std::array<std::vector<double>, 5>> columns;
  std::vector<std::size_t> counts;
  for (const auto& c : group.conversations) {
    const auto rows = turn_values(c, context);
    if (columns.size() < rows.size()) {
      columns.resize(rows.size());
      counts.resize(rows.size());
    }
    for (std::size_t t = 0; t < rows.size(); ++t) {
      ++counts[t];
      for (std::size_t m = 0; m < 5; ++m) {
        if (rows[t][m]) columns[t][m].push_back(*rows[t][m]);
      }
    }
  }

  std::ostringstream os;
  os << std::setprecision(17) << "turn,n";
  for (const auto name : kTrajectoryMetricNames) {
    os << ',' << name << "_mean," << name << "_ci_low," << name << "_ci_high";
  }
  os << '\n';
  for (std::size_t t = 0; t < columns.size(); ++t) {
    os << t << ',' << counts[t];
    for (std::size_t m = 0; m < 5; ++m) {
      const auto& v = columns[t][m];
      if (const auto ci = mean_interval(v, level)) {
        os << ',' << ci->mean << ',' << ci->low << ',' << ci->high;
      } else if (v.size() == 1) {
        os << ',' << v.front() << ",,";
      } else {
        os << ",,,";
      }
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace convo
