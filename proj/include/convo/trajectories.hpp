#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "convo/domain.hpp"
#include "convo/metrics.hpp"

namespace convo {

// Per-turn series; turn k is the exchange (user utterance k, bot reply k).
enum class TrajectoryMetric { Votes, NWords, Sentiment, Laughter, AvgWordCoherence };

inline constexpr std::array<std::string_view, 5> kTrajectoryMetricNames = {
    "votes", "n_words", "sentiment", "laughter", "avg_word_coherence"};

struct TrajectoryGroup {
  std::string name;
  std::vector<Conversation> conversations;
};

/// `top` and `bottom` hold the `top_n` highest and `bottom_n` lowest rated
/// conversations (ties by id); `ei` holds conversations whose bot variant is
/// `ei`, `baseline` every other conversation.
std::vector<TrajectoryGroup> trajectory_groups(std::span<const Conversation> conversations,
                                               const std::map<std::string, double>& quality,
                                               std::size_t top_n = 100,
                                               std::size_t bottom_n = 100);

/// Per-turn values of one conversation; a missing entry means the metric is
/// undefined at that turn (no reply yet, no provider, no vector tokens).
std::vector<std::array<std::optional<double>, 5>> turn_values(const Conversation& conversation,
                                                              const MetricContext& context);

/// CSV with columns `turn,n` then `<metric>_mean,<metric>_ci_low,<metric>_ci_high`
/// per metric, one row per turn index present in the group. Intervals are
/// t-intervals at `level`; cells are empty when fewer than two values exist.
std::string trajectory_csv(const TrajectoryGroup& group, const MetricContext& context,
                           double level = 0.9);

}  // namespace convo
