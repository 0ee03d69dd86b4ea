#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "convo/botkit.hpp"
#include "convo/corpus.hpp"
#include "convo/domain.hpp"
#include "convo/hybrid.hpp"
#include "convo/metrics.hpp"

namespace convo {

struct SelfPlayConfig {
  std::size_t n_conversations{100};
  std::size_t turns{10};
  std::uint64_t seed{0};
  std::vector<std::string> opener_prompts;

  void validate() const;  // InvalidArgument
};

nlohmann::json to_json(const SelfPlayConfig& config);
SelfPlayConfig selfplay_config_from_json(const nlohmann::json& j);

/// Conversation k draws its opener and every bot reply from
/// Rng(derive_seed(seed, k)); the bot produces both sides after the opener.
/// A conversation that hits BotTimeout restarts once from the same stream,
/// then the error propagates. Ids are `<bot>#<k>`.
std::vector<Conversation> run_selfplay(const BotHandle& bot, const SelfPlayConfig& config);

struct BotScore {
  BotId bot_id;
  double mean_mh{0.0};
  std::vector<double> per_conversation_mh;
};

/// Scores each conversation with bot-bot pairing. Throws HeldOutMismatch when a
/// conversation's bot is not the model's held-out bot, and
/// InsufficientConversations on empty input.
BotScore score_selfplay(std::span<const Conversation> conversations, const HybridModel& model,
                        const MetricContext& context);

/// Percentage of unordered conversation pairs sharing a run of `window`
/// consecutive utterance texts (whitespace-normalized, exact match). Throws
/// InsufficientConversations with fewer than two conversations.
double pairwise_overlap(std::span<const Conversation> conversations, std::size_t window);

/// Percentage of conversations containing a run of `window` consecutive
/// utterance texts that also occurs in some training conversation. Throws
/// EmptyCorpus when the training corpus has no conversations.
double training_overlap(std::span<const Conversation> conversations, const Corpus& training,
                        std::size_t window);

/// Built-in opener list used when no opener file is given.
std::vector<std::string> default_openers();

}  // namespace convo
