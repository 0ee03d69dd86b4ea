#pragma once

#include <array>
#include <cstddef>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "convo/domain.hpp"
#include "convo/embeddings.hpp"

namespace convo {

// ---------------------------------------------------------------------------
// Embedding-distance metrics over word vectors
// ---------------------------------------------------------------------------

/// Cosine similarity, clamped to [-1, 1]. Throws DimensionMismatch or
/// ZeroVector.
double cosine(std::span<const double> u, std::span<const double> v);

/// Normalized sum of the in-vocabulary word vectors (unit L2 norm).
/// Out-of-vocabulary tokens are skipped. Throws NoVectorTokens when nothing
/// is in vocabulary, ZeroSum when the vectors cancel.
Vector embedding_average(const std::vector<std::string>& tokens, const WordVectorTable& table);

/// Per dimension: the maximum if it exceeds |minimum|, otherwise the minimum.
Vector vector_extrema(const std::vector<std::string>& tokens, const WordVectorTable& table);

/// Symmetric greedy matching: the mean of the two directed scores, each
/// averaging (over source words) the best cosine against any target word.
double greedy_score(const std::vector<std::string>& source, const std::vector<std::string>& target,
                    const WordVectorTable& table);

enum class ReferenceKind { Average, Extrema, Greedy };

std::string_view to_string(ReferenceKind kind);
ReferenceKind parse_reference_kind(std::string_view text);

double reference_metric(ReferenceKind kind, std::string_view target, std::string_view generated,
                        const WordVectorTable& table);

/// Same machinery as reference_metric, applied to a (query, response) pair.
double word_coherence(ReferenceKind kind, std::string_view query, std::string_view response,
                      const WordVectorTable& table);

// ---------------------------------------------------------------------------
// Sentiment metrics over emotion embeddings
// ---------------------------------------------------------------------------

/// One weight per emoji class of the emotion model. Positive classes carry
/// positive weights, so the weighted sum rises with positive sentiment.
class EmojiWeights {
 public:
  EmojiWeights() = default;
  explicit EmojiWeights(const std::array<double, kEmotionDim>& weights);

  /// +1 for clearly positive emoji classes, -1 for clearly negative, 0 otherwise.
  static EmojiWeights defaults();
  /// Exactly 64 whitespace-separated finite floats; `#` starts a comment.
  static EmojiWeights parse(std::istream& in);
  static EmojiWeights load(const std::string& path);

  const std::array<double, kEmotionDim>& values() const noexcept { return weights_; }
  double min() const;
  double max() const;

 private:
  std::array<double, kEmotionDim> weights_{};
};

double sentiment_score(const EmotionEmbedding& emotion, const EmojiWeights& weights);

double sentiment_coherence(std::string_view query, std::string_view response,
                           const EmbeddingProvider& emotion);

/// Mean change of the user's sentiment across each bot turn that is followed
/// by another user turn. Throws InsufficientTurns with fewer than two user
/// utterances.
double sentiment_transition(const Conversation& conversation, const EmojiWeights& weights,
                            const EmbeddingProvider& emotion);

/// Signed slope (S_max - S_min) / (i_max - i_min) over user-utterance
/// positions; 0 for a single user utterance.
double sentiment_minmax(const Conversation& conversation, const EmojiWeights& weights,
                        const EmbeddingProvider& emotion);

// Trajectory forms shared by the conversation-level metrics.
std::optional<double> mean_transition(std::span<const double> trajectory);
double minmax_slope(std::span<const double> trajectory);

/// Total "ha" count over laughter-like tokens (`^a?(ha)+h?$`, case-insensitive).
std::size_t laughter(std::string_view text);

// ---------------------------------------------------------------------------
// Semantic and engagement metrics
// ---------------------------------------------------------------------------

double semantic_similarity(std::string_view query, std::string_view response,
                           const EmbeddingProvider& sentence);

std::vector<std::string> default_question_words();

/// 1 if the text contains "?" or opens with a question word, else 0.
double question_score(std::string_view text, std::span<const std::string> question_words);
double question_score(std::string_view text);

/// Number of non-punctuation tokens.
std::size_t word_count(std::string_view text);

// ---------------------------------------------------------------------------
// Conversation-level aggregation
// ---------------------------------------------------------------------------

enum class Metric : std::size_t {
  Sentiment,
  SentimentCoherence,
  SentimentTransition,
  SentimentMinMax,
  Laughter,
  SemanticSimilarity,
  AvgWordCoherence,
  ExtWordCoherence,
  GrdWordCoherence,
  QuestionScore,
  NWords,
};

inline constexpr std::size_t kMetricCount = 11;

inline constexpr std::array<std::string_view, kMetricCount> kMetricNames = {
    "sentiment",          "sentiment_coherence", "sentiment_transition", "sentiment_minmax",
    "laughter",           "semantic_similarity", "avg_word_coherence",   "ext_word_coherence",
    "grd_word_coherence", "question_score",      "n_words"};

std::string_view to_string(Metric m);
std::optional<Metric> parse_metric(std::string_view name);

// Conversation-level aggregates; nullopt marks a metric with no defined pair.
struct MetricVector {
  std::array<std::optional<double>, kMetricCount> values{};

  std::optional<double>& operator[](Metric m) { return values[static_cast<std::size_t>(m)]; }
  const std::optional<double>& operator[](Metric m) const {
    return values[static_cast<std::size_t>(m)];
  }

  friend bool operator==(const MetricVector&, const MetricVector&) = default;
};

enum class Pairing { UserBot, BotBot };

std::string_view to_string(Pairing p);
Pairing parse_pairing(std::string_view text);

struct MetricContext {
  const EmbeddingProvider* emotion{nullptr};
  const EmbeddingProvider* sentence{nullptr};
  const WordVectorTable* words{nullptr};
  EmojiWeights weights{EmojiWeights::defaults()};
  std::vector<std::string> question_words{default_question_words()};
};

/// Scores a conversation.
///  - user-bot pairs each user utterance with the bot reply that follows it;
///    the query side is every user utterance, the response side every bot one.
///  - bot-bot pairs every consecutive utterance, ignoring roles; the query
///    side is utterances [0, n-1), the response side [1, n).
/// Pair metrics are averaged over pairs where they are defined; sentiment,
/// laughter and n_words over the query side; question_score over the
/// response side; transition and min-max over the query-side trajectory.
/// Throws InsufficientTurns for fewer than two utterances.
MetricVector conversation_features(const Conversation& conversation, const MetricContext& context,
                                   Pairing pairing);

/// Same as above on a raw utterance sequence (roles are only read for
/// user-bot pairing).
MetricVector utterance_features(std::span<const Utterance> utterances,
                                const MetricContext& context, Pairing pairing);

std::string metric_csv_header();
std::string metric_csv_row(const MetricVector& features);
MetricVector parse_metric_csv_row(std::span<const std::string> cells);

}  // namespace convo
