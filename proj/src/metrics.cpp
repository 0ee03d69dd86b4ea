#include "convo/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <sstream>

#include "convo/error.hpp"
#include "convo/tokenize.hpp"

namespace convo {

double cosine(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size()) {
    throw Error(ErrorCode::DimensionMismatch, "cosine of vectors with " + std::to_string(u.size()) +
                                                  " and " + std::to_string(v.size()) + " values");
  }
  double dot = 0.0;
  double uu = 0.0;
  double vv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    uu += u[i] * u[i];
    vv += v[i] * v[i];
  }
  if (uu == 0.0 || vv == 0.0) throw Error(ErrorCode::ZeroVector, "cosine of a zero vector");
  return std::clamp(dot / (std::sqrt(uu) * std::sqrt(vv)), -1.0, 1.0);
}

namespace {

std::vector<const Vector*> lookup_all(const std::vector<std::string>& tokens,
                                      const WordVectorTable& table) {
  std::vector<const Vector*> out;
  for (const auto& t : tokens) {
    if (const Vector* v = table.find(t)) out.push_back(v);
  }
  if (out.empty()) {
    throw Error(ErrorCode::NoVectorTokens, "no in-vocabulary token in '" + join_tokens(tokens) + "'");
  }
  return out;
}

double directed_greedy(const std::vector<const Vector*>& source,
                       const std::vector<const Vector*>& target) {
  double total = 0.0;
  for (const Vector* s : source) {
    double best = -1.0;
    for (const Vector* t : target) best = std::max(best, cosine(*s, *t));
    total += best;
  }
  return total / static_cast<double>(source.size());
}

}  // namespace

Vector embedding_average(const std::vector<std::string>& tokens, const WordVectorTable& table) {
  const auto vectors = lookup_all(tokens, table);
  Vector sum(table.dimension(), 0.0);
  double scale = 0.0;
  for (const Vector* v : vectors) {
    for (std::size_t d = 0; d < sum.size(); ++d) {
      sum[d] += (*v)[d];
      scale += std::abs((*v)[d]);
    }
  }
  double norm = 0.0;
  for (double x : sum) norm += x * x;
  norm = std::sqrt(norm);
  // Relative threshold: exact cancellation in exact arithmetic can leave
  // rounding residue.
  if (norm <= 1e-12 * scale || norm == 0.0) {
    throw Error(ErrorCode::ZeroSum, "word vectors of '" + join_tokens(tokens) + "' sum to zero");
  }
  for (double& x : sum) x /= norm;
  return sum;
}

Vector vector_extrema(const std::vector<std::string>& tokens, const WordVectorTable& table) {
  const auto vectors = lookup_all(tokens, table);
  Vector out(table.dimension());
  for (std::size_t d = 0; d < out.size(); ++d) {
    double hi = (*vectors.front())[d];
    double lo = hi;
    for (const Vector* v : vectors) {
      hi = std::max(hi, (*v)[d]);
      lo = std::min(lo, (*v)[d]);
    }
    out[d] = hi > std::abs(lo) ? hi : lo;
  }
  return out;
}

double greedy_score(const std::vector<std::string>& source, const std::vector<std::string>& target,
                    const WordVectorTable& table) {
  const auto s = lookup_all(source, table);
  const auto t = lookup_all(target, table);
  return (directed_greedy(s, t) + directed_greedy(t, s)) / 2.0;
}

std::string_view to_string(ReferenceKind kind) {
  switch (kind) {
    case ReferenceKind::Average: return "avg";
    case ReferenceKind::Extrema: return "ext";
    case ReferenceKind::Greedy: return "grd";
  }
  return "avg";
}

ReferenceKind parse_reference_kind(std::string_view text) {
  if (text == "avg") return ReferenceKind::Average;
  if (text == "ext") return ReferenceKind::Extrema;
  if (text == "grd") return ReferenceKind::Greedy;
  throw Error(ErrorCode::InvalidArgument, "unknown reference metric '" + std::string(text) + "'");
}

double reference_metric(ReferenceKind kind, std::string_view target, std::string_view generated,
                        const WordVectorTable& table) {
  const auto t = tokenize(target);
  const auto g = tokenize(generated);
  switch (kind) {
    case ReferenceKind::Average:
      return cosine(embedding_average(t, table), embedding_average(g, table));
    case ReferenceKind::Extrema:
      return cosine(vector_extrema(t, table), vector_extrema(g, table));
    case ReferenceKind::Greedy:
      return greedy_score(t, g, table);
  }
  return 0.0;
}

double word_coherence(ReferenceKind kind, std::string_view query, std::string_view response,
                      const WordVectorTable& table) {
  return reference_metric(kind, query, response, table);
}

// ---------------------------------------------------------------------------

EmojiWeights::EmojiWeights(const std::array<double, kEmotionDim>& weights) : weights_(weights) {
  for (double w : weights_) {
    if (!std::isfinite(w)) throw Error(ErrorCode::InvalidArgument, "emoji weight is not finite");
  }
}

EmojiWeights EmojiWeights::defaults() {
  // Class order of the 64-emoji emotion model (see data/emoji_weights.txt).
  return EmojiWeights({
      1,  -1, -1, -1, 1,  -1, 1,  1,   // joy unamused weary sob heart_eyes pensive ok_hand blush
      1,  0,  1,  1,  0,  1,  0,  1,   // heart smirk grin notes flushed 100 sleeping relieved
      1,  1,  1,  -1, 0,  0,  -1, 1,   // relaxed raised_hands two_hearts expressionless sweat_smile pray confused kissing_heart
      1,  0,  0,  -1, 0,  -1, 1,  1,   // heartbeat neutral_face information_desk_person disappointed see_no_evil tired_face v sunglasses
      -1, 1,  -1, 0,  1,  -1, 0,  -1,  // rage thumbsup cry sleepy yum triumph hand mask
      1,  0,  -1, -1, 0,  -1, -1, 1,   // clap eyes gun persevere smiling_imp sweat broken_heart yellow_heart
      1,  0,  1,  -1, -1, 1,  1,  -1,  // musical_note speak_no_evil wink skull confounded smile stuck_out_tongue_winking_eye angry
      -1, 1,  0,  1,  1,  1,  0,  1,   // no_good muscle facepunch purple_heart sparkling_heart blue_heart grimacing sparkles
  });
}

EmojiWeights EmojiWeights::parse(std::istream& in) {
  std::array<double, kEmotionDim> w{};
  std::size_t count = 0;
  std::string fields;
  for (std::string line; std::getline(in, line);) {
    fields += line.substr(0, line.find('#'));  // '#' starts a comment
    fields += '\n';
  }
  std::istringstream tokens(fields);
  for (std::string field; tokens >> field;) {
    if (count == kEmotionDim) {
      throw Error(ErrorCode::ParseError, "emoji weights: more than 64 values");
    }
    try {
      std::size_t used = 0;
      w[count] = std::stod(field, &used);
      if (used != field.size()) throw std::invalid_argument(field);
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::ParseError, "emoji weights: invalid number '" + field + "'");
    }
    ++count;
  }
  if (count != kEmotionDim) {
    throw Error(ErrorCode::ParseError,
                "emoji weights: expected 64 values, found " + std::to_string(count));
  }
  return EmojiWeights(w);
}

EmojiWeights EmojiWeights::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path + "'");
  return parse(in);
}

double EmojiWeights::min() const { return *std::min_element(weights_.begin(), weights_.end()); }
double EmojiWeights::max() const { return *std::max_element(weights_.begin(), weights_.end()); }

double sentiment_score(const EmotionEmbedding& emotion, const EmojiWeights& weights) {
  double s = 0.0;
  for (std::size_t i = 0; i < kEmotionDim; ++i) s += emotion.probabilities[i] * weights.values()[i];
  return s;
}

double sentiment_coherence(std::string_view query, std::string_view response,
                           const EmbeddingProvider& emotion) {
  const auto q = embed_emotion(emotion, query);
  const auto r = embed_emotion(emotion, response);
  return cosine(q.probabilities, r.probabilities);
}

std::optional<double> mean_transition(std::span<const double> trajectory) {
  if (trajectory.size() < 2) return std::nullopt;
  double total = 0.0;
  for (std::size_t i = 1; i < trajectory.size(); ++i) total += trajectory[i] - trajectory[i - 1];
  return total / static_cast<double>(trajectory.size() - 1);
}

double minmax_slope(std::span<const double> trajectory) {
  if (trajectory.empty()) return 0.0;
  const auto hi = std::max_element(trajectory.begin(), trajectory.end());
  const auto lo = std::min_element(trajectory.begin(), trajectory.end());
  const auto di = hi - lo;
  if (di == 0) return 0.0;
  return (*hi - *lo) / static_cast<double>(di);
}

namespace {

std::vector<double> user_sentiments(const Conversation& c, const EmojiWeights& weights,
                                    const EmbeddingProvider& emotion) {
  std::vector<double> s;
  for (const auto& u : user_utterances(c)) {
    s.push_back(sentiment_score(embed_emotion(emotion, u.text), weights));
  }
  return s;
}

}  // namespace

double sentiment_transition(const Conversation& conversation, const EmojiWeights& weights,
                            const EmbeddingProvider& emotion) {
  const auto s = user_sentiments(conversation, weights, emotion);
  // With strict alternation, each consecutive pair of user utterances
  // brackets exactly one bot response.
  const auto t = mean_transition(s);
  if (!t) {
    throw Error(ErrorCode::InsufficientTurns, "sentiment transition needs two user utterances");
  }
  return *t;
}

double sentiment_minmax(const Conversation& conversation, const EmojiWeights& weights,
                        const EmbeddingProvider& emotion) {
  return minmax_slope(user_sentiments(conversation, weights, emotion));
}

namespace {

// Length of the laughter match, or 0 if the token is not laughter-like.
std::size_t laughter_in_token(std::string_view token) {
  std::size_t i = 0;
  if (i < token.size() && token[i] == 'a') ++i;
  std::size_t count = 0;
  while (i + 1 < token.size() && token[i] == 'h' && token[i + 1] == 'a') {
    i += 2;
    ++count;
  }
  if (count > 0 && i < token.size() && token[i] == 'h') ++i;
  return (count > 0 && i == token.size()) ? count : 0;
}

}  // namespace

std::size_t laughter(std::string_view text) {
  std::size_t total = 0;
  for (const auto& t : tokenize(text)) total += laughter_in_token(t);  // tokens are lowercase
  return total;
}

double semantic_similarity(std::string_view query, std::string_view response,
                           const EmbeddingProvider& sentence) {
  const auto q = embed_sentence(sentence, query);
  const auto r = embed_sentence(sentence, response);
  return cosine(q.values, r.values);
}

std::vector<std::string> default_question_words() {
  return {"who", "what", "when", "where", "why", "how", "which", "whose", "whom"};
}

double question_score(std::string_view text, std::span<const std::string> question_words) {
  const auto tokens = tokenize(text);
  if (tokens.empty()) return 0.0;
  if (std::find(tokens.begin(), tokens.end(), "?") != tokens.end()) return 1.0;
  return std::find(question_words.begin(), question_words.end(), tokens.front()) !=
                 question_words.end()
             ? 1.0
             : 0.0;
}

double question_score(std::string_view text) {
  static const std::vector<std::string> words = default_question_words();
  return question_score(text, words);
}

std::size_t word_count(std::string_view text) {
  const auto tokens = tokenize(text);
  return static_cast<std::size_t>(
      std::count_if(tokens.begin(), tokens.end(), [](const auto& t) { return !is_punctuation(t); }));
}

// ---------------------------------------------------------------------------

std::string_view to_string(Metric m) { return kMetricNames[static_cast<std::size_t>(m)]; }

std::optional<Metric> parse_metric(std::string_view name) {
  for (std::size_t i = 0; i < kMetricCount; ++i) {
    if (kMetricNames[i] == name) return static_cast<Metric>(i);
  }
  return std::nullopt;
}

std::string_view to_string(Pairing p) { return p == Pairing::UserBot ? "user-bot" : "bot-bot"; }

Pairing parse_pairing(std::string_view text) {
  if (text == "user-bot") return Pairing::UserBot;
  if (text == "bot-bot") return Pairing::BotBot;
  throw Error(ErrorCode::InvalidArgument, "unknown pairing '" + std::string(text) + "'");
}

namespace {

class Mean {
 public:
  void add(double x) {
    sum_ += x;
    ++n_;
  }
  std::optional<double> value() const {
    if (n_ == 0) return std::nullopt;
    return sum_ / static_cast<double>(n_);
  }

 private:
  double sum_{0.0};
  std::size_t n_{0};
};

bool is_undefined_metric(const Error& e) {
  switch (e.code()) {
    case ErrorCode::NoVectorTokens:
    case ErrorCode::ZeroSum:
    case ErrorCode::ZeroVector:
      return true;
    default:
      return false;
  }
}

template <typename F>
void add_if_defined(Mean& mean, F&& f) {
  try {
    mean.add(f());
  } catch (const Error& e) {
    if (!is_undefined_metric(e)) throw;
  }
}

}  // namespace

MetricVector utterance_features(std::span<const Utterance> utterances,
                                const MetricContext& context, Pairing pairing) {
  if (utterances.size() < 2) {
    throw Error(ErrorCode::InsufficientTurns, "conversation features need at least two utterances");
  }

  std::vector<std::size_t> queries;
  std::vector<std::size_t> responses;
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  if (pairing == Pairing::BotBot) {
    for (std::size_t i = 0; i + 1 < utterances.size(); ++i) {
      pairs.emplace_back(i, i + 1);
      queries.push_back(i);
      responses.push_back(i + 1);
    }
  } else {
    for (std::size_t i = 0; i < utterances.size(); ++i) {
      const bool is_user = utterances[i].speaker == Speaker::A;
      (is_user ? queries : responses).push_back(i);
      if (is_user && i + 1 < utterances.size() && utterances[i + 1].speaker == Speaker::B) {
        pairs.emplace_back(i, i + 1);
      }
    }
    if (pairs.empty()) {
      throw Error(ErrorCode::InsufficientTurns, "no user utterance is followed by a bot reply");
    }
  }

  // Each utterance is embedded at most once.
  const std::size_t n = utterances.size();
  std::vector<std::optional<EmotionEmbedding>> emotions(n);
  std::vector<std::optional<SentenceEmbedding>> sentences(n);
  const auto emotion_of = [&](std::size_t i) -> const EmotionEmbedding& {
    if (!emotions[i]) emotions[i] = embed_emotion(*context.emotion, utterances[i].text);
    return *emotions[i];
  };
  const auto sentence_of = [&](std::size_t i) -> const SentenceEmbedding& {
    if (!sentences[i]) sentences[i] = embed_sentence(*context.sentence, utterances[i].text);
    return *sentences[i];
  };

  MetricVector out;

  if (context.emotion != nullptr) {
    std::vector<double> trajectory;
    Mean sentiment;
    for (const auto i : queries) {
      trajectory.push_back(sentiment_score(emotion_of(i), context.weights));
      sentiment.add(trajectory.back());
    }
    out[Metric::Sentiment] = sentiment.value();
    out[Metric::SentimentTransition] = mean_transition(trajectory);
    if (!trajectory.empty()) out[Metric::SentimentMinMax] = minmax_slope(trajectory);

    Mean coherence;
    for (const auto& [q, r] : pairs) {
      add_if_defined(coherence, [&] {
        return cosine(emotion_of(q).probabilities, emotion_of(r).probabilities);
      });
    }
    out[Metric::SentimentCoherence] = coherence.value();
  }

  if (context.sentence != nullptr) {
    Mean similarity;
    for (const auto& [q, r] : pairs) {
      add_if_defined(similarity, [&] { return cosine(sentence_of(q).values, sentence_of(r).values); });
    }
    out[Metric::SemanticSimilarity] = similarity.value();
  }

  if (context.words != nullptr) {
    constexpr std::array<std::pair<ReferenceKind, Metric>, 3> kinds = {{
        {ReferenceKind::Average, Metric::AvgWordCoherence},
        {ReferenceKind::Extrema, Metric::ExtWordCoherence},
        {ReferenceKind::Greedy, Metric::GrdWordCoherence},
    }};
    for (const auto& [kind, metric] : kinds) {
      Mean coherence;
      for (const auto& [q, r] : pairs) {
        add_if_defined(coherence, [&] {
          return word_coherence(kind, utterances[q].text, utterances[r].text, *context.words);
        });
      }
      out[metric] = coherence.value();
    }
  }

  Mean laughs;
  Mean words;
  for (const auto i : queries) {
    laughs.add(static_cast<double>(laughter(utterances[i].text)));
    words.add(static_cast<double>(word_count(utterances[i].text)));
  }
  out[Metric::Laughter] = laughs.value();
  out[Metric::NWords] = words.value();

  Mean questions;
  for (const auto i : responses) questions.add(question_score(utterances[i].text, context.question_words));
  out[Metric::QuestionScore] = questions.value();

  return out;
}

MetricVector conversation_features(const Conversation& conversation, const MetricContext& context,
                                   Pairing pairing) {
  return utterance_features(conversation.utterances(), context, pairing);
}

std::string metric_csv_header() {
  std::string out;
  for (const auto name : kMetricNames) {
    if (!out.empty()) out += ',';
    out += name;
  }
  return out;
}

std::string metric_csv_row(const MetricVector& features) {
  std::ostringstream os;
  os << std::setprecision(17);
  for (std::size_t i = 0; i < kMetricCount; ++i) {
    if (i > 0) os << ',';
    if (features.values[i]) os << *features.values[i];
  }
  return os.str();
}

MetricVector parse_metric_csv_row(std::span<const std::string> cells) {
  if (cells.size() != kMetricCount) {
    throw Error(ErrorCode::ParseError, "metric row has " + std::to_string(cells.size()) +
                                           " cells, expected " + std::to_string(kMetricCount));
  }
  MetricVector out;
  for (std::size_t i = 0; i < kMetricCount; ++i) {
    if (cells[i].empty()) continue;
    try {
      out.values[i] = std::stod(cells[i]);
    } catch (const std::logic_error&) {
      throw Error(ErrorCode::ParseError, "invalid metric value '" + cells[i] + "'");
    }
  }
  return out;
}

}  // namespace convo
