#pragma once

#include <array>
#include <cstddef>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace convo {

// A = human / conversation opener, B = bot / responder. Self-play reuses A for
// the opening side.
enum class Speaker { A, B };
enum class Origin { Interactive, SelfPlay, Corpus };
enum class VoteDirection { Up, Down };

std::string_view to_string(Speaker s);
std::string_view to_string(Origin o);
std::string_view to_string(VoteDirection v);
Speaker parse_speaker(std::string_view s);
Origin parse_origin(std::string_view s);
VoteDirection parse_vote(std::string_view s);

struct Utterance {
  Speaker speaker{Speaker::A};
  std::string text;
  std::size_t index{0};

  friend bool operator==(const Utterance&, const Utterance&) = default;
};

// Serialized as `name@dataset/variant`.
struct BotId {
  std::string name;
  std::string dataset;
  std::string variant;

  std::string str() const;
  static BotId parse(std::string_view text);

  friend auto operator<=>(const BotId&, const BotId&) = default;
};

std::ostream& operator<<(std::ostream& os, const BotId& id);

bool is_blank(std::string_view text);
std::string trim(std::string_view text);

/// An alternating two-party exchange. Values are immutable: every mutating
/// operation returns a new Conversation and leaves the receiver untouched.
///
/// Invariants, checked on construction:
///  - the first utterance is spoken by A and speakers strictly alternate;
///  - `utterances[i].index == i`;
///  - no utterance text is blank;
///  - votes only reference B-side utterances.
class Conversation {
 public:
  Conversation() = default;
  Conversation(std::string id, BotId bot_id, Origin origin);

  /// Validating constructor for deserialization and bulk construction.
  static Conversation from_parts(std::string id, BotId bot_id, Origin origin,
                                 const std::vector<std::pair<Speaker, std::string>>& turns,
                                 std::map<std::size_t, VoteDirection> votes = {});

  const std::string& id() const noexcept { return id_; }
  const BotId& bot_id() const noexcept { return bot_id_; }
  Origin origin() const noexcept { return origin_; }
  const std::vector<Utterance>& utterances() const noexcept { return utterances_; }
  const std::map<std::size_t, VoteDirection>& votes() const noexcept { return votes_; }

  std::size_t size() const noexcept { return utterances_.size(); }
  bool empty() const noexcept { return utterances_.empty(); }
  const Utterance& operator[](std::size_t i) const { return utterances_.at(i); }
  std::optional<Speaker> next_speaker() const;
  std::size_t bot_turns() const;

  [[nodiscard]] Conversation with_vote(std::size_t index, VoteDirection direction) const;

  friend Conversation append_utterance(const Conversation& conversation, Speaker speaker,
                                       std::string text);
  friend bool operator==(const Conversation&, const Conversation&) = default;

 private:
  std::string id_;
  BotId bot_id_;
  Origin origin_{Origin::Interactive};
  std::vector<Utterance> utterances_;
  std::map<std::size_t, VoteDirection> votes_;
};

/// Throws AlternationViolation when `speaker` repeats the previous speaker (or
/// B tries to open), EmptyUtterance when `text` is blank.
Conversation append_utterance(const Conversation& conversation, Speaker speaker,
                             std::string text);

std::vector<Utterance> user_utterances(const Conversation& conversation);
std::vector<Utterance> bot_utterances(const Conversation& conversation);

// The five interactive-evaluation dimensions, in serialization order.
inline constexpr std::array<std::string_view, 5> kRatingDimensions = {
    "quality", "fluency", "diversity", "relatedness", "empathy"};

struct RatingRecord {
  std::string conversation_id;
  std::string annotator_id;
  std::array<int, 5> scores{};  // order of kRatingDimensions, each in [1,7]

  int quality() const { return scores[0]; }
  void validate() const;  // OutOfRange

  friend bool operator==(const RatingRecord&, const RatingRecord&) = default;
};

nlohmann::json to_json(const Conversation& conversation);
Conversation conversation_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RatingRecord& rating);
RatingRecord rating_from_json(const nlohmann::json& j);

// JSONL helpers. Readers report ParseError with a 1-based line number.
std::vector<nlohmann::json> read_jsonl(std::istream& in);
std::vector<nlohmann::json> read_jsonl_file(const std::string& path);
std::vector<Conversation> read_conversations(std::istream& in);
std::vector<Conversation> read_conversations_file(const std::string& path);
std::vector<RatingRecord> read_ratings(std::istream& in);
std::vector<RatingRecord> read_ratings_file(const std::string& path);
void write_conversations(std::ostream& out, const std::vector<Conversation>& conversations);
void write_conversations_file(const std::string& path,
                              const std::vector<Conversation>& conversations);
void write_ratings(std::ostream& out, const std::vector<RatingRecord>& ratings);

}  // namespace convo
