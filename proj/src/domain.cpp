#include "convo/domain.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <istream>
#include <ostream>

#include "convo/error.hpp"

namespace convo {

std::string_view to_string(Speaker s) { return s == Speaker::A ? "A" : "B"; }

std::string_view to_string(Origin o) {
  switch (o) {
    case Origin::Interactive: return "interactive";
    case Origin::SelfPlay: return "selfplay";
    case Origin::Corpus: return "corpus";
  }
  return "interactive";
}

std::string_view to_string(VoteDirection v) { return v == VoteDirection::Up ? "up" : "down"; }

Speaker parse_speaker(std::string_view s) {
  if (s == "A") return Speaker::A;
  if (s == "B") return Speaker::B;
  throw Error(ErrorCode::ParseError, "unknown speaker '" + std::string(s) + "'");
}

Origin parse_origin(std::string_view s) {
  if (s == "interactive") return Origin::Interactive;
  if (s == "selfplay") return Origin::SelfPlay;
  if (s == "corpus") return Origin::Corpus;
  throw Error(ErrorCode::ParseError, "unknown origin '" + std::string(s) + "'");
}

VoteDirection parse_vote(std::string_view s) {
  if (s == "up") return VoteDirection::Up;
  if (s == "down") return VoteDirection::Down;
  throw Error(ErrorCode::ParseError, "unknown vote direction '" + std::string(s) + "'");
}

std::string BotId::str() const { return name + "@" + dataset + "/" + variant; }

BotId BotId::parse(std::string_view text) {
  const auto at = text.find('@');
  if (at == std::string_view::npos) {
    return BotId{std::string(text), "", ""};
  }
  const auto slash = text.find('/', at + 1);
  BotId id;
  id.name = std::string(text.substr(0, at));
  if (slash == std::string_view::npos) {
    id.dataset = std::string(text.substr(at + 1));
  } else {
    id.dataset = std::string(text.substr(at + 1, slash - at - 1));
    id.variant = std::string(text.substr(slash + 1));
  }
  return id;
}

std::ostream& operator<<(std::ostream& os, const BotId& id) { return os << id.str(); }

bool is_blank(std::string_view text) {
  return std::all_of(text.begin(), text.end(),
                     [](unsigned char c) { return std::isspace(c) != 0; });
}

std::string trim(std::string_view text) {
  std::size_t b = 0;
  std::size_t e = text.size();
  while (b < e && std::isspace(static_cast<unsigned char>(text[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(text[e - 1]))) --e;
  return std::string(text.substr(b, e - b));
}

Conversation::Conversation(std::string id, BotId bot_id, Origin origin)
    : id_(std::move(id)), bot_id_(std::move(bot_id)), origin_(origin) {}

Conversation Conversation::from_parts(std::string id, BotId bot_id, Origin origin,
                                      const std::vector<std::pair<Speaker, std::string>>& turns,
                                      std::map<std::size_t, VoteDirection> votes) {
  Conversation c(std::move(id), std::move(bot_id), origin);
  for (const auto& [speaker, text] : turns) {
    c = append_utterance(c, speaker, text);
  }
  for (const auto& [index, direction] : votes) {
    c = c.with_vote(index, direction);
  }
  return c;
}

std::optional<Speaker> Conversation::next_speaker() const {
  if (utterances_.empty()) return Speaker::A;
  return utterances_.back().speaker == Speaker::A ? Speaker::B : Speaker::A;
}

std::size_t Conversation::bot_turns() const {
  return static_cast<std::size_t>(std::count_if(
      utterances_.begin(), utterances_.end(),
      [](const Utterance& u) { return u.speaker == Speaker::B; }));
}

Conversation Conversation::with_vote(std::size_t index, VoteDirection direction) const {
  if (index >= utterances_.size()) {
    throw Error(ErrorCode::UnknownIndex, "no utterance at index " + std::to_string(index));
  }
  if (utterances_[index].speaker != Speaker::B) {
    throw Error(ErrorCode::NotABotUtterance,
                "utterance " + std::to_string(index) + " was not produced by the bot");
  }
  Conversation next = *this;
  next.votes_[index] = direction;
  return next;
}

Conversation append_utterance(const Conversation& conversation, Speaker speaker,
                              std::string text) {
  if (is_blank(text)) {
    throw Error(ErrorCode::EmptyUtterance, "utterance text is blank");
  }
  if (speaker != *conversation.next_speaker()) {
    throw Error(ErrorCode::AlternationViolation,
                conversation.empty()
                    ? std::string("conversations open with speaker A")
                    : "speaker " + std::string(to_string(speaker)) + " spoke twice in a row");
  }
  Conversation next = conversation;
  next.utterances_.push_back(Utterance{speaker, std::move(text), conversation.size()});
  return next;
}

namespace {

std::vector<Utterance> by_speaker(const Conversation& c, Speaker s) {
  std::vector<Utterance> out;
  for (const auto& u : c.utterances()) {
    if (u.speaker == s) out.push_back(u);
  }
  return out;
}

}  // namespace

std::vector<Utterance> user_utterances(const Conversation& c) { return by_speaker(c, Speaker::A); }
std::vector<Utterance> bot_utterances(const Conversation& c) { return by_speaker(c, Speaker::B); }

void RatingRecord::validate() const {
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i] < 1 || scores[i] > 7) {
      throw Error(ErrorCode::OutOfRange, std::string(kRatingDimensions[i]) + " score " +
                                             std::to_string(scores[i]) + " outside [1,7]");
    }
  }
}

nlohmann::json to_json(const Conversation& c) {
  nlohmann::json utterances = nlohmann::json::array();
  for (const auto& u : c.utterances()) {
    utterances.push_back({{"speaker", to_string(u.speaker)}, {"text", u.text}});
  }
  nlohmann::json votes = nlohmann::json::object();
  for (const auto& [index, direction] : c.votes()) {
    votes[std::to_string(index)] = to_string(direction);
  }
  return {{"id", c.id()},
          {"bot_id", c.bot_id().str()},
          {"origin", to_string(c.origin())},
          {"utterances", std::move(utterances)},
          {"votes", std::move(votes)}};
}

Conversation conversation_from_json(const nlohmann::json& j) {
  try {
    std::vector<std::pair<Speaker, std::string>> turns;
    for (const auto& u : j.at("utterances")) {
      turns.emplace_back(parse_speaker(u.at("speaker").get<std::string>()),
                         u.at("text").get<std::string>());
    }
    std::map<std::size_t, VoteDirection> votes;
    if (j.contains("votes")) {
      for (const auto& [key, value] : j.at("votes").items()) {
        votes[std::stoul(key)] = parse_vote(value.get<std::string>());
      }
    }
    const auto origin = j.contains("origin") ? parse_origin(j.at("origin").get<std::string>())
                                             : Origin::Corpus;
    return Conversation::from_parts(j.at("id").get<std::string>(),
                                    BotId::parse(j.value("bot_id", std::string{})), origin, turns,
                                    std::move(votes));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("conversation: ") + e.what());
  } catch (const std::logic_error& e) {  // stoul
    throw Error(ErrorCode::ParseError, std::string("conversation vote key: ") + e.what());
  }
}

nlohmann::json to_json(const RatingRecord& r) {
  nlohmann::json j = {{"conversation_id", r.conversation_id}, {"annotator_id", r.annotator_id}};
  for (std::size_t i = 0; i < kRatingDimensions.size(); ++i) {
    j[std::string(kRatingDimensions[i])] = r.scores[i];
  }
  return j;
}

RatingRecord rating_from_json(const nlohmann::json& j) {
  RatingRecord r;
  try {
    r.conversation_id = j.at("conversation_id").get<std::string>();
    r.annotator_id = j.at("annotator_id").get<std::string>();
    for (std::size_t i = 0; i < kRatingDimensions.size(); ++i) {
      r.scores[i] = j.at(std::string(kRatingDimensions[i])).get<int>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("rating: ") + e.what());
  }
  r.validate();
  return r;
}

std::vector<nlohmann::json> read_jsonl(std::istream& in) {
  std::vector<nlohmann::json> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_blank(line)) continue;
    try {
      out.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return out;
}

std::vector<nlohmann::json> read_jsonl_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path + "'");
  return read_jsonl(in);
}

std::vector<Conversation> read_conversations(std::istream& in) {
  std::vector<Conversation> out;
  for (const auto& j : read_jsonl(in)) out.push_back(conversation_from_json(j));
  return out;
}

std::vector<Conversation> read_conversations_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path + "'");
  return read_conversations(in);
}

std::vector<RatingRecord> read_ratings(std::istream& in) {
  std::vector<RatingRecord> out;
  for (const auto& j : read_jsonl(in)) out.push_back(rating_from_json(j));
  return out;
}

std::vector<RatingRecord> read_ratings_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path + "'");
  return read_ratings(in);
}

void write_conversations(std::ostream& out, const std::vector<Conversation>& conversations) {
  for (const auto& c : conversations) out << to_json(c).dump() << '\n';
}

void write_conversations_file(const std::string& path,
                              const std::vector<Conversation>& conversations) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write '" + path + "'");
  write_conversations(out, conversations);
  if (!out) throw Error(ErrorCode::IoError, "failed writing '" + path + "'");
}

void write_ratings(std::ostream& out, const std::vector<RatingRecord>& ratings) {
  for (const auto& r : ratings) out << to_json(r).dump() << '\n';
}

}  // namespace convo
