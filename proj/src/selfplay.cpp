#include "convo/selfplay.hpp"

#include <numeric>
#include <unordered_set>

#include "convo/error.hpp"
#include "convo/random.hpp"
#include "convo/tokenize.hpp"

namespace convo {

void SelfPlayConfig::validate() const {
  if (n_conversations < 1) throw Error(ErrorCode::InvalidArgument, "self-play needs n >= 1");
  if (turns < 2) throw Error(ErrorCode::InvalidArgument, "self-play needs turns >= 2");
  if (opener_prompts.empty()) throw Error(ErrorCode::InvalidArgument, "no opener prompts");
  for (const auto& p : opener_prompts) {
    if (is_blank(p)) throw Error(ErrorCode::InvalidArgument, "blank opener prompt");
  }
}

nlohmann::json to_json(const SelfPlayConfig& config) {
  return {{"n_conversations", config.n_conversations},
          {"turns", config.turns},
          {"seed", config.seed},
          {"opener_prompts", config.opener_prompts}};
}

SelfPlayConfig selfplay_config_from_json(const nlohmann::json& j) {
  SelfPlayConfig c;
  try {
    c.n_conversations = j.at("n_conversations").get<std::size_t>();
    c.turns = j.at("turns").get<std::size_t>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.opener_prompts = j.at("opener_prompts").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("self-play config: ") + e.what());
  }
  return c;
}

namespace {

Conversation play_one(const BotHandle& bot, const SelfPlayConfig& config, std::size_t k) {
  Rng rng(derive_seed(config.seed, k));
  const auto& opener = config.opener_prompts[rng.uniform_index(config.opener_prompts.size())];
  Conversation c(bot.id().str() + "#" + std::to_string(k), bot.id(), Origin::SelfPlay);
  c = append_utterance(c, Speaker::A, opener);
  while (c.size() < config.turns) {
    std::string reply = bot.respond(c, rng);
    c = append_utterance(c, *c.next_speaker(), std::move(reply));
  }
  return c;
}

}  // namespace

std::vector<Conversation> run_selfplay(const BotHandle& bot, const SelfPlayConfig& config) {
  config.validate();
  std::vector<Conversation> out;
  out.reserve(config.n_conversations);
  for (std::size_t k = 0; k < config.n_conversations; ++k) {
    try {
      out.push_back(play_one(bot, config, k));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::BotTimeout) throw;
      out.push_back(play_one(bot, config, k));
    }
  }
  return out;
}

BotScore score_selfplay(std::span<const Conversation> conversations, const HybridModel& model,
                        const MetricContext& context) {
  if (conversations.empty()) {
    throw Error(ErrorCode::InsufficientConversations, "no conversations to score");
  }
  BotScore score;
  score.bot_id = conversations.front().bot_id();
  for (const auto& c : conversations) {
    if (c.bot_id() != model.held_out_bot) {
      throw Error(ErrorCode::HeldOutMismatch, "conversation of " + c.bot_id().str() +
                                                  " scored with a model holding out " +
                                                  model.held_out_bot.str());
    }
  }
  for (const auto& c : conversations) {
    score.per_conversation_mh.push_back(
        predict_quality(model, conversation_features(c, context, Pairing::BotBot)));
  }
  score.mean_mh = std::accumulate(score.per_conversation_mh.begin(),
                                  score.per_conversation_mh.end(), 0.0) /
                  static_cast<double>(score.per_conversation_mh.size());
  return score;
}

namespace {

// Runs are keyed by length-prefixed texts so no separator can collide.
std::unordered_set<std::string> runs(const Conversation& c, std::size_t window) {
  std::vector<std::string> texts;
  for (const auto& u : c.utterances()) texts.push_back(normalize_whitespace(u.text));
  std::unordered_set<std::string> out;
  for (std::size_t i = 0; i + window <= texts.size(); ++i) {
    std::string key;
    for (std::size_t j = i; j < i + window; ++j) {
      key += std::to_string(texts[j].size());
      key += ':';
      key += texts[j];
    }
    out.insert(std::move(key));
  }
  return out;
}

bool intersects(const std::unordered_set<std::string>& a, const std::unordered_set<std::string>& b) {
  const auto& small = a.size() <= b.size() ? a : b;
  const auto& large = a.size() <= b.size() ? b : a;
  for (const auto& k : small) {
    if (large.contains(k)) return true;
  }
  return false;
}

void check_window(std::size_t window) {
  if (window == 0) throw Error(ErrorCode::InvalidArgument, "overlap window must be >= 1");
}

}  // namespace

double pairwise_overlap(std::span<const Conversation> conversations, std::size_t window) {
  check_window(window);
  if (conversations.size() < 2) {
    throw Error(ErrorCode::InsufficientConversations, "pairwise overlap needs two conversations");
  }
  std::vector<std::unordered_set<std::string>> keys;
  for (const auto& c : conversations) keys.push_back(runs(c, window));
  std::size_t shared = 0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < keys.size(); ++i) {
    for (std::size_t j = i + 1; j < keys.size(); ++j) {
      ++pairs;
      if (intersects(keys[i], keys[j])) ++shared;
    }
  }
  return 100.0 * static_cast<double>(shared) / static_cast<double>(pairs);
}

double training_overlap(std::span<const Conversation> conversations, const Corpus& training,
                        std::size_t window) {
  check_window(window);
  if (training.conversations.empty()) {
    throw Error(ErrorCode::EmptyCorpus, "training corpus has no conversations");
  }
  if (conversations.empty()) {
    throw Error(ErrorCode::InsufficientConversations, "no conversations to compare");
  }
  std::unordered_set<std::string> train_keys;
  for (const auto& c : training.conversations) train_keys.merge(runs(c, window));
  std::size_t hits = 0;
  for (const auto& c : conversations) {
    if (intersects(runs(c, window), train_keys)) ++hits;
  }
  return 100.0 * static_cast<double>(hits) / static_cast<double>(conversations.size());
}

std::vector<std::string> default_openers() {
  return {"hi there , how are you ?",
          "what did you do today ?",
          "i just got back from a long trip .",
          "do you like music ?",
          "tell me something interesting .",
          "i am having a rough week .",
          "what is your favorite movie ?",
          "the weather is lovely today .",
          "have you read any good books lately ?",
          "i can't sleep tonight ."};
}

}  // namespace convo
