#include "convo/botkit.hpp"

#include <algorithm>
#include <cmath>

#include <httplib.h>

#include "convo/error.hpp"
#include "convo/metrics.hpp"
#include "convo/tokenize.hpp"
#include "http_util.hpp"

namespace convo {

BotHandle::BotHandle(std::shared_ptr<const Bot> bot, double temperature)
    : bot_(std::move(bot)), temperature_(temperature) {
  if (!bot_) throw Error(ErrorCode::InvalidArgument, "bot handle without a bot");
  if (!(temperature_ >= 0.0) || !std::isfinite(temperature_)) {
    throw Error(ErrorCode::InvalidArgument, "temperature must be a finite value >= 0");
  }
}

Transport BotHandle::transport() const noexcept {
  return dynamic_cast<const RemoteBot*>(bot_.get()) != nullptr ? Transport::Remote
                                                                : Transport::InProcess;
}

std::string BotHandle::respond(std::span<const Utterance> history, Rng& rng) const {
  if (history.empty()) throw Error(ErrorCode::InvalidArgument, "respond needs a non-empty history");
  return bot_->respond(history, temperature_, rng);
}

std::string BotHandle::respond(const Conversation& history, Rng& rng) const {
  return respond(history.utterances(), rng);
}

std::string EchoBot::respond(std::span<const Utterance> history, double, Rng&) const {
  if (history.empty()) throw Error(ErrorCode::InvalidArgument, "echo needs a non-empty history");
  return history.back().text;
}

// ---------------------------------------------------------------------------
// Markov chain
// ---------------------------------------------------------------------------

MarkovModel train_markov(std::span<const std::string> utterances, std::size_t order) {
  if (order == 0) throw Error(ErrorCode::InvalidArgument, "Markov order must be >= 1");
  MarkovModel model;
  model.order = order;
  for (const auto& text : utterances) {
    const auto tokens = tokenize(text);
    if (tokens.empty()) continue;
    ++model.start_counts[tokens.front()];
    std::vector<std::string> context(order, std::string(kStartToken));
    for (std::size_t i = 0; i <= tokens.size(); ++i) {
      const std::string next = i < tokens.size() ? tokens[i] : std::string(kEndToken);
      if (i > 0) ++model.transitions[context][next];
      context.erase(context.begin());
      context.push_back(next);
    }
  }
  if (model.start_counts.empty()) throw Error(ErrorCode::EmptyCorpus, "no utterance to train on");
  return model;
}

MarkovModel train_markov(const Corpus& corpus, std::size_t order) {
  std::vector<std::string> texts;
  for (const auto& c : corpus.conversations) {
    for (const auto& u : c.utterances()) texts.push_back(u.text);
  }
  return train_markov(texts, order);
}

namespace {

const std::string& pick(const std::map<std::string, std::size_t>& counts, double temperature,
                        Rng& rng) {
  if (temperature == 0.0) {
    // Map order is lexicographic, so the first maximum is the tie winner.
    auto best = counts.begin();
    for (auto it = counts.begin(); it != counts.end(); ++it) {
      if (it->second > best->second) best = it;
    }
    return best->first;
  }
  std::vector<double> weights;
  weights.reserve(counts.size());
  double total = 0.0;
  for (const auto& [token, count] : counts) {
    weights.push_back(std::pow(static_cast<double>(count), 1.0 / temperature));
    total += weights.back();
  }
  double u = rng.uniform01() * total;
  auto it = counts.begin();
  for (std::size_t i = 0; i + 1 < weights.size(); ++i, ++it) {
    if (u < weights[i]) return it->first;
    u -= weights[i];
  }
  return it->first;
}

}  // namespace

std::string markov_respond(const MarkovModel& model, double temperature, Rng& rng) {
  std::vector<std::string> context(model.order, std::string(kStartToken));
  std::vector<std::string> out;
  const auto* counts = &model.start_counts;
  while (out.size() < kMaxGeneratedTokens) {
    const std::string& next = pick(*counts, temperature, rng);
    if (next == kEndToken) break;
    out.push_back(next);
    context.erase(context.begin());
    context.push_back(next);
    const auto it = model.transitions.find(context);
    if (it == model.transitions.end()) break;  // only for hand-built models
    counts = &it->second;
  }
  return join_tokens(out);
}

nlohmann::json to_json(const MarkovModel& model) {
  nlohmann::json transitions = nlohmann::json::array();
  for (const auto& [context, next] : model.transitions) {
    transitions.push_back({{"context", context}, {"next", next}});
  }
  return {{"order", model.order}, {"start", model.start_counts}, {"transitions", transitions}};
}

MarkovModel markov_from_json(const nlohmann::json& j) {
  MarkovModel model;
  try {
    model.order = j.at("order").get<std::size_t>();
    model.start_counts = j.at("start").get<std::map<std::string, std::size_t>>();
    for (const auto& t : j.at("transitions")) {
      auto context = t.at("context").get<std::vector<std::string>>();
      if (context.size() != model.order) {
        throw Error(ErrorCode::ParseError, "Markov context length differs from order");
      }
      model.transitions[std::move(context)] =
          t.at("next").get<std::map<std::string, std::size_t>>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("Markov model: ") + e.what());
  }
  if (model.order == 0 || model.start_counts.empty()) {
    throw Error(ErrorCode::ParseError, "Markov model needs order >= 1 and start counts");
  }
  return model;
}

MarkovBot::MarkovBot(BotId id, std::shared_ptr<const MarkovModel> model, double degrade)
    : id_(std::move(id)), model_(std::move(model)), degrade_(degrade) {
  if (!model_) throw Error(ErrorCode::InvalidArgument, "Markov bot without a model");
  if (!(degrade_ >= 0.0 && degrade_ <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "degrade must lie in [0, 1]");
  }
}

std::string MarkovBot::respond(std::span<const Utterance>, double temperature, Rng& rng) const {
  // The degrade draw happens on every call so the stream layout does not
  // depend on the knob.
  if (rng.bernoulli(degrade_)) return std::string(kDegradedUtterance);
  return markov_respond(*model_, temperature, rng);
}

// ---------------------------------------------------------------------------
// Retrieval
// ---------------------------------------------------------------------------

RetrievalBot::RetrievalBot(BotId id, const Corpus& corpus,
                           std::shared_ptr<const WordVectorTable> table)
    : id_(std::move(id)), table_(std::move(table)) {
  if (!table_) throw Error(ErrorCode::InvalidArgument, "retrieval bot without word vectors");
  for (const auto& c : corpus.conversations) {
    for (std::size_t i = 0; i + 1 < c.size(); ++i) {
      std::optional<Vector> embedding;
      try {
        embedding = embedding_average(tokenize(c[i].text), *table_);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::NoVectorTokens && e.code() != ErrorCode::ZeroSum) throw;
      }
      contexts_.push_back(std::move(embedding));
      responses_.push_back(c[i + 1].text);
    }
  }
  if (responses_.empty()) throw Error(ErrorCode::EmptyCorpus, "retrieval corpus has no pairs");
}

std::string RetrievalBot::respond(std::span<const Utterance> history, double, Rng&) const {
  if (history.empty()) throw Error(ErrorCode::InvalidArgument, "retrieval needs a non-empty history");
  const Vector query = embedding_average(tokenize(history.back().text), *table_);
  std::optional<std::size_t> best;
  double best_score = -2.0;
  for (std::size_t i = 0; i < contexts_.size(); ++i) {
    if (!contexts_[i]) continue;
    const double score = cosine(query, *contexts_[i]);
    if (score > best_score) {
      best_score = score;
      best = i;
    }
  }
  if (!best) throw Error(ErrorCode::NoVectorTokens, "no stored context has an embedding");
  return responses_[*best];
}

// ---------------------------------------------------------------------------
// Wire protocol
// ---------------------------------------------------------------------------

nlohmann::json respond_request(std::span<const Utterance> history, double temperature) {
  nlohmann::json utterances = nlohmann::json::array();
  for (const auto& u : history) {
    utterances.push_back({{"speaker", std::string(to_string(u.speaker))}, {"text", u.text}});
  }
  return {{"utterances", utterances}, {"temperature", temperature}};
}

namespace {

[[noreturn]] void throw_transport(const std::string& what, httplib::Error error) {
  const auto code = error == httplib::Error::Read ? ErrorCode::BotTimeout : ErrorCode::BotUnavailable;
  throw Error(code, what + ": " + httplib::to_string(error));
}

[[noreturn]] void throw_status(const std::string& what, const httplib::Result& res) {
  std::string detail = std::to_string(res->status);
  try {
    detail += " " + nlohmann::json::parse(res->body).at("error").get<std::string>();
  } catch (const std::exception&) {
  }
  ErrorCode code = ErrorCode::ProtocolError;
  if (res->status == 504) {
    code = ErrorCode::BotTimeout;
  } else if (res->status >= 500) {
    code = ErrorCode::BotUnavailable;
  }
  throw Error(code, what + ": " + detail);
}

}  // namespace

std::shared_ptr<RemoteBot> RemoteBot::connect(std::string base_url,
                                              std::chrono::milliseconds timeout) {
  const auto endpoint = detail::split_url(base_url);
  const auto client = detail::make_client(endpoint.origin, timeout);
  const auto res = client->Get(endpoint.prefix + "/info");
  const std::string what = base_url + "/info";
  if (!res) throw_transport(what, res.error());
  if (res->status != 200) throw_status(what, res);
  BotId id;
  try {
    const auto j = nlohmann::json::parse(res->body);
    id = {j.at("name").get<std::string>(), j.at("dataset").get<std::string>(),
          j.at("variant").get<std::string>()};
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ProtocolError, what + ": " + e.what());
  }
  return std::make_shared<RemoteBot>(std::move(id), std::move(base_url), timeout);
}

RemoteBot::RemoteBot(BotId id, std::string base_url, std::chrono::milliseconds timeout)
    : id_(std::move(id)), base_url_(std::move(base_url)), timeout_(timeout) {}

std::string RemoteBot::respond(std::span<const Utterance> history, double temperature,
                               Rng&) const {
  const auto endpoint = detail::split_url(base_url_);
  const auto client = detail::make_client(endpoint.origin, timeout_);
  const auto res = client->Post(endpoint.prefix + "/respond",
                                respond_request(history, temperature).dump(), "application/json");
  const std::string what = base_url_ + "/respond";
  if (!res) throw_transport(what, res.error());
  if (res->status != 200) throw_status(what, res);
  std::string text;
  try {
    text = nlohmann::json::parse(res->body).at("text").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ProtocolError, what + ": " + e.what());
  }
  if (is_blank(text)) throw Error(ErrorCode::ProtocolError, what + ": blank reply");
  return text;
}

BotServer::BotServer(std::shared_ptr<const Bot> bot, std::uint64_t seed)
    : bot_(std::move(bot)), seed_(seed), server_(std::make_unique<httplib::Server>()) {
  if (!bot_) throw Error(ErrorCode::InvalidArgument, "bot server without a bot");
  detail::exclusive_bind(*server_);
  install_routes();
}

BotServer::~BotServer() { stop(); }

namespace {

void reply_error(httplib::Response& res, int status, const std::string& message) {
  res.status = status;
  res.set_content(nlohmann::json{{"error", message}}.dump(), "application/json");
}

int status_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::BotTimeout:
      return 504;
    case ErrorCode::BotUnavailable:
    case ErrorCode::RemoteUnavailable:
    case ErrorCode::IoError:
      return 503;
    default:
      return 400;
  }
}

}  // namespace

void BotServer::install_routes() {
  server_->Get("/info", [this](const httplib::Request&, httplib::Response& res) {
    const BotId id = bot_->id();
    res.set_content(
        nlohmann::json{{"name", id.name}, {"dataset", id.dataset}, {"variant", id.variant}}.dump(),
        "application/json");
  });

  server_->Post("/respond", [this](const httplib::Request& req, httplib::Response& res) {
    std::vector<std::pair<Speaker, std::string>> turns;
    double temperature = 0.0;
    try {
      const auto body = nlohmann::json::parse(req.body);
      for (const auto& u : body.at("utterances")) {
        turns.emplace_back(parse_speaker(u.at("speaker").get<std::string>()),
                           u.at("text").get<std::string>());
      }
      if (body.contains("temperature")) temperature = body.at("temperature").get<double>();
    } catch (const std::exception& e) {
      return reply_error(res, 400, std::string("malformed request: ") + e.what());
    }
    if (turns.empty()) return reply_error(res, 400, "history is empty");
    if (!(temperature >= 0.0) || !std::isfinite(temperature)) {
      return reply_error(res, 400, "temperature must be a finite value >= 0");
    }
    try {
      const auto history = Conversation::from_parts("request", bot_->id(), Origin::SelfPlay, turns);
      Rng rng(derive_seed(seed_, stable_hash(req.body)));
      const std::string text = bot_->respond(history.utterances(), temperature, rng);
      res.set_content(nlohmann::json{{"text", text}}.dump(), "application/json");
    } catch (const Error& e) {
      reply_error(res, status_for(e.code()), e.what());
    } catch (const std::exception& e) {
      reply_error(res, 503, e.what());
    }
  });
}

void BotServer::start(const std::string& host, int port) {
  host_ = host;
  port_ = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
  if (port_ < 0) {
    throw Error(ErrorCode::BindError, "cannot bind " + host + ":" + std::to_string(port));
  }
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
}

void BotServer::run(const std::string& host, int port) {
  host_ = host;
  port_ = port == 0 ? server_->bind_to_any_port(host) : (server_->bind_to_port(host, port) ? port : -1);
  if (port_ < 0) {
    throw Error(ErrorCode::BindError, "cannot bind " + host + ":" + std::to_string(port));
  }
  server_->listen_after_bind();
}

void BotServer::wait() {
  if (thread_.joinable()) thread_.join();
}

void BotServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

std::string BotServer::url() const { return "http://" + host_ + ":" + std::to_string(port_); }

// ---------------------------------------------------------------------------

std::shared_ptr<const Bot> make_builtin_bot(std::string_view name, const BuiltinOptions& options) {
  if (name == "echo") return std::make_shared<EchoBot>(BotId{"echo", options.dataset, "builtin"});
  if (name == "markov" || name.starts_with("markov:")) {
    if (!options.markov) throw Error(ErrorCode::InvalidArgument, "markov bot needs a model");
    double degrade = 0.0;
    std::string variant = "builtin";
    if (name.starts_with("markov:")) {
      const std::string value(name.substr(7));
      try {
        degrade = std::stod(value);
      } catch (const std::logic_error&) {
        throw Error(ErrorCode::InvalidArgument, "invalid degrade '" + value + "'");
      }
      variant = "degrade-" + value;
    }
    return std::make_shared<MarkovBot>(BotId{"markov", options.dataset, variant}, options.markov,
                                       degrade);
  }
  if (name == "retrieval") {
    if (!options.corpus || !options.words) {
      throw Error(ErrorCode::InvalidArgument, "retrieval bot needs a corpus and word vectors");
    }
    return std::make_shared<RetrievalBot>(BotId{"retrieval", options.dataset, "builtin"},
                                          *options.corpus, options.words);
  }
  throw Error(ErrorCode::UnknownBot, "unknown builtin bot '" + std::string(name) + "'");
}

std::shared_ptr<const Bot> make_bot(std::string_view spec, const BuiltinOptions& options,
                                    std::chrono::milliseconds timeout) {
  if (spec.starts_with("builtin:")) return make_builtin_bot(spec.substr(8), options);
  if (spec.starts_with("http://") || spec.starts_with("https://")) {
    return RemoteBot::connect(std::string(spec), timeout);
  }
  throw Error(ErrorCode::InvalidArgument,
              "bot must be builtin:NAME or an http(s) URL, got '" + std::string(spec) + "'");
}

}  // namespace convo
