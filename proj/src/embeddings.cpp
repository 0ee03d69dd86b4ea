#include "convo/embeddings.hpp"

#include <cmath>
#include <fstream>
#include <istream>
#include <optional>
#include <sstream>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "convo/domain.hpp"
#include "convo/error.hpp"
#include "convo/random.hpp"
#include "convo/tokenize.hpp"
#include "http_util.hpp"

namespace convo {

WordVectorTable::WordVectorTable(std::size_t dimension) : dimension_(dimension) {
  if (dimension == 0) throw Error(ErrorCode::InvalidArgument, "word vector dimension must be > 0");
}

bool WordVectorTable::insert(std::string_view token, Vector vector) {
  if (vector.size() != dimension_) {
    throw Error(ErrorCode::DimensionMismatch, "vector for '" + std::string(token) + "' has " +
                                                  std::to_string(vector.size()) + " values, expected " +
                                                  std::to_string(dimension_));
  }
  return entries_.try_emplace(ascii_lower(token), std::move(vector)).second;
}

const Vector* WordVectorTable::find(std::string_view token) const {
  const auto it = entries_.find(ascii_lower(token));
  return it == entries_.end() ? nullptr : &it->second;
}

WordVectorTable WordVectorTable::hashed(const std::vector<std::string>& vocabulary,
                                        std::size_t dimension, std::uint64_t seed) {
  WordVectorTable table(dimension);
  for (const auto& token : vocabulary) {
    Rng rng(derive_seed(seed, stable_hash(ascii_lower(token))));
    Vector v(dimension);
    for (double& x : v) x = rng.normal();
    table.insert(token, std::move(v));
  }
  return table;
}

namespace {

bool parse_size(const std::string& s, std::size_t& out) {
  if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) return false;
  out = std::stoul(s);
  return true;
}

}  // namespace

WordVectorTable parse_word_vectors(std::istream& in) {
  std::optional<WordVectorTable> table;
  std::string line;
  std::size_t line_no = 0;
  bool first_content_line = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (is_blank(line)) continue;
    std::istringstream fields(line);
    std::vector<std::string> parts;
    for (std::string f; fields >> f;) parts.push_back(std::move(f));

    if (first_content_line) {
      first_content_line = false;
      std::size_t count = 0;
      std::size_t dim = 0;
      if (parts.size() == 2 && parse_size(parts[0], count) && parse_size(parts[1], dim)) {
        if (dim == 0) {
          throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) + ": zero dimension");
        }
        table.emplace(dim);
        continue;
      }
    }
    if (parts.size() < 2) {
      throw Error(ErrorCode::ParseError,
                  "line " + std::to_string(line_no) + ": expected a token followed by values");
    }
    Vector v;
    v.reserve(parts.size() - 1);
    for (std::size_t i = 1; i < parts.size(); ++i) {
      try {
        std::size_t used = 0;
        const double x = std::stod(parts[i], &used);
        if (used != parts[i].size() || !std::isfinite(x)) throw std::invalid_argument("bad");
        v.push_back(x);
      } catch (const std::logic_error&) {
        throw Error(ErrorCode::ParseError, "line " + std::to_string(line_no) +
                                               ": invalid number '" + parts[i] + "'");
      }
    }
    if (!table) table.emplace(v.size());
    if (v.size() != table->dimension()) {
      throw Error(ErrorCode::DimensionMismatch,
                  "line " + std::to_string(line_no) + ": " + std::to_string(v.size()) +
                      " values, expected " + std::to_string(table->dimension()));
    }
    table->insert(parts[0], std::move(v));
  }
  if (!table) throw Error(ErrorCode::ParseError, "word vector file is empty");
  return std::move(*table);
}

WordVectorTable load_word_vectors(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path + "'");
  return parse_word_vectors(in);
}

std::string_view to_string(EmbeddingKind kind) {
  return kind == EmbeddingKind::Sentence ? "sentence" : "emotion";
}

EmbeddingKind parse_embedding_kind(std::string_view text) {
  if (text == "sentence") return EmbeddingKind::Sentence;
  if (text == "emotion") return EmbeddingKind::Emotion;
  throw Error(ErrorCode::ParseError, "unknown embedding kind '" + std::string(text) + "'");
}

std::vector<Vector> EmbeddingProvider::embed_batch(const std::vector<std::string>& texts) const {
  std::vector<Vector> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(embed(t));
  return out;
}

namespace {

void require_kind(const EmbeddingProvider& p, EmbeddingKind kind) {
  if (p.kind() != kind) {
    throw Error(ErrorCode::InvalidArgument, "provider serves " + std::string(to_string(p.kind())) +
                                                " embeddings, " + std::string(to_string(kind)) +
                                                " requested");
  }
}

}  // namespace

SentenceEmbedding embed_sentence(const EmbeddingProvider& provider, std::string_view text) {
  require_kind(provider, EmbeddingKind::Sentence);
  Vector v = provider.embed(text);
  if (v.size() != kSentenceDim) {
    throw Error(ErrorCode::DimensionMismatch,
                "sentence embedding has " + std::to_string(v.size()) + " values, expected 4096");
  }
  for (double x : v) {
    if (!std::isfinite(x)) throw Error(ErrorCode::InvalidEmbedding, "non-finite sentence embedding");
  }
  return SentenceEmbedding{std::move(v)};
}

EmotionEmbedding to_simplex(const Vector& raw) {
  if (raw.size() != kEmotionDim) {
    throw Error(ErrorCode::DimensionMismatch,
                "emotion embedding has " + std::to_string(raw.size()) + " values, expected 64");
  }
  EmotionEmbedding e;
  double sum = 0.0;
  for (std::size_t i = 0; i < kEmotionDim; ++i) {
    double x = raw[i];
    if (!std::isfinite(x) || x < -1e-9) {
      throw Error(ErrorCode::InvalidEmbedding, "emotion embedding is not a distribution");
    }
    x = std::max(x, 0.0);
    e.probabilities[i] = x;
    sum += x;
  }
  if (!(sum > 0.0)) throw Error(ErrorCode::InvalidEmbedding, "emotion embedding has no mass");
  for (double& p : e.probabilities) p /= sum;
  return e;
}

EmotionEmbedding embed_emotion(const EmbeddingProvider& provider, std::string_view text) {
  require_kind(provider, EmbeddingKind::Emotion);
  return to_simplex(provider.embed(text));
}

DeterministicProvider::DeterministicProvider(EmbeddingKind kind, std::uint64_t seed)
    : kind_(kind), seed_(seed),
      dimension_(kind == EmbeddingKind::Sentence ? kSentenceDim : kEmotionDim) {}

const Vector& DeterministicProvider::token_vector(const std::string& token) const {
  std::lock_guard lock(mutex_);
  auto it = cache_.find(token);
  if (it != cache_.end()) return it->second;
  Rng rng(derive_seed(seed_ ^ static_cast<std::uint64_t>(kind_), stable_hash(token)));
  Vector v(dimension_);
  for (double& x : v) x = 2.0 * rng.uniform01() - 1.0;
  // unordered_map never invalidates references on insert.
  return cache_.emplace(token, std::move(v)).first->second;
}

Vector DeterministicProvider::embed(std::string_view text) const {
  std::vector<std::string> tokens = tokenize(text);
  if (tokens.empty()) tokens.emplace_back();  // all blank texts share one vector

  Vector sum(dimension_, 0.0);
  for (const auto& t : tokens) {
    const Vector& v = token_vector(t);
    for (std::size_t i = 0; i < dimension_; ++i) sum[i] += v[i];
  }

  if (kind_ == EmbeddingKind::Sentence) {
    double norm = 0.0;
    for (double x : sum) norm += x * x;
    norm = std::sqrt(norm);
    for (double& x : sum) x /= norm;
    return sum;
  }

  // Emotion: tempered softmax so longer texts do not become arbitrarily peaked.
  const double scale = 2.0 / std::sqrt(static_cast<double>(tokens.size()));
  double max_logit = -1e300;
  for (double& x : sum) {
    x *= scale;
    max_logit = std::max(max_logit, x);
  }
  double z = 0.0;
  for (double& x : sum) {
    x = std::exp(x - max_logit);
    z += x;
  }
  for (double& x : sum) x /= z;
  return sum;
}

SidecarProvider::SidecarProvider(EmbeddingKind kind, std::istream& in,
                                 std::shared_ptr<const EmbeddingProvider> fallback)
    : kind_(kind), fallback_(std::move(fallback)) {
  std::size_t dim = 0;
  std::size_t line = 0;
  for (const auto& j : read_jsonl(in)) {
    ++line;
    std::string text;
    Vector v;
    try {
      text = j.at("text").get<std::string>();
      v = j.at("vector").get<Vector>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::ParseError, "sidecar record " + std::to_string(line) + ": " + e.what());
    }
    if (dim == 0) dim = v.size();
    if (v.size() != dim || dim == 0) {
      throw Error(ErrorCode::DimensionMismatch,
                  "sidecar record " + std::to_string(line) + " has inconsistent length");
    }
    entries_.try_emplace(std::move(text), std::move(v));
  }
}

std::shared_ptr<SidecarProvider> SidecarProvider::load(
    EmbeddingKind kind, const std::string& path,
    std::shared_ptr<const EmbeddingProvider> fallback) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open '" + path + "'");
  return std::make_shared<SidecarProvider>(kind, in, std::move(fallback));
}

Vector SidecarProvider::embed(std::string_view text) const {
  const auto it = entries_.find(std::string(text));
  if (it != entries_.end()) return it->second;
  if (fallback_) return fallback_->embed(text);
  throw Error(ErrorCode::MissingEntry, "no sidecar entry for '" + std::string(text) + "'");
}

RemoteProvider::RemoteProvider(EmbeddingKind kind, std::string base_url,
                               std::chrono::milliseconds timeout)
    : kind_(kind), base_url_(std::move(base_url)), timeout_(timeout) {
  while (!base_url_.empty() && base_url_.back() == '/') base_url_.pop_back();
}

std::vector<Vector> RemoteProvider::fetch(const std::vector<std::string>& texts) const {
  const auto endpoint = detail::split_url(base_url_);
  const auto client = detail::make_client(endpoint.origin, timeout_);
  const nlohmann::json body = {{"kind", to_string(kind_)}, {"texts", texts}};
  auto res = client->Post(endpoint.prefix + "/embed", body.dump(), "application/json");
  if (!res) {
    throw Error(ErrorCode::RemoteUnavailable,
                base_url_ + "/embed: " + httplib::to_string(res.error()));
  }
  if (res->status != 200) {
    std::string detail = std::to_string(res->status);
    try {
      detail += " " + nlohmann::json::parse(res->body).at("error").get<std::string>();
    } catch (const nlohmann::json::exception&) {
    }
    throw Error(res->status >= 500 ? ErrorCode::RemoteUnavailable : ErrorCode::ProtocolError,
                base_url_ + "/embed returned " + detail);
  }
  try {
    auto vectors = nlohmann::json::parse(res->body).at("vectors").get<std::vector<Vector>>();
    if (vectors.size() != texts.size()) {
      throw Error(ErrorCode::ProtocolError, "embedding service returned " +
                                                std::to_string(vectors.size()) + " vectors for " +
                                                std::to_string(texts.size()) + " texts");
    }
    return vectors;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ProtocolError, std::string("malformed /embed reply: ") + e.what());
  }
}

std::vector<Vector> RemoteProvider::embed_batch(const std::vector<std::string>& texts) const {
  std::vector<std::string> missing;
  {
    std::lock_guard lock(mutex_);
    for (const auto& t : texts) {
      if (!cache_.contains(t)) missing.push_back(t);
    }
  }
  if (!missing.empty()) {
    auto fetched = fetch(missing);
    std::lock_guard lock(mutex_);
    for (std::size_t i = 0; i < missing.size(); ++i) {
      cache_.try_emplace(missing[i], std::move(fetched[i]));  // first answer wins
    }
  }
  std::lock_guard lock(mutex_);
  std::vector<Vector> out;
  out.reserve(texts.size());
  for (const auto& t : texts) out.push_back(cache_.at(t));
  return out;
}

Vector RemoteProvider::embed(std::string_view text) const {
  return embed_batch({std::string(text)}).front();
}

std::shared_ptr<const EmbeddingProvider> make_provider(EmbeddingKind kind, std::string_view spec) {
  if (spec.empty() || spec == "deterministic") {
    return std::make_shared<DeterministicProvider>(kind);
  }
  if (spec.starts_with("file:")) {
    return SidecarProvider::load(kind, std::string(spec.substr(5)));
  }
  if (spec.starts_with("http://") || spec.starts_with("https://")) {
    return std::make_shared<RemoteProvider>(kind, std::string(spec));
  }
  throw Error(ErrorCode::InvalidArgument, "unknown embedding provider '" + std::string(spec) + "'");
}

}  // namespace convo
