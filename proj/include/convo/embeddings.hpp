#pragma once

#include <array>
#include <chrono>
#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <memory>
#include <mutex>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace convo {

using Vector = std::vector<double>;

inline constexpr std::size_t kSentenceDim = 4096;
inline constexpr std::size_t kEmotionDim = 64;

/// Word vectors keyed by lowercase token. Duplicate tokens (after case
/// folding) keep their first occurrence.
class WordVectorTable {
 public:
  explicit WordVectorTable(std::size_t dimension);

  std::size_t dimension() const noexcept { return dimension_; }
  std::size_t size() const noexcept { return entries_.size(); }

  /// Returns false when the token was already present. DimensionMismatch on a
  /// wrong-length vector.
  bool insert(std::string_view token, Vector vector);
  const Vector* find(std::string_view token) const;

  /// Gaussian vectors seeded by a stable hash of each token; a stand-in for
  /// pretrained vectors in tests and offline runs.
  static WordVectorTable hashed(const std::vector<std::string>& vocabulary, std::size_t dimension,
                                std::uint64_t seed = 0);

 private:
  std::size_t dimension_;
  std::unordered_map<std::string, Vector> entries_;
};

/// Text format: `token v1 ... vd` per line, optionally preceded by a
/// `count dim` header. ParseError carries the 1-based line number.
WordVectorTable parse_word_vectors(std::istream& in);
WordVectorTable load_word_vectors(const std::string& path);

struct SentenceEmbedding {
  Vector values;  // exactly kSentenceDim finite reals
};

struct EmotionEmbedding {
  std::array<double, kEmotionDim> probabilities{};  // on the simplex
};

enum class EmbeddingKind { Sentence, Emotion };
enum class EmbeddingSource { File, Remote, DeterministicTest };

std::string_view to_string(EmbeddingKind kind);
EmbeddingKind parse_embedding_kind(std::string_view text);

/// A text -> vector model. Implementations must return bitwise-identical
/// vectors for repeated calls with the same text and be safe to call from
/// several threads.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;

  virtual EmbeddingKind kind() const = 0;
  virtual EmbeddingSource source() const = 0;
  virtual Vector embed(std::string_view text) const = 0;
  virtual std::vector<Vector> embed_batch(const std::vector<std::string>& texts) const;
};

/// Validates kind and length (4096). Errors propagate from the provider.
SentenceEmbedding embed_sentence(const EmbeddingProvider& provider, std::string_view text);

/// Validates kind and length (64) and renormalizes onto the simplex.
EmotionEmbedding embed_emotion(const EmbeddingProvider& provider, std::string_view text);

// Exposed for providers that receive vectors from outside (remote, sidecar).
EmotionEmbedding to_simplex(const Vector& raw);

/// Hash-derived embeddings with no external model.
///  - sentence: normalized sum of per-token pseudo-random vectors, so texts
///    sharing tokens are similar; unit L2 norm.
///  - emotion: softmax over summed per-token pseudo-random logits.
class DeterministicProvider final : public EmbeddingProvider {
 public:
  explicit DeterministicProvider(EmbeddingKind kind, std::uint64_t seed = 0);

  EmbeddingKind kind() const override { return kind_; }
  EmbeddingSource source() const override { return EmbeddingSource::DeterministicTest; }
  Vector embed(std::string_view text) const override;

 private:
  const Vector& token_vector(const std::string& token) const;

  EmbeddingKind kind_;
  std::uint64_t seed_;
  std::size_t dimension_;
  mutable std::mutex mutex_;
  mutable std::unordered_map<std::string, Vector> cache_;
};

/// Reads `{"text": ..., "vector": [...]}` lines keyed by exact text. Unknown
/// texts go to `fallback` when given, else MissingEntry.
class SidecarProvider final : public EmbeddingProvider {
 public:
  SidecarProvider(EmbeddingKind kind, std::istream& in,
                  std::shared_ptr<const EmbeddingProvider> fallback = nullptr);
  static std::shared_ptr<SidecarProvider> load(
      EmbeddingKind kind, const std::string& path,
      std::shared_ptr<const EmbeddingProvider> fallback = nullptr);

  EmbeddingKind kind() const override { return kind_; }
  EmbeddingSource source() const override { return EmbeddingSource::File; }
  Vector embed(std::string_view text) const override;
  std::size_t size() const noexcept { return entries_.size(); }

 private:
  EmbeddingKind kind_;
  std::unordered_map<std::string, Vector> entries_;
  std::shared_ptr<const EmbeddingProvider> fallback_;
};

/// Client for `POST {base_url}/embed`. Results are memoized per text so the
/// determinism contract holds even if the service is not bitwise stable.
class RemoteProvider final : public EmbeddingProvider {
 public:
  RemoteProvider(EmbeddingKind kind, std::string base_url,
                 std::chrono::milliseconds timeout = std::chrono::seconds(30));

  EmbeddingKind kind() const override { return kind_; }
  EmbeddingSource source() const override { return EmbeddingSource::Remote; }
  Vector embed(std::string_view text) const override;
  std::vector<Vector> embed_batch(const std::vector<std::string>& texts) const override;

 private:
  std::vector<Vector> fetch(const std::vector<std::string>& texts) const;

  EmbeddingKind kind_;
  std::string base_url_;
  std::chrono::milliseconds timeout_;
  mutable std::mutex mutex_;
  mutable std::unordered_map<std::string, Vector> cache_;
};

/// `deterministic`, `file:PATH`, or an http(s) URL.
std::shared_ptr<const EmbeddingProvider> make_provider(EmbeddingKind kind, std::string_view spec);

}  // namespace convo
