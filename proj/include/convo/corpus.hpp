#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "convo/domain.hpp"

namespace convo {

// One record of a Reddit comment dump.
struct RawComment {
  std::string id;
  std::string parent_id;  // empty for top-level comments
  std::string body;
  std::string author;
  std::int64_t created_utc{0};
};

/// Accepts both plain ids and Reddit fullnames (`t1_abc`, `t3_xyz`) for
/// `parent_id`; `created_utc` may be a number or a numeric string.
RawComment comment_from_json(const nlohmann::json& j);
std::vector<RawComment> read_comments(std::istream& in);

/// Removes URL tokens, truncates at the first edit marker, normalizes
/// whitespace. Returns nullopt for removed/deleted comments and for bodies
/// that are empty after cleaning. Idempotent on present outputs.
std::optional<std::string> clean_comment(std::string_view body);

struct Extraction {
  std::vector<Conversation> conversations;
  std::vector<std::string> orphans;  // comments whose parent is missing, promoted to roots
};

/// Builds the reply forest and emits one conversation per root-to-leaf path.
/// A comment that cleans to nothing ends the path above it, so its whole
/// subtree is skipped. Consecutive comments by the same author merge into one
/// utterance; roles then alternate A, B, A, ... Paths shorter than `min_turns`
/// utterances are dropped. Output order follows input order.
///
/// Throws CycleDetected when parent links form a cycle.
Extraction extract_conversations(const std::vector<RawComment>& comments,
                                 std::size_t min_turns = 3, const std::string& dataset = "reddit");

struct Corpus {
  std::string name;
  std::vector<Conversation> conversations;
  std::map<std::string, std::size_t> vocabulary;  // token -> count over all utterances
};

/// Drops conversations with fewer than `min_turns` utterances and counts the
/// vocabulary of the rest.
Corpus make_corpus(std::string name, std::vector<Conversation> conversations,
                   std::size_t min_turns = 0);

inline constexpr std::string_view kUnknownToken = "<unknown>";

struct ContextPair {
  std::vector<std::string> context;  // utterance texts, oldest first
  std::string target;
};

/// Every proper prefix of every conversation becomes a context whose target
/// is the following utterance. Contexts under `min_tokens` tokens, and (when
/// `exclude_unknown`) contexts containing `<unknown>`, are dropped.
std::vector<ContextPair> filter_contexts(const Corpus& corpus, std::size_t min_tokens = 10,
                                         bool exclude_unknown = true);

struct CorpusStats {
  std::size_t conversation_count{0};
  std::size_t median_turns{0};  // lower median
  std::size_t vocabulary_size{0};
};

CorpusStats corpus_stats(const Corpus& corpus);

}  // namespace convo
