#include "convo/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <istream>
#include <unordered_map>

#include "convo/error.hpp"
#include "convo/tokenize.hpp"

namespace convo {
namespace {

bool is_url_token(std::string_view token) {
  const std::string lower = ascii_lower(token.substr(0, 8));
  return lower.starts_with("http://") || lower.starts_with("https://") ||
         lower.starts_with("www.");
}

bool starts_with_edit_marker(std::string_view line) {
  const std::string lower = ascii_lower(line.substr(0, 5));
  return lower == "edit:" || lower == "edit ";
}

std::string strip_urls(std::string_view line) {
  std::string out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    const std::size_t start = i;
    while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (start == i) break;
    const auto token = line.substr(start, i - start);
    if (is_url_token(token)) continue;
    if (!out.empty()) out += ' ';
    out += token;
  }
  return out;
}

// Reddit fullnames: t1_ = comment, t3_ = link (post).
std::string_view strip_kind_prefix(std::string_view id) {
  if (id.size() > 3 && id[0] == 't' && id[2] == '_' && (id[1] == '1' || id[1] == '3')) {
    return id.substr(3);
  }
  return id;
}

bool is_post_parent(std::string_view parent) { return parent.starts_with("t3_"); }

}  // namespace

std::optional<std::string> clean_comment(std::string_view body) {
  std::string kept;
  std::size_t pos = 0;
  while (pos <= body.size()) {
    const std::size_t nl = body.find('\n', pos);
    const auto raw_line = body.substr(pos, nl == std::string_view::npos ? body.size() - pos : nl - pos);
    const std::string line = strip_urls(raw_line);
    if (starts_with_edit_marker(line)) break;
    if (!line.empty()) {
      if (!kept.empty()) kept += ' ';
      kept += line;
    }
    if (nl == std::string_view::npos) break;
    pos = nl + 1;
  }
  const std::string lower = ascii_lower(kept);
  if (kept.empty() || lower == "[removed]" || lower == "[deleted]") return std::nullopt;
  return kept;
}

RawComment comment_from_json(const nlohmann::json& j) {
  RawComment c;
  try {
    c.id = j.at("id").get<std::string>();
    if (j.contains("parent_id") && !j.at("parent_id").is_null()) {
      c.parent_id = j.at("parent_id").get<std::string>();
    }
    c.body = j.value("body", std::string{});
    c.author = j.value("author", std::string{});
    if (j.contains("created_utc")) {
      const auto& t = j.at("created_utc");
      c.created_utc = t.is_string() ? std::stoll(t.get<std::string>()) : t.get<std::int64_t>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("comment: ") + e.what());
  } catch (const std::logic_error& e) {
    throw Error(ErrorCode::ParseError, std::string("comment created_utc: ") + e.what());
  }
  if (c.id.empty()) throw Error(ErrorCode::ParseError, "comment without id");
  return c;
}

std::vector<RawComment> read_comments(std::istream& in) {
  std::vector<RawComment> out;
  for (const auto& j : read_jsonl(in)) out.push_back(comment_from_json(j));
  return out;
}

Extraction extract_conversations(const std::vector<RawComment>& comments, std::size_t min_turns,
                                 const std::string& dataset) {
  const std::size_t n = comments.size();
  std::unordered_map<std::string_view, std::size_t> index;
  std::vector<bool> duplicate(n, false);
  for (std::size_t i = 0; i < n; ++i) {
    const auto id = strip_kind_prefix(comments[i].id);
    if (!index.emplace(id, i).second) duplicate[i] = true;  // first occurrence wins
  }

  Extraction result;
  std::vector<std::vector<std::size_t>> children(n);
  std::vector<std::size_t> roots;
  for (std::size_t i = 0; i < n; ++i) {
    if (duplicate[i]) continue;
    const auto& c = comments[i];
    const auto parent = strip_kind_prefix(c.parent_id);
    if (c.parent_id.empty() || is_post_parent(c.parent_id)) {
      roots.push_back(i);
      continue;
    }
    if (parent == strip_kind_prefix(c.id)) {
      throw Error(ErrorCode::CycleDetected, "comment '" + c.id + "' is its own parent");
    }
    const auto it = index.find(parent);
    if (it == index.end()) {
      result.orphans.push_back(c.id);
      roots.push_back(i);
    } else {
      children[it->second].push_back(i);
    }
  }

  std::vector<std::optional<std::string>> cleaned(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (!duplicate[i]) cleaned[i] = clean_comment(comments[i].body);
  }

  const BotId corpus_id{"human", dataset, "corpus"};
  std::vector<bool> reached(n, false);
  std::vector<std::size_t> path;
  // Iterative DFS; each frame is (node, depth) so `path` can be cut back on pop.
  std::vector<std::pair<std::size_t, std::size_t>> stack;

  const auto mark_subtree = [&](std::size_t top) {
    std::vector<std::size_t> pending{top};
    while (!pending.empty()) {
      const auto k = pending.back();
      pending.pop_back();
      reached[k] = true;
      pending.insert(pending.end(), children[k].begin(), children[k].end());
    }
  };

  for (const std::size_t root : roots) {
    if (!cleaned[root]) {
      mark_subtree(root);
      continue;
    }
    stack.assign(1, {root, 0});
    while (!stack.empty()) {
      const auto [node, depth] = stack.back();
      stack.pop_back();
      reached[node] = true;
      path.resize(depth);
      path.push_back(node);

      // A child that cleans to nothing truncates its branch here, but the
      // subtree still counts as reached for cycle detection.
      std::vector<std::size_t> live;
      for (const std::size_t child : children[node]) {
        if (cleaned[child]) {
          live.push_back(child);
        } else {
          mark_subtree(child);
        }
      }
      if (!live.empty()) {
        for (auto it = live.rbegin(); it != live.rend(); ++it) stack.emplace_back(*it, depth + 1);
        continue;
      }

      std::vector<std::pair<Speaker, std::string>> turns;
      const std::string* last_author = nullptr;
      for (const std::size_t k : path) {
        if (last_author != nullptr && *last_author == comments[k].author) {
          turns.back().second += ' ';
          turns.back().second += *cleaned[k];
        } else {
          const Speaker s = turns.size() % 2 == 0 ? Speaker::A : Speaker::B;
          turns.emplace_back(s, *cleaned[k]);
        }
        last_author = &comments[k].author;
      }
      if (turns.size() >= min_turns && !turns.empty()) {
        result.conversations.push_back(
            Conversation::from_parts(comments[node].id, corpus_id, Origin::Corpus, turns));
      }
    }
  }

  for (std::size_t i = 0; i < n; ++i) {
    if (!duplicate[i] && !reached[i]) {
      throw Error(ErrorCode::CycleDetected,
                  "comment '" + comments[i].id + "' is part of a reply cycle");
    }
  }
  return result;
}

Corpus make_corpus(std::string name, std::vector<Conversation> conversations,
                   std::size_t min_turns) {
  Corpus corpus;
  corpus.name = std::move(name);
  for (auto& c : conversations) {
    if (c.size() < min_turns) continue;
    for (const auto& u : c.utterances()) {
      for (auto& t : tokenize(u.text)) ++corpus.vocabulary[std::move(t)];
    }
    corpus.conversations.push_back(std::move(c));
  }
  return corpus;
}

std::vector<ContextPair> filter_contexts(const Corpus& corpus, std::size_t min_tokens,
                                         bool exclude_unknown) {
  if (corpus.conversations.empty()) throw Error(ErrorCode::EmptyCorpus, "corpus has no conversations");
  std::vector<ContextPair> out;
  for (const auto& c : corpus.conversations) {
    std::size_t tokens = 0;
    bool has_unknown = false;
    for (std::size_t k = 1; k < c.size(); ++k) {
      const auto& prev = c[k - 1].text;
      tokens += tokenize(prev).size();
      has_unknown = has_unknown || prev.find(kUnknownToken) != std::string::npos;
      if (tokens < min_tokens || (exclude_unknown && has_unknown)) continue;
      ContextPair pair;
      for (std::size_t i = 0; i < k; ++i) pair.context.push_back(c[i].text);
      pair.target = c[k].text;
      out.push_back(std::move(pair));
    }
  }
  return out;
}

CorpusStats corpus_stats(const Corpus& corpus) {
  if (corpus.conversations.empty()) throw Error(ErrorCode::EmptyCorpus, "corpus has no conversations");
  std::vector<std::size_t> lengths;
  lengths.reserve(corpus.conversations.size());
  for (const auto& c : corpus.conversations) lengths.push_back(c.size());
  std::sort(lengths.begin(), lengths.end());
  return CorpusStats{lengths.size(), lengths[(lengths.size() - 1) / 2], corpus.vocabulary.size()};
}

}  // namespace convo
