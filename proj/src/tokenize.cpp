#include "convo/tokenize.hpp"

#include <algorithm>
#include <cctype>

namespace convo {
namespace {

bool is_terminal_punct(char c) { return c == '.' || c == ',' || c == '!' || c == '?'; }

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

}  // namespace

std::string ascii_lower(std::string_view text) {
  std::string out(text);
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

bool is_punctuation(std::string_view token) {
  return !token.empty() && std::all_of(token.begin(), token.end(), is_terminal_punct);
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    const std::size_t start = i;
    while (i < text.size() && !is_space(text[i])) ++i;
    if (start == i) break;

    std::string_view chunk = text.substr(start, i - start);
    std::size_t stem_end = chunk.size();
    while (stem_end > 0 && is_terminal_punct(chunk[stem_end - 1])) --stem_end;
    if (stem_end > 0) tokens.push_back(ascii_lower(chunk.substr(0, stem_end)));
    for (std::size_t k = stem_end; k < chunk.size(); ++k) {
      tokens.emplace_back(1, chunk[k]);
    }
  }
  return tokens;
}

std::string join_tokens(const std::vector<std::string>& tokens) {
  std::string out;
  for (const auto& t : tokens) {
    if (!out.empty()) out += ' ';
    out += t;
  }
  return out;
}

std::string normalize_whitespace(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char c : text) {
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    out += c;
  }
  return out;
}

}  // namespace convo
