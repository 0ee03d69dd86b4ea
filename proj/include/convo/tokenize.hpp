#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace convo {

/// Lowercases ASCII, splits on whitespace, and peels trailing `. , ! ?`
/// characters off each chunk into single-character tokens. Never returns an
/// empty token; `tokenize(join(tokenize(s)))` is a fixed point.
std::vector<std::string> tokenize(std::string_view text);

/// True for tokens made only of `. , ! ?`.
bool is_punctuation(std::string_view token);

std::string join_tokens(const std::vector<std::string>& tokens);

// Collapses runs of whitespace to one space and trims both ends.
std::string normalize_whitespace(std::string_view text);

std::string ascii_lower(std::string_view text);

}  // namespace convo
