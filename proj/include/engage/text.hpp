#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace engage {

std::string_view trim(std::string_view s);
bool is_blank(std::string_view s);
std::string to_lower(std::string_view s);

/// Splits on whitespace and punctuation. Apostrophes inside a word are kept
/// ("what's" stays one token); other punctuation is dropped.
std::vector<std::string> word_tokens(std::string_view text, bool lowercase);

/// Lower-case hex SHA-256 digest.
std::string sha256_hex(std::string_view data);

/// Stable key for a query/response exchange, used by the leakage guards.
std::string pair_key(std::string_view query, std::string_view response);

}  // namespace engage
