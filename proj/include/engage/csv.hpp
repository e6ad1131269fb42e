#pragma once

#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace engage::csv {

/// Reads one RFC 4180 record; quoted fields may span lines.
/// Returns nullopt at end of input.
std::optional<std::vector<std::string>> read_record(std::istream& in);

void write_record(std::ostream& out, const std::vector<std::string>& fields);

std::string quote(std::string_view field);

/// Position of `name` in a header record, or throws ParseError.
std::size_t column(const std::vector<std::string>& header, std::string_view name);

}  // namespace engage::csv
